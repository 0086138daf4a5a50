#pragma once

// Exact patch codebook shared by frames and flow images. Every distinct
// patch_size x patch_size RGB patch seen while building gets an id in
// first-occurrence order; unseen patches fall back to the nearest entry.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowcot/image.hpp"

namespace flowcot {

class Codebook {
 public:
  Codebook() = default;
  Codebook(int patch_size, std::size_t max_entries);

  int patch_size() const { return patch_size_; }
  std::size_t max_entries() const { return max_entries_; }
  std::size_t size() const { return index_.size(); }
  std::size_t entry_bytes() const { return static_cast<std::size_t>(patch_size_) * patch_size_ * 3; }
  std::span<const std::uint8_t> entry(std::size_t id) const {
    return {data_.data() + id * entry_bytes(), entry_bytes()};
  }
  std::uint64_t content_hash() const;

  /// Exact lookup; returns false when the patch is not in the book.
  bool find(std::span<const std::uint8_t> patch, std::uint32_t& id) const;
  /// Appends a new entry (or returns the existing id). Throws CapacityError.
  std::uint32_t insert(std::span<const std::uint8_t> patch);
  /// Minimum summed squared byte distance, ties to the lowest id.
  std::uint32_t nearest(std::span<const std::uint8_t> patch) const;

 private:
  int patch_size_ = 4;
  std::size_t max_entries_ = 512;
  std::vector<std::uint8_t> data_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Incremental construction so large corpora need not be held in memory.
class CodebookBuilder {
 public:
  CodebookBuilder(int patch_size = 4, std::size_t max_entries = 512);
  void add(const Frame& img);
  Codebook finish() && { return std::move(book_); }

 private:
  Codebook book_;
};

Codebook build_codebook(std::span<const Frame> corpus, int patch_size = 4,
                        std::size_t max_entries = 512);

struct TokenGrid {
  int gh = 0, gw = 0;
  std::vector<std::uint32_t> ids;
  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

TokenGrid tokenize(const Frame& img, const Codebook& cb);
/// Throws DecodeError when an id is out of range.
Frame detokenize(const TokenGrid& g, const Codebook& cb);

// codebook.bin: "FVCB", u32 version, u32 patch_size, u32 entry count, u32
// max_entries, then raw entries. All integers little-endian.
void save_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook load_codebook(const std::filesystem::path& path);
/// Human-readable summary written next to the binary file.
void save_codebook_summary(const std::filesystem::path& path, const Codebook& cb);

}  // namespace flowcot
