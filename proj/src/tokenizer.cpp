#include "flowcot/tokenizer.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "flowcot/error.hpp"
#include "flowcot/hash.hpp"

namespace flowcot {

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'V', 'C', 'B'};
constexpr std::uint32_t kVersion = 1;

std::string key_of(std::span<const std::uint8_t> patch) {
  return {reinterpret_cast<const char*>(patch.data()), patch.size()};
}

void check_dims(const Frame& img, int p) {
  if (img.h % p != 0 || img.w % p != 0)
    throw DataError("image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                    " is not divisible by patch size " + std::to_string(p));
}

void extract_patch(const Frame& img, int p, int gy, int gx, std::vector<std::uint8_t>& out) {
  out.resize(static_cast<std::size_t>(p) * p * 3);
  for (int y = 0; y < p; ++y) {
    const std::size_t src = (static_cast<std::size_t>(gy * p + y) * img.w + gx * p) * 3;
    std::memcpy(out.data() + static_cast<std::size_t>(y) * p * 3, img.rgb.data() + src,
                static_cast<std::size_t>(p) * 3);
  }
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (in.gcount() != 4) throw DataError("truncated codebook header");
  return v;
}

}  // namespace

Codebook::Codebook(int patch_size, std::size_t max_entries)
    : patch_size_(patch_size), max_entries_(max_entries) {
  if (patch_size <= 0) throw ConfigError("patch_size must be positive");
  if (max_entries == 0) throw ConfigError("max_entries must be positive");
}

std::uint64_t Codebook::content_hash() const {
  Fnv1a64 h;
  const auto p = static_cast<std::uint32_t>(patch_size_);
  h.update(&p, sizeof(p));
  h.update(data_);
  return h.digest();
}

bool Codebook::find(std::span<const std::uint8_t> patch, std::uint32_t& id) const {
  const auto it = index_.find(key_of(patch));
  if (it == index_.end()) return false;
  id = it->second;
  return true;
}

std::uint32_t Codebook::insert(std::span<const std::uint8_t> patch) {
  std::uint32_t id;
  if (find(patch, id)) return id;
  if (size() >= max_entries_)
    throw CapacityError("codebook capacity " + std::to_string(max_entries_) +
                        " exceeded: the corpus has more distinct patches than allowed");
  id = static_cast<std::uint32_t>(size());
  data_.insert(data_.end(), patch.begin(), patch.end());
  index_.emplace(key_of(patch), id);
  return id;
}

std::uint32_t Codebook::nearest(std::span<const std::uint8_t> patch) const {
  std::uint32_t best = 0;
  std::uint64_t best_d = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t i = 0; i < size(); ++i) {
    const auto e = entry(i);
    std::uint64_t d = 0;
    for (std::size_t k = 0; k < e.size(); ++k) {
      const int diff = static_cast<int>(e[k]) - static_cast<int>(patch[k]);
      d += static_cast<std::uint64_t>(diff * diff);
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(i);
    }
  }
  return best;
}

CodebookBuilder::CodebookBuilder(int patch_size, std::size_t max_entries)
    : book_(patch_size, max_entries) {}

void CodebookBuilder::add(const Frame& img) {
  const int p = book_.patch_size();
  check_dims(img, p);
  std::vector<std::uint8_t> patch;
  for (int gy = 0; gy < img.h / p; ++gy)
    for (int gx = 0; gx < img.w / p; ++gx) {
      extract_patch(img, p, gy, gx, patch);
      book_.insert(patch);
    }
}

Codebook build_codebook(std::span<const Frame> corpus, int patch_size, std::size_t max_entries) {
  CodebookBuilder b(patch_size, max_entries);
  for (const auto& f : corpus) b.add(f);
  return std::move(b).finish();
}

TokenGrid tokenize(const Frame& img, const Codebook& cb) {
  const int p = cb.patch_size();
  check_dims(img, p);
  if (cb.size() == 0) throw DataError("cannot tokenize with an empty codebook");
  TokenGrid g{img.h / p, img.w / p, {}};
  g.ids.reserve(static_cast<std::size_t>(g.gh) * g.gw);
  std::vector<std::uint8_t> patch;
  for (int gy = 0; gy < g.gh; ++gy)
    for (int gx = 0; gx < g.gw; ++gx) {
      extract_patch(img, p, gy, gx, patch);
      std::uint32_t id;
      if (!cb.find(patch, id)) id = cb.nearest(patch);
      g.ids.push_back(id);
    }
  return g;
}

Frame detokenize(const TokenGrid& g, const Codebook& cb) {
  const int p = cb.patch_size();
  if (g.ids.size() != static_cast<std::size_t>(g.gh) * g.gw)
    throw DecodeError("token grid size does not match its dimensions");
  Frame img(g.gh * p, g.gw * p);
  for (int gy = 0; gy < g.gh; ++gy)
    for (int gx = 0; gx < g.gw; ++gx) {
      const std::uint32_t id = g.ids[static_cast<std::size_t>(gy) * g.gw + gx];
      if (id >= cb.size())
        throw DecodeError("token id " + std::to_string(id) + " out of range for codebook of " +
                          std::to_string(cb.size()));
      const auto e = cb.entry(id);
      for (int y = 0; y < p; ++y)
        std::memcpy(img.rgb.data() + (static_cast<std::size_t>(gy * p + y) * img.w + gx * p) * 3,
                    e.data() + static_cast<std::size_t>(y) * p * 3, static_cast<std::size_t>(p) * 3);
    }
  return img;
}

void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(cb.patch_size()));
  write_u32(out, static_cast<std::uint32_t>(cb.size()));
  write_u32(out, static_cast<std::uint32_t>(cb.max_entries()));
  for (std::size_t i = 0; i < cb.size(); ++i) {
    const auto e = cb.entry(i);
    out.write(reinterpret_cast<const char*>(e.data()), static_cast<std::streamsize>(e.size()));
  }
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (magic != kMagic) throw DataError(path.string() + ": bad codebook magic");
  if (read_u32(in) != kVersion) throw DataError(path.string() + ": unsupported codebook version");
  const auto patch = read_u32(in);
  const auto count = read_u32(in);
  const auto cap = read_u32(in);
  Codebook cb(static_cast<int>(patch), cap);
  std::vector<std::uint8_t> e(cb.entry_bytes());
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(e.data()), static_cast<std::streamsize>(e.size()));
    if (in.gcount() != static_cast<std::streamsize>(e.size()))
      throw DataError(path.string() + ": truncated codebook entries");
    if (cb.insert(e) != i) throw DataError(path.string() + ": duplicate codebook entry");
  }
  return cb;
}

void save_codebook_summary(const std::filesystem::path& path, const Codebook& cb) {
  nlohmann::ordered_json j;
  j["format"] = "FVCB";
  j["version"] = kVersion;
  j["patch_size"] = cb.patch_size();
  j["entries"] = cb.size();
  j["max_entries"] = cb.max_entries();
  j["content_hash"] = hex64(cb.content_hash());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace flowcot
