#include "flowcot/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "flowcot/config.hpp"
#include "flowcot/error.hpp"
#include "flowcot/hash.hpp"

namespace flowcot {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'V', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kFormatVersion = 1;

}  // namespace

std::uint64_t params_hash(const ModelParams<float>& p) {
  Fnv1a64 h;
  h.update(p.values.data(), p.values.size() * sizeof(float));
  return h.digest();
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  Json tensors = Json::array();
  for (const auto& t : param_layout(c.params.config))
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  const Json header = {{"format", "flowcot-checkpoint"},
                       {"version", kFormatVersion},
                       {"model", to_json(c.params.config)},
                       {"vocab", to_json(c.params.config.vocab)},
                       {"layout", layout_name(c.layout)},
                       {"window", c.window},
                       {"step", c.step},
                       {"content_hash", hex64(params_hash(c.params))},
                       {"codebook_hash", hex64(c.codebook_hash)},
                       {"world", to_json(c.world)},
                       {"sigma", c.codec.sigma},
                       {"blank_instruction", c.blank_instruction},
                       {"train_seeds", c.train_seeds},
                       {"tensors", tensors}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  const fs::path tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(c.params.values.data()),
              static_cast<std::streamsize>(c.params.values.size() * sizeof(float)));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 8 || magic != kMagic) throw DataError(path.string() + " is not a flowcot checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 28)) throw DataError(path.string() + ": bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated header");

  Checkpoint c;
  std::uint64_t want_hash = 0;
  try {
    const Json h = Json::parse(text);
    if (h.at("format") != "flowcot-checkpoint" || h.at("version").get<int>() != kFormatVersion)
      throw DataError(path.string() + ": unsupported checkpoint version");
    ModelConfig mc = model_from_json(h.at("model"));
    mc.vocab = vocab_from_json(h.at("vocab"));
    mc.validate();
    c.params.config = mc;
    c.layout = parse_layout(h.at("layout").get<std::string>());
    c.window = h.at("window").get<int>();
    c.step = h.at("step").get<std::int64_t>();
    want_hash = std::stoull(h.at("content_hash").get<std::string>(), nullptr, 16);
    c.codebook_hash = std::stoull(h.at("codebook_hash").get<std::string>(), nullptr, 16);
    c.world = world_from_json(h.at("world"));
    c.codec.sigma = h.at("sigma").get<double>();
    c.blank_instruction = h.at("blank_instruction").get<bool>();
    c.train_seeds = h.at("train_seeds").get<std::vector<std::uint64_t>>();
    const auto layout = param_layout(mc);
    const auto& tensors = h.at("tensors");
    if (tensors.size() != layout.size()) throw DataError(path.string() + ": tensor list mismatch");
    for (std::size_t i = 0; i < layout.size(); ++i)
      if (tensors[i].at("name") != layout[i].name || tensors[i].at("rows").get<int>() != layout[i].rows ||
          tensors[i].at("cols").get<int>() != layout[i].cols)
        throw DataError(path.string() + ": tensor " + layout[i].name + " shape mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  c.params.values.resize(param_count(c.params.config));
  in.read(reinterpret_cast<char*>(c.params.values.data()),
          static_cast<std::streamsize>(c.params.values.size() * sizeof(float)));
  if (!in) throw DataError(path.string() + ": truncated tensor data");
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes");
  if (params_hash(c.params) != want_hash) throw DataError(path.string() + ": content hash mismatch");
  return c;
}

Codebook load_checkpoint_codebook(const fs::path& ckpt_path, const Checkpoint& ckpt) {
  const fs::path cb_path = ckpt_path.parent_path() / "codebook.bin";
  Codebook cb = load_codebook(cb_path);
  if (cb.content_hash() != ckpt.codebook_hash)
    throw DataError(cb_path.string() + " does not match the checkpoint's codebook hash");
  if (cb.size() != ckpt.params.config.vocab.n_code)
    throw DataError(cb_path.string() + " size does not match the checkpoint vocabulary");
  return cb;
}

}  // namespace flowcot
