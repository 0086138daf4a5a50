#include "flowcot/dataset.hpp"

#include <fstream>
#include <iterator>

#include "flowcot/config.hpp"
#include "flowcot/error.hpp"
#include "flowcot/hash.hpp"
#include "flowcot/parallel.hpp"

namespace flowcot {

namespace fs = std::filesystem;

namespace {

Action parse_action(const std::string& name) {
  for (int a = 0; a < kNumActions; ++a)
    if (name == action_name(static_cast<Action>(a))) return static_cast<Action>(a);
  throw DataError("unknown action '" + name + "'");
}

std::string frame_name(int t) { return "frame_" + std::to_string(t) + ".ppm"; }
std::string flow_name(int t) { return "flow_" + std::to_string(t) + ".f32"; }

Json manifest_json(const DatasetManifest& m) {
  return {{"format_version", m.format_version},
          {"world", to_json(m.world)},
          {"seed_start", m.seed_start},
          {"episodes", m.seeds.size()},
          {"frames", m.frames},
          {"transitions", m.transitions},
          {"seeds", m.seeds},
          {"skipped", m.skipped}};
}

}  // namespace

fs::path episode_dir(const fs::path& dir, std::uint64_t seed) { return dir / ("ep_" + std::to_string(seed)); }

std::vector<std::uint64_t> successful_seeds(const WorldConfig& cfg, std::uint64_t seed_start, int n,
                                            std::vector<std::uint64_t>* skipped) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t s = seed_start; static_cast<int>(out.size()) < n; ++s) {
    if (gen_episode(cfg, s).success)
      out.push_back(s);
    else if (skipped)
      skipped->push_back(s);
  }
  return out;
}

void write_episode(const fs::path& ep_dir, const Episode& ep, const WorldConfig& cfg) {
  fs::create_directories(ep_dir);
  for (std::size_t t = 0; t < ep.frames.size(); ++t) write_ppm(ep_dir / frame_name(static_cast<int>(t)), ep.frames[t]);
  for (std::size_t t = 0; t < ep.flows.size(); ++t) write_flow(ep_dir / flow_name(static_cast<int>(t)), ep.flows[t]);
  Json actions = Json::array();
  for (Action a : ep.actions) actions.push_back(action_name(a));
  const Json meta = {{"seed", ep.seed},
                     {"instruction", {{"text", ep.instruction.text}, {"tokens", ep.instruction.tokens}}},
                     {"actions", actions},
                     {"T", ep.length()},
                     {"success", ep.success},
                     {"grid", {cfg.grid_h, cfg.grid_w}}};
  write_json_file(ep_dir / "meta.json", meta);
}

Episode read_episode(const fs::path& dir, std::uint64_t seed, const WorldConfig& cfg) {
  const fs::path ep_dir = episode_dir(dir, seed);
  Json meta;
  try {
    meta = read_json_file(ep_dir / "meta.json");
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  Episode ep;
  try {
    ep.seed = meta.at("seed").get<std::uint64_t>();
    ep.instruction.text = meta.at("instruction").at("text").get<std::string>();
    ep.instruction.tokens = meta.at("instruction").at("tokens").get<std::vector<std::uint32_t>>();
    for (const auto& a : meta.at("actions")) ep.actions.push_back(parse_action(a.get<std::string>()));
    ep.success = meta.at("success").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(ep_dir.string() + "/meta.json: " + e.what());
  }
  if (ep.seed != seed) throw DataError(ep_dir.string() + ": seed mismatch in meta.json");
  const int T = ep.length();
  for (int t = 0; t <= T; ++t) {
    Frame f = read_ppm(ep_dir / frame_name(t));
    if (f.h != cfg.grid_h || f.w != cfg.grid_w) throw DataError(ep_dir.string() + ": frame size mismatch");
    ep.frames.push_back(std::move(f));
  }
  for (int t = 0; t < T; ++t) ep.flows.push_back(read_flow(ep_dir / flow_name(t), cfg.grid_h, cfg.grid_w));
  return ep;
}

DatasetManifest write_dataset(const fs::path& dir, const WorldConfig& cfg, int n_episodes,
                              std::uint64_t seed_start, int threads) {
  cfg.validate();
  if (n_episodes < 0) throw ConfigError("episode count must be nonnegative");
  fs::create_directories(dir);
  DatasetManifest m;
  m.world = cfg;
  m.seed_start = seed_start;
  // Candidates are generated in parallel batches and kept in seed order.
  constexpr int kBatch = 64;
  std::uint64_t next = seed_start;
  while (static_cast<int>(m.seeds.size()) < n_episodes) {
    std::vector<Episode> batch(kBatch);
    parallel_for(kBatch, threads, [&](int i) { batch[i] = gen_episode(cfg, next + static_cast<std::uint64_t>(i)); });
    std::vector<int> keep;
    for (int i = 0; i < kBatch && static_cast<int>(m.seeds.size() + keep.size()) < n_episodes; ++i) {
      if (batch[i].success)
        keep.push_back(i);
      else
        m.skipped.push_back(batch[i].seed);
    }
    parallel_for(static_cast<int>(keep.size()), threads, [&](int k) {
      const Episode& ep = batch[keep[k]];
      write_episode(episode_dir(dir, ep.seed), ep, cfg);
    });
    for (int i : keep) {
      m.seeds.push_back(batch[i].seed);
      m.frames += static_cast<std::int64_t>(batch[i].frames.size());
      m.transitions += batch[i].length();
    }
    next += kBatch;
  }
  write_json_file(dir / "manifest.json", manifest_json(m));
  return m;
}

DatasetManifest read_manifest(const fs::path& dir) {
  Json j;
  try {
    j = read_json_file(dir / "manifest.json");
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kDatasetFormatVersion)
      throw DataError("unsupported dataset format version " + std::to_string(m.format_version));
    m.world = world_from_json(j.at("world"));
    m.seed_start = j.at("seed_start").get<std::uint64_t>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.skipped = j.at("skipped").get<std::vector<std::uint64_t>>();
    m.frames = j.at("frames").get<std::int64_t>();
    m.transitions = j.at("transitions").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  return m;
}

std::uint64_t manifest_hash(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Fnv1a64 h;
  h.update(bytes);
  return h.digest();
}

}  // namespace flowcot
