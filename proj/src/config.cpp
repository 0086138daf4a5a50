#include "flowcot/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "flowcot/error.hpp"

namespace flowcot {

namespace {

// Tracks which keys of an object were consumed so leftovers can be rejected.
class Reader {
 public:
  Reader(const Json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw ConfigError("section '" + section_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad value for " + section_ + "." + key + ": " + it->dump());
    }
  }

  const Json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + section_ + "." + it.key());
  }

 private:
  const Json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

Json rgb_json(Rgb c) { return Json::array({c.r, c.g, c.b}); }

Rgb rgb_from(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(what + " must be [r, g, b]");
  Rgb c;
  std::uint8_t* ch[3] = {&c.r, &c.g, &c.b};
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number_integer() || j[i].get<int>() < 0 || j[i].get<int>() > 255)
      throw ConfigError(what + " channels must be integers in [0, 255]");
    *ch[i] = static_cast<std::uint8_t>(j[i].get<int>());
  }
  return c;
}

}  // namespace

Json to_json(const WorldConfig& c) {
  Json colors = Json::array();
  for (const auto& nc : c.block_colors) colors.push_back({{"name", nc.name}, {"rgb", rgb_json(nc.rgb)}});
  return {{"grid_h", c.grid_h},
          {"grid_w", c.grid_w},
          {"sprite_size", c.sprite_size},
          {"n_blocks", c.n_blocks},
          {"block_colors", colors},
          {"agent_color", rgb_json(c.agent_color)},
          {"background", rgb_json(c.background)},
          {"outline", rgb_json(c.outline)},
          {"max_speed", c.max_speed},
          {"horizon_max", c.horizon_max},
          {"seed", c.seed}};
}

WorldConfig world_from_json(const Json& j) {
  WorldConfig c;
  Reader r(j, "world");
  r.get("grid_h", c.grid_h);
  r.get("grid_w", c.grid_w);
  r.get("sprite_size", c.sprite_size);
  r.get("n_blocks", c.n_blocks);
  r.get("max_speed", c.max_speed);
  r.get("horizon_max", c.horizon_max);
  r.get("seed", c.seed);
  if (const Json* colors = r.sub("block_colors")) {
    if (!colors->is_array()) throw ConfigError("world.block_colors must be an array");
    c.block_colors.clear();
    for (const auto& e : *colors) {
      NamedColor nc;
      Reader er(e, "world.block_colors[]");
      er.get("name", nc.name);
      if (const Json* rgb = er.sub("rgb")) nc.rgb = rgb_from(*rgb, "world.block_colors[].rgb");
      er.finish();
      c.block_colors.push_back(nc);
    }
  }
  if (const Json* a = r.sub("agent_color")) c.agent_color = rgb_from(*a, "world.agent_color");
  if (const Json* b = r.sub("background")) c.background = rgb_from(*b, "world.background");
  if (const Json* o = r.sub("outline")) c.outline = rgb_from(*o, "world.outline");
  r.finish();
  c.validate();
  return c;
}

Json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},
          {"max_seq_len", c.max_seq_len}};
}

ModelConfig model_from_json(const Json& j) {
  ModelConfig c;
  Reader r(j, "model");
  r.get("d_model", c.d_model);
  r.get("n_layers", c.n_layers);
  r.get("n_heads", c.n_heads);
  r.get("d_ff", c.d_ff);
  r.get("max_seq_len", c.max_seq_len);
  r.finish();
  if (c.d_model <= 0 || c.n_layers <= 0 || c.n_heads <= 0 || c.d_ff <= 0 || c.max_seq_len <= 0)
    throw ConfigError("model dimensions must be positive");
  if (c.d_model % c.n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  return c;
}

Json to_json(const VocabLayout& v) {
  return {{"n_special", v.n_special}, {"n_text", v.n_text}, {"n_code", v.n_code}, {"n_action", v.n_action}};
}

VocabLayout vocab_from_json(const Json& j) {
  VocabLayout v;
  Reader r(j, "vocab");
  r.get("n_special", v.n_special);
  r.get("n_text", v.n_text);
  r.get("n_code", v.n_code);
  r.get("n_action", v.n_action);
  r.finish();
  v.validate();
  return v;
}

Json to_json(const TrainConfig& c) {
  return {{"layout", layout_name(c.layout)},
          {"lambda", c.lambda},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"eval_every", c.eval_every},
          {"seed", c.seed},
          {"data_fraction", c.data_fraction},
          {"window", c.window},
          {"stop_below", c.stop_below},
          {"lr_decay_steps", c.lr_decay_steps},
          {"train_eval_windows", c.train_eval_windows},
          {"eval_episodes", c.eval_episodes},
          {"eval_seed_base", c.eval_seed_base},
          {"eval_max_windows", c.eval_max_windows},
          {"blank_instruction", c.blank_instruction}};
}

TrainConfig train_from_json(const Json& j) {
  TrainConfig c;
  Reader r(j, "train");
  std::string layout = layout_name(c.layout);
  r.get("layout", layout);
  c.layout = parse_layout(layout);
  r.get("lambda", c.lambda);
  r.get("lr", c.lr);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("eps", c.eps);
  r.get("batch_size", c.batch_size);
  r.get("steps", c.steps);
  r.get("eval_every", c.eval_every);
  r.get("seed", c.seed);
  r.get("data_fraction", c.data_fraction);
  r.get("window", c.window);
  r.get("stop_below", c.stop_below);
  r.get("lr_decay_steps", c.lr_decay_steps);
  r.get("train_eval_windows", c.train_eval_windows);
  r.get("eval_episodes", c.eval_episodes);
  r.get("eval_seed_base", c.eval_seed_base);
  r.get("eval_max_windows", c.eval_max_windows);
  r.get("blank_instruction", c.blank_instruction);
  r.finish();
  c.validate();
  return c;
}

Json to_json(const RunConfig& c) {
  return {{"world", to_json(c.world)},
          {"flow", {{"sigma", c.flow.sigma}}},
          {"tokenizer", {{"patch_size", c.tokenizer.patch_size}, {"max_entries", c.tokenizer.max_entries}}},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"policy", to_json(c.policy)},
          {"experiment",
           {{"data", c.experiment.data},
            {"codebook", c.experiment.codebook},
            {"out", c.experiment.out},
            {"init", c.experiment.init},
            {"episodes", c.experiment.episodes},
            {"data_seed", c.experiment.data_seed},
            {"seeds", c.experiment.seeds},
            {"fractions", c.experiment.fractions}}}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  Reader r(j, "config");
  if (const Json* w = r.sub("world")) c.world = world_from_json(*w);
  if (const Json* f = r.sub("flow")) {
    Reader fr(*f, "flow");
    fr.get("sigma", c.flow.sigma);
    fr.finish();
    c.flow.validate();
  }
  if (const Json* t = r.sub("tokenizer")) {
    Reader tr(*t, "tokenizer");
    tr.get("patch_size", c.tokenizer.patch_size);
    tr.get("max_entries", c.tokenizer.max_entries);
    tr.finish();
    if (c.tokenizer.patch_size <= 0 || c.tokenizer.max_entries <= 0)
      throw ConfigError("tokenizer sizes must be positive");
  }
  if (const Json* m = r.sub("model")) c.model = model_from_json(*m);
  if (const Json* t = r.sub("train")) c.train = train_from_json(*t);
  if (const Json* p = r.sub("policy")) {
    c.policy = train_from_json(*p);
  }
  if (c.train.layout == Layout::kPolicy) throw ConfigError("train.layout must be a world-model layout");
  c.policy.layout = Layout::kPolicy;
  if (const Json* e = r.sub("experiment")) {
    Reader er(*e, "experiment");
    er.get("data", c.experiment.data);
    er.get("codebook", c.experiment.codebook);
    er.get("out", c.experiment.out);
    er.get("init", c.experiment.init);
    er.get("episodes", c.experiment.episodes);
    er.get("data_seed", c.experiment.data_seed);
    er.get("seeds", c.experiment.seeds);
    er.get("fractions", c.experiment.fractions);
    er.finish();
    if (c.experiment.episodes < 0) throw ConfigError("experiment.episodes must be nonnegative");
    for (double f : c.experiment.fractions)
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("experiment.fractions must lie in (0, 1]");
  }
  r.finish();
  return c;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json_file(path));
}

void apply_seed_override(RunConfig& c) {
  const char* env = std::getenv("FLOWCOT_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("FLOWCOT_SEED is not an integer: ") + env);
  c.train.seed = v;
  c.policy.seed = v;
}

}  // namespace flowcot
