#include "cea/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace cea {

using nlohmann::json;

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optim.lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optim betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optim.eps must be > 0");
  if (batch < 1) throw ConfigError("optim.batch must be >= 1");
}

BackboneConfig RunConfig::model() const {
  BackboneConfig b = backbone;
  b.cea = cea;
  return b;
}

void RunConfig::validate() const {
  optim.validate();
  loss.validate();
  dataset.validate();
  const auto m = model();
  m.validate(m.levels_for(dataset.height, dataset.width));
  if (eval_split.empty()) throw ConfigError("eval_split must be non-empty");
}

namespace {

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<T>();
}

// Leaves of an object tree keyed by dotted path; arrays count as leaves.
void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j;
  }
}

template <class F>
auto field(const char* section, F&& parse) {
  try {
    return parse();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config section '") + section + "': " + e.what());
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  std::vector<std::string> targets;
  for (auto t : c.cea.targets) targets.push_back(to_string(t));
  const auto& b = c.backbone;
  const auto& o = c.optim;
  return json{
      {"seed", c.seed},
      {"out", c.out},
      {"threads", c.threads},
      {"eval_split", c.eval_split},
      {"backbone",
       {{"embed_dim", b.embed_dim},
        {"encoder_blocks", b.encoder_blocks},
        {"latent_blocks", b.latent_blocks},
        {"decoder_blocks", b.decoder_blocks},
        {"refinement_blocks", b.refinement_blocks},
        {"heads", b.heads},
        {"ffn_ratio", b.ffn_ratio},
        {"levels", opt_json(b.levels)},
        {"cea_enabled", b.cea_enabled}}},
      {"cea",
       {{"rank", c.cea.rank},
        {"alpha", opt_json(c.cea.alpha)},
        {"epsilon", c.cea.epsilon},
        {"routing", to_string(c.cea.routing)},
        {"top_k", c.cea.top_k},
        {"source", to_string(c.cea.source)},
        {"generator", to_string(c.cea.generator)},
        {"targets", targets},
        {"condense_stride", c.cea.condense_stride},
        {"adapter_heads", c.cea.adapter_heads}}},
      {"loss", {{"lambda_f", c.loss.lambda_f}}},
      {"optim",
       {{"lr", o.lr},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"eps", o.eps},
        {"steps", o.steps},
        {"epochs", opt_json(o.epochs)},
        {"batch", o.batch},
        {"cosine", o.cosine},
        {"flips", o.flips}}},
      {"dataset",
       {{"path", c.dataset_path},
        {"n_train", c.dataset.n_train},
        {"n_test", c.dataset.n_test},
        {"height", c.dataset.height},
        {"width", c.dataset.width},
        {"categories", c.dataset.categories}}},
  };
}

RunConfig run_config_from_json(const json& in) {
  if (!in.is_object()) throw ConfigError("config must be a JSON object");
  // Unknown keys are rejected so that typos in --set paths do not pass silently.
  std::map<std::string, json> known, given;
  flatten(to_json(RunConfig{}), "", known);
  flatten(in, "", given);
  for (const auto& [k, v] : given)
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");

  json j = to_json(RunConfig{});
  j.merge_patch(in);
  // merge_patch drops keys set to null; restore them as explicit nulls.
  for (const auto& [k, v] : given)
    if (v.is_null()) {
      const auto dot = k.find('.');
      if (dot != std::string::npos) j[k.substr(0, dot)][k.substr(dot + 1)] = nullptr;
    }

  RunConfig c;
  field("top", [&] {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out = j.at("out").get<std::string>();
    c.threads = j.at("threads").get<std::size_t>();
    c.eval_split = j.at("eval_split").get<std::string>();
    return 0;
  });
  field("backbone", [&] {
    const auto& b = j.at("backbone");
    c.backbone.embed_dim = b.at("embed_dim").get<std::size_t>();
    c.backbone.encoder_blocks = b.at("encoder_blocks").get<std::vector<std::size_t>>();
    c.backbone.latent_blocks = b.at("latent_blocks").get<std::size_t>();
    c.backbone.decoder_blocks = b.at("decoder_blocks").get<std::vector<std::size_t>>();
    c.backbone.refinement_blocks = b.at("refinement_blocks").get<std::size_t>();
    c.backbone.heads = b.at("heads").get<std::vector<std::size_t>>();
    c.backbone.ffn_ratio = b.at("ffn_ratio").get<std::size_t>();
    c.backbone.levels = opt_from<std::size_t>(b.at("levels"));
    c.backbone.cea_enabled = b.at("cea_enabled").get<bool>();
    return 0;
  });
  field("cea", [&] {
    const auto& e = j.at("cea");
    c.cea.rank = e.at("rank").get<std::size_t>();
    c.cea.alpha = opt_from<double>(e.at("alpha"));
    c.cea.epsilon = e.at("epsilon").get<double>();
    c.cea.routing = routing_from_string(e.at("routing").get<std::string>());
    c.cea.top_k = e.at("top_k").get<std::size_t>();
    c.cea.source = source_from_string(e.at("source").get<std::string>());
    c.cea.generator = generator_from_string(e.at("generator").get<std::string>());
    c.cea.targets.clear();
    for (const auto& t : e.at("targets")) c.cea.targets.push_back(target_from_string(t.get<std::string>()));
    c.cea.condense_stride = e.at("condense_stride").get<std::size_t>();
    c.cea.adapter_heads = e.at("adapter_heads").get<std::size_t>();
    return 0;
  });
  field("loss", [&] {
    c.loss.lambda_f = j.at("loss").at("lambda_f").get<double>();
    return 0;
  });
  field("optim", [&] {
    const auto& o = j.at("optim");
    c.optim.lr = o.at("lr").get<double>();
    c.optim.beta1 = o.at("beta1").get<double>();
    c.optim.beta2 = o.at("beta2").get<double>();
    c.optim.eps = o.at("eps").get<double>();
    c.optim.steps = o.at("steps").get<std::size_t>();
    c.optim.epochs = opt_from<std::size_t>(o.at("epochs"));
    c.optim.batch = o.at("batch").get<std::size_t>();
    c.optim.cosine = o.at("cosine").get<bool>();
    c.optim.flips = o.at("flips").get<bool>();
    return 0;
  });
  field("dataset", [&] {
    const auto& d = j.at("dataset");
    c.dataset_path = d.at("path").get<std::string>();
    c.dataset.n_train = d.at("n_train").get<std::size_t>();
    c.dataset.n_test = d.at("n_test").get<std::size_t>();
    c.dataset.height = d.at("height").get<std::size_t>();
    c.dataset.width = d.at("width").get<std::size_t>();
    c.dataset.categories = d.at("categories").get<std::vector<std::string>>();
    return 0;
  });
  c.dataset.threads = c.threads;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_json(cfg).dump(2) << '\n';
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  if (!node->is_object() || !node->contains(parts.back()))
    throw ConfigError("unknown config key '" + key + "'");
  (*node)[parts.back()] = value;
}

RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& assignments) {
  json j = to_json(base);
  for (const auto& a : assignments) apply_override(j, a);
  return run_config_from_json(j);
}

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  std::map<std::string, json> fa, fb;
  flatten(to_json(a), "", fa);
  flatten(to_json(b), "", fb);
  std::set<std::string> keys;
  for (const auto& [k, v] : fa) keys.insert(k);
  for (const auto& [k, v] : fb) keys.insert(k);
  std::vector<std::string> out;
  for (const auto& k : keys) {
    auto ia = fa.find(k), ib = fb.find(k);
    if (ia == fa.end() || ib == fb.end() || ia->second != ib->second) out.push_back(k);
  }
  return out;
}

}  // namespace cea
