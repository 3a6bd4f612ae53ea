#include "cea/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cea/params.hpp"
#include "cea/serialize.hpp"

namespace cea {

using nlohmann::json;

const std::vector<std::string>& cdd11_categories() {
  static const std::vector<std::string> cats = {"L",   "H",   "R",   "S",     "L+H",  "L+R",
                                                "L+S", "H+R", "H+S", "L+H+R", "L+H+S"};
  return cats;
}

void DatasetConfig::validate() const {
  if (height == 0 || width == 0) throw ConfigError("dataset: image size must be positive");
  if (categories.empty()) throw ConfigError("dataset: at least one category is required");
  for (const auto& c : categories) sample_spec(c, 0).validate();
}

std::vector<const DatasetItem*> ToyDataset::split(const std::string& name) const {
  std::vector<const DatasetItem*> out;
  for (const auto& it : items)
    if (it.split == name) out.push_back(&it);
  return out;
}

namespace {

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

std::vector<std::string> split_tag(const std::string& category) {
  std::vector<std::string> parts;
  std::stringstream ss(category);
  std::string p;
  while (std::getline(ss, p, '+')) parts.push_back(p);
  return parts;
}

OpType op_for_letter(const std::string& s) {
  if (s == "L") return OpType::LowLight;
  if (s == "H") return OpType::Haze;
  if (s == "R") return OpType::Rain;
  if (s == "S") return OpType::Snow;
  if (s == "N") return OpType::Noise;
  if (s == "B") return OpType::Blur;
  throw ConfigError("unknown degradation category tag '" + s + "'");
}

}  // namespace

Tensor procedural_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto color = [&] { return std::array<double, 3>{u(rng), u(rng), u(rng)}; };
  const double fh = static_cast<double>(h), fw = static_cast<double>(w);
  std::vector<double> img(h * w * 3);
  const int base = static_cast<int>(rng() % 3);
  const auto c0 = color(), c1 = color();
  const double ang = u(rng) * 2.0 * std::numbers::pi;
  const double cells = 2.0 + static_cast<double>(rng() % 4);
  std::array<std::array<double, 4>, 3> modes{};
  for (auto& m : modes) m = {0.5 + 1.5 * u(rng), 0.5 + 1.5 * u(rng), 2.0 * std::numbers::pi * u(rng), u(rng)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / fw, py = (static_cast<double>(y) + 0.5) / fh;
      for (std::size_t c = 0; c < 3; ++c) {
        double t = 0.0;
        if (base == 0) {
          t = 0.5 + 0.5 * ((px - 0.5) * std::cos(ang) + (py - 0.5) * std::sin(ang)) * 1.4;
        } else if (base == 1) {
          const auto ix = static_cast<long>(std::floor(px * cells));
          const auto iy = static_cast<long>(std::floor(py * cells));
          t = ((ix + iy) % 2 == 0) ? 0.15 : 0.85;
        } else {
          for (std::size_t k = 0; k < 3; ++k) {
            const auto& m = modes[k];
            t += std::cos(2.0 * std::numbers::pi * (m[0] * px + m[1] * py) + m[2] +
                          static_cast<double>(c) * m[3]);
          }
          t = 0.5 + t / 6.0;
        }
        t = std::clamp(t, 0.0, 1.0);
        img[(y * w + x) * 3 + c] = c0[c] * (1.0 - t) + c1[c] * t;
      }
    }
  const int shapes = static_cast<int>(rng() % 4);
  for (int s = 0; s < shapes; ++s) {
    const auto col = color();
    const bool disc = (rng() & 1U) != 0;
    const double cx = u(rng) * fw, cy = u(rng) * fh;
    const double rx = (0.1 + 0.25 * u(rng)) * fw, ry = (0.1 + 0.25 * u(rng)) * fh;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
        const double d = disc ? std::sqrt(dx * dx + dy * dy) : std::max(std::abs(dx), std::abs(dy));
        const double a = 1.0 - smoothstep(0.9, 1.1, d);
        if (a <= 0.0) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          auto& v = img[(y * w + x) * 3 + c];
          v = v * (1.0 - a) + col[c] * a;
        }
      }
  }
  for (auto& v : img) v = 0.05 + 0.9 * std::clamp(v, 0.0, 1.0);
  return Tensor::from({h, w, 3}, std::move(img));
}

DegradationSpec sample_spec(const std::string& category, std::uint64_t seed) {
  DegradationSpec spec;
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  for (const auto& tag : split_tag(category)) {
    DegradationOp op;
    op.type = op_for_letter(tag);
    op.seed = mix_seed(rng());
    switch (op.type) {
      case OpType::LowLight:
        op.params = {{"gamma", range(1.5, 2.5)}, {"scale", range(0.35, 0.7)}};
        break;
      case OpType::Haze: op.params = {{"t0", range(0.3, 0.6)}, {"airlight", range(0.75, 1.0)}}; break;
      case OpType::Rain:
        op.params = {{"density", range(0.01, 0.02)},
                     {"angle", range(-0.5, 0.5)},
                     {"intensity", range(0.6, 0.9)}};
        break;
      case OpType::Snow:
        op.params = {{"density", range(0.005, 0.012)}, {"flake_size", range(1.0, 2.0)}};
        break;
      case OpType::Noise: {
        static constexpr double kLevels[] = {15.0, 25.0, 50.0};
        op.params = {{"sigma", kLevels[rng() % 3]}};
        break;
      }
      case OpType::Blur: op.params = {{"sigma", range(0.8, 1.6)}}; break;
    }
    spec.chain.push_back(std::move(op));
  }
  spec.validate();
  return spec;
}

ToyDataset build_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ToyDataset ds;
  ds.config = cfg;
  ds.seed = seed;
  const auto push_split = [&](const std::string& split, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      DatasetItem it;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s_%04zu", split.c_str(), i);
      it.id = buf;
      it.split = split;
      it.category = cfg.categories[i % cfg.categories.size()];
      ds.items.push_back(std::move(it));
    }
  };
  push_split("train", cfg.n_train);
  push_split("test", cfg.n_test);

  const auto fill = [&](std::size_t i) {
    auto& it = ds.items[i];
    const auto s = derive_seed(seed, it.id);
    it.clean = procedural_image(cfg.height, cfg.width, mix_seed(s ^ 0x1ULL));
    it.spec = sample_spec(it.category, mix_seed(s ^ 0x2ULL));
    it.degraded = compose(it.spec, it.clean);
  };
  const auto workers = std::max<std::size_t>(1, std::min(cfg.threads, ds.items.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < ds.items.size(); ++i) fill(i);
  } else {
    // Items are independent; each worker writes only its own slots.
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < ds.items.size(); i += workers) fill(i);
      });
    for (auto& th : pool) th.join();
  }
  return ds;
}

namespace {

json spec_to_json(const DegradationSpec& spec) {
  json chain = json::array();
  for (const auto& op : spec.chain) {
    json params = json::object();
    for (const auto& [k, v] : op.params) params[k] = v;
    chain.push_back({{"type", to_string(op.type)}, {"params", params}, {"seed", op.seed}});
  }
  return chain;
}

DegradationSpec spec_from_json(const json& chain, std::uint64_t seed) {
  DegradationSpec spec;
  spec.seed = seed;
  for (const auto& j : chain) {
    DegradationOp op;
    op.type = op_from_string(j.at("type").get<std::string>());
    op.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [k, v] : j.at("params").items()) op.params[k] = v.get<double>();
    spec.chain.push_back(std::move(op));
  }
  return spec;
}

}  // namespace

void write_dataset(const ToyDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "clean", ec);
  fs::create_directories(dir / "degraded", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  json items = json::array();
  for (const auto& it : ds.items) {
    save_tensor(dir / "clean" / (it.id + ".ceat"), it.clean);
    save_tensor(dir / "degraded" / (it.id + ".ceat"), it.degraded);
    items.push_back({{"id", it.id},
                     {"split", it.split},
                     {"category", it.category},
                     {"spec_seed", it.spec.seed},
                     {"chain", spec_to_json(it.spec)}});
  }
  json cats = ds.config.categories;
  json manifest = {{"format", "cea-toy-dataset"},
                   {"version", 1},
                   {"seed", ds.seed},
                   {"config",
                    {{"n_train", ds.config.n_train},
                     {"n_test", ds.config.n_test},
                     {"height", ds.config.height},
                     {"width", ds.config.width},
                     {"categories", cats}}},
                   {"items", items}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
  if (!os) throw IoError("manifest write failed in " + dir.string());
}

ToyDataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed,
                            const std::filesystem::path& dir) {
  auto ds = build_dataset(cfg, seed);
  write_dataset(ds, dir);
  return ds;
}

ToyDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("no manifest.json in " + dir.string());
  json m;
  try {
    is >> m;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  ToyDataset ds;
  ds.seed = m.at("seed").get<std::uint64_t>();
  const auto& c = m.at("config");
  ds.config.n_train = c.at("n_train").get<std::size_t>();
  ds.config.n_test = c.at("n_test").get<std::size_t>();
  ds.config.height = c.at("height").get<std::size_t>();
  ds.config.width = c.at("width").get<std::size_t>();
  ds.config.categories = c.at("categories").get<std::vector<std::string>>();
  for (const auto& j : m.at("items")) {
    DatasetItem it;
    it.id = j.at("id").get<std::string>();
    it.split = j.at("split").get<std::string>();
    it.category = j.at("category").get<std::string>();
    it.spec = spec_from_json(j.at("chain"), j.at("spec_seed").get<std::uint64_t>());
    it.clean = load_tensor(dir / "clean" / (it.id + ".ceat"));
    it.degraded = load_tensor(dir / "degraded" / (it.id + ".ceat"));
    if (it.clean.shape() != it.degraded.shape())
      throw DimensionError("dataset item " + it.id + ": clean/degraded shapes differ");
    ds.items.push_back(std::move(it));
  }
  return ds;
}

}  // namespace cea
