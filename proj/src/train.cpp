#include "cea/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "cea/ops.hpp"
#include "cea/serialize.hpp"

namespace cea {

using nlohmann::json;

Adam::Adam(const ParamStore& params, const OptimConfig& cfg) : params_(params), cfg_(cfg) {
  cfg_.validate();
  for (const auto& [name, t] : params_.all()) {
    m_[name].assign(t.numel(), 0.0);
    v_[name].assign(t.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, t] : params_.all()) {
    if (!t.has_grad()) continue;
    auto p = Tensor(t).mutable_data();
    const auto g = Tensor(t).mutable_grad();
    auto& m = m_.at(name);
    auto& v = v_.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

std::size_t planned_steps(const OptimConfig& cfg, std::size_t n_train) {
  if (!cfg.epochs) return cfg.steps;
  return *cfg.epochs * ((n_train + cfg.batch - 1) / cfg.batch);
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// First non-finite tensor: parameters by name, then graph nodes in forward order.
std::string first_non_finite(const ParamStore& params, const Tensor& loss) {
  for (const auto& [name, t] : params.all()) {
    if (!all_finite(t.data())) return "parameter '" + name + "'";
    if (t.has_grad() && !all_finite(Tensor(t).mutable_grad())) return "gradient of '" + name + "'";
  }
  ComputationTape tape(loss);
  std::size_t i = 0;
  for (auto* node : tape.nodes()) {
    if (!all_finite(node->data))
      return "intermediate #" + std::to_string(i) + " (" + node->op + ", shape " +
             shape_str(node->shape) + ")";
    ++i;
  }
  return "loss";
}

}  // namespace

TrainResult train_model(const RunConfig& cfg, const ToyDataset& data) {
  cfg.validate();
  const auto train = data.split("train");
  const auto h = data.config.height, w = data.config.width;
  TrainResult res{make_restorer(cfg.model(), h, w, cfg.seed), {}, 0.0, 0.0};
  auto& state = res.state;
  const auto total = planned_steps(cfg.optim, train.size());
  if (total == 0 || train.empty()) return res;

  Adam adam(state.params, cfg.optim);
  std::mt19937_64 rng(derive_seed(cfg.seed, "data-order"));
  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size(), epoch = 0, consumed = 0;
  const auto next_index = [&] {
    if (cursor == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(order[i], order[pick(rng)]);
      }
      cursor = 0;
    }
    ++consumed;
    return order[cursor++];
  };

  const double inv_batch = 1.0 / static_cast<double>(cfg.optim.batch);
  for (std::size_t step = 0; step < total; ++step) {
    epoch = consumed / train.size();
    state.params.zero_grad();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < cfg.optim.batch; ++b) {
      const auto* item = train[next_index()];
      Tensor x = item->degraded, y = item->clean;
      if (cfg.optim.flips) {
        const bool fh = (rng() & 1U) != 0, fv = (rng() & 1U) != 0;
        if (fh || fv) {
          x = flip(x, fh, fv);
          y = flip(y, fh, fv);
        }
      }
      Tensor loss = loss_total(restore(x, state), y, cfg.loss);
      if (!std::isfinite(loss.item()))
        throw NumericError("non-finite loss at step " + std::to_string(step) + " on " + item->id +
                           "; first non-finite tensor: " + first_non_finite(state.params, loss));
      batch_loss += loss.item();
      backward(scale(loss, inv_batch));
    }
    batch_loss *= inv_batch;
    for (const auto& [name, t] : state.params.all())
      if (t.has_grad() && !all_finite(Tensor(t).mutable_grad()))
        throw NumericError("non-finite gradient at step " + std::to_string(step) +
                           " for parameter '" + name + "'");
    const double lr = cfg.optim.cosine ? cosine_lr(cfg.optim.lr, step, total) : cfg.optim.lr;
    adam.step(lr);
    if (step == 0) res.initial_loss = batch_loss;
    res.final_loss = batch_loss;
    res.log.push_back({step, epoch, lr, batch_loss});
  }
  state.params.zero_grad();
  return res;
}

std::string group_of(const std::string& category) {
  const auto n = std::count(category.begin(), category.end(), '+');
  switch (n) {
    case 0: return "Single";
    case 1: return "Double";
    case 2: return "Triple";
    default: return "Other";
  }
}

EvalReport aggregate(std::vector<MetricRecord> records) {
  EvalReport rep;
  std::map<std::string, std::vector<const MetricRecord*>> by_cat;
  for (const auto& r : records) by_cat[r.category].push_back(&r);
  for (const auto& [cat, rows] : by_cat) {
    // Identical-image PSNR sentinels are excluded from the PSNR mean.
    GroupMeans g;
    std::size_t finite = 0;
    for (const auto* r : rows) {
      if (!r->identical()) {
        g.psnr += r->psnr_db;
        ++finite;
      }
      g.ssim += r->ssim;
    }
    g.count = rows.size();
    g.psnr = finite ? g.psnr / static_cast<double>(finite) : std::numeric_limits<double>::infinity();
    g.ssim /= static_cast<double>(rows.size());
    rep.categories[cat] = g;
  }
  for (const auto& [cat, m] : rep.categories) {
    for (const auto& name : {group_of(cat), std::string("Avg")}) {
      auto& g = rep.groups[name];
      g.psnr += m.psnr;
      g.ssim += m.ssim;
      ++g.count;
    }
  }
  for (auto& [name, g] : rep.groups) {
    g.psnr /= static_cast<double>(g.count);
    g.ssim /= static_cast<double>(g.count);
  }
  rep.records = std::move(records);
  return rep;
}

EvalReport evaluate(const RestorerState& state, const ToyDataset& data, const std::string& split,
                    std::size_t threads) {
  const auto items = data.split(split);
  std::vector<MetricRecord> rows(items.size());
  const auto score = [&](std::size_t i) {
    NoGradGuard guard;
    const auto* it = items[i];
    const Tensor out = restore(it->degraded, state);
    rows[i] = {it->id, psnr(out, it->clean), ssim(out, it->clean), it->category};
  };
  const auto workers = std::max<std::size_t>(1, std::min(threads, items.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) score(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < items.size(); i += workers) score(i);
      });
    for (auto& th : pool) th.join();
  }
  return aggregate(std::move(rows));
}

EvalReport evaluate_identity(const ToyDataset& data, const std::string& split) {
  std::vector<MetricRecord> rows;
  for (const auto* it : data.split(split))
    rows.push_back({it->id, psnr(it->degraded, it->clean), ssim(it->degraded, it->clean),
                    it->category});
  return aggregate(std::move(rows));
}

json eval_to_json(const EvalReport& r) {
  json cats = json::object(), groups = json::object();
  for (const auto& [k, g] : r.categories)
    cats[k] = {{"psnr_db", g.psnr}, {"ssim", g.ssim}, {"count", g.count}};
  for (const auto& [k, g] : r.groups)
    groups[k] = {{"psnr_db", g.psnr}, {"ssim", g.ssim}, {"categories", g.count}};
  return {{"n_images", r.records.size()}, {"categories", cats}, {"groups", groups}};
}

std::string eval_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "category    n   PSNR    SSIM\n";
  for (const auto& [k, g] : r.categories)
    os << std::left << std::setw(10) << k << std::right << std::setw(3) << g.count << "  "
       << std::setw(6) << g.psnr << "  " << std::setprecision(4) << g.ssim << std::setprecision(2)
       << '\n';
  os << "group       PSNR    SSIM\n";
  for (const auto* name : {"Single", "Double", "Triple", "Avg"}) {
    auto it = r.groups.find(name);
    if (it == r.groups.end()) continue;
    os << std::left << std::setw(10) << name << std::right << std::setw(6) << it->second.psnr
       << "  " << std::setprecision(4) << it->second.ssim << std::setprecision(2) << '\n';
  }
  return os.str();
}

RestorerState load_restorer(const std::filesystem::path& checkpoint, const RunConfig& cfg) {
  auto state = make_restorer(cfg.model(), cfg.dataset.height, cfg.dataset.width, cfg.seed);
  try {
    state.params.load(load_checkpoint(checkpoint));
  } catch (const std::invalid_argument& e) {
    throw DimensionError("checkpoint " + checkpoint.string() + " is incompatible with config: " +
                         e.what());
  }
  return state;
}

RunArtifacts run_training(const RunConfig& cfg, const ToyDataset& data,
                          const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  RunArtifacts art;
  art.dir = dir;
  save_run_config(dir / "config.json", cfg);

  art.result = train_model(cfg, data);
  const auto& state = art.result.state;
  art.checkpoint = dir / "checkpoint.ceak";
  save_checkpoint(art.checkpoint, state.params.all());
  json params = json::object();
  for (const auto& [name, t] : state.params.all()) params[name] = t.shape();
  {
    std::ofstream os(dir / "checkpoint.json", std::ios::trunc);
    os << json{{"seed", cfg.seed},
               {"steps", art.result.log.size()},
               {"levels", state.levels},
               {"height", data.config.height},
               {"width", data.config.width},
               {"parameters", params},
               {"parameter_count", state.params.total_elements()},
               {"config", to_json(cfg)}}
              .dump(2)
       << '\n';
  }
  {
    std::ofstream os(dir / "loss_log.csv", std::ios::trunc);
    os << "step,epoch,lr,loss\n";
    os.precision(17);
    for (const auto& r : art.result.log)
      os << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << '\n';
  }
  art.eval = evaluate(state, data, cfg.eval_split, cfg.threads);
  write_metric_csv(dir / ("metrics_" + cfg.eval_split + ".csv"), art.eval.records);
  {
    std::ofstream os(dir / ("eval_" + cfg.eval_split + ".json"), std::ios::trunc);
    os << eval_to_json(art.eval).dump(2) << '\n';
  }
  {
    const auto fr = flop_report(cfg.model(), data.config.height, data.config.width);
    json rows = json::array();
    for (const auto& r : fr.rows) rows.push_back({{"name", r.name}, {"macs", r.macs}});
    std::ofstream os(dir / "flops.json", std::ios::trunc);
    os << json{{"height", fr.height},
               {"width", fr.width},
               {"levels", fr.levels},
               {"total_macs", fr.total},
               {"cea_generator_macs", fr.cea_generator},
               {"cea_assembly",
                {{"lowrank", fr.cea_assembly.lowrank},
                 {"dense", fr.cea_assembly.dense},
                 {"ratio", fr.cea_assembly.ratio}}},
               {"rows", rows}}
              .dump(2)
       << '\n';
  }
  {
    std::ofstream os(dir / "env.json", std::ios::trunc);
    os << json{{"seed", cfg.seed},
               {"threads", cfg.threads},
               {"compiler", __VERSION__},
               {"cplusplus", static_cast<long>(__cplusplus)},
               {"dataset_seed", data.seed},
               {"dataset_path", cfg.dataset_path}}
              .dump(2)
       << '\n';
  }
  return art;
}

}  // namespace cea
