#include "omm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "omm/random.hpp"
#include "omm/text.hpp"

namespace omm {

namespace {

using Clock = std::chrono::steady_clock;

RunRecord make_record(ModelKind model, std::uint64_t seed) {
  RunRecord r;
  r.model = model;
  r.seed = seed;
  return r;
}

/// Per-seed artifact under <output_dir>/seeds/seed_<n>/; skipped without an output dir.
void save_artifact(const ExperimentConfig& config, std::uint64_t seed, const std::string& name, const Json& j) {
  if (config.output_dir.empty()) return;
  const std::filesystem::path dir = config.output_dir / "seeds" / ("seed_" + std::to_string(seed));
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);  // a sibling task may create the parent concurrently
  write_json(j, dir / name);
}

Json checkpoint_json(const MlpSpec& spec, const MlpParams& params, const std::string& role, std::uint64_t seed) {
  Checkpoint c{spec, params, Json::object()};
  c.metadata["role"] = role;
  c.metadata["seed"] = seed;
  return to_json(c);
}

enum Stream : std::uint64_t {
  kAcquire = 1,
  kAmInit = 2,
  kSynthetic = 3,
  kSyntheticValidation = 4,
  kTlInit = 5,
  kScratchInit = 6,
  kFullInit = 7,
  kFullValidation = 8,
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Json train_config_json(const TrainConfig& c) {
  Json j;
  j["lambda_l1"] = c.lambda_l1;
  j["lambda_l2"] = c.lambda_l2;
  j["max_iterations"] = c.max_iterations;
  j["history_size"] = c.history_size;
  j["armijo"] = c.armijo;
  j["backtrack"] = c.backtrack;
  j["max_line_search"] = c.max_line_search;
  j["convergence_tol"] = c.convergence_tol;
  j["optimizer"] = to_string(c.optimizer);
  j["adam_learning_rate"] = c.adam.learning_rate;
  j["validation_interval"] = c.validation_interval;
  j["patience"] = c.patience;
  return j;
}

TrainConfig train_config_from(const Json& j, TrainConfig c) {
  c.lambda_l1 = j.value("lambda_l1", c.lambda_l1);
  c.lambda_l2 = j.value("lambda_l2", c.lambda_l2);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.history_size = j.value("history_size", c.history_size);
  c.armijo = j.value("armijo", c.armijo);
  c.backtrack = j.value("backtrack", c.backtrack);
  c.max_line_search = j.value("max_line_search", c.max_line_search);
  c.convergence_tol = j.value("convergence_tol", c.convergence_tol);
  if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  c.adam.learning_rate = j.value("adam_learning_rate", c.adam.learning_rate);
  c.validation_interval = j.value("validation_interval", c.validation_interval);
  c.patience = j.value("patience", c.patience);
  return c;
}

Json fit_config_json(const FitConfig& c) {
  Json j;
  j["max_iterations"] = c.max_iterations;
  j["convergence_tol"] = c.convergence_tol;
  j["n_starts"] = c.n_starts;
  j["optimizer"] = to_string(c.optimizer);
  j["initial_er_db"] = c.initial_er_db;
  j["initial_phi2_diag"] = c.initial_phi2_diag;
  j["phase_scan_points"] = c.phase_scan_points;
  j["phase_scan_sweeps"] = c.phase_scan_sweeps;
  j["er_min_db"] = c.bounds.er_min_db;
  j["alpha_max_db"] = c.bounds.alpha_max_db;
  j["history_size"] = c.lbfgs.history_size;
  return j;
}

FitConfig fit_config_from(const Json& j, FitConfig c) {
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.convergence_tol = j.value("convergence_tol", c.convergence_tol);
  c.n_starts = j.value("n_starts", c.n_starts);
  if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  c.initial_er_db = j.value("initial_er_db", c.initial_er_db);
  c.initial_phi2_diag = j.value("initial_phi2_diag", c.initial_phi2_diag);
  c.phase_scan_points = j.value("phase_scan_points", c.phase_scan_points);
  c.phase_scan_sweeps = j.value("phase_scan_sweeps", c.phase_scan_sweeps);
  c.bounds.er_min_db = j.value("er_min_db", c.bounds.er_min_db);
  c.bounds.alpha_max_db = j.value("alpha_max_db", c.bounds.alpha_max_db);
  c.lbfgs.history_size = j.value("history_size", c.lbfgs.history_size);
  return c;
}

TrainConfig with_budget(TrainConfig c, double seconds, std::uint64_t seed) {
  c.time_budget = std::chrono::duration<double>(seconds);
  c.init_seed = seed;
  return c;
}

/// Run `tasks` on up to `workers` threads; each task writes only its own slot.
void run_tasks(std::vector<std::function<void()>>& tasks, int workers) {
  const auto n = tasks.size();
  if (workers <= 1 || n <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < n; k = next++) tasks[k]();
    });
  }
  for (auto& th : pool) th.join();
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

bool contains(const std::vector<ModelKind>& roster, ModelKind m) {
  return std::find(roster.begin(), roster.end(), m) != roster.end();
}

std::string comment_header(const ResultTable& table) {
  std::string s = "# config_hash=" + table.config_hash + " test_set_hash=" + table.test_set_hash + " seeds=";
  for (std::size_t k = 0; k < table.seeds.size(); ++k) {
    if (k) s += ';';
    s += std::to_string(table.seeds[k]);
  }
  return s + '\n';
}

struct SeedOutcome {
  std::vector<RunRecord> records;
};

}  // namespace

std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::Am: return "AM";
    case ModelKind::NnSubset: return "NN-subset";
    case ModelKind::Tl: return "TL";
    case ModelKind::NnFull: return "NN-full";
  }
  return "?";
}

ModelKind model_from_string(const std::string& s) {
  if (s == "AM" || s == "am") return ModelKind::Am;
  if (s == "NN-subset" || s == "nn-subset") return ModelKind::NnSubset;
  if (s == "TL" || s == "tl") return ModelKind::Tl;
  if (s == "NN-full" || s == "nn-full") return ModelKind::NnFull;
  throw DomainError("unknown model '" + s + "'");
}

ExperimentConfig ExperimentConfig::paper_defaults() {
  ExperimentConfig c;
  c.am.max_iterations = 1000;
  c.am.n_starts = 5;
  c.pretrain.max_iterations = 1000;
  c.retrain.max_iterations = 500;
  c.scratch.max_iterations = 500;
  c.full.max_iterations = 1000;
  return c;
}

ExperimentConfig ExperimentConfig::quick() {
  ExperimentConfig c = paper_defaults();
  c.n_seeds = 10;
  c.synthetic_size = 10000;
  return c;
}

void ExperimentConfig::validate() const {
  if (n_seeds < 1) throw DomainError("n_seeds must be >= 1");
  if (roster.empty()) throw DomainError("model roster is empty");
  if (synthetic_size < 1) throw DomainError("synthetic_size must be >= 1");
  if (!(time_budget_s > 0.0)) throw DomainError("time budget must be positive");
  plan.validate();
  am.validate();
  pretrain.validate();
  retrain.validate();
  scratch.validate();
  full.validate();
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "experiment_config";
  if (c.chip) {
    j["chip"] = to_json(*c.chip);
  } else {
    j["chip_path"] = c.chip_path.string();
  }
  Json plan;
  plan["train_pool_size"] = c.plan.train_pool_size;
  plan["test_size"] = c.plan.test_size;
  plan["subset_size"] = c.plan.subset_size;
  plan["validation_fraction"] = c.plan.validation_fraction;
  plan["partition_seed"] = c.plan.partition_seed;
  j["split_plan"] = plan;
  Json roster = Json::array();
  for (auto m : c.roster) roster.push_back(to_string(m));
  j["roster"] = roster;
  j["n_seeds"] = c.n_seeds;
  j["first_seed"] = c.first_seed;
  j["acquisition_seed"] = c.acquisition_seed;
  j["synthetic_size"] = c.synthetic_size;
  j["synthetic_validation_fraction"] = c.synthetic_validation_fraction;
  j["filter_threshold_db"] = c.filter_threshold_db;
  j["v_max"] = c.v_max;
  j["floor_db"] = c.floor_db;
  j["hidden_layers"] = c.hidden_layers;
  j["am"] = fit_config_json(c.am);
  j["pretrain"] = train_config_json(c.pretrain);
  j["retrain"] = train_config_json(c.retrain);
  j["scratch"] = train_config_json(c.scratch);
  j["full"] = train_config_json(c.full);
  j["time_budget_s"] = c.time_budget_s;
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c = ExperimentConfig::paper_defaults();
  try {
    if (j.contains("chip")) c.chip = chip_from_json(j.at("chip"));
    c.chip_path = j.value("chip_path", std::string());
    if (j.contains("split_plan")) {
      const Json& p = j.at("split_plan");
      c.plan.train_pool_size = p.value("train_pool_size", c.plan.train_pool_size);
      c.plan.test_size = p.value("test_size", c.plan.test_size);
      c.plan.subset_size = p.value("subset_size", c.plan.subset_size);
      c.plan.validation_fraction = p.value("validation_fraction", c.plan.validation_fraction);
      c.plan.partition_seed = p.value("partition_seed", c.plan.partition_seed);
    }
    if (j.contains("roster")) {
      c.roster.clear();
      for (const auto& m : j.at("roster")) c.roster.push_back(model_from_string(m.get<std::string>()));
    }
    c.n_seeds = j.value("n_seeds", c.n_seeds);
    c.first_seed = j.value("first_seed", c.first_seed);
    c.acquisition_seed = j.value("acquisition_seed", c.acquisition_seed);
    c.synthetic_size = j.value("synthetic_size", c.synthetic_size);
    c.synthetic_validation_fraction = j.value("synthetic_validation_fraction", c.synthetic_validation_fraction);
    c.filter_threshold_db = j.value("filter_threshold_db", c.filter_threshold_db);
    c.v_max = j.value("v_max", c.v_max);
    c.floor_db = j.value("floor_db", c.floor_db);
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    if (j.contains("am")) c.am = fit_config_from(j.at("am"), c.am);
    if (j.contains("pretrain")) c.pretrain = train_config_from(j.at("pretrain"), c.pretrain);
    if (j.contains("retrain")) c.retrain = train_config_from(j.at("retrain"), c.retrain);
    if (j.contains("scratch")) c.scratch = train_config_from(j.at("scratch"), c.scratch);
    if (j.contains("full")) c.full = train_config_from(j.at("full"), c.full);
    c.time_budget_s = j.value("time_budget_s", c.time_budget_s);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad experiment config: ") + e.what());
  }
  return c;
}

std::optional<PercentileSummary> ResultTable::find(ModelKind model) const {
  for (const auto& s : summary) {
    if (s.model == model) return s;
  }
  return std::nullopt;
}

double rmse_db(const Eigen::Ref<const Matrix>& predicted, const Eigen::Ref<const Matrix>& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols()) {
    throw ShapeError("prediction and truth shapes differ");
  }
  if (predicted.size() == 0) throw ShapeError("RMSE of an empty set");
  return std::sqrt((predicted - truth).squaredNorm() / static_cast<double>(predicted.size()));
}

double rmse_db(const std::vector<Matrix>& predicted, const std::vector<Matrix>& truth) {
  if (predicted.size() != truth.size()) throw ShapeError("prediction and truth lists differ in length");
  if (predicted.empty()) throw ShapeError("RMSE of an empty list");
  double sum = 0.0;
  Index count = 0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    if (predicted[k].rows() != truth[k].rows() || predicted[k].cols() != truth[k].cols()) {
      throw ShapeError("weight matrices differ in shape");
    }
    sum += (predicted[k] - truth[k]).squaredNorm();
    count += predicted[k].size();
  }
  return std::sqrt(sum / static_cast<double>(count));
}

double quantile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw DomainError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<PercentileSummary> summarize(const ResultTable& table) {
  std::vector<ModelKind> order;
  for (const auto& r : table.runs) {
    if (std::find(order.begin(), order.end(), r.model) == order.end()) order.push_back(r.model);
  }
  std::vector<PercentileSummary> out;
  for (ModelKind m : order) {
    std::vector<double> v;
    for (const auto& r : table.runs) {
      if (r.model == m && r.ok) v.push_back(r.test_rmse_db);
    }
    if (v.empty()) continue;
    PercentileSummary s;
    s.model = m;
    s.count = v.size();
    s.p10 = quantile_linear(v, 0.10);
    s.p25 = quantile_linear(v, 0.25);
    s.p50 = quantile_linear(v, 0.50);
    s.p75 = quantile_linear(v, 0.75);
    s.p90 = quantile_linear(v, 0.90);
    out.push_back(s);
  }
  return out;
}

Matrix predict_dataset(const AnalyticalParams& params, const Dataset& data) {
  Matrix out(data.n_entries(), data.size());
  for (Index k = 0; k < data.size(); ++k) out.col(k) = flatten_weights(predict_weights(params, data.voltages.col(k)));
  return out;
}

ResultTable run_experiment(const ExperimentConfig& config) {
  config.validate();
  const VirtualChipParams chip = config.chip ? *config.chip : load_chip(config.chip_path);
  const MeshTopology& topology = chip.base.topology;

  const Index pool_total = config.plan.train_pool_size + config.plan.test_size;
  const Dataset measured = acquire_dataset(chip, pool_total, derive_seed(config.acquisition_seed, {kAcquire}),
                                           config.v_max, config.floor_db);

  ResultTable table;
  Json hash_source = config_to_json(config);
  if (!config.chip) hash_source["chip"] = to_json(chip);
  table.config_hash = hex64(fnv1a(hash_source.dump()));
  for (int s = 0; s < config.n_seeds; ++s) table.seeds.push_back(config.first_seed + static_cast<std::uint64_t>(s));

  {
    SplitPlan plan = config.plan;
    plan.seed = table.seeds.front();
    table.test_set_hash = hex64(dataset_hash(split(measured, plan).test));
  }

  const MlpSpec spec = MlpSpec::for_dataset(measured, config.hidden_layers);
  const bool want_am = contains(config.roster, ModelKind::Am);
  const bool want_tl = contains(config.roster, ModelKind::Tl);
  const bool want_scratch = contains(config.roster, ModelKind::NnSubset);
  const bool want_full = contains(config.roster, ModelKind::NnFull);

  std::vector<SeedOutcome> outcomes(table.seeds.size());
  std::optional<RunRecord> full_record;
  std::vector<std::function<void()>> tasks;

  if (want_full) {
    tasks.emplace_back([&] {
      RunRecord rec;
      rec.model = ModelKind::NnFull;
      rec.seed = table.seeds.front();
      const auto t0 = Clock::now();
      try {
        SplitPlan plan = config.plan;
        plan.seed = rec.seed;
        const Split sp = split(measured, plan);
        const auto [train_part, val_part] = split_validation(
            sp.full_pool, config.plan.validation_fraction, derive_seed(config.first_seed, {kFullValidation}));
        const TrainConfig tc = with_budget(config.full, config.time_budget_s, derive_seed(rec.seed, {kFullInit}));
        const TrainResult r = train(spec, init_mlp(spec, tc.init_seed), train_part, tc, &val_part);
        save_artifact(config, rec.seed, "nn_full.json", checkpoint_json(spec, r.params, "NN-full", rec.seed));
        rec.test_rmse_db = nn_rmse_db(spec, r.params, sp.test);
        rec.train_rmse_db = nn_rmse_db(spec, r.params, train_part);
        rec.converged = r.converged;
        rec.status = r.status;
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.status = e.what();
      }
      rec.wall_time_s = seconds_since(t0);
      full_record = rec;
    });
  }

  for (std::size_t idx = 0; idx < table.seeds.size(); ++idx) {
    tasks.emplace_back([&, idx] {
      const std::uint64_t seed = table.seeds[idx];
      SeedOutcome& out = outcomes[idx];
      SplitPlan plan = config.plan;
      plan.seed = seed;
      Split sp;
      try {
        sp = split(measured, plan);
      } catch (const std::exception& e) {
        for (ModelKind m : {ModelKind::Am, ModelKind::Tl, ModelKind::NnSubset}) {
          if (contains(config.roster, m)) out.records.push_back({m, seed, 0.0, 0.0, 0.0, false, false, e.what()});
        }
        return;
      }

      std::optional<AnalyticalParams> fitted;
      if (want_am || want_tl) {
        RunRecord rec = make_record(ModelKind::Am, seed);
        const auto t0 = Clock::now();
        try {
          FitConfig fc = config.am;
          fc.init_seed = derive_seed(seed, {kAmInit});
          const FitReport rep = fit_analytical_model(topology, sp.subset, fc);
          fitted = rep.final_params;
          save_artifact(config, seed, "am_fit.json", to_json(rep));
          rec.train_rmse_db = rep.train_rmse_db;
          rec.test_rmse_db = rmse_db(predict_dataset(rep.final_params, sp.test), sp.test.weights_db);
          rec.converged = rep.converged;
          rec.status = rep.status;
          if (!std::isfinite(rec.test_rmse_db)) throw std::runtime_error("analytical model fit diverged");
        } catch (const std::exception& e) {
          rec.ok = false;
          rec.status = e.what();
        }
        rec.wall_time_s = seconds_since(t0);
        if (want_am) out.records.push_back(rec);
      }

      if (want_tl) {
        RunRecord rec = make_record(ModelKind::Tl, seed);
        const auto t0 = Clock::now();
        try {
          if (!fitted) throw std::runtime_error("no analytical model to generate synthetic data");
          const Dataset synthetic = generate_synthetic(*fitted, config.synthetic_size,
                                                       derive_seed(seed, {kSynthetic}), config.v_max, config.floor_db);
          const FilterResult kept = filter_below(synthetic, config.filter_threshold_db);
          if (kept.empty) throw std::runtime_error("filtering removed every synthetic sample");
          const auto [syn_train, syn_val] = split_validation(kept.data, config.synthetic_validation_fraction,
                                                             derive_seed(seed, {kSyntheticValidation}));
          const TrainConfig pre = with_budget(config.pretrain, config.time_budget_s, derive_seed(seed, {kTlInit}));
          const TrainConfig re = with_budget(config.retrain, config.time_budget_s, derive_seed(seed, {kTlInit}));
          const TransferResult r =
              pretrain_then_transfer(spec, syn_train, sp.train, pre, re, &syn_val, &sp.validation);
          Json ckpt = checkpoint_json(spec, r.transferred, "TL", seed);
          ckpt["metadata"]["filter_removed_fraction"] = kept.removed_fraction;
          save_artifact(config, seed, "tl.json", ckpt);
          rec.test_rmse_db = nn_rmse_db(spec, r.transferred, sp.test);
          rec.train_rmse_db = nn_rmse_db(spec, r.transferred, sp.train);
          rec.converged = r.pretrain.converged && r.retrain.converged;
          rec.status = "pretrain: " + r.pretrain.status + "; retrain: " + r.retrain.status;
        } catch (const std::exception& e) {
          rec.ok = false;
          rec.status = e.what();
        }
        rec.wall_time_s = seconds_since(t0);
        out.records.push_back(rec);
      }

      if (want_scratch) {
        RunRecord rec = make_record(ModelKind::NnSubset, seed);
        const auto t0 = Clock::now();
        try {
          const TrainConfig tc = with_budget(config.scratch, config.time_budget_s, derive_seed(seed, {kScratchInit}));
          const TrainResult r = train(spec, init_mlp(spec, tc.init_seed), sp.train, tc, &sp.validation);
          save_artifact(config, seed, "nn_subset.json", checkpoint_json(spec, r.params, "NN-subset", seed));
          rec.test_rmse_db = nn_rmse_db(spec, r.params, sp.test);
          rec.train_rmse_db = nn_rmse_db(spec, r.params, sp.train);
          rec.converged = r.converged;
          rec.status = r.status;
        } catch (const std::exception& e) {
          rec.ok = false;
          rec.status = e.what();
        }
        rec.wall_time_s = seconds_since(t0);
        out.records.push_back(rec);
      }
    });
  }

  run_tasks(tasks, config.workers);

  for (ModelKind m : config.roster) {
    if (m == ModelKind::NnFull) {
      if (full_record) table.runs.push_back(*full_record);
      continue;
    }
    for (const auto& o : outcomes) {
      for (const auto& r : o.records) {
        if (r.model == m) table.runs.push_back(r);
      }
    }
  }
  table.summary = summarize(table);
  return table;
}

std::string results_csv(const ResultTable& table) {
  std::ostringstream out;
  out << comment_header(table);
  out << "model,seed,test_rmse_db,train_rmse_db,ok,converged\n";
  for (const auto& r : table.runs) {
    out << to_string(r.model) << ',' << r.seed << ',' << format_double(r.test_rmse_db) << ','
        << format_double(r.train_rmse_db) << ',' << (r.ok ? 1 : 0) << ',' << (r.converged ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string summary_csv(const ResultTable& table) {
  std::ostringstream out;
  out << comment_header(table);
  out << "model,count,p10,p25,p50,p75,p90\n";
  for (const auto& s : table.summary) {
    out << to_string(s.model) << ',' << s.count << ',' << format_double(s.p10) << ',' << format_double(s.p25) << ','
        << format_double(s.p50) << ',' << format_double(s.p75) << ',' << format_double(s.p90) << '\n';
  }
  return out.str();
}

void write_result_files(const ResultTable& table, const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_text = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  write_json(config_to_json(config), dir / "config.json");
  write_text("results.csv", results_csv(table));
  write_text("summary.csv", summary_csv(table));

  std::ostringstream timings;
  timings << comment_header(table) << "model,seed,wall_time_s,status\n";
  for (const auto& r : table.runs) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    timings << to_string(r.model) << ',' << r.seed << ',' << format_double(r.wall_time_s) << ',' << status << '\n';
  }
  write_text("timings.csv", timings.str());

  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "experiment_summary";
  j["config_hash"] = table.config_hash;
  j["test_set_hash"] = table.test_set_hash;
  j["seeds"] = table.seeds;
  j["config"] = config_to_json(config);
  Json models = Json::array();
  for (const auto& s : table.summary) {
    models.push_back({{"model", to_string(s.model)},
                      {"count", s.count},
                      {"p10", s.p10},
                      {"p25", s.p25},
                      {"p50", s.p50},
                      {"p75", s.p75},
                      {"p90", s.p90}});
  }
  j["models"] = models;
  write_json(j, dir / "summary.json");
}

std::vector<CheckOutcome> check_ordering(const ResultTable& table, double min_tl_wins_fraction,
                                         double tl_full_gap_db) {
  std::vector<CheckOutcome> out;
  const auto am = table.find(ModelKind::Am);
  const auto tl = table.find(ModelKind::Tl);
  const auto scratch = table.find(ModelKind::NnSubset);
  const auto full = table.find(ModelKind::NnFull);
  if (!am || !tl || !scratch || !full) {
    out.push_back({"roster", false, "ordering checks need all four models"});
    return out;
  }
  auto fmt = [](double x) {
    std::ostringstream s;
    s.precision(3);
    s << std::fixed << x;
    return s.str();
  };
  out.push_back({"median NN-full < TL", full->p50 < tl->p50, fmt(full->p50) + " vs " + fmt(tl->p50) + " dB"});
  out.push_back({"median TL < AM", tl->p50 < am->p50, fmt(tl->p50) + " vs " + fmt(am->p50) + " dB"});
  out.push_back({"median AM < NN-subset", am->p50 < scratch->p50, fmt(am->p50) + " vs " + fmt(scratch->p50) + " dB"});

  std::size_t wins = 0;
  std::size_t pairs = 0;
  for (const auto& t : table.runs) {
    if (t.model != ModelKind::Tl || !t.ok) continue;
    for (const auto& a : table.runs) {
      if (a.model == ModelKind::Am && a.seed == t.seed && a.ok) {
        ++pairs;
        if (t.test_rmse_db < a.test_rmse_db) ++wins;
      }
    }
  }
  const auto needed = static_cast<std::size_t>(std::ceil(min_tl_wins_fraction * static_cast<double>(table.seeds.size()) - 1e-9));
  out.push_back({"TL beats AM per seed", wins >= needed,
                 std::to_string(wins) + "/" + std::to_string(table.seeds.size()) + " seeds (need " +
                     std::to_string(needed) + ", " + std::to_string(pairs) + " comparable)"});
  const double gap = tl->p50 - full->p50;
  out.push_back({"TL median within gap of NN-full", gap <= tl_full_gap_db,
                 "gap " + fmt(gap) + " dB (limit " + fmt(tl_full_gap_db) + ")"});
  return out;
}

Index select_width(const std::vector<std::pair<Index, double>>& scores) {
  if (scores.empty()) throw DomainError("no widths to choose from");
  Index best = scores.front().first;
  double best_score = scores.front().second;
  for (const auto& [w, s] : scores) {
    if (s < best_score || (s == best_score && w < best)) {
      best = w;
      best_score = s;
    }
  }
  return best;
}

SweepResult sweep_hidden_width(const ExperimentConfig& config, const std::vector<Index>& widths) {
  if (widths.empty()) throw DomainError("width list is empty");
  config.validate();
  const VirtualChipParams chip = config.chip ? *config.chip : load_chip(config.chip_path);
  const Dataset measured =
      acquire_dataset(chip, config.plan.train_pool_size + config.plan.test_size,
                      derive_seed(config.acquisition_seed, {kAcquire}), config.v_max, config.floor_db);
  const std::uint64_t seed = config.first_seed;
  SplitPlan plan = config.plan;
  plan.seed = seed;
  const Split sp = split(measured, plan);

  std::optional<AnalyticalParams> fitted;
  if (contains(config.roster, ModelKind::Tl)) {
    FitConfig fc = config.am;
    fc.init_seed = derive_seed(seed, {kAmInit});
    fitted = fit_analytical_model(chip.base.topology, sp.subset, fc).final_params;
  }
  std::optional<Dataset> syn_train;
  std::optional<Dataset> syn_val;
  if (fitted) {
    const FilterResult kept = filter_below(
        generate_synthetic(*fitted, config.synthetic_size, derive_seed(seed, {kSynthetic}), config.v_max, config.floor_db),
        config.filter_threshold_db);
    auto parts = split_validation(kept.data, config.synthetic_validation_fraction, derive_seed(seed, {kSyntheticValidation}));
    syn_train = std::move(parts.first);
    syn_val = std::move(parts.second);
  }
  const auto full_parts = split_validation(sp.full_pool, config.plan.validation_fraction,
                                           derive_seed(config.first_seed, {kFullValidation}));

  SweepResult result;
  for (ModelKind model : config.roster) {
    if (model == ModelKind::Am) continue;
    std::vector<std::pair<Index, double>> scores;
    for (Index width : widths) {
      WidthScore score{model, width};
      try {
        std::vector<Index> hidden(config.hidden_layers.size(), width);
        const MlpSpec spec = MlpSpec::for_dataset(measured, hidden);
        if (model == ModelKind::NnSubset) {
          const TrainConfig tc = with_budget(config.scratch, config.time_budget_s, derive_seed(seed, {kScratchInit}));
          const TrainResult r = train(spec, init_mlp(spec, tc.init_seed), sp.train, tc, &sp.validation);
          score.validation_rmse_db = nn_rmse_db(spec, r.params, sp.validation);
        } else if (model == ModelKind::NnFull) {
          const TrainConfig tc = with_budget(config.full, config.time_budget_s, derive_seed(seed, {kFullInit}));
          const TrainResult r = train(spec, init_mlp(spec, tc.init_seed), full_parts.first, tc, &full_parts.second);
          score.validation_rmse_db = nn_rmse_db(spec, r.params, full_parts.second);
        } else {
          const TrainConfig pre = with_budget(config.pretrain, config.time_budget_s, derive_seed(seed, {kTlInit}));
          const TrainConfig re = with_budget(config.retrain, config.time_budget_s, derive_seed(seed, {kTlInit}));
          const TransferResult r = pretrain_then_transfer(spec, *syn_train, sp.train, pre, re, &*syn_val, &sp.validation);
          score.validation_rmse_db = nn_rmse_db(spec, r.transferred, sp.validation);
        }
        if (!std::isfinite(score.validation_rmse_db)) throw std::runtime_error("non-finite validation RMSE");
        scores.emplace_back(width, score.validation_rmse_db);
      } catch (const std::exception&) {
        score.ok = false;
      }
      result.scores.push_back(score);
    }
    if (!scores.empty()) result.best.emplace_back(model, select_width(scores));
  }
  return result;
}

}  // namespace omm
