// Command-line front end: data generation, model fitting and the four-model experiment.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omm/calibration.hpp"
#include "omm/dataset.hpp"
#include "omm/harness.hpp"
#include "omm/mesh_model.hpp"
#include "omm/neural.hpp"
#include "omm/serialization.hpp"
#include "omm/text.hpp"

namespace fs = std::filesystem;
using namespace omm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitCheckFailed = 2;
constexpr int kExitRuntime = 3;

/// Relative output paths resolve under $OMM_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("OMM_OUTPUT_ROOT"); root != nullptr && *root != '\0') return fs::path(root) / path;
  return path;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

MeshTopology make_topology(const std::string& kind, Index size) {
  if (kind == "crossbar") return default_crossbar_topology(size);
  if (kind == "split-tree") return split_tree_topology(size);
  throw DomainError("unknown topology '" + kind + "'");
}

std::vector<ModelKind> parse_roster(const std::string& s) {
  std::vector<ModelKind> roster;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) roster.push_back(model_from_string(item));
  }
  return roster;
}

void print_table(const ResultTable& table) {
  std::cout << "model        n    p10     p25     p50     p75     p90   (test RMSE, dB)\n";
  for (const auto& s : table.summary) {
    std::printf("%-10s %3zu %7.3f %7.3f %7.3f %7.3f %7.3f\n", to_string(s.model).c_str(), s.count, s.p10, s.p25, s.p50,
                s.p75, s.p90);
  }
}

struct TrainFlags {
  std::string hidden = "64,64";
  double l1 = 5e-4;
  double l2 = 9e-9;
  int max_iterations = 500;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;

  void add(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "Hidden layer widths, comma separated")->capture_default_str();
    cmd->add_option("--l1", l1, "L1 weight penalty")->capture_default_str();
    cmd->add_option("--l2", l2, "L2 weight penalty")->capture_default_str();
    cmd->add_option("--max-iter", max_iterations, "Optimizer iterations")->capture_default_str();
    cmd->add_option("--seed", seed, "Initialization seed")->capture_default_str();
    cmd->add_option("--validation-fraction", validation_fraction, "Held-out share for early stopping")
        ->capture_default_str();
  }

  std::vector<Index> widths() const {
    std::vector<Index> out;
    std::stringstream in(hidden);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(std::stol(item));
    return out;
  }

  TrainConfig config() const {
    TrainConfig c;
    c.lambda_l1 = l1;
    c.lambda_l2 = l2;
    c.max_iterations = max_iterations;
    c.init_seed = seed;
    return c;
  }
};

Json train_metadata(const TrainResult& r, const TrainConfig& c, const std::string& role) {
  Json m;
  m["role"] = role;
  m["iterations"] = r.iterations;
  m["converged"] = r.converged;
  m["status"] = r.status;
  m["final_loss"] = r.final_loss;
  m["lambda_l1"] = c.lambda_l1;
  m["lambda_l2"] = c.lambda_l2;
  m["init_seed"] = c.init_seed;
  if (r.best_validation_rmse_db) m["best_validation_rmse_db"] = *r.best_validation_rmse_db;
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modeling and calibration of MZI-mesh optical matrix multipliers"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Build a virtual chip fixture and measure a dataset from it");
  std::string gen_out = "data";
  std::string gen_chip;
  std::string gen_topology = "crossbar";
  Index gen_size = 3;
  std::uint64_t gen_chip_seed = 7;
  Index gen_count = 5100;
  std::uint64_t gen_seed = 2023;
  bool gen_exact = false;
  gen->add_option("--out-dir", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--chip", gen_chip, "Use an existing chip fixture instead of building one");
  gen->add_option("--topology", gen_topology, "crossbar | split-tree")->capture_default_str();
  gen->add_option("--size", gen_size, "Mesh size n (n x n matrix)")->capture_default_str();
  gen->add_option("--chip-seed", gen_chip_seed, "Seed for the chip fixture")->capture_default_str();
  gen->add_option("--samples", gen_count, "Number of measurements (pool + test)")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Acquisition seed")->capture_default_str();
  gen->add_flag("--exact", gen_exact, "Drop mismatch and noise so the chip follows the analytical model");

  // fit-am
  auto* fit = app.add_subcommand("fit-am", "Fit the analytical model to a dataset");
  std::string fit_data;
  std::string fit_chip;
  std::string fit_out = "fit.json";
  FitConfig fit_cfg;
  std::string fit_optimizer = "lbfgs";
  fit->add_option("--data", fit_data, "Dataset CSV")->required();
  fit->add_option("--chip", fit_chip, "Chip or params JSON providing the topology")->required();
  fit->add_option("--out", fit_out, "Fit report JSON")->capture_default_str();
  fit->add_option("--starts", fit_cfg.n_starts, "Multi-start count")->capture_default_str();
  fit->add_option("--max-iter", fit_cfg.max_iterations, "Iterations per start")->capture_default_str();
  fit->add_option("--seed", fit_cfg.init_seed, "Initialization seed")->capture_default_str();
  fit->add_option("--optimizer", fit_optimizer, "lbfgs | adam")->capture_default_str();

  // train-nn
  auto* trn = app.add_subcommand("train-nn", "Train a network from scratch on a dataset");
  std::string trn_data;
  std::string trn_out = "nn.json";
  TrainFlags trn_flags;
  trn->add_option("--data", trn_data, "Dataset CSV")->required();
  trn->add_option("--out", trn_out, "Checkpoint JSON")->capture_default_str();
  trn_flags.add(trn);

  // transfer
  auto* tl = app.add_subcommand("transfer", "Pretrain on synthetic data, then retrain with the first layer frozen");
  std::string tl_data;
  std::string tl_synthetic;
  std::string tl_am;
  Index tl_synthetic_size = 50000;
  std::uint64_t tl_synthetic_seed = 0;
  double tl_filter = -60.0;
  int tl_retrain_iter = 500;
  std::string tl_out = "tl.json";
  TrainFlags tl_flags;
  tl->add_option("--data", tl_data, "Experimental dataset CSV")->required();
  tl->add_option("--synthetic", tl_synthetic, "Synthetic dataset CSV");
  tl->add_option("--am", tl_am, "Fit report or params JSON used to generate synthetic data");
  tl->add_option("--synthetic-size", tl_synthetic_size, "Synthetic samples when generating")->capture_default_str();
  tl->add_option("--synthetic-seed", tl_synthetic_seed, "Seed for synthetic voltages")->capture_default_str();
  tl->add_option("--filter-db", tl_filter, "Discard synthetic samples with any weight below this")->capture_default_str();
  tl->add_option("--retrain-iter", tl_retrain_iter, "Iterations of the retraining phase")->capture_default_str();
  tl->add_option("--out", tl_out, "Checkpoint JSON")->capture_default_str();
  tl_flags.add(tl);

  // experiment
  auto* exp = app.add_subcommand("experiment", "Four-model comparison over many training subsets");
  std::string exp_chip;
  std::string exp_config;
  std::string exp_out = "experiment";
  std::string exp_roster;
  int exp_seeds = -1;
  Index exp_synthetic = -1;
  int exp_workers = 1;
  double exp_budget = -1.0;
  double exp_filter = 1.0;
  bool exp_quick = false;
  bool exp_check = false;
  exp->add_option("--chip", exp_chip, "Chip fixture JSON");
  exp->add_option("--config", exp_config, "Experiment config JSON (flags override it)");
  exp->add_option("--out-dir", exp_out, "Output directory")->capture_default_str();
  exp->add_option("--roster", exp_roster, "Models, comma separated: AM,NN-subset,TL,NN-full");
  exp->add_option("--n-seeds", exp_seeds, "Number of training subsets");
  exp->add_option("--synthetic-size", exp_synthetic, "Synthetic samples per seed");
  exp->add_option("--filter-db", exp_filter, "Synthetic filter threshold (dB)");
  exp->add_option("--workers", exp_workers, "Worker threads")->capture_default_str();
  exp->add_option("--time-budget", exp_budget, "Per-model wall-time budget in seconds");
  exp->add_flag("--quick", exp_quick, "Desk-scale preset (10 seeds, 10,000 synthetic samples)");
  exp->add_flag("--check", exp_check, "Exit with status 2 unless the expected model ordering holds");

  // sweep
  auto* swp = app.add_subcommand("sweep", "Select hidden-layer width per network model on validation RMSE");
  std::string swp_chip;
  std::string swp_config;
  std::string swp_widths = "16,32,64";
  std::string swp_roster = "NN-subset,TL,NN-full";
  std::string swp_out = "sweep.csv";
  bool swp_quick = false;
  swp->add_option("--chip", swp_chip, "Chip fixture JSON");
  swp->add_option("--config", swp_config, "Experiment config JSON");
  swp->add_option("--widths", swp_widths, "Candidate widths, comma separated")->capture_default_str();
  swp->add_option("--roster", swp_roster, "Network models to sweep")->capture_default_str();
  swp->add_option("--out", swp_out, "Score table CSV")->capture_default_str();
  swp->add_flag("--quick", swp_quick, "Use the desk-scale preset");

  // histogram
  auto* hist = app.add_subcommand("histogram", "Density histogram of weight values");
  std::string hist_data;
  double hist_width = 1.0;
  std::string hist_out = "histogram.csv";
  hist->add_option("--data", hist_data, "Dataset CSV")->required();
  hist->add_option("--bin-width", hist_width, "Bin width in dB")->capture_default_str();
  hist->add_option("--out", hist_out, "Output CSV")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      const fs::path dir = output_path(gen_out);
      fs::create_directories(dir);
      VirtualChipParams chip = gen_chip.empty() ? make_virtual_chip(make_topology(gen_topology, gen_size), gen_chip_seed)
                                                : load_chip(gen_chip);
      if (gen_exact) chip = VirtualChipParams::from_analytical(chip.base);
      write_json(to_json(chip), dir / "chip.json");
      const Dataset data = acquire_dataset(chip, gen_count, gen_seed);
      save_dataset(data, dir / "measurements.csv");
      std::cout << "wrote " << (dir / "chip.json").string() << " and " << data.size() << " measurements to "
                << (dir / "measurements.csv").string() << '\n';
    } else if (*fit) {
      fit_cfg.optimizer = optimizer_from_string(fit_optimizer);
      const VirtualChipParams chip = load_chip(fit_chip);
      const Dataset data = load_dataset(fit_data);
      const FitReport report = fit_analytical_model(chip.base.topology, data, fit_cfg);
      const fs::path out = output_path(fit_out);
      ensure_parent(out);
      write_json(to_json(report), out);
      std::cout << "train RMSE " << report.train_rmse_db << " dB after " << report.iterations_used
                << " iterations (" << report.status << ")\n";
    } else if (*trn) {
      const Dataset data = load_dataset(trn_data);
      const MlpSpec spec = MlpSpec::for_dataset(data, trn_flags.widths());
      const TrainConfig tc = trn_flags.config();
      const auto [train_part, val_part] = split_validation(data, trn_flags.validation_fraction, tc.init_seed);
      const TrainResult r = train(spec, init_mlp(spec, tc.init_seed), train_part, tc, &val_part);
      Checkpoint ckpt{spec, r.params, train_metadata(r, tc, "nn-scratch")};
      const fs::path out = output_path(trn_out);
      ensure_parent(out);
      write_json(to_json(ckpt), out);
      std::cout << "train RMSE " << nn_rmse_db(spec, r.params, train_part) << " dB (" << r.status << ")\n";
    } else if (*tl) {
      const Dataset data = load_dataset(tl_data);
      Dataset synthetic;
      if (!tl_synthetic.empty()) {
        synthetic = load_dataset(tl_synthetic);
      } else if (!tl_am.empty()) {
        const Json j = read_json(tl_am);
        const AnalyticalParams am = j.value("kind", std::string()) == "fit_report" ? fit_report_from_json(j).final_params
                                                                                 : analytical_from_json(j);
        synthetic = generate_synthetic(am, tl_synthetic_size, tl_synthetic_seed, data.v_max, data.floor_db);
      } else {
        std::cerr << "transfer: pass --synthetic or --am\n";
        return kExitUsage;
      }
      const FilterResult kept = filter_below(synthetic, tl_filter);
      std::cout << "filter removed " << kept.removed << " synthetic samples (" << 100.0 * kept.removed_fraction << "%)\n";
      const MlpSpec spec = MlpSpec::for_dataset(data, tl_flags.widths());
      const TrainConfig pre = tl_flags.config();
      TrainConfig re = pre;
      re.max_iterations = tl_retrain_iter;
      const auto [syn_train, syn_val] = split_validation(kept.data, 0.1, pre.init_seed);
      const auto [exp_train, exp_val] = split_validation(data, tl_flags.validation_fraction, pre.init_seed);
      const TransferResult r = pretrain_then_transfer(spec, syn_train, exp_train, pre, re, &syn_val, &exp_val);
      Json meta;
      meta["pretrain"] = train_metadata(r.pretrain, pre, "pretrain");
      meta["retrain"] = train_metadata(r.retrain, re, "retrain");
      meta["filter_removed_fraction"] = kept.removed_fraction;
      Checkpoint ckpt{spec, r.transferred, meta};
      const fs::path out = output_path(tl_out);
      ensure_parent(out);
      write_json(to_json(ckpt), out);
      std::cout << "retrained RMSE " << nn_rmse_db(spec, r.transferred, exp_train) << " dB on training data\n";
    } else if (*exp || *swp) {
      const bool quick = *exp ? exp_quick : swp_quick;
      const std::string& config_file = *exp ? exp_config : swp_config;
      const std::string& chip_file = *exp ? exp_chip : swp_chip;
      ExperimentConfig cfg = quick ? ExperimentConfig::quick() : ExperimentConfig::paper_defaults();
      if (!config_file.empty()) cfg = config_from_json(read_json(config_file));
      if (!chip_file.empty()) {
        cfg.chip_path = chip_file;
        cfg.chip.reset();
      }
      if (!cfg.chip && cfg.chip_path.empty()) {
        std::cerr << "no chip given: pass --chip or a config with a chip\n";
        return kExitUsage;
      }
      if (*swp) {
        cfg.roster = parse_roster(swp_roster);
        std::vector<Index> widths;
        std::stringstream in(swp_widths);
        std::string item;
        while (std::getline(in, item, ',')) widths.push_back(std::stol(item));
        const SweepResult r = sweep_hidden_width(cfg, widths);
        const fs::path out = output_path(swp_out);
        ensure_parent(out);
        std::ofstream csv(out);
        csv << "model,width,validation_rmse_db,ok\n";
        for (const auto& s : r.scores) {
          csv << to_string(s.model) << ',' << s.width << ',' << format_double(s.validation_rmse_db) << ','
              << (s.ok ? 1 : 0) << '\n';
        }
        for (const auto& [model, width] : r.best) std::cout << to_string(model) << ": best width " << width << '\n';
        return kExitOk;
      }
      if (!exp_roster.empty()) cfg.roster = parse_roster(exp_roster);
      if (exp_seeds > 0) cfg.n_seeds = exp_seeds;
      if (exp_synthetic > 0) cfg.synthetic_size = exp_synthetic;
      if (exp_budget > 0) cfg.time_budget_s = exp_budget;
      if (exp_filter <= 0) cfg.filter_threshold_db = exp_filter;
      cfg.workers = exp_workers;
      const fs::path dir = output_path(exp_out);
      cfg.output_dir = dir;
      const ResultTable table = run_experiment(cfg);
      write_result_files(table, cfg, dir);
      print_table(table);
      if (exp_check) {
        bool all = true;
        for (const auto& c : check_ordering(table)) {
          std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
          all = all && c.passed;
        }
        if (!all) return kExitCheckFailed;
      }
    } else if (*hist) {
      const Dataset data = load_dataset(hist_data);
      const auto bins = weight_histogram(data, hist_width);
      const fs::path out = output_path(hist_out);
      ensure_parent(out);
      write_histogram_csv(bins, out);
      std::cout << "wrote " << bins.size() << " bins to " << out.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
