#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "omm/calibration.hpp"
#include "omm/dataset.hpp"
#include "omm/neural.hpp"
#include "omm/serialization.hpp"

namespace omm {

enum class ModelKind { Am, NnSubset, Tl, NnFull };

std::string to_string(ModelKind m);
ModelKind model_from_string(const std::string& s);

struct ExperimentConfig {
  std::filesystem::path chip_path;         ///< read when `chip` is empty
  std::optional<VirtualChipParams> chip;
  SplitPlan plan;
  std::vector<ModelKind> roster{ModelKind::Am, ModelKind::NnSubset, ModelKind::Tl, ModelKind::NnFull};
  int n_seeds = 20;
  std::uint64_t first_seed = 0;            ///< seeds are first_seed .. first_seed + n_seeds - 1
  std::uint64_t acquisition_seed = 2023;   ///< noise and voltages of the measured pool
  Index synthetic_size = 50000;
  double synthetic_validation_fraction = 0.1;
  double filter_threshold_db = -60.0;
  double v_max = 2.0;
  double floor_db = -80.0;
  std::vector<Index> hidden_layers{64, 64};
  FitConfig am;
  TrainConfig pretrain;
  TrainConfig retrain;
  TrainConfig scratch;
  TrainConfig full;
  double time_budget_s = 600.0;  ///< per model fit
  int workers = 1;               ///< results do not depend on this
  std::filesystem::path output_dir;

  /// Paper-scale protocol (20 seeds, 50,000 synthetic samples).
  static ExperimentConfig paper_defaults();
  /// Desk-scale variant: 10 seeds, 10,000 synthetic samples.
  static ExperimentConfig quick();

  void validate() const;
};

/// Every field that influences results; excludes output_dir and workers.
Json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const Json& j);

struct RunRecord {
  ModelKind model = ModelKind::Am;
  std::uint64_t seed = 0;
  double test_rmse_db = 0.0;
  double train_rmse_db = 0.0;
  double wall_time_s = 0.0;
  bool ok = true;
  bool converged = true;
  std::string status;
};

struct PercentileSummary {
  ModelKind model = ModelKind::Am;
  std::size_t count = 0;
  double p10 = 0.0;
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
  double p90 = 0.0;
};

struct ResultTable {
  std::vector<RunRecord> runs;  ///< ordered by model roster, then seed
  std::vector<PercentileSummary> summary;
  std::string config_hash;
  std::string test_set_hash;
  std::vector<std::uint64_t> seeds;
  std::optional<PercentileSummary> find(ModelKind model) const;
};

/// sqrt(mean squared dB difference) over samples and entries.
double rmse_db(const std::vector<Matrix>& predicted, const std::vector<Matrix>& truth);
/// Same on column-stacked flattened weights.
double rmse_db(const Eigen::Ref<const Matrix>& predicted, const Eigen::Ref<const Matrix>& truth);

/// Linear-interpolation quantile: position h = (n - 1) p on the sorted sample,
/// value x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h]).
double quantile_linear(std::vector<double> values, double p);

/// p10/p25/p50/p75/p90 of the successful test RMSEs per model in the table.
std::vector<PercentileSummary> summarize(const ResultTable& table);

/// AM predictions for every sample, flattened like Dataset::weights_db.
Matrix predict_dataset(const AnalyticalParams& params, const Dataset& data);

ResultTable run_experiment(const ExperimentConfig& config);

/// Files written: results.csv, summary.csv, summary.json, timings.csv.
void write_result_files(const ResultTable& table, const ExperimentConfig& config,
                        const std::filesystem::path& dir);

/// results.csv contents; byte-stable for a given config.
std::string results_csv(const ResultTable& table);
std::string summary_csv(const ResultTable& table);

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Ordering checks on a four-model table: median NN-full < TL < AM < NN-subset,
/// TL beats AM on at least `min_tl_wins_fraction` of seeds, and the TL median
/// is within `tl_full_gap_db` of the NN-full median.
std::vector<CheckOutcome> check_ordering(const ResultTable& table, double min_tl_wins_fraction = 0.8,
                                         double tl_full_gap_db = 1.0);

struct WidthScore {
  ModelKind model = ModelKind::NnSubset;
  Index width = 0;
  double validation_rmse_db = 0.0;
  bool ok = true;
};

struct SweepResult {
  std::vector<WidthScore> scores;
  std::vector<std::pair<ModelKind, Index>> best;  ///< per NN model in the roster
};

/// Train each NN model of the roster at every hidden width (all hidden layers
/// set to that width) on the first seed; pick the lowest validation RMSE,
/// ties going to the smaller width.
SweepResult sweep_hidden_width(const ExperimentConfig& config, const std::vector<Index>& widths);

/// Pick the minimum; ties resolve toward the smaller width.
Index select_width(const std::vector<std::pair<Index, double>>& scores);

}  // namespace omm
