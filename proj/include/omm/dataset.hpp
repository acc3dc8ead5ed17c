#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "omm/mesh_model.hpp"

namespace omm {

enum class Provenance { ExperimentalSim, SyntheticAm };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// Paired heater voltages and measured weights. Samples are columns:
/// voltages is [n_mzi x N], weights_db is [n_outputs*n_inputs x N] with each
/// column holding the weight matrix in row-major order.
struct Dataset {
  Matrix voltages;
  Matrix weights_db;
  std::vector<std::int64_t> sample_ids;
  Index n_outputs = 0;
  Index n_inputs = 0;
  Provenance provenance = Provenance::ExperimentalSim;
  std::uint64_t seed = 0;
  double floor_db = -80.0;
  double v_max = 2.0;
  std::uint64_t topology_hash = 0;

  Index size() const { return voltages.cols(); }
  bool empty() const { return voltages.cols() == 0; }
  Index n_mzi() const { return voltages.rows(); }
  Index n_entries() const { return n_outputs * n_inputs; }

  /// Weight matrix of sample k, [n_outputs x n_inputs].
  Matrix weight_matrix(Index k) const;

  /// New dataset holding the listed samples, in order; metadata is copied.
  Dataset subset(const std::vector<Index>& indices) const;

  /// Throws on inconsistent shapes.
  void validate() const;
};

/// Flatten a weight matrix row-major into a column.
Vector flatten_weights(const Matrix& w);

/// n voltage vectors, each coordinate i.i.d. Uniform(0, v_max). Returned as [n_mzi x n].
Matrix sample_voltages(Index n, Index n_mzi, double v_max, std::uint64_t seed);

/// Measure the virtual chip at n random operating points.
/// Each sample's measurement noise uses a seed derived from (seed, sample index).
Dataset acquire_dataset(const VirtualChipParams& chip, Index n, std::uint64_t seed,
                        double v_max = 2.0, double floor_db = -80.0);

/// Noiseless analytical-model data at n random operating points.
Dataset generate_synthetic(const AnalyticalParams& am, Index n, std::uint64_t seed,
                           double v_max = 2.0, double floor_db = -80.0);

struct FilterResult {
  Dataset data;
  Index removed = 0;
  double removed_fraction = 0.0;
  bool empty = false;
};

/// Drop every sample whose matrix has any entry below threshold_db.
FilterResult filter_below(const Dataset& data, double threshold_db);

struct SplitPlan {
  Index train_pool_size = 4400;
  Index test_size = 700;
  Index subset_size = 400;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;           ///< redraws the training subset
  std::uint64_t partition_seed = 0; ///< fixes the pool/test partition

  void validate() const;
};

struct Split {
  Dataset subset;      ///< training subset (train + validation)
  Dataset train;       ///< subset minus validation
  Dataset validation;  ///< carved from the subset
  Dataset test;        ///< fixed across plan.seed
  Dataset full_pool;   ///< every non-test sample
};

/// Partition data into a fixed test set and a pool, then draw a subset from the pool.
Split split(const Dataset& data, const SplitPlan& plan);

/// Random train/validation partition of an arbitrary dataset.
std::pair<Dataset, Dataset> split_validation(const Dataset& data, double validation_fraction,
                                             std::uint64_t seed);

struct HistogramBin {
  double lo_db = 0.0;
  double hi_db = 0.0;
  double density = 0.0;  ///< count / (total * width)
};

/// Density histogram of every weight entry. Bins are aligned to integer
/// multiples of bin_width_db and span the occupied range only.
std::vector<HistogramBin> weight_histogram(const Dataset& data, double bin_width_db);

/// Write `<path>` (CSV rows) and `<path>.manifest.json`.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

void write_histogram_csv(const std::vector<HistogramBin>& bins, const std::filesystem::path& path);

/// Stable digest of the numeric content of a dataset.
std::uint64_t dataset_hash(const Dataset& data);

}  // namespace omm
