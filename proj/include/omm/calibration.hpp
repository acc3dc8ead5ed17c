#pragma once

#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "omm/dataset.hpp"
#include "omm/mesh_model.hpp"
#include "omm/optim.hpp"

namespace omm {

enum class OptimizerKind { Lbfgs, Adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

/// Box limits per parameter group of the analytical model.
struct FitBounds {
  double alpha_min_db = -std::numeric_limits<double>::infinity();
  double alpha_max_db = 0.0;
  double er_min_db = 5.0;  ///< enforced through er_db = er_min_db + exp(theta)
  double phi2_min = -std::numeric_limits<double>::infinity();
  double phi2_max = std::numeric_limits<double>::infinity();
};

struct FitConfig {
  int max_iterations = 500;
  double convergence_tol = 1e-10;
  std::uint64_t init_seed = 0;
  int n_starts = 5;
  FitBounds bounds;
  OptimizerKind optimizer = OptimizerKind::Lbfgs;
  LbfgsOptions lbfgs;
  AdamOptions adam;
  double initial_er_db = 25.0;
  double initial_phi2_diag = std::numbers::pi / 4.0;
  /// Grid points per MZI when scanning phase offsets before the descent; 0 disables.
  int phase_scan_points = 24;
  int phase_scan_sweeps = 2;

  void validate() const;
};

struct FitReport {
  AnalyticalParams final_params;
  double train_rmse_db = 0.0;
  double initial_rmse_db = 0.0;
  int iterations_used = 0;
  bool converged = false;
  std::string status;
  std::vector<double> loss_trace;
  int best_start = 0;
  std::vector<double> start_losses;
};

/// Mean over samples and entries of the squared dB residual.
double am_loss(const AnalyticalParams& params, const Dataset& data);

/// Gradient of am_loss. Layout: alpha_db (row-major, n_outputs*n_inputs),
/// er_db (1), phi0 (n_mzi), phi2 (row-major, n_mzi*n_mzi).
Vector am_loss_gradient(const AnalyticalParams& params, const Dataset& data);

/// Loss and gradient in one pass.
double am_loss_and_gradient(const AnalyticalParams& params, const Dataset& data, Vector* gradient);

/// Number of trainable scalars and the flat (natural-coordinate) packing used by the gradient.
Index am_parameter_count(const MeshTopology& topology);
Vector pack_am(const AnalyticalParams& params);
AnalyticalParams unpack_am(const MeshTopology& topology, const Eigen::Ref<const Vector>& flat);

/// Physics-informed starting point for one multi-start seed.
AnalyticalParams initial_am(const MeshTopology& topology, std::uint64_t seed, const FitConfig& config);

/// Coordinate-wise grid search over each MZI's phase offset, with losses set
/// to their closed-form optimum at every trial. The grid is shifted randomly per seed.
void scan_phase_offsets(AnalyticalParams& params, const Dataset& data, const FitConfig& config, std::uint64_t seed);

/// Multi-start fit of the analytical model; keeps the start with the lowest training loss.
FitReport fit_analytical_model(const MeshTopology& topology, const Dataset& data, const FitConfig& config);

/// Fit a single start from the given initial params.
FitReport fit_from(const AnalyticalParams& init, const Dataset& data, const FitConfig& config);

}  // namespace omm
