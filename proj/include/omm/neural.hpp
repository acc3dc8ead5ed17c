#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omm/calibration.hpp"
#include "omm/dataset.hpp"
#include "omm/optim.hpp"

namespace omm {

/// Fully connected network: tanh on hidden layers, identity on the output.
/// Inputs are volts mapped affinely from [v_min, v_max] to [-1, 1].
struct MlpSpec {
  Index input_dim = 9;
  std::vector<Index> hidden_layers{64, 64};
  Index n_outputs = 3;  ///< weight-matrix rows; output_dim = n_outputs * n_inputs
  Index n_inputs = 3;
  double v_min = 0.0;
  double v_max = 2.0;

  Index output_dim() const { return n_outputs * n_inputs; }
  Index n_layers() const { return static_cast<Index>(hidden_layers.size()) + 1; }
  Index layer_in(Index layer) const;
  Index layer_out(Index layer) const;

  void validate() const;

  /// Spec matching a dataset's shapes.
  static MlpSpec for_dataset(const Dataset& data, std::vector<Index> hidden = {64, 64});
};

struct MlpParams {
  std::vector<Matrix> weights;  ///< layer l: [out x in]
  std::vector<Vector> biases;
  std::vector<bool> frozen;     ///< frozen layers are never updated

  Index parameter_count() const;
  /// Layer by layer: weights (column-major) then bias.
  Vector flatten() const;
  void assign(const Eigen::Ref<const Vector>& flat);
  void validate(const MlpSpec& spec) const;
};

/// Glorot-uniform weights, zero biases, nothing frozen.
MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed);

struct TrainConfig {
  double lambda_l1 = 5e-4;
  double lambda_l2 = 9e-9;
  int max_iterations = 500;
  int history_size = 10;
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_line_search = 40;
  std::uint64_t init_seed = 0;
  double convergence_tol = 1e-10;
  OptimizerKind optimizer = OptimizerKind::Lbfgs;
  AdamOptions adam;
  /// Early stopping: evaluate the validation set every `validation_interval`
  /// accepted steps, keep the best iterate and stop after `patience` checks
  /// without improvement. Inactive without a validation set.
  int validation_interval = 10;
  int patience = 10;
  /// Wall-clock budget; exceeding it stops training and flags non-convergence.
  std::optional<std::chrono::duration<double>> time_budget;

  void validate() const;
};

struct TrainResult {
  MlpParams params;
  std::vector<double> loss_trace;
  int iterations = 0;
  bool converged = false;
  bool timed_out = false;
  std::string status;
  double final_loss = 0.0;
  std::optional<double> best_validation_rmse_db;
  int best_iteration = 0;
};

/// Network output for a single voltage vector, as an [n_outputs x n_inputs] dB matrix.
Matrix mlp_forward(const MlpSpec& spec, const MlpParams& params, const Eigen::Ref<const Vector>& v);

/// Batched forward pass: voltages [input_dim x N] -> flattened weights [output_dim x N].
Matrix mlp_forward_batch(const MlpSpec& spec, const MlpParams& params, const Eigen::Ref<const Matrix>& voltages);

/// MSE in dB plus L1/L2 penalties on unfrozen weight matrices; the gradient is
/// laid out like MlpParams::flatten() and is exactly zero on frozen layers.
double nn_loss_and_gradient(const MlpSpec& spec, const MlpParams& params, const Dataset& batch,
                            const TrainConfig& config, Vector* gradient);

/// Full-batch training of the unfrozen layers.
TrainResult train(const MlpSpec& spec, const MlpParams& init, const Dataset& data, const TrainConfig& config,
                  const Dataset* validation = nullptr);

struct TransferResult {
  MlpParams pretrained;
  MlpParams transferred;
  TrainResult pretrain;
  TrainResult retrain;
};

/// Pretrain every layer on synthetic data, then freeze the first hidden layer
/// and retrain the rest on experimental data.
TransferResult pretrain_then_transfer(const MlpSpec& spec, const Dataset& synthetic, const Dataset& experimental,
                                      const TrainConfig& pretrain_config, const TrainConfig& retrain_config,
                                      const Dataset* synthetic_validation = nullptr,
                                      const Dataset* experimental_validation = nullptr);

/// RMSE in dB of the network on a dataset.
double nn_rmse_db(const MlpSpec& spec, const MlpParams& params, const Dataset& data);

}  // namespace omm
