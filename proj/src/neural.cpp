#include "omm/neural.hpp"

#include <cmath>
#include <limits>

#include "omm/random.hpp"

namespace omm {

namespace {

using Clock = std::chrono::steady_clock;

Matrix scale_inputs(const MlpSpec& spec, const Eigen::Ref<const Matrix>& voltages) {
  const double a = 2.0 / (spec.v_max - spec.v_min);
  return ((voltages.array() - spec.v_min) * a - 1.0).matrix();
}

void check_batch(const MlpSpec& spec, const Dataset& batch) {
  if (batch.empty()) throw DomainError("training batch is empty");
  batch.validate();
  if (batch.n_mzi() != spec.input_dim || batch.n_entries() != spec.output_dim()) {
    throw ShapeError("dataset shape does not match the network");
  }
}

/// Forward pass keeping every layer's activation; acts[0] is the scaled input.
Matrix forward(const MlpParams& p, const Matrix& x, std::vector<Matrix>* acts) {
  Matrix a = x;
  const auto n_layers = p.weights.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix z = p.weights[l] * a;
    z.colwise() += p.biases[l];
    if (acts) acts->push_back(std::move(a));
    if (l + 1 < n_layers) {
      a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

double loss_and_gradient(const MlpParams& p, const Matrix& x, const Matrix& y, const TrainConfig& config,
                         Vector* gradient) {
  std::vector<Matrix> acts;
  acts.reserve(p.weights.size());
  const Matrix out = forward(p, x, gradient ? &acts : nullptr);
  const Matrix residual = out - y;
  const double scale = 1.0 / static_cast<double>(residual.size());
  double loss = residual.squaredNorm() * scale;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    if (p.frozen[l]) continue;
    loss += config.lambda_l1 * p.weights[l].cwiseAbs().sum() + config.lambda_l2 * p.weights[l].squaredNorm();
  }
  if (!gradient) return loss;

  gradient->setZero(p.parameter_count());
  std::vector<Index> offsets(p.weights.size());
  Index off = 0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    offsets[l] = off;
    off += p.weights[l].size() + p.biases[l].size();
  }
  // Layers below the deepest unfrozen one need no error signal.
  std::size_t lowest_trainable = p.weights.size();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    if (!p.frozen[l]) {
      lowest_trainable = l;
      break;
    }
  }
  Matrix delta = (2.0 * scale) * residual;
  for (std::size_t l = p.weights.size(); l-- > lowest_trainable;) {
    if (!p.frozen[l]) {
      const Matrix& w = p.weights[l];
      Eigen::Map<Matrix> gw(gradient->data() + offsets[l], w.rows(), w.cols());
      gw.noalias() = delta * acts[l].transpose();
      gw += config.lambda_l1 * w.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); }) +
            (2.0 * config.lambda_l2) * w;
      gradient->segment(offsets[l] + w.size(), w.rows()) = delta.rowwise().sum();
    }
    if (l > lowest_trainable) {
      delta = (p.weights[l].transpose() * delta).cwiseProduct((1.0 - acts[l].array().square()).matrix());
    }
  }
  return loss;
}

/// Indices (into the full flat vector) of the parameters that training may change.
std::vector<std::pair<Index, Index>> trainable_ranges(const MlpParams& p) {
  std::vector<std::pair<Index, Index>> ranges;
  Index off = 0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const Index len = p.weights[l].size() + p.biases[l].size();
    if (!p.frozen[l]) ranges.emplace_back(off, len);
    off += len;
  }
  return ranges;
}

Vector gather(const Vector& full, const std::vector<std::pair<Index, Index>>& ranges) {
  Index n = 0;
  for (const auto& r : ranges) n += r.second;
  Vector out(n);
  Index pos = 0;
  for (const auto& [start, len] : ranges) {
    out.segment(pos, len) = full.segment(start, len);
    pos += len;
  }
  return out;
}

void scatter(const Vector& part, const std::vector<std::pair<Index, Index>>& ranges, Vector& full) {
  Index pos = 0;
  for (const auto& [start, len] : ranges) {
    full.segment(start, len) = part.segment(pos, len);
    pos += len;
  }
}

double rmse_of(const MlpParams& p, const Matrix& x, const Matrix& y) {
  const Matrix out = forward(p, x, nullptr);
  return std::sqrt((out - y).squaredNorm() / static_cast<double>(y.size()));
}

}  // namespace

Index MlpSpec::layer_in(Index layer) const {
  return layer == 0 ? input_dim : hidden_layers[static_cast<std::size_t>(layer - 1)];
}

Index MlpSpec::layer_out(Index layer) const {
  return layer + 1 == n_layers() ? output_dim() : hidden_layers[static_cast<std::size_t>(layer)];
}

void MlpSpec::validate() const {
  if (input_dim < 1 || n_outputs < 1 || n_inputs < 1) throw DomainError("network dimensions must be >= 1");
  if (hidden_layers.empty()) throw DomainError("network needs at least one hidden layer");
  for (Index w : hidden_layers) {
    if (w < 1) throw DomainError("hidden layer width must be >= 1");
  }
  if (!(v_max > v_min)) throw DomainError("input range must be non-empty");
}

MlpSpec MlpSpec::for_dataset(const Dataset& data, std::vector<Index> hidden) {
  MlpSpec spec;
  spec.input_dim = data.n_mzi();
  spec.hidden_layers = std::move(hidden);
  spec.n_outputs = data.n_outputs;
  spec.n_inputs = data.n_inputs;
  spec.v_min = 0.0;
  spec.v_max = data.v_max;
  spec.validate();
  return spec;
}

Index MlpParams::parameter_count() const {
  Index n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

Vector MlpParams::flatten() const {
  Vector flat(parameter_count());
  Index off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.segment(off, weights[l].size()) = Eigen::Map<const Vector>(weights[l].data(), weights[l].size());
    off += weights[l].size();
    flat.segment(off, biases[l].size()) = biases[l];
    off += biases[l].size();
  }
  return flat;
}

void MlpParams::assign(const Eigen::Ref<const Vector>& flat) {
  if (flat.size() != parameter_count()) throw ShapeError("flat parameter vector has the wrong length");
  Index off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::Map<Vector>(weights[l].data(), weights[l].size()) = flat.segment(off, weights[l].size());
    off += weights[l].size();
    biases[l] = flat.segment(off, biases[l].size());
    off += biases[l].size();
  }
}

void MlpParams::validate(const MlpSpec& spec) const {
  spec.validate();
  const auto n = static_cast<std::size_t>(spec.n_layers());
  if (weights.size() != n || biases.size() != n || frozen.size() != n) {
    throw ShapeError("parameter layer count does not match the network spec");
  }
  for (std::size_t l = 0; l < n; ++l) {
    const auto li = static_cast<Index>(l);
    if (weights[l].rows() != spec.layer_out(li) || weights[l].cols() != spec.layer_in(li) ||
        biases[l].size() != spec.layer_out(li)) {
      throw ShapeError("layer " + std::to_string(l) + " has the wrong shape");
    }
  }
}

MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed);
  MlpParams p;
  for (Index l = 0; l < spec.n_layers(); ++l) {
    const Index in = spec.layer_in(l);
    const Index out = spec.layer_out(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(out, in);
    for (Index k = 0; k < w.size(); ++k) w.data()[k] = uniform(rng, -limit, limit);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(out));
    p.frozen.push_back(false);
  }
  return p;
}

void TrainConfig::validate() const {
  if (!(lambda_l1 >= 0.0) || !(lambda_l2 >= 0.0)) throw DomainError("regularization weights must be >= 0");
  if (history_size < 1) throw DomainError("history_size must be >= 1");
  if (max_iterations < 0) throw DomainError("max_iterations must be >= 0");
  if (validation_interval < 1 || patience < 1) throw DomainError("early-stopping settings must be >= 1");
}

Matrix mlp_forward_batch(const MlpSpec& spec, const MlpParams& params, const Eigen::Ref<const Matrix>& voltages) {
  params.validate(spec);
  if (voltages.rows() != spec.input_dim) throw ShapeError("voltage vector length does not match the network input");
  return forward(params, scale_inputs(spec, voltages), nullptr);
}

Matrix mlp_forward(const MlpSpec& spec, const MlpParams& params, const Eigen::Ref<const Vector>& v) {
  if (v.size() != spec.input_dim) throw ShapeError("voltage vector length does not match the network input");
  const Matrix flat = mlp_forward_batch(spec, params, v);
  Matrix w(spec.n_outputs, spec.n_inputs);
  for (Index i = 0; i < spec.n_outputs; ++i) {
    for (Index j = 0; j < spec.n_inputs; ++j) w(i, j) = flat(i * spec.n_inputs + j, 0);
  }
  return w;
}

double nn_loss_and_gradient(const MlpSpec& spec, const MlpParams& params, const Dataset& batch,
                            const TrainConfig& config, Vector* gradient) {
  params.validate(spec);
  check_batch(spec, batch);
  return loss_and_gradient(params, scale_inputs(spec, batch.voltages), batch.weights_db, config, gradient);
}

double nn_rmse_db(const MlpSpec& spec, const MlpParams& params, const Dataset& data) {
  params.validate(spec);
  check_batch(spec, data);
  return rmse_of(params, scale_inputs(spec, data.voltages), data.weights_db);
}

TrainResult train(const MlpSpec& spec, const MlpParams& init, const Dataset& data, const TrainConfig& config,
                  const Dataset* validation) {
  config.validate();
  init.validate(spec);
  check_batch(spec, data);
  if (validation && !validation->empty()) {
    check_batch(spec, *validation);
  } else {
    validation = nullptr;
  }

  const Matrix x = scale_inputs(spec, data.voltages);
  const Matrix& y = data.weights_db;
  Matrix x_val;
  if (validation) x_val = scale_inputs(spec, validation->voltages);

  const auto ranges = trainable_ranges(init);
  const Vector full0 = init.flatten();
  MlpParams work = init;
  Vector full = full0;

  auto objective = [&](const Vector& part, Vector& grad_part) {
    scatter(part, ranges, full);
    work.assign(full);
    Vector grad_full;
    const double loss = loss_and_gradient(work, x, y, config, &grad_full);
    grad_part = gather(grad_full, ranges);
    return loss;
  };

  TrainResult result;
  const auto started = Clock::now();
  Vector best_part = gather(full0, ranges);
  double best_val = std::numeric_limits<double>::infinity();
  int checks_since_best = 0;
  if (validation) {
    best_val = rmse_of(init, x_val, validation->weights_db);
    result.best_iteration = 0;
  }

  IterationCallback<double> callback = [&](int iteration, const Vector& part, double) {
    if (config.time_budget && Clock::now() - started > *config.time_budget) {
      result.timed_out = true;
      if (!validation) best_part = part;
      return false;
    }
    if (!validation || iteration % config.validation_interval != 0) return true;
    scatter(part, ranges, full);
    work.assign(full);
    const double val = rmse_of(work, x_val, validation->weights_db);
    if (val < best_val) {
      best_val = val;
      best_part = part;
      result.best_iteration = iteration;
      checks_since_best = 0;
    } else if (++checks_since_best >= config.patience) {
      return false;
    }
    return true;
  };

  MinimizeResult<double> res;
  const Vector start = gather(full0, ranges);
  if (start.size() == 0 || config.max_iterations == 0) {
    result.params = init;
    result.final_loss = loss_and_gradient(init, x, y, config, nullptr);
    result.loss_trace = {result.final_loss};
    result.status = start.size() == 0 ? "every layer is frozen" : "no iterations requested";
    result.converged = start.size() == 0;
    return result;
  }
  if (config.optimizer == OptimizerKind::Lbfgs) {
    LbfgsOptions opt;
    opt.max_iterations = config.max_iterations;
    opt.history_size = config.history_size;
    opt.convergence_tol = config.convergence_tol;
    opt.armijo = config.armijo;
    opt.backtrack = config.backtrack;
    opt.max_line_search = config.max_line_search;
    res = minimize_lbfgs<double>(objective, start, opt, std::nullopt, callback);
  } else {
    AdamOptions opt = config.adam;
    opt.max_iterations = config.max_iterations;
    res = minimize_adam<double>(objective, start, opt, std::nullopt, callback);
  }

  Vector chosen = res.x;
  if (validation) {
    // The final iterate may not have been checked yet.
    scatter(res.x, ranges, full);
    work.assign(full);
    const double val = rmse_of(work, x_val, validation->weights_db);
    if (val < best_val) {
      best_val = val;
      best_part = res.x;
      result.best_iteration = res.iterations;
    }
    chosen = best_part;
    result.best_validation_rmse_db = best_val;
  } else if (result.timed_out) {
    chosen = best_part;
  }

  full = full0;
  scatter(chosen, ranges, full);
  result.params = init;
  result.params.assign(full);
  result.loss_trace = res.trace;
  result.iterations = res.iterations;
  result.converged = res.converged && !result.timed_out;
  result.status = result.timed_out ? "time budget exceeded" : res.status;
  result.final_loss = loss_and_gradient(result.params, x, y, config, nullptr);
  return result;
}

TransferResult pretrain_then_transfer(const MlpSpec& spec, const Dataset& synthetic, const Dataset& experimental,
                                      const TrainConfig& pretrain_config, const TrainConfig& retrain_config,
                                      const Dataset* synthetic_validation, const Dataset* experimental_validation) {
  check_batch(spec, synthetic);
  check_batch(spec, experimental);
  TransferResult out;
  MlpParams init = init_mlp(spec, pretrain_config.init_seed);
  out.pretrain = train(spec, init, synthetic, pretrain_config, synthetic_validation);
  out.pretrained = out.pretrain.params;
  out.pretrained.frozen.assign(out.pretrained.frozen.size(), false);

  MlpParams start = out.pretrained;
  start.frozen[0] = true;
  out.retrain = train(spec, start, experimental, retrain_config, experimental_validation);
  out.transferred = out.retrain.params;
  return out;
}

}  // namespace omm
