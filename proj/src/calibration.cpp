#include "omm/calibration.hpp"

#include <cmath>

#include "omm/random.hpp"

namespace omm {

namespace {

constexpr double kDbPerNeper = 10.0 / std::numbers::ln10;

void check_data(const AnalyticalParams& params, const Dataset& data) {
  if (data.empty()) throw DomainError("dataset is empty");
  data.validate();
  if (data.n_mzi() != params.topology.n_mzi() || data.n_outputs != params.topology.n_outputs() ||
      data.n_inputs != params.topology.n_inputs()) {
    throw ShapeError("dataset shape does not match the mesh topology");
  }
}

/// dr/d(er_db) for r = (q - 1)/(q + 1), q = 10^(er_db/20).
double field_ratio_derivative(double er_db) {
  if (!std::isfinite(er_db)) return 0.0;
  const double q = std::pow(10.0, er_db / 20.0);
  return 2.0 / ((q + 1.0) * (q + 1.0)) * q * std::numbers::ln10 / 20.0;
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Lbfgs ? "lbfgs" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "lbfgs") return OptimizerKind::Lbfgs;
  if (s == "adam") return OptimizerKind::Adam;
  throw DomainError("unknown optimizer '" + s + "'");
}

void FitConfig::validate() const {
  if (max_iterations < 1) throw DomainError("max_iterations must be >= 1");
  if (!(convergence_tol > 0.0)) throw DomainError("convergence_tol must be > 0");
  if (n_starts < 1) throw DomainError("n_starts must be >= 1");
  if (bounds.alpha_max_db > 0.0) throw DomainError("loss upper bound must be <= 0 dB");
  if (!(bounds.er_min_db > 0.0)) throw DomainError("ER lower bound must be positive");
  if (!(initial_er_db > bounds.er_min_db)) throw DomainError("initial ER must exceed its lower bound");
}

double am_loss_and_gradient(const AnalyticalParams& params, const Dataset& data, Vector* gradient) {
  check_data(params, data);
  const MeshTopology& topo = params.topology;
  const Index n = data.size();
  const Index m_count = topo.n_mzi();
  const double scale = 1.0 / static_cast<double>(n * topo.n_entries());

  const Matrix v2 = data.voltages.cwiseAbs2();
  const Matrix phases = (params.phi2 * v2).colwise() + params.phi0;
  if (!phases.allFinite()) throw DomainError("MZI phase must be finite");
  const double r = extinction_field_ratio(params.er_db);
  const Eigen::ArrayXXd cos_phi = phases.array().cos();

  Eigen::ArrayXXd residual(topo.n_entries(), n);
  for (Index i = 0; i < topo.n_outputs(); ++i) {
    for (Index j = 0; j < topo.n_inputs(); ++j) {
      const Index e = topo.entry_index(i, j);
      Eigen::ArrayXd pred = Eigen::ArrayXd::Constant(n, params.alpha_db(i, j));
      for (const auto& el : topo.path(i, j)) {
        const double s = el.sign;
        pred += kDbPerNeper * (0.25 * (1.0 + r * r + 2.0 * s * r * cos_phi.row(el.mzi).transpose())).log();
      }
      residual.row(e) = pred.transpose() - data.weights_db.row(e).array();
    }
  }
  const double loss = residual.square().sum() * scale;
  if (gradient == nullptr) return loss;

  gradient->resize(am_parameter_count(topo));
  Vector& grad = *gradient;
  const Eigen::ArrayXXd dpred = 2.0 * scale * residual;
  const Eigen::ArrayXXd sin_phi = phases.array().sin();
  Eigen::ArrayXXd dphase = Eigen::ArrayXXd::Zero(m_count, n);
  double dr = 0.0;
  for (Index i = 0; i < topo.n_outputs(); ++i) {
    for (Index j = 0; j < topo.n_inputs(); ++j) {
      const Index e = topo.entry_index(i, j);
      grad(e) = dpred.row(e).sum();
      for (const auto& el : topo.path(i, j)) {
        const double s = el.sign;
        const Eigen::ArrayXd c = cos_phi.row(el.mzi).transpose();
        const Eigen::ArrayXd denom = 1.0 + r * r + 2.0 * s * r * c;
        const Eigen::ArrayXd weight = kDbPerNeper * dpred.row(e).transpose() / denom;
        dphase.row(el.mzi) -= (weight * 2.0 * s * r * sin_phi.row(el.mzi).transpose()).transpose();
        dr += (weight * (2.0 * r + 2.0 * s * c)).sum();
      }
    }
  }
  const Index off_er = topo.n_entries();
  const Index off_phi0 = off_er + 1;
  const Index off_phi2 = off_phi0 + m_count;
  grad(off_er) = dr * field_ratio_derivative(params.er_db);
  grad.segment(off_phi0, m_count) = dphase.rowwise().sum().matrix();
  const Matrix dphi2 = dphase.matrix() * v2.transpose();
  for (Index a = 0; a < m_count; ++a) {
    for (Index b = 0; b < m_count; ++b) grad(off_phi2 + a * m_count + b) = dphi2(a, b);
  }
  return loss;
}

double am_loss(const AnalyticalParams& params, const Dataset& data) {
  return am_loss_and_gradient(params, data, nullptr);
}

Vector am_loss_gradient(const AnalyticalParams& params, const Dataset& data) {
  Vector g;
  am_loss_and_gradient(params, data, &g);
  return g;
}

Index am_parameter_count(const MeshTopology& topology) {
  return topology.n_entries() + 1 + topology.n_mzi() + topology.n_mzi() * topology.n_mzi();
}

Vector pack_am(const AnalyticalParams& params) {
  const MeshTopology& topo = params.topology;
  const Index m = topo.n_mzi();
  Vector flat(am_parameter_count(topo));
  for (Index i = 0; i < topo.n_outputs(); ++i) {
    for (Index j = 0; j < topo.n_inputs(); ++j) flat(topo.entry_index(i, j)) = params.alpha_db(i, j);
  }
  flat(topo.n_entries()) = params.er_db;
  flat.segment(topo.n_entries() + 1, m) = params.phi0;
  for (Index a = 0; a < m; ++a) {
    for (Index b = 0; b < m; ++b) flat(topo.n_entries() + 1 + m + a * m + b) = params.phi2(a, b);
  }
  return flat;
}

AnalyticalParams unpack_am(const MeshTopology& topology, const Eigen::Ref<const Vector>& flat) {
  if (flat.size() != am_parameter_count(topology)) throw ShapeError("flat parameter vector has the wrong length");
  const Index m = topology.n_mzi();
  AnalyticalParams p = AnalyticalParams::zeros(topology);
  for (Index i = 0; i < topology.n_outputs(); ++i) {
    for (Index j = 0; j < topology.n_inputs(); ++j) p.alpha_db(i, j) = flat(topology.entry_index(i, j));
  }
  p.er_db = flat(topology.n_entries());
  p.phi0 = flat.segment(topology.n_entries() + 1, m);
  for (Index a = 0; a < m; ++a) {
    for (Index b = 0; b < m; ++b) p.phi2(a, b) = flat(topology.n_entries() + 1 + m + a * m + b);
  }
  return p;
}

AnalyticalParams initial_am(const MeshTopology& topology, std::uint64_t seed, const FitConfig& config) {
  AnalyticalParams p = AnalyticalParams::zeros(topology, config.initial_er_db);
  Rng rng = make_rng(seed);
  for (Index k = 0; k < topology.n_mzi(); ++k) p.phi0(k) = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  p.phi2.diagonal().setConstant(config.initial_phi2_diag);
  return p;
}

namespace {

/// Loss after replacing alpha_db by its closed-form optimum (mean residual per
/// entry, capped at alpha_max_db). Writes that alpha into `params`.
double loss_with_best_alpha(AnalyticalParams& params, const Dataset& data, double alpha_max_db) {
  params.alpha_db.setZero();
  const Index n = data.size();
  const MeshTopology& topo = params.topology;
  const Matrix phases = (params.phi2 * data.voltages.cwiseAbs2()).colwise() + params.phi0;
  const double r = extinction_field_ratio(params.er_db);
  const Eigen::ArrayXXd cos_phi = phases.array().cos();
  double total = 0.0;
  for (Index i = 0; i < topo.n_outputs(); ++i) {
    for (Index j = 0; j < topo.n_inputs(); ++j) {
      const Index e = topo.entry_index(i, j);
      Eigen::ArrayXd pred = Eigen::ArrayXd::Zero(n);
      for (const auto& el : topo.path(i, j)) {
        pred += kDbPerNeper * (0.25 * (1.0 + r * r + 2.0 * el.sign * r * cos_phi.row(el.mzi).transpose())).log();
      }
      const Eigen::ArrayXd diff = data.weights_db.row(e).transpose().array() - pred;
      const double alpha = std::min(diff.mean(), alpha_max_db);
      params.alpha_db(i, j) = alpha;
      total += (diff - alpha).square().sum();
    }
  }
  return total / static_cast<double>(n * topo.n_entries());
}

}  // namespace

void scan_phase_offsets(AnalyticalParams& params, const Dataset& data, const FitConfig& config, std::uint64_t seed) {
  check_data(params, data);
  const int points = config.phase_scan_points;
  if (points <= 0) return;
  Rng rng = make_rng(seed);
  const double step = 2.0 * std::numbers::pi / points;
  for (int sweep = 0; sweep < config.phase_scan_sweeps; ++sweep) {
    for (Index m = 0; m < params.topology.n_mzi(); ++m) {
      const double offset = uniform(rng, 0.0, step);
      double best_loss = loss_with_best_alpha(params, data, config.bounds.alpha_max_db);
      double best_phase = params.phi0(m);
      for (int k = 0; k < points; ++k) {
        params.phi0(m) = offset + step * k;
        const double loss = loss_with_best_alpha(params, data, config.bounds.alpha_max_db);
        if (loss < best_loss) {
          best_loss = loss;
          best_phase = params.phi0(m);
        }
      }
      params.phi0(m) = best_phase;
    }
  }
  loss_with_best_alpha(params, data, config.bounds.alpha_max_db);
  params.alpha_db = params.alpha_db.cwiseMax(config.bounds.alpha_min_db);
}

FitReport fit_from(const AnalyticalParams& init, const Dataset& data, const FitConfig& config) {
  config.validate();
  init.validate();
  check_data(init, data);
  const MeshTopology& topo = init.topology;
  const Index off_er = topo.n_entries();
  const double er_min = config.bounds.er_min_db;

  // Optimizer coordinates: natural packing except er_db -> log(er_db - er_min).
  auto to_natural = [&](const Vector& u) {
    Vector flat = u;
    flat(off_er) = er_min + std::exp(u(off_er));
    return flat;
  };
  Vector u0 = pack_am(init);
  u0(off_er) = std::log(init.er_db - er_min);

  Box<double> box = Box<double>::unbounded(u0.size());
  box.lower.head(off_er).setConstant(config.bounds.alpha_min_db);
  box.upper.head(off_er).setConstant(config.bounds.alpha_max_db);
  box.lower.tail(topo.n_mzi() * topo.n_mzi()).setConstant(config.bounds.phi2_min);
  box.upper.tail(topo.n_mzi() * topo.n_mzi()).setConstant(config.bounds.phi2_max);

  auto objective = [&](const Vector& u, Vector& grad) {
    const Vector flat = to_natural(u);
    if (!flat.allFinite()) return std::numeric_limits<double>::infinity();
    const AnalyticalParams p = unpack_am(topo, flat);
    double loss = 0.0;
    try {
      loss = am_loss_and_gradient(p, data, &grad);
    } catch (const DomainError&) {
      return std::numeric_limits<double>::infinity();
    }
    grad(off_er) *= std::exp(u(off_er));
    return loss;
  };

  MinimizeResult<double> res;
  if (config.optimizer == OptimizerKind::Lbfgs) {
    LbfgsOptions opt = config.lbfgs;
    opt.max_iterations = config.max_iterations;
    opt.convergence_tol = config.convergence_tol;
    res = minimize_lbfgs<double>(objective, u0, opt, box);
  } else {
    AdamOptions opt = config.adam;
    opt.max_iterations = config.max_iterations;
    opt.convergence_tol = config.convergence_tol;
    res = minimize_adam<double>(objective, u0, opt, box);
  }

  FitReport report;
  report.final_params = unpack_am(topo, to_natural(res.x));
  report.loss_trace = res.trace;
  report.iterations_used = res.iterations;
  report.converged = res.converged;
  report.status = res.status;
  if (res.trace.empty()) {
    report.final_params = init;
    report.initial_rmse_db = std::numeric_limits<double>::infinity();
    report.train_rmse_db = std::numeric_limits<double>::infinity();
    report.converged = false;
    return report;
  }
  report.initial_rmse_db = std::sqrt(res.trace.front());
  report.train_rmse_db = std::sqrt(am_loss(report.final_params, data));
  return report;
}

FitReport fit_analytical_model(const MeshTopology& topology, const Dataset& data, const FitConfig& config) {
  config.validate();
  FitReport best;
  best.train_rmse_db = std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (int start = 0; start < config.n_starts; ++start) {
    const std::uint64_t start_seed = derive_seed(config.init_seed, {static_cast<std::uint64_t>(start)});
    AnalyticalParams init = initial_am(topology, start_seed, config);
    scan_phase_offsets(init, data, config, derive_seed(start_seed, {1}));
    FitReport r = fit_from(init, data, config);
    best.start_losses.push_back(r.train_rmse_db * r.train_rmse_db);
    if (!have_best || r.train_rmse_db < best.train_rmse_db) {
      auto losses = std::move(best.start_losses);
      best = std::move(r);
      best.start_losses = std::move(losses);
      best.best_start = start;
      have_best = true;
    }
  }
  return best;
}

}  // namespace omm
