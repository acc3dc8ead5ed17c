#include "omm/mesh_model.hpp"

#include <string>
#include <utility>

#include "omm/random.hpp"

namespace omm {

MeshTopology::MeshTopology(Index n_outputs, Index n_inputs, Index n_mzi,
                           std::vector<std::vector<PathElement>> paths)
    : n_outputs_(n_outputs), n_inputs_(n_inputs), n_mzi_(n_mzi), paths_(std::move(paths)) {
  if (n_outputs_ < 1 || n_inputs_ < 1) throw DomainError("mesh needs at least one input and one output");
  if (n_mzi_ < 1) throw DomainError("mesh needs at least one MZI");
  if (static_cast<Index>(paths_.size()) != n_outputs_ * n_inputs_) {
    throw ShapeError("expected one path per (output, input) pair");
  }
  for (const auto& path : paths_) {
    if (path.empty()) throw DomainError("every path must cross at least one MZI");
    for (const auto& e : path) {
      if (e.mzi < 0 || e.mzi >= n_mzi_) throw DomainError("path references MZI index out of range");
      if (e.sign != 1 && e.sign != -1) throw DomainError("path branch sign must be +1 or -1");
    }
  }
}

std::uint64_t MeshTopology::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::int64_t value) {
    auto u = static_cast<std::uint64_t>(value);
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (u >> (8 * byte)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  feed(n_outputs_);
  feed(n_inputs_);
  feed(n_mzi_);
  for (const auto& path : paths_) {
    feed(static_cast<std::int64_t>(path.size()));
    for (const auto& e : path) {
      feed(e.mzi);
      feed(e.sign);
    }
  }
  return h;
}

MeshTopology default_crossbar_topology(Index n) {
  if (n < 1) throw DomainError("crossbar size must be at least 1");
  std::vector<std::vector<PathElement>> paths;
  paths.reserve(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) paths.push_back({PathElement{i * n + j, +1}});
  }
  return MeshTopology(n, n, n * n, std::move(paths));
}

MeshTopology split_tree_topology(Index n) {
  if (n < 1) throw DomainError("split-tree size must be at least 1");
  std::vector<std::vector<PathElement>> paths;
  paths.reserve(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const int splitter_sign = (i % 2 == 0) ? +1 : -1;
      paths.push_back({PathElement{j, splitter_sign}, PathElement{n + i * n + j, +1}});
    }
  }
  return MeshTopology(n, n, n + n * n, std::move(paths));
}

AnalyticalParams AnalyticalParams::zeros(const MeshTopology& topology, double er_db) {
  AnalyticalParams p;
  p.topology = topology;
  p.alpha_db = Matrix::Zero(topology.n_outputs(), topology.n_inputs());
  p.er_db = er_db;
  p.phi0 = Vector::Zero(topology.n_mzi());
  p.phi2 = Matrix::Zero(topology.n_mzi(), topology.n_mzi());
  return p;
}

void AnalyticalParams::validate() const {
  const Index m = topology.n_mzi();
  if (alpha_db.rows() != topology.n_outputs() || alpha_db.cols() != topology.n_inputs()) {
    throw ShapeError("alpha_db must be n_outputs x n_inputs");
  }
  if (phi0.size() != m) throw ShapeError("phi0 must have one entry per MZI");
  if (phi2.rows() != m || phi2.cols() != m) throw ShapeError("phi2 must be n_mzi x n_mzi");
  if (!(er_db > 0.0) || std::isnan(er_db)) throw DomainError("er_db must be positive");
  if (!alpha_db.allFinite() || !phi0.allFinite() || !phi2.allFinite()) {
    throw DomainError("analytical parameters must be finite");
  }
  if ((alpha_db.array() > 0.0).any()) throw DomainError("alpha_db must be <= 0 dB");
}

VirtualChipParams VirtualChipParams::from_analytical(const AnalyticalParams& am) {
  VirtualChipParams chip;
  chip.base = am;
  chip.er_db_per_mzi = Vector::Constant(am.topology.n_mzi(), am.er_db);
  chip.phi4 = Vector::Zero(am.topology.n_mzi());
  chip.noise_sigma_db = 0.0;
  return chip;
}

void VirtualChipParams::validate() const {
  base.validate();
  const Index m = base.topology.n_mzi();
  if (er_db_per_mzi.size() != m || phi4.size() != m) throw ShapeError("per-MZI chip vectors must have n_mzi entries");
  if ((er_db_per_mzi.array() <= 0.0).any() || er_db_per_mzi.hasNaN()) throw DomainError("per-MZI ER must be positive");
  if (!phi4.allFinite()) throw DomainError("phi4 must be finite");
  if (!(noise_sigma_db >= 0.0) || !std::isfinite(noise_sigma_db)) throw DomainError("noise sigma must be >= 0");
}

VirtualChipParams make_virtual_chip(const MeshTopology& topology, std::uint64_t seed,
                                    const ChipFixtureOptions& options) {
  Rng rng = make_rng(seed);
  const Index m = topology.n_mzi();

  AnalyticalParams base = AnalyticalParams::zeros(topology, options.er_mean_db);
  for (Index i = 0; i < topology.n_outputs(); ++i) {
    for (Index j = 0; j < topology.n_inputs(); ++j) {
      base.alpha_db(i, j) = uniform(rng, options.alpha_min_db, options.alpha_max_db);
    }
  }
  for (Index k = 0; k < m; ++k) base.phi0(k) = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  for (Index k = 0; k < m; ++k) {
    const double diag = options.phi2_diag * (1.0 + uniform(rng, -options.phi2_diag_spread, options.phi2_diag_spread));
    base.phi2(k, k) = diag;
    for (Index n = 0; n < m; ++n) {
      if (n == k) continue;
      const auto distance = static_cast<double>(std::abs(n - k));
      // Heating only adds phase, so crosstalk coefficients are positive.
      base.phi2(k, n) = options.phi2_diag * options.crosstalk * std::pow(options.crosstalk_decay, distance - 1.0) *
                        uniform(rng, 0.5, 1.5);
    }
  }

  VirtualChipParams chip;
  chip.base = std::move(base);
  chip.er_db_per_mzi.resize(m);
  chip.phi4.resize(m);
  for (Index k = 0; k < m; ++k) {
    chip.er_db_per_mzi(k) = options.er_mean_db + uniform(rng, -options.er_spread_db, options.er_spread_db);
  }
  for (Index k = 0; k < m; ++k) chip.phi4(k) = uniform(rng, -options.phi4_max, options.phi4_max);
  chip.noise_sigma_db = options.noise_sigma_db;
  chip.validate();
  return chip;
}

Vector phases_from_voltages(const AnalyticalParams& params, const Eigen::Ref<const Vector>& v) {
  if (v.size() != params.topology.n_mzi()) throw ShapeError("voltage vector length does not match the number of MZIs");
  if (!v.allFinite()) throw DomainError("voltages must be finite");
  return heater_phases(params.phi0, params.phi2, v);
}

Matrix weights_from_phases(const MeshTopology& topology, const Matrix& alpha_db,
                           const Eigen::Ref<const Vector>& phases,
                           const Eigen::Ref<const Vector>& field_ratios) {
  Matrix w(topology.n_outputs(), topology.n_inputs());
  for (Index i = 0; i < topology.n_outputs(); ++i) {
    for (Index j = 0; j < topology.n_inputs(); ++j) {
      double linear = from_db(alpha_db(i, j));
      for (const auto& e : topology.path(i, j)) {
        if (!std::isfinite(phases(e.mzi))) throw DomainError("MZI phase must be finite");
        linear *= mzi_transmission_from_ratio(phases(e.mzi), field_ratios(e.mzi), e.sign);
      }
      w(i, j) = to_db(linear);
    }
  }
  return w;
}

Matrix predict_weights(const AnalyticalParams& params, const Eigen::Ref<const Vector>& v) {
  const Vector phases = phases_from_voltages(params, v);
  const Vector ratios = Vector::Constant(params.topology.n_mzi(), extinction_field_ratio(params.er_db));
  return weights_from_phases(params.topology, params.alpha_db, phases, ratios);
}

Matrix virtual_chip_measure(const VirtualChipParams& chip, const Eigen::Ref<const Vector>& v,
                            std::uint64_t rng_seed) {
  Vector phases = phases_from_voltages(chip.base, v);
  phases += chip.phi4.cwiseProduct(v.array().pow(4).matrix());
  Vector ratios(chip.er_db_per_mzi.size());
  for (Index k = 0; k < ratios.size(); ++k) ratios(k) = extinction_field_ratio(chip.er_db_per_mzi(k));
  Matrix w = weights_from_phases(chip.base.topology, chip.base.alpha_db, phases, ratios);
  if (chip.noise_sigma_db > 0.0) {
    Rng rng = make_rng(rng_seed);
    // Column-major fill order is part of the determinism contract.
    for (Index k = 0; k < w.size(); ++k) w.data()[k] += chip.noise_sigma_db * standard_normal(rng);
  }
  return w;
}

}  // namespace omm
