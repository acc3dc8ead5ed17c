#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "omm/errors.hpp"

namespace omm {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One MZI along an input->output route, with the interferometer branch used.
struct PathElement {
  Index mzi = 0;
  int sign = +1;

  friend bool operator==(const PathElement&, const PathElement&) = default;
};

/// Routing of a mesh: which MZIs light from input j traverses to reach output i.
class MeshTopology {
 public:
  MeshTopology() = default;
  MeshTopology(Index n_outputs, Index n_inputs, Index n_mzi,
               std::vector<std::vector<PathElement>> paths);

  Index n_outputs() const { return n_outputs_; }
  Index n_inputs() const { return n_inputs_; }
  Index n_mzi() const { return n_mzi_; }
  /// Number of matrix entries, n_outputs * n_inputs.
  Index n_entries() const { return n_outputs_ * n_inputs_; }

  const std::vector<PathElement>& path(Index output, Index input) const {
    return paths_[static_cast<std::size_t>(entry_index(output, input))];
  }
  const std::vector<std::vector<PathElement>>& paths() const { return paths_; }

  /// Row-major flat position of matrix entry (output, input).
  Index entry_index(Index output, Index input) const { return output * n_inputs_ + input; }

  /// Stable 64-bit FNV-1a digest of the routing, used in file manifests.
  std::uint64_t hash() const;

  friend bool operator==(const MeshTopology&, const MeshTopology&) = default;

 private:
  Index n_outputs_ = 0;
  Index n_inputs_ = 0;
  Index n_mzi_ = 0;
  std::vector<std::vector<PathElement>> paths_;  // row-major over (output, input)
};

/// Crossbar routing: n*n MZIs, entry (i, j) passes through MZI i*n + j only.
MeshTopology default_crossbar_topology(Index n);

/// Split-tree routing for an n x n mesh: each input j feeds a splitter MZI j,
/// and output i of that tree goes through a second MZI n + i*n + j. Every
/// route therefore crosses two MZIs and the splitter MZI is shared across a column.
MeshTopology split_tree_topology(Index n);

/// Trainable parameters of the analytical intensity model.
struct AnalyticalParams {
  MeshTopology topology;
  Matrix alpha_db;  ///< [n_outputs x n_inputs] path losses, <= 0
  double er_db = 25.0;
  Vector phi0;  ///< [n_mzi] phase offsets (rad)
  Matrix phi2;  ///< [n_mzi x n_mzi] heater-power coefficients (rad / V^2)

  /// Zero-loss, zero-phase parameters with the given ER.
  static AnalyticalParams zeros(const MeshTopology& topology, double er_db = 25.0);

  /// Throws DomainError / ShapeError when an invariant is broken.
  void validate() const;
};

/// Ground-truth chip: analytical params plus per-MZI ER, a quartic phase term and noise.
struct VirtualChipParams {
  AnalyticalParams base;
  Vector er_db_per_mzi;  ///< [n_mzi]
  Vector phi4;           ///< [n_mzi] (rad / V^4)
  double noise_sigma_db = 0.0;

  /// Chip that reproduces `am` exactly (uniform ER, no quartic term, no noise).
  static VirtualChipParams from_analytical(const AnalyticalParams& am);

  void validate() const;
};

/// Mismatch magnitudes used when building a synthetic chip fixture.
struct ChipFixtureOptions {
  double er_mean_db = 30.0;
  double er_spread_db = 12.0;    ///< per-MZI ER uniform in mean +- spread
  double phi4_max = 0.05;        ///< |phi4| bound (rad / V^4)
  double noise_sigma_db = 0.3;
  double alpha_min_db = -6.0;
  double alpha_max_db = -2.0;
  double phi2_diag = std::numbers::pi / 4.0;
  double phi2_diag_spread = 0.1;  ///< relative spread of the diagonal
  double crosstalk = 0.06;        ///< nearest-neighbour coupling relative to the diagonal
  double crosstalk_decay = 0.5;   ///< geometric decay per index step
};

/// Deterministic virtual chip with random losses, phases, crosstalk and mismatch.
VirtualChipParams make_virtual_chip(const MeshTopology& topology, std::uint64_t seed,
                                    const ChipFixtureOptions& options = {});

// ---------------------------------------------------------------------------
// Physics kernels, templated on the scalar type.

/// Field ratio r = (sqrt(ER) - 1) / (sqrt(ER) + 1) for an extinction ratio in dB.
/// er_db = +inf gives the ideal interferometer, r = 1.
template <typename Scalar>
Scalar extinction_field_ratio(Scalar er_db) {
  using std::isfinite;
  using std::isnan;
  using std::pow;
  if (isnan(er_db) || !(er_db > Scalar(0))) {
    throw DomainError("extinction ratio must be a positive number of dB");
  }
  if (!isfinite(er_db)) return Scalar(1);
  const Scalar root = pow(Scalar(10), er_db / Scalar(20));
  return (root - Scalar(1)) / (root + Scalar(1));
}

/// Power transmission of a single MZI branch given the field ratio r.
/// t = 1/4 |r +- e^{i phase}|^2 = 1/4 (1 + r^2 +- 2 r cos(phase)).
template <typename Scalar>
Scalar mzi_transmission_from_ratio(Scalar phase, Scalar r, int sign) {
  using std::cos;
  const Scalar s = sign >= 0 ? Scalar(1) : Scalar(-1);
  return Scalar(0.25) * (Scalar(1) + r * r + Scalar(2) * s * r * cos(phase));
}

/// Power transmission of one MZI branch (linear, unitless).
template <typename Scalar>
Scalar mzi_transmission(Scalar phase, Scalar er_db, int sign) {
  using std::isfinite;
  if (!isfinite(phase)) throw DomainError("MZI phase must be finite");
  return mzi_transmission_from_ratio(phase, extinction_field_ratio(er_db), sign);
}

/// phi_m = phi0_m + sum_n phi2(m, n) v_n^2
template <typename DerivedPhi0, typename DerivedPhi2, typename DerivedV>
Eigen::Matrix<typename DerivedV::Scalar, Eigen::Dynamic, 1> heater_phases(
    const Eigen::MatrixBase<DerivedPhi0>& phi0, const Eigen::MatrixBase<DerivedPhi2>& phi2,
    const Eigen::MatrixBase<DerivedV>& v) {
  if (v.size() != phi0.size() || phi2.rows() != phi0.size() || phi2.cols() != v.size()) {
    throw ShapeError("voltage vector length does not match the number of MZIs");
  }
  return phi0 + phi2 * v.cwiseAbs2();
}

Vector phases_from_voltages(const AnalyticalParams& params, const Eigen::Ref<const Vector>& v);

/// Weight matrix in dB (10 log10 of power) predicted by the analytical model.
Matrix predict_weights(const AnalyticalParams& params, const Eigen::Ref<const Vector>& v);

/// Measurement of the virtual chip; noise is drawn from a generator seeded with rng_seed.
Matrix virtual_chip_measure(const VirtualChipParams& chip, const Eigen::Ref<const Vector>& v,
                            std::uint64_t rng_seed);

/// Shared kernel: dB weights for given per-MZI phases and field ratios.
Matrix weights_from_phases(const MeshTopology& topology, const Matrix& alpha_db,
                           const Eigen::Ref<const Vector>& phases,
                           const Eigen::Ref<const Vector>& field_ratios);

inline double to_db(double linear) { return 10.0 * std::log10(linear); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

}  // namespace omm
