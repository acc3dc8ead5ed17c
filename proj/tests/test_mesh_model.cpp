#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "omm/mesh_model.hpp"
#include "omm/random.hpp"
#include "omm/serialization.hpp"

using namespace omm;

namespace {

constexpr double kPi = std::numbers::pi;
const double kInf = std::numeric_limits<double>::infinity();

VirtualChipParams fixture_chip(const char* name) { return load_chip(std::string(OMM_FIXTURE_DIR) + "/" + name); }

}  // namespace

TEST_CASE("mzi_transmission reference points") {
  CHECK(mzi_transmission(0.0, kInf, +1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(mzi_transmission(kPi, kInf, +1)) < 1e-15);
  // ER 20 dB: r = 9/11, minimum 1/121 (scripted closed form and numeric minimum over phase)
  CHECK(std::abs(mzi_transmission(kPi, 20.0, +1) - 0.00826446280991735) < 1e-15);
  CHECK(to_db(mzi_transmission(kPi, 20.0, +1)) == doctest::Approx(-20.8278537).epsilon(1e-7));
}

TEST_CASE("mzi_transmission rejects bad inputs") {
  CHECK_THROWS_AS(mzi_transmission(kInf, 20.0, +1), DomainError);
  CHECK_THROWS_AS(mzi_transmission(std::nan(""), 20.0, +1), DomainError);
  CHECK_THROWS_AS(mzi_transmission(0.0, 0.0, +1), DomainError);
  CHECK_THROWS_AS(mzi_transmission(0.0, -3.0, +1), DomainError);
  CHECK_THROWS_AS(mzi_transmission(0.0, std::nan(""), +1), DomainError);
}

TEST_CASE("ideal interferometer follows cos^2(phase / 2)") {
  for (int k = 0; k < 1000; ++k) {
    const double phi = -4.0 * kPi + 8.0 * kPi * k / 999.0;
    const double c = std::cos(phi / 2.0);
    CHECK(std::abs(mzi_transmission(phi, kInf, +1) - c * c) < 1e-12);
  }
}

TEST_CASE("transmission periodicity and sign flip") {
  Rng rng = make_rng(3);
  for (int k = 0; k < 200; ++k) {
    const double phi = uniform(rng, -10.0, 10.0);
    const double er = uniform(rng, 5.0, 40.0);
    CHECK(std::abs(mzi_transmission(phi, er, +1) - mzi_transmission(phi + 2.0 * kPi, er, +1)) < 1e-12);
    CHECK(std::abs(mzi_transmission(phi, er, -1) - mzi_transmission(phi + 2.0 * kPi, er, -1)) < 1e-12);
    CHECK(std::abs(mzi_transmission(phi, kInf, +1) - mzi_transmission(phi + kPi, kInf, -1)) < 1e-12);
  }
}

TEST_CASE("finite ER minimum is (1 - r)^2 / 4") {
  for (double er : {5.0, 10.0, 20.0, 25.0, 30.0, 42.0}) {
    const double root = std::pow(10.0, er / 20.0);
    const double r = (root - 1.0) / (root + 1.0);
    CHECK(std::abs(mzi_transmission(kPi, er, +1) - 0.25 * (1.0 - r) * (1.0 - r)) < 1e-12);
    CHECK(std::abs(mzi_transmission(0.0, er, -1) - 0.25 * (1.0 - r) * (1.0 - r)) < 1e-12);
  }
}

TEST_CASE("phases_from_voltages") {
  const MeshTopology topo = default_crossbar_topology(3);
  AnalyticalParams p = AnalyticalParams::zeros(topo);
  Rng rng = make_rng(9);
  for (Index m = 0; m < 9; ++m) p.phi0(m) = uniform(rng, 0.0, 6.0);

  SUBCASE("zero voltage gives phi0") {
    CHECK((phases_from_voltages(p, Vector::Zero(9)) - p.phi0).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero phi2 gives phi0 for any voltage") {
    const Vector v = Vector::Constant(9, 1.7);
    CHECK((phases_from_voltages(p, v) - p.phi0).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("quarter-pi diagonal reaches pi at 2 V") {
    p.phi0.setZero();
    p.phi2 = Matrix::Identity(9, 9) * (kPi / 4.0);
    Vector v = Vector::Zero(9);
    v(0) = 2.0;
    const Vector phi = phases_from_voltages(p, v);
    CHECK(phi(0) == doctest::Approx(kPi).epsilon(1e-15));
    CHECK(phi.tail(8).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(phases_from_voltages(p, Vector::Zero(8)), ShapeError);
  }
}

TEST_CASE("crossbar topology") {
  CHECK_THROWS_AS(default_crossbar_topology(0), DomainError);
  const MeshTopology one = default_crossbar_topology(1);
  CHECK(one.n_mzi() == 1);
  REQUIRE(one.path(0, 0).size() == 1);
  CHECK(one.path(0, 0)[0].mzi == 0);

  const MeshTopology two = default_crossbar_topology(2);
  CHECK(two.paths().size() == 4);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) CHECK(two.path(i, j).size() == 1);

  const MeshTopology three = default_crossbar_topology(3);
  CHECK(three.n_mzi() == 9);
  CHECK(three.path(2, 1)[0].mzi == 7);
}

TEST_CASE("topology validation") {
  CHECK_THROWS(MeshTopology(2, 2, 0, {{}, {}, {}, {}}));
  CHECK_THROWS(MeshTopology(1, 2, 2, {{{0, 1}}}));                // too few path sets
  CHECK_THROWS(MeshTopology(1, 1, 2, {{{2, 1}}}));                // index out of range
  CHECK_NOTHROW(MeshTopology(1, 2, 1, {{{0, 1}}, {{0, -1}}}));
  CHECK(default_crossbar_topology(3).hash() != split_tree_topology(3).hash());
  CHECK(default_crossbar_topology(3).hash() == default_crossbar_topology(3).hash());
}

TEST_CASE("split-tree topology uses two MZIs per route") {
  const MeshTopology t = split_tree_topology(3);
  CHECK(t.n_mzi() == 12);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      REQUIRE(t.path(i, j).size() == 2);
      CHECK(t.path(i, j)[0].mzi == j);
      CHECK(t.path(i, j)[1].mzi == 3 + i * 3 + j);
    }
  }
}

TEST_CASE("predict_weights simple cases") {
  const MeshTopology topo = default_crossbar_topology(2);
  AnalyticalParams p = AnalyticalParams::zeros(topo, kInf);
  CHECK(predict_weights(p, Vector::Zero(4)).cwiseAbs().maxCoeff() < 1e-15);
  p.alpha_db.setConstant(-3.0);
  const Matrix w = predict_weights(p, Vector::Zero(4));
  CHECK((w.array() + 3.0).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(predict_weights(p, Vector::Zero(3)), ShapeError);
}

TEST_CASE("predict_weights matches scripted evaluation on the fixtures") {
  // tests/oracles/compute_oracles.py, v = (1, ..., 1)
  const double crossbar[9] = {-5.576405595456537, -12.555634757712774, -6.584334040463244,
                              -4.478956411087286, -14.816271082686105, -5.55993895374937,
                              -3.7577447215513433, -4.594702519287626, -9.411350250078943};
  const double tree[9] = {-20.865786641800604, -6.741508339006547, -5.720327844089748,
                          -9.094003332616852,  -36.92484376915573, -13.85831832947793,
                          -10.450110893399607, -6.486253235127096, -4.232627568816295};
  const VirtualChipParams chip = fixture_chip("default_chip.json");
  const Matrix w = predict_weights(chip.base, Vector::Ones(9));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(std::abs(w(i, j) - crossbar[i * 3 + j]) < 1e-10);

  const VirtualChipParams split = fixture_chip("split_tree_chip.json");
  const Matrix ws = predict_weights(split.base, Vector::Ones(12));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(std::abs(ws(i, j) - tree[i * 3 + j]) < 1e-10);
}

TEST_CASE("linear weights lie in (0, 1] for non-positive losses") {
  const VirtualChipParams chip = fixture_chip("split_tree_chip.json");
  Rng rng = make_rng(4);
  for (int k = 0; k < 200; ++k) {
    Vector v(12);
    for (Index m = 0; m < 12; ++m) v(m) = uniform(rng, 0.0, 2.0);
    const Matrix w = predict_weights(chip.base, v);
    CHECK(w.maxCoeff() <= 1e-12);
    CHECK(w.allFinite());
  }
}

TEST_CASE("adding an MZI with t < 1 lowers the entry") {
  const MeshTopology one(1, 1, 2, {{{0, 1}}});
  const MeshTopology two(1, 1, 2, {{{0, 1}, {1, 1}}});
  AnalyticalParams a = AnalyticalParams::zeros(one, 20.0);
  a.phi0 << 0.3, 1.1;
  AnalyticalParams b = a;
  b.topology = two;
  const Vector v = Vector::Constant(2, 0.5);
  CHECK(predict_weights(b, v)(0, 0) < predict_weights(a, v)(0, 0));
}

TEST_CASE("virtual chip reduces to the analytical model") {
  const VirtualChipParams chip = fixture_chip("default_chip.json");
  const VirtualChipParams exact = VirtualChipParams::from_analytical(chip.base);
  Rng rng = make_rng(12);
  for (int k = 0; k < 50; ++k) {
    Vector v(9);
    for (Index m = 0; m < 9; ++m) v(m) = uniform(rng, 0.0, 2.0);
    const Matrix a = virtual_chip_measure(exact, v, 100 + k);
    const Matrix b = predict_weights(chip.base, v);
    CHECK((a.array() == b.array()).all());
  }
}

TEST_CASE("virtual chip determinism and the quartic term") {
  const VirtualChipParams chip = fixture_chip("default_chip.json");
  const Vector v = Vector::Constant(9, 1.3);
  CHECK((virtual_chip_measure(chip, v, 5).array() == virtual_chip_measure(chip, v, 5).array()).all());
  CHECK((virtual_chip_measure(chip, v, 5).array() != virtual_chip_measure(chip, v, 6).array()).any());

  // with noise removed and ER made uniform, v = 0 leaves only phi0: the quartic term vanishes
  VirtualChipParams quiet = chip;
  quiet.noise_sigma_db = 0.0;
  quiet.er_db_per_mzi.setConstant(chip.base.er_db);
  REQUIRE(quiet.phi4.cwiseAbs().maxCoeff() > 0.0);
  const Matrix a = virtual_chip_measure(quiet, Vector::Zero(9), 1);
  const Matrix b = predict_weights(chip.base, Vector::Zero(9));
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("fixture chip carries mismatch") {
  const VirtualChipParams chip = make_virtual_chip(default_crossbar_topology(3), 7);
  CHECK(chip.noise_sigma_db > 0.0);
  CHECK(chip.phi4.cwiseAbs().maxCoeff() > 0.0);
  CHECK(chip.er_db_per_mzi.maxCoeff() > chip.er_db_per_mzi.minCoeff());
  CHECK_NOTHROW(chip.validate());
  const VirtualChipParams again = make_virtual_chip(default_crossbar_topology(3), 7);
  CHECK((chip.base.phi2.array() == again.base.phi2.array()).all());
}

TEST_CASE("parameter validation") {
  AnalyticalParams p = AnalyticalParams::zeros(default_crossbar_topology(2));
  CHECK_NOTHROW(p.validate());
  p.alpha_db(0, 1) = 0.5;
  CHECK_THROWS_AS(p.validate(), DomainError);
  p.alpha_db(0, 1) = -1.0;
  p.er_db = 0.0;
  CHECK_THROWS_AS(p.validate(), DomainError);
  p.er_db = 20.0;
  p.phi0(1) = std::nan("");
  CHECK_THROWS_AS(p.validate(), DomainError);
  p.phi0(1) = 0.0;
  p.phi2.resize(3, 3);
  CHECK_THROWS_AS(p.validate(), ShapeError);
}

TEST_CASE("templated kernels accept float") {
  const float t = mzi_transmission<float>(3.14159265f, 20.0f, +1);
  CHECK(t == doctest::Approx(0.00826446).epsilon(1e-4));
}
