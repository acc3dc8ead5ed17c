#include <doctest.h>

#include <cmath>
#include <numeric>

#include "omm/neural.hpp"
#include "omm/random.hpp"

using namespace omm;

namespace {

Dataset toy_dataset(Index n_mzi, Index rows, Index cols, Index n, std::uint64_t seed) {
  Dataset d;
  d.n_outputs = rows;
  d.n_inputs = cols;
  d.voltages = sample_voltages(n, n_mzi, 2.0, seed);
  d.weights_db.resize(rows * cols, n);
  Rng rng = make_rng(seed + 1);
  for (Index k = 0; k < n; ++k) {
    for (Index e = 0; e < rows * cols; ++e) {
      d.weights_db(e, k) = -5.0 + 3.0 * std::sin(d.voltages(e % n_mzi, k) * (1 + e)) + 0.1 * standard_normal(rng);
    }
  }
  d.sample_ids.resize(static_cast<std::size_t>(n));
  std::iota(d.sample_ids.begin(), d.sample_ids.end(), 0);
  return d;
}

void randomize(MlpParams& p, Rng& rng) {
  for (auto& b : p.biases)
    for (Index k = 0; k < b.size(); ++k) b(k) = uniform(rng, -0.5, 0.5);
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST_CASE("all-zero network outputs zero") {
  MlpSpec spec;
  MlpParams p = init_mlp(spec, 1);
  for (auto& w : p.weights) w.setZero();
  for (auto& b : p.biases) b.setZero();
  const Matrix out = mlp_forward(spec, p, Vector::Constant(9, 1.2));
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 3);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single hidden unit matches the scripted tanh chain") {
  // tests/oracles/compute_oracles.py
  MlpSpec spec;
  spec.input_dim = 1;
  spec.hidden_layers = {1};
  spec.n_outputs = 1;
  spec.n_inputs = 1;
  MlpParams p = init_mlp(spec, 0);
  p.weights[0](0, 0) = 0.7;
  p.biases[0](0) = -0.2;
  p.weights[1](0, 0) = 1.3;
  p.biases[1](0) = 0.4;
  CHECK(std::abs(mlp_forward(spec, p, Vector::Constant(1, 1.5))(0, 0) - 0.5935505437103133) < 1e-14);

  spec.input_dim = 2;
  spec.n_inputs = 2;
  p = init_mlp(spec, 0);
  p.weights[0] << 0.5, -1.25;
  p.biases[0] << 0.1;
  p.weights[1] << 2.0, -0.75;
  p.biases[1] << 0.3, -0.6;
  Vector v(2);
  v << 0.4, 1.8;
  const Matrix out = mlp_forward(spec, p, v);
  CHECK(std::abs(out(0, 0) - -1.3673092140243104) < 1e-14);
  CHECK(std::abs(out(0, 1) - 0.025240955259116404) < 1e-14);
}

TEST_CASE("saturated outputs are bounded by the output layer") {
  MlpSpec spec;
  spec.hidden_layers = {16};
  MlpParams p = init_mlp(spec, 3);
  for (auto& w : p.weights) w *= 50.0;
  Rng rng = make_rng(2);
  randomize(p, rng);
  const Vector bound = p.weights[1].cwiseAbs().rowwise().sum() + p.biases[1].cwiseAbs();
  for (int k = 0; k < 50; ++k) {
    Vector v(9);
    for (Index m = 0; m < 9; ++m) v(m) = uniform(rng, -5.0, 7.0);
    const Matrix out = mlp_forward(spec, p, v);
    const Vector flat = flatten_weights(out);
    CHECK((flat.cwiseAbs().array() <= bound.array() + 1e-12).all());
  }
}

TEST_CASE("forward checks shapes") {
  MlpSpec spec;
  const MlpParams p = init_mlp(spec, 1);
  CHECK_THROWS_AS(mlp_forward(spec, p, Vector::Zero(8)), ShapeError);
  MlpSpec bad = spec;
  bad.hidden_layers.clear();
  CHECK_THROWS(bad.validate());
}

TEST_CASE("batched forward equals the per-sample forward") {
  MlpSpec spec;
  spec.hidden_layers = {12, 7};
  const MlpParams p = init_mlp(spec, 5);
  const Matrix v = sample_voltages(10, 9, 2.0, 3);
  const Matrix batch = mlp_forward_batch(spec, p, v);
  for (Index k = 0; k < 10; ++k) {
    CHECK((batch.col(k) - flatten_weights(mlp_forward(spec, p, v.col(k)))).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("hidden unit permutation leaves outputs unchanged") {
  MlpSpec spec;
  spec.hidden_layers = {10, 6};
  MlpParams p = init_mlp(spec, 8);
  Rng rng = make_rng(4);
  randomize(p, rng);
  std::vector<Index> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm.begin(), perm.end(), rng);
  MlpParams q = p;
  for (Index k = 0; k < 10; ++k) {
    q.weights[0].row(k) = p.weights[0].row(perm[static_cast<std::size_t>(k)]);
    q.biases[0](k) = p.biases[0](perm[static_cast<std::size_t>(k)]);
    q.weights[1].col(k) = p.weights[1].col(perm[static_cast<std::size_t>(k)]);
  }
  for (int s = 0; s < 20; ++s) {
    Vector v(9);
    for (Index m = 0; m < 9; ++m) v(m) = uniform(rng, 0.0, 2.0);
    CHECK((mlp_forward(spec, p, v) - mlp_forward(spec, q, v)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("nn gradient matches central differences across architectures") {
  const std::vector<std::vector<Index>> archs = {{3}, {5, 4}, {4, 3, 2}, {6}, {2, 2}, {7, 5}, {3, 3, 3}, {8}, {1}, {4, 6}};
  int points = 0;
  for (std::size_t a = 0; a < archs.size(); ++a) {
    MlpSpec spec;
    spec.input_dim = 4;
    spec.n_outputs = 2;
    spec.n_inputs = 2;
    spec.hidden_layers = archs[a];
    MlpParams p = init_mlp(spec, a);
    Rng rng = make_rng(50 + a);
    randomize(p, rng);
    const Dataset data = toy_dataset(4, 2, 2, 12, a);
    TrainConfig cfg;
    cfg.lambda_l1 = 1e-2;
    cfg.lambda_l2 = 1e-3;
    Vector g;
    nn_loss_and_gradient(spec, p, data, cfg, &g);
    const Vector x = p.flatten();
    REQUIRE(g.size() == x.size());
    for (Index k = 0; k < x.size(); ++k) {
      // L1 is not differentiable at zero
      if (std::abs(x(k)) < 1e-3 && x(k) != 0.0) continue;
      const double h = 1e-6;
      Vector xp = x;
      Vector xm = x;
      xp(k) += h;
      xm(k) -= h;
      MlpParams pp = p;
      MlpParams pm = p;
      pp.assign(xp);
      pm.assign(xm);
      const double fd = (nn_loss_and_gradient(spec, pp, data, cfg, nullptr) -
                         nn_loss_and_gradient(spec, pm, data, cfg, nullptr)) / (2.0 * h);
      CHECK(relative_error(g(k), fd) < 1e-5);
      ++points;
    }
  }
  CHECK(points >= 100);
}

TEST_CASE("frozen layers get exactly zero gradient") {
  MlpSpec spec;
  spec.hidden_layers = {8, 8};
  MlpParams p = init_mlp(spec, 2);
  const Dataset data = toy_dataset(9, 3, 3, 10, 1);
  TrainConfig cfg;
  Vector g;

  p.frozen = {true, true, true};
  nn_loss_and_gradient(spec, p, data, cfg, &g);
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);

  p.frozen = {true, false, false};
  nn_loss_and_gradient(spec, p, data, cfg, &g);
  const Index first = p.weights[0].size() + p.biases[0].size();
  CHECK(g.head(first).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.tail(g.size() - first).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("empty batch is rejected") {
  MlpSpec spec;
  const MlpParams p = init_mlp(spec, 1);
  const Dataset data = toy_dataset(9, 3, 3, 4, 1).subset({});
  CHECK_THROWS_AS(nn_loss_and_gradient(spec, p, data, TrainConfig{}, nullptr), DomainError);
}

TEST_CASE("perfect fit has zero loss and zero data gradient") {
  MlpSpec spec;
  spec.hidden_layers = {5};
  const MlpParams p = init_mlp(spec, 6);
  Dataset data = toy_dataset(9, 3, 3, 15, 2);
  data.weights_db = mlp_forward_batch(spec, p, data.voltages);
  TrainConfig cfg;
  cfg.lambda_l1 = 0.0;
  cfg.lambda_l2 = 0.0;
  Vector g;
  CHECK(nn_loss_and_gradient(spec, p, data, cfg, &g) < 1e-28);
  CHECK(g.cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("linear least squares matches the normal equations") {
  // With the hidden layer frozen, fitting the output layer is linear least squares.
  MlpSpec spec;
  spec.input_dim = 3;
  spec.hidden_layers = {4};
  spec.n_outputs = 1;
  spec.n_inputs = 2;
  MlpParams p = init_mlp(spec, 3);
  p.frozen = {true, false};
  const Dataset data = toy_dataset(3, 1, 2, 40, 5);
  TrainConfig cfg;
  cfg.lambda_l1 = 0.0;
  cfg.lambda_l2 = 0.0;
  cfg.max_iterations = 50;
  cfg.convergence_tol = 0.0;
  const TrainResult r = train(spec, p, data, cfg);

  // hidden features with a bias column, then per-output least squares
  const Index n = data.size();
  Matrix phi(n, 5);
  for (Index k = 0; k < n; ++k) {
    const Vector x = (data.voltages.col(k).array() - 1.0).matrix();
    phi.row(k).head(4) = (p.weights[0] * x + p.biases[0]).array().tanh().matrix().transpose();
    phi(k, 4) = 1.0;
  }
  const Matrix normal = phi.transpose() * phi;
  for (Index o = 0; o < 2; ++o) {
    const Vector coef = normal.ldlt().solve(phi.transpose() * data.weights_db.row(o).transpose());
    CHECK((r.params.weights[1].row(o).transpose() - coef.head(4)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(r.params.biases[1](o) - coef(4)) < 1e-6);
  }
  CHECK(r.iterations <= 50);
}

TEST_CASE("one-dimensional regression fits well") {
  MlpSpec spec;
  spec.input_dim = 1;
  spec.hidden_layers = {10};
  spec.n_outputs = 1;
  spec.n_inputs = 1;
  Dataset d;
  d.n_outputs = 1;
  d.n_inputs = 1;
  d.voltages.resize(1, 20);
  d.weights_db.resize(1, 20);
  for (Index k = 0; k < 20; ++k) {
    d.voltages(0, k) = 2.0 * k / 19.0;
    d.weights_db(0, k) = -10.0 + 4.0 * std::sin(3.0 * d.voltages(0, k));
  }
  d.sample_ids.resize(20);
  std::iota(d.sample_ids.begin(), d.sample_ids.end(), 0);
  TrainConfig cfg;
  cfg.lambda_l1 = 0.0;
  cfg.lambda_l2 = 0.0;
  cfg.max_iterations = 500;
  const TrainResult r = train(spec, init_mlp(spec, 2), d, cfg);
  const double mean = d.weights_db.mean();
  const double sd = std::sqrt((d.weights_db.array() - mean).square().mean());
  CHECK(nn_rmse_db(spec, r.params, d) < 0.1 * sd);
}

TEST_CASE("zero iterations returns the init unchanged") {
  MlpSpec spec;
  const MlpParams init = init_mlp(spec, 4);
  TrainConfig cfg;
  cfg.max_iterations = 0;
  const TrainResult r = train(spec, init, toy_dataset(9, 3, 3, 10, 1), cfg);
  CHECK((r.params.flatten().array() == init.flatten().array()).all());
}

TEST_CASE("training is monotone and deterministic") {
  MlpSpec spec;
  spec.hidden_layers = {8, 8};
  const Dataset data = toy_dataset(9, 3, 3, 50, 3);
  TrainConfig cfg;
  cfg.max_iterations = 60;
  const TrainResult a = train(spec, init_mlp(spec, 1), data, cfg);
  const TrainResult b = train(spec, init_mlp(spec, 1), data, cfg);
  for (std::size_t k = 1; k < a.loss_trace.size(); ++k) CHECK(a.loss_trace[k] <= a.loss_trace[k - 1]);
  CHECK(a.loss_trace == b.loss_trace);
  CHECK((a.params.flatten().array() == b.params.flatten().array()).all());
}

TEST_CASE("stronger L1 does not grow the weight mass") {
  MlpSpec spec;
  spec.hidden_layers = {8};
  const Dataset data = toy_dataset(9, 3, 3, 60, 7);
  auto l1_mass = [&](double lambda) {
    TrainConfig cfg;
    cfg.lambda_l1 = lambda;
    cfg.max_iterations = 400;
    const TrainResult r = train(spec, init_mlp(spec, 3), data, cfg);
    double s = 0.0;
    for (const auto& w : r.params.weights) s += w.cwiseAbs().sum();
    return s;
  };
  CHECK(l1_mass(5e-2) <= l1_mass(5e-3));
}

TEST_CASE("early stopping returns the best validation iterate") {
  MlpSpec spec;
  spec.hidden_layers = {16, 16};
  const Dataset all = toy_dataset(9, 3, 3, 60, 9);
  const auto [tr, val] = split_validation(all, 0.3, 2);
  TrainConfig cfg;
  cfg.lambda_l1 = 0.0;
  cfg.max_iterations = 300;
  cfg.validation_interval = 5;
  cfg.patience = 3;
  const TrainResult r = train(spec, init_mlp(spec, 2), tr, cfg, &val);
  REQUIRE(r.best_validation_rmse_db.has_value());
  CHECK(std::abs(nn_rmse_db(spec, r.params, val) - *r.best_validation_rmse_db) < 1e-12);
}

TEST_CASE("transfer keeps the first layer bit-identical") {
  MlpSpec spec;
  spec.hidden_layers = {8, 8};
  const Dataset synthetic = toy_dataset(9, 3, 3, 80, 1);
  Dataset experimental = toy_dataset(9, 3, 3, 40, 2);
  experimental.weights_db.array() += 0.7;
  TrainConfig pre;
  pre.max_iterations = 40;
  TrainConfig re;
  re.max_iterations = 40;
  const TransferResult r = pretrain_then_transfer(spec, synthetic, experimental, pre, re);
  CHECK(r.transferred.frozen[0]);
  CHECK((r.transferred.weights[0].array() == r.pretrained.weights[0].array()).all());
  CHECK((r.transferred.biases[0].array() == r.pretrained.biases[0].array()).all());
  CHECK((r.transferred.weights[2].array() != r.pretrained.weights[2].array()).any());
  CHECK(nn_rmse_db(spec, r.transferred, experimental) < nn_rmse_db(spec, r.pretrained, experimental));

  re.max_iterations = 0;
  const TransferResult z = pretrain_then_transfer(spec, synthetic, experimental, pre, re);
  CHECK((z.transferred.flatten().array() == z.pretrained.flatten().array()).all());
}

TEST_CASE("transfer on matching data changes little") {
  const MeshTopology topo = default_crossbar_topology(3);
  const VirtualChipParams chip = make_virtual_chip(topo, 3);
  const Dataset synthetic = generate_synthetic(chip.base, 1500, 1);
  const Dataset experimental = generate_synthetic(chip.base, 300, 2);
  const Dataset test = generate_synthetic(chip.base, 300, 3);
  MlpSpec spec = MlpSpec::for_dataset(synthetic, {16, 16});
  TrainConfig pre;
  pre.max_iterations = 150;
  TrainConfig re;
  re.max_iterations = 100;
  const TransferResult r = pretrain_then_transfer(spec, synthetic, experimental, pre, re);
  const double before = nn_rmse_db(spec, r.pretrained, test);
  const double after = nn_rmse_db(spec, r.transferred, test);
  CHECK(before - after <= 0.1);
}

TEST_CASE("parameter flatten and assign round trip") {
  MlpSpec spec;
  spec.hidden_layers = {5, 3};
  MlpParams p = init_mlp(spec, 9);
  const Vector x = p.flatten();
  CHECK(x.size() == p.parameter_count());
  CHECK(p.parameter_count() == 9 * 5 + 5 + 5 * 3 + 3 + 3 * 9 + 9);
  MlpParams q = init_mlp(spec, 10);
  q.assign(x);
  CHECK((q.flatten().array() == x.array()).all());
  CHECK_THROWS_AS(q.assign(Vector::Zero(3)), ShapeError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.lambda_l1 = -1.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg.lambda_l1 = 0.0;
  cfg.history_size = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}
