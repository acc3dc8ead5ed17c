#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "omm/harness.hpp"
#include "omm/text.hpp"

using namespace omm;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c = ExperimentConfig::quick();
  c.chip = load_chip(std::string(OMM_FIXTURE_DIR) + "/default_chip.json");
  c.plan.train_pool_size = 300;
  c.plan.test_size = 100;
  c.plan.subset_size = 100;
  c.n_seeds = 2;
  c.synthetic_size = 400;
  c.hidden_layers = {8, 8};
  c.am.max_iterations = 40;
  c.am.n_starts = 2;
  c.pretrain.max_iterations = 30;
  c.retrain.max_iterations = 20;
  c.scratch.max_iterations = 20;
  c.full.max_iterations = 30;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("rmse_db") {
  std::vector<Matrix> a(2, Matrix::Constant(3, 3, -4.0));
  CHECK(rmse_db(a, a) == 0.0);
  std::vector<Matrix> b = a;
  for (auto& m : b) m.array() += 2.0;
  CHECK(rmse_db(a, b) == doctest::Approx(2.0).epsilon(1e-15));

  // tests/oracles/compute_oracles.py
  Matrix p0(2, 2), p1(2, 2), t0(2, 2), t1(2, 2);
  p0 << -1.0, -2.5, -3.0, -0.5;
  p1 << -10.0, -4.0, -6.25, -7.5;
  t0 << -1.5, -2.0, -3.0, -1.5;
  t1 << -9.0, -4.75, -6.0, -8.5;
  CHECK(std::abs(rmse_db({p0, p1}, {t0, t1}) - 0.7180703308172536) < 1e-15);

  CHECK_THROWS_AS(rmse_db(a, std::vector<Matrix>(1, Matrix::Zero(3, 3))), ShapeError);
  CHECK_THROWS_AS(rmse_db(std::vector<Matrix>{}, std::vector<Matrix>{}), ShapeError);
}

TEST_CASE("linear-interpolation quantiles") {
  std::vector<double> v;
  for (int k = 1; k <= 20; ++k) v.push_back(k);
  CHECK(quantile_linear(v, 0.5) == 10.5);
  CHECK(quantile_linear(v, 0.0) == 1.0);
  CHECK(quantile_linear(v, 1.0) == 20.0);
  CHECK(quantile_linear(v, 0.1) == doctest::Approx(2.9));
  CHECK(quantile_linear(v, 0.25) == doctest::Approx(5.75));
  CHECK(quantile_linear({7.0}, 0.9) == 7.0);
  CHECK(quantile_linear(std::vector<double>(20, 3.0), 0.75) == 3.0);
  CHECK_THROWS(quantile_linear({}, 0.5));
}

TEST_CASE("summarize") {
  ResultTable t;
  for (int k = 1; k <= 20; ++k) {
    RunRecord r;
    r.model = ModelKind::Tl;
    r.seed = static_cast<std::uint64_t>(k);
    r.test_rmse_db = 21 - k;
    t.runs.push_back(r);
  }
  RunRecord failed;
  failed.model = ModelKind::Tl;
  failed.ok = false;
  failed.test_rmse_db = 1000.0;
  t.runs.push_back(failed);
  RunRecord single;
  single.model = ModelKind::Am;
  single.test_rmse_db = 1.25;
  t.runs.push_back(single);

  const auto s = summarize(t);
  REQUIRE(s.size() == 2);
  const PercentileSummary& tl = s[0].model == ModelKind::Tl ? s[0] : s[1];
  const PercentileSummary& am = s[0].model == ModelKind::Am ? s[0] : s[1];
  CHECK(tl.count == 20);
  CHECK(tl.p50 == 10.5);
  CHECK(tl.p10 <= tl.p25);
  CHECK(tl.p25 <= tl.p50);
  CHECK(tl.p75 <= tl.p90);
  CHECK(am.p10 == 1.25);
  CHECK(am.p90 == 1.25);
}

TEST_CASE("width selection breaks ties toward the smaller width") {
  CHECK(select_width({{64, 0.5}}) == 64);
  CHECK(select_width({{64, 0.5}, {16, 0.5}, {32, 0.7}}) == 16);
  CHECK(select_width({{8, 0.9}, {32, 0.4}}) == 32);
  CHECK_THROWS(select_width({}));
}

TEST_CASE("model names") {
  for (ModelKind m : {ModelKind::Am, ModelKind::NnSubset, ModelKind::Tl, ModelKind::NnFull}) {
    CHECK(model_from_string(to_string(m)) == m);
  }
  CHECK_THROWS(model_from_string("GAN"));
}

TEST_CASE("config json round trip") {
  ExperimentConfig c = tiny_config();
  c.roster = {ModelKind::Am, ModelKind::Tl};
  const ExperimentConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back).dump() == config_to_json(c).dump());
  CHECK(back.roster == c.roster);
  CHECK(back.pretrain.max_iterations == 30);
}

TEST_CASE("config validation") {
  ExperimentConfig c = tiny_config();
  c.n_seeds = 0;
  CHECK_THROWS_AS(run_experiment(c), DomainError);
  c = tiny_config();
  c.roster.clear();
  CHECK_THROWS_AS(run_experiment(c), DomainError);
}

TEST_CASE("AM-only roster") {
  ExperimentConfig c = tiny_config();
  c.roster = {ModelKind::Am};
  const ResultTable t = run_experiment(c);
  CHECK(t.runs.size() == 2);
  for (const auto& r : t.runs) CHECK(r.model == ModelKind::Am);
  REQUIRE(t.summary.size() == 1);
  CHECK(t.summary[0].model == ModelKind::Am);
}

TEST_CASE("single seed gives a degenerate summary") {
  ExperimentConfig c = tiny_config();
  c.n_seeds = 1;
  c.roster = {ModelKind::Am, ModelKind::NnSubset};
  const ResultTable t = run_experiment(c);
  for (const auto& s : t.summary) {
    CHECK(s.count == 1);
    CHECK(s.p10 == s.p90);
    CHECK(s.p25 == s.p75);
  }
}

TEST_CASE("full experiment is reproducible and independent of the worker count") {
  const fs::path dir = fs::temp_directory_path() / "omm_test_harness";
  fs::remove_all(dir);
  ExperimentConfig c = tiny_config();
  c.output_dir = dir;
  const ResultTable a = run_experiment(c);
  for (const char* f : {"am_fit.json", "tl.json", "nn_subset.json"}) CHECK(fs::exists(dir / "seeds" / "seed_1" / f));
  CHECK(fs::exists(dir / "seeds" / "seed_0" / "nn_full.json"));
  c.output_dir.clear();
  c.workers = 3;
  const ResultTable b = run_experiment(c);
  CHECK(results_csv(a) == results_csv(b));
  CHECK(summary_csv(a) == summary_csv(b));
  // one NN-full run, then AM / NN-subset / TL per seed
  CHECK(a.runs.size() == 1 + 3 * 2);
  for (const auto& r : a.runs) {
    CHECK(r.ok);
    CHECK(r.test_rmse_db >= 0.0);
  }
  CHECK(a.test_set_hash.size() == 16);

  write_result_files(a, c, dir);
  CHECK(config_to_json(config_from_json(read_json(dir / "config.json"))).dump() == config_to_json(c).dump());
  for (const char* f : {"results.csv", "summary.csv", "summary.json", "timings.csv"}) CHECK(fs::exists(dir / f));
  const std::string results = slurp(dir / "results.csv");
  CHECK(results == results_csv(a));
  CHECK(results.find("config_hash=" + a.config_hash) != std::string::npos);
  CHECK(slurp(dir / "summary.csv").find("config_hash=") != std::string::npos);
}

TEST_CASE("ordering check reports each condition") {
  ResultTable t;
  t.seeds = {0, 1, 2};
  const double values[4][3] = {{1.0, 1.1, 1.2}, {2.0, 2.1, 2.2}, {0.8, 0.85, 0.9}, {0.5, 0.5, 0.5}};
  const ModelKind kinds[4] = {ModelKind::Am, ModelKind::NnSubset, ModelKind::Tl, ModelKind::NnFull};
  for (int m = 0; m < 4; ++m) {
    for (int s = 0; s < 3; ++s) {
      RunRecord r;
      r.model = kinds[m];
      r.seed = static_cast<std::uint64_t>(s);
      r.test_rmse_db = values[m][s];
      t.runs.push_back(r);
    }
  }
  t.summary = summarize(t);
  for (const auto& c : check_ordering(t)) CHECK_MESSAGE(c.passed, c.name);

  t.runs[6].test_rmse_db = 5.0;  // TL loses to AM on one of three seeds
  t.summary = summarize(t);
  bool wins_failed = false;
  for (const auto& c : check_ordering(t)) wins_failed = wins_failed || !c.passed;
  CHECK(wins_failed);
}

TEST_CASE("width sweep") {
  ExperimentConfig c = tiny_config();
  c.roster = {ModelKind::NnSubset};
  c.scratch.max_iterations = 150;
  c.scratch.lambda_l1 = 0.0;
  const SweepResult single = sweep_hidden_width(c, {8});
  REQUIRE(single.best.size() == 1);
  CHECK(single.best[0].second == 8);

  const SweepResult r = sweep_hidden_width(c, {1, 32});
  REQUIRE(r.best.size() == 1);
  CHECK(r.best[0].second == 32);
  CHECK(r.scores.size() == 2);
  CHECK_THROWS(sweep_hidden_width(c, {}));
}
