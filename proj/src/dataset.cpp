#include "omm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "omm/random.hpp"
#include "omm/text.hpp"

namespace omm {

namespace {

constexpr int kDatasetSchemaVersion = 1;

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".manifest.json");
}

void clamp_to_floor(Matrix& w, double floor_db) {
  for (Index k = 0; k < w.size(); ++k) {
    double& x = w.data()[k];
    if (std::isnan(x) || x < floor_db) x = floor_db;
  }
}

Dataset empty_like(const Dataset& d) {
  Dataset out;
  out.n_outputs = d.n_outputs;
  out.n_inputs = d.n_inputs;
  out.provenance = d.provenance;
  out.seed = d.seed;
  out.floor_db = d.floor_db;
  out.v_max = d.v_max;
  out.topology_hash = d.topology_hash;
  return out;
}

}  // namespace

std::string to_string(Provenance p) {
  return p == Provenance::ExperimentalSim ? "experimental-sim" : "synthetic-am";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "experimental-sim") return Provenance::ExperimentalSim;
  if (s == "synthetic-am") return Provenance::SyntheticAm;
  throw FormatError("unknown provenance '" + s + "'");
}

Vector flatten_weights(const Matrix& w) {
  Vector out(w.size());
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) out(i * w.cols() + j) = w(i, j);
  }
  return out;
}

Matrix Dataset::weight_matrix(Index k) const {
  Matrix w(n_outputs, n_inputs);
  for (Index i = 0; i < n_outputs; ++i) {
    for (Index j = 0; j < n_inputs; ++j) w(i, j) = weights_db(i * n_inputs + j, k);
  }
  return w;
}

Dataset Dataset::subset(const std::vector<Index>& indices) const {
  Dataset out = empty_like(*this);
  out.voltages.resize(voltages.rows(), static_cast<Index>(indices.size()));
  out.weights_db.resize(weights_db.rows(), static_cast<Index>(indices.size()));
  out.sample_ids.reserve(indices.size());
  for (std::size_t c = 0; c < indices.size(); ++c) {
    const Index k = indices[c];
    if (k < 0 || k >= size()) throw DomainError("sample index out of range");
    out.voltages.col(static_cast<Index>(c)) = voltages.col(k);
    out.weights_db.col(static_cast<Index>(c)) = weights_db.col(k);
    out.sample_ids.push_back(sample_ids[static_cast<std::size_t>(k)]);
  }
  return out;
}

void Dataset::validate() const {
  if (voltages.cols() != weights_db.cols() || static_cast<Index>(sample_ids.size()) != voltages.cols()) {
    throw ShapeError("dataset columns, weights and ids must have equal length");
  }
  if (weights_db.rows() != n_outputs * n_inputs) throw ShapeError("weight rows must equal n_outputs * n_inputs");
}

Matrix sample_voltages(Index n, Index n_mzi, double v_max, std::uint64_t seed) {
  if (n < 1) throw DomainError("need at least one voltage sample");
  if (n_mzi < 1) throw DomainError("need at least one MZI");
  if (!(v_max > 0.0) || !std::isfinite(v_max)) throw DomainError("v_max must be positive and finite");
  Rng rng = make_rng(seed);
  Matrix v(n_mzi, n);
  for (Index k = 0; k < n; ++k) {
    for (Index m = 0; m < n_mzi; ++m) v(m, k) = uniform(rng, 0.0, v_max);
  }
  return v;
}

Dataset acquire_dataset(const VirtualChipParams& chip, Index n, std::uint64_t seed, double v_max, double floor_db) {
  chip.validate();
  const MeshTopology& topo = chip.base.topology;
  Dataset d;
  d.n_outputs = topo.n_outputs();
  d.n_inputs = topo.n_inputs();
  d.provenance = Provenance::ExperimentalSim;
  d.seed = seed;
  d.floor_db = floor_db;
  d.v_max = v_max;
  d.topology_hash = topo.hash();
  d.voltages = sample_voltages(n, topo.n_mzi(), v_max, derive_seed(seed, {1}));
  d.weights_db.resize(topo.n_entries(), n);
  d.sample_ids.resize(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    Matrix w = virtual_chip_measure(chip, d.voltages.col(k), derive_seed(seed, {2, static_cast<std::uint64_t>(k)}));
    clamp_to_floor(w, floor_db);
    d.weights_db.col(k) = flatten_weights(w);
    d.sample_ids[static_cast<std::size_t>(k)] = k;
  }
  return d;
}

Dataset generate_synthetic(const AnalyticalParams& am, Index n, std::uint64_t seed, double v_max, double floor_db) {
  am.validate();
  const MeshTopology& topo = am.topology;
  Dataset d;
  d.n_outputs = topo.n_outputs();
  d.n_inputs = topo.n_inputs();
  d.provenance = Provenance::SyntheticAm;
  d.seed = seed;
  d.floor_db = floor_db;
  d.v_max = v_max;
  d.topology_hash = topo.hash();
  d.voltages = sample_voltages(n, topo.n_mzi(), v_max, derive_seed(seed, {1}));
  d.weights_db.resize(topo.n_entries(), n);
  d.sample_ids.resize(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    Matrix w = predict_weights(am, d.voltages.col(k));
    clamp_to_floor(w, floor_db);
    d.weights_db.col(k) = flatten_weights(w);
    d.sample_ids[static_cast<std::size_t>(k)] = k;
  }
  return d;
}

FilterResult filter_below(const Dataset& data, double threshold_db) {
  if (std::isnan(threshold_db) || threshold_db == std::numeric_limits<double>::infinity()) {
    throw DomainError("filter threshold must be a number below +inf");
  }
  std::vector<Index> keep;
  keep.reserve(static_cast<std::size_t>(data.size()));
  for (Index k = 0; k < data.size(); ++k) {
    if (!(data.weights_db.col(k).array() < threshold_db).any()) keep.push_back(k);
  }
  FilterResult r;
  r.data = data.subset(keep);
  r.removed = data.size() - r.data.size();
  r.removed_fraction = data.size() > 0 ? static_cast<double>(r.removed) / static_cast<double>(data.size()) : 0.0;
  r.empty = r.data.empty();
  return r;
}

void SplitPlan::validate() const {
  if (train_pool_size < 1 || test_size < 1 || subset_size < 1) throw DomainError("split sizes must be positive");
  if (subset_size > train_pool_size) throw DomainError("subset cannot exceed the training pool");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw DomainError("validation fraction must be in [0, 1)");
  }
}

std::pair<Dataset, Dataset> split_validation(const Dataset& data, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw DomainError("validation fraction must be in [0, 1)");
  }
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(seed);
  shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(data.size())));
  std::vector<Index> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Index> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(val)};
}

Split split(const Dataset& data, const SplitPlan& plan) {
  plan.validate();
  if (data.size() < plan.train_pool_size + plan.test_size) {
    throw DomainError("dataset too small for the requested pool and test sizes");
  }
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng partition_rng = make_rng(derive_seed(plan.partition_seed, {11}));
  shuffle(order.begin(), order.end(), partition_rng);

  const auto test_end = order.begin() + static_cast<std::ptrdiff_t>(plan.test_size);
  const auto pool_end = test_end + static_cast<std::ptrdiff_t>(plan.train_pool_size);
  std::vector<Index> test(order.begin(), test_end);
  std::vector<Index> pool(test_end, pool_end);
  std::sort(test.begin(), test.end());
  std::sort(pool.begin(), pool.end());

  std::vector<Index> picks = pool;
  Rng subset_rng = make_rng(derive_seed(plan.seed, {12}));
  shuffle(picks.begin(), picks.end(), subset_rng);
  picks.resize(static_cast<std::size_t>(plan.subset_size));

  const auto n_val = static_cast<std::size_t>(std::floor(plan.validation_fraction * static_cast<double>(plan.subset_size)));
  std::vector<Index> val(picks.begin(), picks.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Index> train(picks.begin() + static_cast<std::ptrdiff_t>(n_val), picks.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());

  Split s;
  s.subset = data.subset(picks);
  s.train = data.subset(train);
  s.validation = data.subset(val);
  s.test = data.subset(test);
  s.full_pool = data.subset(pool);
  return s;
}

std::vector<HistogramBin> weight_histogram(const Dataset& data, double bin_width_db) {
  if (!(bin_width_db > 0.0) || !std::isfinite(bin_width_db)) throw DomainError("bin width must be positive");
  if (data.empty()) throw DomainError("histogram of an empty dataset");
  std::map<std::int64_t, std::int64_t> counts;
  for (Index k = 0; k < data.weights_db.size(); ++k) {
    const double x = data.weights_db.data()[k];
    counts[static_cast<std::int64_t>(std::floor(x / bin_width_db))] += 1;
  }
  const std::int64_t first = counts.begin()->first;
  const std::int64_t last = counts.rbegin()->first;
  const auto total = static_cast<double>(data.weights_db.size());
  std::vector<HistogramBin> bins;
  bins.reserve(static_cast<std::size_t>(last - first + 1));
  for (std::int64_t b = first; b <= last; ++b) {
    auto it = counts.find(b);
    const double c = it == counts.end() ? 0.0 : static_cast<double>(it->second);
    bins.push_back({static_cast<double>(b) * bin_width_db, static_cast<double>(b + 1) * bin_width_db,
                    c / (total * bin_width_db)});
  }
  return bins;
}

void write_histogram_csv(const std::vector<HistogramBin>& bins, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "bin_center_db,density\n";
  for (const auto& b : bins) out << format_double(0.5 * (b.lo_db + b.hi_db)) << ',' << format_double(b.density) << '\n';
}

std::uint64_t dataset_hash(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed_bytes = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const auto rows_v = data.voltages.rows();
  const auto rows_w = data.weights_db.rows();
  feed_bytes(&rows_v, sizeof rows_v);
  feed_bytes(&rows_w, sizeof rows_w);
  feed_bytes(data.voltages.data(), sizeof(double) * static_cast<std::size_t>(data.voltages.size()));
  feed_bytes(data.weights_db.data(), sizeof(double) * static_cast<std::size_t>(data.weights_db.size()));
  feed_bytes(data.sample_ids.data(), sizeof(std::int64_t) * data.sample_ids.size());
  return h;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "sample_id";
  for (Index m = 0; m < data.n_mzi(); ++m) out << ",v" << m;
  for (Index i = 0; i < data.n_outputs; ++i) {
    for (Index j = 0; j < data.n_inputs; ++j) out << ",w_" << i << '_' << j;
  }
  out << '\n';
  for (Index k = 0; k < data.size(); ++k) {
    out << data.sample_ids[static_cast<std::size_t>(k)];
    for (Index m = 0; m < data.n_mzi(); ++m) out << ',' << format_double(data.voltages(m, k));
    for (Index e = 0; e < data.n_entries(); ++e) out << ',' << format_double(data.weights_db(e, k));
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());

  nlohmann::ordered_json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["kind"] = "dataset";
  manifest["provenance"] = to_string(data.provenance);
  manifest["seed"] = data.seed;
  manifest["floor_db"] = data.floor_db;
  manifest["v_max"] = data.v_max;
  manifest["n_samples"] = data.size();
  manifest["n_mzi"] = data.n_mzi();
  manifest["n_outputs"] = data.n_outputs;
  manifest["n_inputs"] = data.n_inputs;
  manifest["topology_hash"] = hex64(data.topology_hash);
  manifest["content_hash"] = hex64(dataset_hash(data));
  std::ofstream mout(manifest_path(path));
  if (!mout) throw std::runtime_error("cannot open manifest for " + path.string());
  mout << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream min(manifest_path(path));
  if (!min) throw FormatError("missing manifest " + manifest_path(path).string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dataset manifest: ") + e.what());
  }
  if (manifest.value("schema_version", 0) != kDatasetSchemaVersion || manifest.value("kind", "") != "dataset") {
    throw FormatError("unsupported dataset manifest schema");
  }
  Dataset d;
  d.provenance = provenance_from_string(manifest.at("provenance").get<std::string>());
  d.seed = manifest.at("seed").get<std::uint64_t>();
  d.floor_db = manifest.at("floor_db").get<double>();
  d.v_max = manifest.at("v_max").get<double>();
  d.n_outputs = manifest.at("n_outputs").get<Index>();
  d.n_inputs = manifest.at("n_inputs").get<Index>();
  d.topology_hash = std::stoull(manifest.at("topology_hash").get<std::string>(), nullptr, 16);
  const auto n = manifest.at("n_samples").get<Index>();
  const auto n_mzi = manifest.at("n_mzi").get<Index>();
  const Index n_entries = d.n_outputs * d.n_inputs;

  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file " + path.string());
  d.voltages.resize(n_mzi, n);
  d.weights_db.resize(n_entries, n);
  d.sample_ids.resize(static_cast<std::size_t>(n));
  Index k = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (k >= n) throw FormatError("more rows than the manifest declares");
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (static_cast<Index>(fields.size()) != 1 + n_mzi + n_entries) throw FormatError("wrong column count in dataset row");
    d.sample_ids[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(parse_double(fields[0]));
    for (Index m = 0; m < n_mzi; ++m) d.voltages(m, k) = parse_double(fields[static_cast<std::size_t>(1 + m)]);
    for (Index e = 0; e < n_entries; ++e) {
      d.weights_db(e, k) = parse_double(fields[static_cast<std::size_t>(1 + n_mzi + e)]);
    }
    ++k;
  }
  if (k != n) throw FormatError("fewer rows than the manifest declares");
  if (manifest.contains("content_hash") && manifest.at("content_hash").get<std::string>() != hex64(dataset_hash(d))) {
    throw FormatError("dataset content does not match its manifest hash");
  }
  return d;
}

}  // namespace omm
