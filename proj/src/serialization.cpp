#include "omm/serialization.hpp"

#include <fstream>
#include <limits>

namespace omm {

namespace {

// JSON has no infinities; they are written as the strings "inf" / "-inf".
Json number(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

double as_number(const Json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw FormatError("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Index k = 0; k < v.size(); ++k) a.push_back(number(v(k)));
  return a;
}

Vector vector_from(const Json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Index>(k)) = as_number(j[k]);
  return v;
}

Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

Matrix matrix_from(const Json& j, Index rows, Index cols) {
  if (static_cast<Index>(j.size()) != rows) throw FormatError("matrix has the wrong number of rows");
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != cols) throw FormatError("matrix has the wrong number of columns");
    for (Index c = 0; c < cols; ++c) m(i, c) = as_number(row[static_cast<std::size_t>(c)]);
  }
  return m;
}

void check_header(const Json& j, const char* kind) {
  if (!j.is_object() || j.value("schema_version", 0) != kSchemaVersion) {
    throw FormatError(std::string("unsupported schema_version for ") + kind);
  }
  if (j.value("kind", std::string()) != kind) {
    throw FormatError(std::string("expected a '") + kind + "' document");
  }
}

Json header(const char* kind) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = kind;
  return j;
}

template <typename F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(e.what());
  }
}

}  // namespace

Json to_json(const MeshTopology& topology) {
  Json j = header("topology");
  j["n_outputs"] = topology.n_outputs();
  j["n_inputs"] = topology.n_inputs();
  j["n_mzi"] = topology.n_mzi();
  Json paths = Json::array();
  for (Index i = 0; i < topology.n_outputs(); ++i) {
    for (Index jj = 0; jj < topology.n_inputs(); ++jj) {
      Json elems = Json::array();
      for (const auto& e : topology.path(i, jj)) elems.push_back({{"mzi", e.mzi}, {"sign", e.sign}});
      paths.push_back({{"output", i}, {"input", jj}, {"mzis", elems}});
    }
  }
  j["paths"] = paths;
  return j;
}

MeshTopology topology_from_json(const Json& j) {
  return guarded([&] {
    check_header(j, "topology");
    const auto n_out = j.at("n_outputs").get<Index>();
    const auto n_in = j.at("n_inputs").get<Index>();
    const auto n_mzi = j.at("n_mzi").get<Index>();
    if (n_out < 1 || n_in < 1) throw DomainError("topology needs at least one input and output");
    std::vector<std::vector<PathElement>> paths(static_cast<std::size_t>(n_out * n_in));
    std::vector<bool> seen(paths.size(), false);
    for (const auto& p : j.at("paths")) {
      const auto i = p.at("output").get<Index>();
      const auto k = p.at("input").get<Index>();
      if (i < 0 || i >= n_out || k < 0 || k >= n_in) throw FormatError("path endpoint out of range");
      const auto slot = static_cast<std::size_t>(i * n_in + k);
      if (seen[slot]) throw FormatError("duplicate path for an (output, input) pair");
      seen[slot] = true;
      for (const auto& e : p.at("mzis")) {
        paths[slot].push_back(PathElement{e.at("mzi").get<Index>(), e.at("sign").get<int>()});
      }
    }
    for (bool s : seen) {
      if (!s) throw FormatError("topology is missing a path");
    }
    return MeshTopology(n_out, n_in, n_mzi, std::move(paths));
  });
}

Json to_json(const AnalyticalParams& params) {
  Json j = header("analytical_params");
  j["topology"] = to_json(params.topology);
  j["alpha_db"] = matrix_json(params.alpha_db);
  j["er_db"] = number(params.er_db);
  j["phi0"] = vector_json(params.phi0);
  j["phi2"] = matrix_json(params.phi2);
  return j;
}

AnalyticalParams analytical_from_json(const Json& j) {
  return guarded([&] {
    check_header(j, "analytical_params");
    AnalyticalParams p;
    p.topology = topology_from_json(j.at("topology"));
    const Index m = p.topology.n_mzi();
    p.alpha_db = matrix_from(j.at("alpha_db"), p.topology.n_outputs(), p.topology.n_inputs());
    p.er_db = as_number(j.at("er_db"));
    p.phi0 = vector_from(j.at("phi0"));
    p.phi2 = matrix_from(j.at("phi2"), m, m);
    p.validate();
    return p;
  });
}

Json to_json(const VirtualChipParams& chip) {
  Json j = header("virtual_chip");
  j["base"] = to_json(chip.base);
  j["er_db_per_mzi"] = vector_json(chip.er_db_per_mzi);
  j["phi4"] = vector_json(chip.phi4);
  j["noise_sigma_db"] = chip.noise_sigma_db;
  return j;
}

VirtualChipParams chip_from_json(const Json& j) {
  return guarded([&] {
    check_header(j, "virtual_chip");
    VirtualChipParams chip;
    chip.base = analytical_from_json(j.at("base"));
    chip.er_db_per_mzi = vector_from(j.at("er_db_per_mzi"));
    chip.phi4 = vector_from(j.at("phi4"));
    chip.noise_sigma_db = j.at("noise_sigma_db").get<double>();
    chip.validate();
    return chip;
  });
}

Json to_json(const FitReport& report) {
  Json j = header("fit_report");
  j["final_params"] = to_json(report.final_params);
  j["train_rmse_db"] = number(report.train_rmse_db);
  j["initial_rmse_db"] = number(report.initial_rmse_db);
  j["iterations_used"] = report.iterations_used;
  j["converged"] = report.converged;
  j["status"] = report.status;
  j["best_start"] = report.best_start;
  Json starts = Json::array();
  for (double s : report.start_losses) starts.push_back(number(s));
  j["start_losses"] = starts;
  Json trace = Json::array();
  for (double s : report.loss_trace) trace.push_back(number(s));
  j["loss_trace"] = trace;
  return j;
}

FitReport fit_report_from_json(const Json& j) {
  return guarded([&] {
    check_header(j, "fit_report");
    FitReport r;
    r.final_params = analytical_from_json(j.at("final_params"));
    r.train_rmse_db = as_number(j.at("train_rmse_db"));
    r.initial_rmse_db = as_number(j.at("initial_rmse_db"));
    r.iterations_used = j.at("iterations_used").get<int>();
    r.converged = j.at("converged").get<bool>();
    r.status = j.value("status", std::string());
    r.best_start = j.value("best_start", 0);
    for (const auto& s : j.value("start_losses", Json::array())) r.start_losses.push_back(as_number(s));
    for (const auto& s : j.at("loss_trace")) r.loss_trace.push_back(as_number(s));
    return r;
  });
}

Json to_json(const Checkpoint& checkpoint) {
  const MlpSpec& spec = checkpoint.spec;
  Json j = header("mlp_checkpoint");
  Json s;
  s["input_dim"] = spec.input_dim;
  s["hidden_layers"] = spec.hidden_layers;
  s["n_outputs"] = spec.n_outputs;
  s["n_inputs"] = spec.n_inputs;
  s["output_dim"] = spec.output_dim();
  s["hidden_activation"] = "tanh";
  s["output_activation"] = "identity";
  s["input_range_v"] = {spec.v_min, spec.v_max};
  j["spec"] = s;
  j["parameters"] = vector_json(checkpoint.params.flatten());
  j["parameter_layout"] = "per layer: weights column-major [out x in], then bias";
  j["freeze_mask"] = checkpoint.params.frozen;
  j["metadata"] = checkpoint.metadata;
  return j;
}

Checkpoint checkpoint_from_json(const Json& j) {
  return guarded([&] {
    check_header(j, "mlp_checkpoint");
    Checkpoint c;
    const Json& s = j.at("spec");
    c.spec.input_dim = s.at("input_dim").get<Index>();
    c.spec.hidden_layers = s.at("hidden_layers").get<std::vector<Index>>();
    c.spec.n_outputs = s.at("n_outputs").get<Index>();
    c.spec.n_inputs = s.at("n_inputs").get<Index>();
    const auto range = s.at("input_range_v");
    c.spec.v_min = range.at(0).get<double>();
    c.spec.v_max = range.at(1).get<double>();
    c.spec.validate();
    c.params = init_mlp(c.spec, 0);
    const Vector flat = vector_from(j.at("parameters"));
    c.params.assign(flat);
    const auto mask = j.at("freeze_mask").get<std::vector<bool>>();
    if (mask.size() != c.params.frozen.size()) throw FormatError("freeze mask has the wrong length");
    c.params.frozen = mask;
    c.metadata = j.value("metadata", Json::object());
    return c;
  });
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return guarded([&] { return Json::parse(in); });
}

void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

VirtualChipParams load_chip(const std::filesystem::path& path) {
  const Json j = read_json(path);
  if (j.value("kind", std::string()) == "analytical_params") {
    return VirtualChipParams::from_analytical(analytical_from_json(j));
  }
  return chip_from_json(j);
}

}  // namespace omm
