#include "nhsync/experiment.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "nhsync/chaos.hpp"
#include "nhsync/error.hpp"
#include "nhsync/format.hpp"
#include "nhsync/invariant_graph.hpp"
#include "nhsync/models.hpp"
#include "nhsync/network.hpp"
#include "nhsync/sync.hpp"
#include "parallel.hpp"

namespace nhsync::experiment {

using J = nlohmann::ordered_json;

struct Config::Impl {
  J cfg;
};

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxGridNodes = std::size_t{1} << 20;

const std::vector<std::string> kKinds{"simulate", "graph",     "tongue",   "collapse",
                                      "aggregate", "lyapunov", "coherence"};
const std::vector<std::string> kModels{"poincare", "class1",       "circuit", "rossler",
                                       "adler",    "linear_graph", "network"};

[[noreturn]] void cfg_fail(const std::string& path, const std::string& msg) {
  fail(ErrorCode::Config, (path.empty() ? std::string("config") : path) + ": " + msg);
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

// Reads one JSON object against a fixed key set, recording the normalised copy.
class Reader {
 public:
  Reader(const J* in, std::string path) : path_(std::move(path)) {
    if (in && !in->is_null()) {
      if (!in->is_object()) cfg_fail(path_, "expected an object");
      in_ = in;
    }
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const J* get(const std::string& key) {
    seen_.insert(key);
    if (!in_) return nullptr;
    auto it = in_->find(key);
    if (it == in_->end() || it->is_null()) return nullptr;
    return &*it;
  }

  double real(const std::string& key, double def, double lo, double hi, bool open_lo = false) {
    double x = def;
    if (const J* v = get(key)) {
      if (!v->is_number()) cfg_fail(at(key), "expected a number");
      x = v->get<double>();
    }
    check_range(key, x, lo, hi, open_lo);
    out_[key] = x;
    return x;
  }

  void check_range(const std::string& key, double x, double lo, double hi, bool open_lo) const {
    const bool below = open_lo ? !(x > lo) : !(x >= lo);
    if (!std::isfinite(x) || below || x > hi) {
      std::ostringstream os;
      os << "value " << format_double(x) << " out of range " << (open_lo ? "(" : "[")
         << format_double(lo) << ", " << format_double(hi) << "]";
      cfg_fail(at(key), os.str());
    }
  }

  std::int64_t integer(const std::string& key, std::int64_t def, std::int64_t lo, std::int64_t hi) {
    std::int64_t x = def;
    if (const J* v = get(key)) {
      if (!v->is_number_integer()) cfg_fail(at(key), "expected an integer");
      if (v->is_number_unsigned() && v->get<std::uint64_t>() > static_cast<std::uint64_t>(hi))
        cfg_fail(at(key), "out of range");
      x = v->get<std::int64_t>();
    }
    if (x < lo || x > hi)
      cfg_fail(at(key), "value " + std::to_string(x) + " out of range [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
    out_[key] = x;
    return x;
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t def) {
    std::uint64_t x = def;
    if (const J* v = get(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
        cfg_fail(at(key), "expected a non-negative integer");
      x = v->get<std::uint64_t>();
    }
    out_[key] = x;
    return x;
  }

  bool flag(const std::string& key, bool def) {
    bool x = def;
    if (const J* v = get(key)) {
      if (!v->is_boolean()) cfg_fail(at(key), "expected true or false");
      x = v->get<bool>();
    }
    out_[key] = x;
    return x;
  }

  std::string choice(const std::string& key, const std::string& def,
                     const std::vector<std::string>& options) {
    std::string x = def;
    if (const J* v = get(key)) {
      if (!v->is_string()) cfg_fail(at(key), "expected a string");
      x = v->get<std::string>();
    } else if (def.empty()) {
      cfg_fail(at(key), "required (one of " + join(options) + ")");
    }
    if (std::find(options.begin(), options.end(), x) == options.end())
      cfg_fail(at(key), "'" + x + "' is not one of " + join(options));
    out_[key] = x;
    return x;
  }

  std::string text(const std::string& key, const std::string& def) {
    std::string x = def;
    if (const J* v = get(key)) {
      if (!v->is_string()) cfg_fail(at(key), "expected a string");
      x = v->get<std::string>();
    }
    if (x.empty()) cfg_fail(at(key), "must not be empty");
    out_[key] = x;
    return x;
  }

  std::vector<double> reals(const std::string& key, std::optional<std::size_t> size) {
    std::vector<double> x;
    if (const J* v = get(key)) {
      if (!v->is_array()) cfg_fail(at(key), "expected an array of numbers");
      for (const auto& e : *v) {
        if (!e.is_number()) cfg_fail(at(key), "expected an array of numbers");
        x.push_back(e.get<double>());
        if (!std::isfinite(x.back())) cfg_fail(at(key), "non-finite entry");
      }
      if (size && !x.empty() && x.size() != *size)
        cfg_fail(at(key), "expected " + std::to_string(*size) + " values, got " + std::to_string(x.size()));
    }
    out_[key] = x;
    return x;
  }

  void put(const std::string& key, J value) {
    seen_.insert(key);
    out_[key] = std::move(value);
  }

  J finish() {
    if (in_)
      for (auto it = in_->begin(); it != in_->end(); ++it)
        if (!seen_.count(it.key())) cfg_fail(at(it.key()), "unknown key");
    return out_;
  }

 private:
  const J* in_ = nullptr;
  std::string path_;
  std::set<std::string> seen_;
  J out_ = J::object();
};

// --- models -----------------------------------------------------------------

J read_inputs(Reader& r, const std::string& key) {
  J out = J::array();
  const J* v = r.get(key);
  if (!v) {
    r.put(key, out);
    return out;
  }
  if (!v->is_array()) cfg_fail(r.at(key), "expected an array");
  for (std::size_t i = 0; i < v->size(); ++i) {
    Reader s(&(*v)[i], r.at(key) + "[" + std::to_string(i) + "]");
    s.real("amplitude", 0.0, -1e6, 1e6);
    s.real("frequency", 1.0, -1e6, 1e6);
    s.real("phase", 0.0, -1e6, 1e6);
    out.push_back(s.finish());
  }
  r.put(key, out);
  return out;
}

J read_network(Reader& p) {
  const J* preset = p.get("preset");
  if (preset) {
    p.choice("preset", "", {"two_block"});
    p.real("intra", 0.5, -1e6, 1e6);
    p.real("inter", 0.02, -1e6, 1e6);
    return p.finish();
  }
  const J* nodes = p.get("nodes");
  if (!nodes || !nodes->is_array() || nodes->empty())
    cfg_fail(p.at("nodes"), "required: a non-empty array of nodes (or a preset)");
  J nout = J::array();
  std::vector<std::string> kinds;
  for (std::size_t i = 0; i < nodes->size(); ++i) {
    Reader n(&(*nodes)[i], p.at("nodes") + "[" + std::to_string(i) + "]");
    const std::string kind = n.choice("kind", "phase", {"phase", "poincare"});
    kinds.push_back(kind);
    if (kind == "phase") {
      n.real("omega", 1.0, -1e6, 1e6);
      if (n.reals("prc", 3).empty()) n.put("prc", J::array({1.0, 0.0, 0.0}));
    } else {
      n.real("alpha", 1.0, 0.0, 1e6, true);
      n.real("a", 1.0, 0.0, 1e6, true);
      n.real("omega", 1.0, -1e6, 1e6);
      n.flag("smooth_q", false);
    }
    read_inputs(n, "inputs");
    nout.push_back(n.finish());
  }
  p.put("nodes", nout);
  J eout = J::array();
  if (const J* edges = p.get("edges")) {
    if (!edges->is_array()) cfg_fail(p.at("edges"), "expected an array");
    for (std::size_t i = 0; i < edges->size(); ++i) {
      Reader e(&(*edges)[i], p.at("edges") + "[" + std::to_string(i) + "]");
      const auto n = static_cast<std::int64_t>(nodes->size()) - 1;
      const auto from = e.integer("from", -1, 0, n);
      const auto to = e.integer("to", -1, 0, n);
      if (from == to) cfg_fail(e.at("to"), "self-loop");
      e.real("strength", 0.0, -1e6, 1e6);
      const auto fh = e.integer("from_harmonic", 1, 1, 64);
      const auto th = e.integer("to_harmonic", 1, 1, 64);
      if (kinds[static_cast<std::size_t>(to)] == "poincare" && (fh != 1 || th != 1))
        cfg_fail(e.at("to_harmonic"), "harmonic coupling needs a phase target");
      eout.push_back(e.finish());
    }
  }
  p.put("edges", eout);
  return p.finish();
}

J read_params(const std::string& model, const J* in) {
  Reader p(in, "params");
  if (model == "poincare") {
    p.real("alpha", 1.0, 0.0, 1e6, true);
    p.real("a", 1.0, 0.0, 1e6, true);
    p.real("omega", 1.0, -1e6, 1e6);
    p.real("gamma", 0.0, -1e6, 1e6);
    p.choice("forcing", "two_tone", {"two_tone", "single", "zero"});
    p.real("forcing_frequency", 2.0 * std::numbers::pi, 0.0, 1e6, true);
    p.flag("smooth_q", false);
  } else if (model == "class1") {
    p.real("mu", 0.5, -1e6, 1e6);
  } else if (model == "circuit") {
    models::CircuitParams d;
    p.real("a", d.a, -1e6, 1e6);
    p.real("b", d.b, -1e6, 1e6);
    p.real("c", d.c, -1e6, 1e6);
    p.real("e", d.e, -1e6, 1e6);
    p.real("f", d.f, -1e6, 1e6);
    p.real("g1", d.g1, -1e6, 1e6);
    p.real("g3", d.g3, -1e6, 1e6);
  } else if (model == "rossler") {
    p.real("a", 0.2, -1e6, 1e6);
    p.real("b", 0.2, -1e6, 1e6);
    p.real("c", 5.7, -1e6, 1e6);
    p.real("forcing_amplitude", 0.0, -1e6, 1e6);
    p.real("forcing_frequency", 1.0, -1e6, 1e6);
  } else if (model == "adler") {
    p.real("delta", 0.0, -1e6, 1e6);
    p.real("k", 0.0, -1e6, 1e6);
    p.integer("harmonic", 1, 1, 64);
  } else if (model == "linear_graph") {
    p.real("omega", 1.0, -1e6, 1e6);
    p.real("lambda", 1.0, 0.0, 1e6, true);
    p.real("c", 0.5, -1e6, 1e6);
  } else {
    return read_network(p);
  }
  return p.finish();
}

models::PoincareParams poincare_params(const J& p) {
  models::PoincareParams q;
  q.alpha = p["alpha"];
  q.a = p["a"];
  q.omega = p["omega"];
  q.gamma = p["gamma"];
  const std::string f = p["forcing"];
  q.forcing = f == "two_tone" ? models::Forcing::TwoTone
                           : (f == "single" ? models::Forcing::SingleTone : models::Forcing::Zero);
  q.forcing_frequency = p["forcing_frequency"];
  q.smooth_q = p["smooth_q"];
  return q;
}

std::vector<SineInput> inputs_from(const J& a) {
  std::vector<SineInput> v;
  for (const auto& s : a) v.push_back({s["amplitude"], s["frequency"], s["phase"]});
  return v;
}

NetworkSpec network_from(const J& p) {
  if (p.contains("preset")) return two_block_network(p["intra"], p["inter"]);
  NetworkSpec net;
  for (const auto& n : p["nodes"]) {
    if (n["kind"] == "phase") {
      NodeSpec node = NodeSpec::phase(n["omega"], inputs_from(n["inputs"]));
      for (std::size_t i = 0; i < 3; ++i) node.prc[i] = n["prc"][i];
      net.nodes.push_back(node);
    } else {
      models::PoincareParams q;
      q.alpha = n["alpha"];
      q.a = n["a"];
      q.omega = n["omega"];
      q.smooth_q = n["smooth_q"];
      net.nodes.push_back(NodeSpec::poincare_node(q, inputs_from(n["inputs"])));
    }
  }
  for (const auto& e : p["edges"])
    net.edges.push_back({e["from"].get<std::size_t>(), e["to"].get<std::size_t>(), e["strength"],
                         e["from_harmonic"].get<int>(), e["to_harmonic"].get<int>()});
  return net;
}

ode::SystemSpec system_for(const std::string& model, const J& p) {
  if (model == "poincare") return models::poincare_cartesian(poincare_params(p));
  if (model == "class1") return models::class1_neuron({p["mu"].get<double>(), {}});
  if (model == "circuit")
    return models::circuit({p["a"], p["b"], p["c"], p["e"], p["f"], p["g1"], p["g3"]});
  if (model == "rossler")
    return models::rossler({p["a"], p["b"], p["c"], p["forcing_amplitude"], p["forcing_frequency"]});
  if (model == "adler") return models::adler({p["delta"], p["k"], p["harmonic"].get<int>()});
  if (model == "linear_graph")
    return models::linear_graph({p["omega"], p["lambda"], p["c"]})->time_system();
  return network_from(p).system();
}

ChartPtr chart_for(const std::string& model, const J& p) {
  if (model == "poincare") return models::poincare_polar(poincare_params(p));
  if (model == "linear_graph") return models::linear_graph({p["omega"], p["lambda"], p["c"]});
  if (model == "adler") return models::adler_phase({p["delta"], p["k"], p["harmonic"].get<int>()});
  fail(ErrorCode::Config, "model: no phase chart for " + model);
}

std::size_t model_dim(const std::string& model, const J& p) {
  if (model == "poincare" || model == "class1" || model == "linear_graph") return 2;
  if (model == "circuit" || model == "rossler") return 3;
  if (model == "adler") return 1;
  if (p.contains("preset")) return 6;
  std::size_t d = 0;
  for (const auto& n : p["nodes"]) d += n["kind"] == "phase" ? 1 : 2;
  return d;
}

std::vector<double> default_x0(const std::string& model, const J& p, std::uint64_t seed) {
  if (model == "poincare") return {p["a"].get<double>(), 0.0};
  if (model == "class1") return {0.0, p["mu"].get<double>()};
  if (model == "circuit") return {0.1, 0.1, 0.1};
  if (model == "rossler") return {1.0, 1.0, 0.0};
  if (model == "adler") return {0.0};
  if (model == "linear_graph") return {0.0, 0.0};
  return network_from(p).initial_state(seed);
}

bool supports(const std::string& kind, const std::string& model) {
  if (kind == "simulate" || kind == "lyapunov" || kind == "coherence") return true;
  if (kind == "graph") return model == "poincare" || model == "linear_graph";
  if (kind == "tongue") return model == "adler" || model == "poincare";
  if (kind == "collapse") return model == "adler" || model == "poincare" || model == "linear_graph";
  return model == "network";
}

std::size_t forcing_dim(const std::string& model, const J& p) {
  if (model != "poincare") return 0;
  const std::string f = p["forcing"];
  return f == "two_tone" ? 2 : (f == "single" ? 1 : 0);
}

J read_section(Reader& root, const std::string& kind, const std::string& model, const J& params,
               double horizon) {
  Reader s(root.get(kind), kind);
  const std::size_t dim = model_dim(model, params);
  if (kind == "simulate") {
    s.reals("x0", dim);
    s.real("t0", 0.0, -1e9, 1e9);
  } else if (kind == "graph") {
    s.flag("nh_rates", true);
    s.integer("residual_samples", 256, 1, 1 << 20);
  } else if (kind == "tongue") {
    const double d0 = s.real("delta_min", -1.0, -1e6, 1e6);
    s.check_range("delta_max", s.real("delta_max", 1.0, -1e6, 1e6), d0, 1e6, true);
    const double k0 = s.real("k_min", 0.0, -1e6, 1e6);
    s.check_range("k_max", s.real("k_max", 1.0, -1e6, 1e6), k0, 1e6, true);
    s.integer("n_delta", 64, 2, 4096);
    s.integer("n_k", 64, 2, 4096);
    s.real("forcing_frequency", 1.0, 0.0, 1e6, true);
    s.integer("m_max", 1, 1, 64);
    s.integer("n_max", 1, 1, 64);
  } else if (kind == "collapse") {
    s.integer("ring", 64, 32, 1 << 16);
    auto f = s.reals("fibers", std::nullopt);
    if (f.empty()) s.put("fibers", J::array({0.0}));
    s.real("offset", 0.0, -1e6, 1e6);
    s.real("gap", std::numbers::pi / 4, 0.0, std::numbers::pi, true);
  } else if (kind == "aggregate") {
    s.integer("max_levels", 4, 1, 64);
    s.real("tier_ratio", 4.0, 1.0, 1e12, true);
    s.integer("probes", 4, 1, 1024);
    s.real("probe_window", 40.0, 0.0, 1e7, true);
    s.real("validation_window", 50.0, 0.0, 1e7, true);
    s.real("validation_threshold", 0.15, 0.0, 1e6, true);
    s.flag("chimera_check", true);
  } else if (kind == "lyapunov") {
    s.reals("x0", dim);
    if (s.get("count"))
      s.integer("count", static_cast<std::int64_t>(dim), 1, static_cast<std::int64_t>(dim));
    else
      s.put("count", dim);
    s.real("renorm", 1.0, 0.0, horizon, true);
    s.real("transient", 0.0, 0.0, 1e9);
  } else if (kind == "coherence") {
    s.reals("x0", dim);
    s.real("transient", 100.0, 0.0, 1e9);
    const J* sec = s.get("section");
    if (!sec) {
      if (model != "rossler") cfg_fail(s.at("section"), "required for model " + model);
      const SectionSpec d = rossler_section();
      s.put("section", {{"normal", d.normal},
                        {"offset", d.offset},
                        {"direction", "positive"},
                        {"half_normal", d.half_normal},
                        {"half_offset", d.half_offset}});
    } else {
      Reader r(sec, s.at("section"));
      auto n = r.reals("normal", dim);
      if (n.empty()) cfg_fail(r.at("normal"), "required");
      if (std::all_of(n.begin(), n.end(), [](double v) { return v == 0.0; }))
        cfg_fail(r.at("normal"), "must be nonzero");
      r.real("offset", 0.0, -1e12, 1e12);
      r.choice("direction", "positive", {"positive", "negative", "both"});
      auto h = r.reals("half_normal", std::nullopt);
      if (!h.empty() && h.size() != dim)
        cfg_fail(r.at("half_normal"), "expected " + std::to_string(dim) + " values");
      r.real("half_offset", 0.0, -1e12, 1e12);
      s.put("section", r.finish());
    }
  }
  return s.finish();
}

J normalize(const J& in) {
  if (!in.is_object()) cfg_fail("", "top level must be a JSON object");
  Reader root(&in, "");
  J out = J::object();
  const std::string kind = root.choice("experiment", "simulate", kKinds);
  const std::string model = root.choice("model", "", kModels);
  if (!supports(kind, model)) cfg_fail("model", "'" + model + "' is not supported by experiment '" + kind + "'");
  J params = read_params(model, root.get("params"));

  Reader n(root.get("numerics"), "numerics");
  n.real("tol", 1e-8, 1e-14, 1e-2);
  const double horizon = n.real("horizon", 200.0, 0.0, 1e7, true);
  const auto grid = n.integer("grid", 128, 4, 4096);
  if (const J* w = n.get("window"); w && w->is_string()) {
    if (*w != "auto") cfg_fail("numerics.window", "expected \"auto\" or a positive number");
    n.put("window", "auto");
  } else if (w) {
    n.real("window", 0.0, 0.0, 1e6, true);
  } else {
    n.put("window", "auto");
  }
  n.unsigned_integer("seed", 0);
  n.integer("max_iter", 50, 1, 100000);
  const double dt = n.real("sample_dt", 0.05, 0.0, 1e3, true);
  if (dt > horizon) cfg_fail("numerics.sample_dt", "must not exceed the horizon");
  n.real("discard", 0.2, 0.0, 0.49);
  J numerics = n.finish();

  if ((kind == "graph" || (kind == "collapse" && model == "poincare"))) {
    const std::size_t dims = 1 + forcing_dim(model, params);
    double nodes = std::pow(static_cast<double>(grid), static_cast<double>(dims));
    if (nodes > static_cast<double>(kMaxGridNodes))
      cfg_fail("numerics.grid", std::to_string(grid) + "^" + std::to_string(dims) +
                                    " grid nodes exceed the limit of " + std::to_string(kMaxGridNodes));
  }

  J section = read_section(root, kind, model, params, horizon);
  root.put("params", J());
  root.put("numerics", J());
  const std::string dir = root.text("output_dir", "nhsync_out");
  std::optional<std::int64_t> threads;
  if (root.get("threads")) threads = root.integer("threads", 0, 0, 4096);
  root.finish();

  out["experiment"] = kind;
  out["model"] = model;
  out["params"] = params;
  out["numerics"] = numerics;
  out[kind] = section;
  out["output_dir"] = dir;
  out["threads"] = threads ? J(*threads) : J(nullptr);
  return out;
}

// --- artifacts --------------------------------------------------------------

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write " + p.string());
  f << content;
  if (!f) fail(ErrorCode::Io, "failed writing " + p.string());
}

struct Context {
  const J& cfg;
  std::filesystem::path dir;
  std::size_t threads;
  std::vector<std::string> artifacts;
  J diagnostics = J::object();  // written on numerical failure

  const J& params() const { return cfg["params"]; }
  const J& num() const { return cfg["numerics"]; }
  const J& section() const { return cfg[cfg["experiment"].get<std::string>()]; }
  std::string model() const { return cfg["model"]; }
  std::uint64_t seed() const { return cfg["numerics"]["seed"]; }
  double tol() const { return num()["tol"]; }
  double horizon() const { return num()["horizon"]; }

  void emit(const std::string& name, const std::string& content) {
    write_file(dir / name, content);
    artifacts.push_back(name);
  }
  std::vector<double> x0() const {
    const J& s = section();
    if (s.contains("x0") && !s["x0"].empty()) return s["x0"].get<std::vector<double>>();
    return default_x0(model(), params(), seed());
  }
};

J num_json(double v) { return std::isfinite(v) ? J(v) : J(nullptr); }

void run_simulate(Context& c) {
  const auto sys = system_for(c.model(), c.params());
  const double t0 = c.section()["t0"], dt = c.num()["sample_dt"];
  ode::IntegrateOptions io;
  io.tol = c.tol();
  io.max_step = 20 * dt;
  const auto traj = ode::integrate(sys, c.x0(), t0, t0 + c.horizon(), io);
  std::ostringstream os;
  os << "t";
  for (std::size_t i = 0; i < sys.dim(); ++i) os << ",x" << i;
  os << "\n";
  std::vector<double> x(sys.dim());
  const auto count = static_cast<std::size_t>(std::floor(c.horizon() / dt * (1 + 1e-12))) + 1;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = std::min(t0 + dt * static_cast<double>(k), traj.back_time());
    traj.interpolate(t, x);
    os << format_double(t);
    for (double v : x) os << ',' << format_double(v);
    os << "\n";
  }
  c.emit("trajectory.csv", os.str());
}

SolveOptions solve_options(const Context& c) {
  SolveOptions so;
  const J& w = c.num()["window"];
  so.window = w.is_number() ? w.get<double>() : 0.0;
  so.max_iter = c.num()["max_iter"];
  so.tol = c.tol();
  so.threads = c.threads;
  return so;
}

J solve_json(const SolveDiagnostics& d) {
  J deltas = J::array();
  for (double v : d.deltas) deltas.push_back(num_json(v));
  return {{"converged", d.converged},
          {"iterations", d.deltas.size()},
          {"deltas", deltas},
          {"contraction_factor", num_json(d.contraction_factor)},
          {"window", num_json(d.window)}};
}

GraphSolution solve_for(Context& c, const PhaseNormalSystem& chart) {
  const std::size_t grid = c.num()["grid"];
  const TorusGraph rho0 = reference_graph(chart, grid);
  try {
    return solve_graph(rho0, chart, solve_options(c));
  } catch (const NoGraphError& e) {
    c.diagnostics["solve"] = solve_json(e.last().diagnostics);
    throw;
  }
}

void run_graph(Context& c) {
  const auto chart = chart_for(c.model(), c.params());
  const auto sol = solve_for(c, *chart);
  save_graph(sol.graph, c.dir / "graph.csv", c.dir / "graph.json");
  c.artifacts.push_back("graph.csv");
  c.artifacts.push_back("graph.json");
  J d = solve_json(sol.diagnostics);
  d["invariance_residual"] =
      num_json(invariance_residual(sol.graph, *chart, c.section()["residual_samples"], c.seed()));
  d["interpolation_error"] = num_json(sol.graph.interpolation_error_estimate());
  if (c.section()["nh_rates"]) {
    NHRateOptions ro;
    ro.seed = c.seed();
    ro.threads = c.threads;
    const auto r = nh_rates(sol.graph, *chart, ro);
    d["nh_rates"] = {{"lambda_N", num_json(r.lambda_N)},
                     {"lambda_T_max", num_json(r.lambda_T_max)},
                     {"ratio", num_json(r.ratio)},
                     {"samples", r.samples}};
  }
  if (c.model() == "poincare") {
    const auto& p = c.params();
    d["persistence_threshold"] = num_json(persistence_threshold(p["alpha"], p["a"]));
  }
  c.emit("diagnostics.json", d.dump(2) + "\n");
}

void run_tongue(Context& c) {
  const J& s = c.section();
  TongueScanOptions o;
  o.family = c.model() == "adler" ? TongueFamily::Adler : TongueFamily::ForcedPoincare;
  o.delta_min = s["delta_min"];
  o.delta_max = s["delta_max"];
  o.k_min = s["k_min"];
  o.k_max = s["k_max"];
  o.n_delta = s["n_delta"];
  o.n_k = s["n_k"];
  o.forcing_frequency = s["forcing_frequency"];
  o.m_max = s["m_max"];
  o.n_max = s["n_max"];
  o.horizon = c.horizon();
  o.sample_dt = c.num()["sample_dt"];
  o.discard_fraction = c.num()["discard"];
  o.integrator_tol = c.tol();
  if (c.model() == "poincare") o.poincare = poincare_params(c.params());
  o.threads = c.threads;
  c.emit("tongue.csv", arnold_tongue_scan(o).to_csv());
}

void run_collapse(Context& c) {
  const J& s = c.section();
  const auto chart = chart_for(c.model(), c.params());
  std::optional<GraphSolution> sol;
  if (chart->normal_dim() > 0) sol = solve_for(c, *chart);
  CollapseOptions co;
  co.ring = s["ring"];
  co.horizon = c.horizon();
  co.offset = s["offset"];
  co.gap = s["gap"];
  co.integrator_tol = std::clamp(c.tol() / 10, 1e-12, 1e-9);
  const std::size_t d = chart->forcing_dim();
  std::vector<double> fibers = s["fibers"].get<std::vector<double>>();
  if (d == 0) fibers.resize(1);
  std::ostringstream os;
  os << "fiber,index,final_phase\n";
  J rows = J::array();
  for (std::size_t f = 0; f < fibers.size(); ++f) {
    std::vector<double> phi(d, fibers[f]);
    const auto r = phase_collapse(*chart, sol ? &sol->graph : nullptr, phi, co);
    for (std::size_t i = 0; i < r.final_phases.size(); ++i)
      os << format_double(fibers[f]) << ',' << i << ',' << format_double(r.final_phases[i]) << "\n";
    J cp = J::array();
    for (double v : r.cluster_phases) cp.push_back(num_json(v));
    rows.push_back({{"fiber", num_json(fibers[f])}, {"cluster_count", r.cluster_count}, {"cluster_phases", cp}});
  }
  c.emit("collapse.csv", os.str());
  J summary = {{"forcing_dim", d}, {"fibers", rows}};
  if (sol) summary["solve"] = solve_json(sol->diagnostics);
  c.emit("collapse.json", summary.dump(2) + "\n");
}

void run_aggregate(Context& c) {
  const J& s = c.section();
  AggregateOptions o;
  o.max_levels = s["max_levels"];
  o.tier_ratio = s["tier_ratio"];
  o.probes = s["probes"];
  o.probe_window = s["probe_window"];
  o.validation_window = s["validation_window"];
  o.validation_threshold = s["validation_threshold"];
  o.chimera_check = s["chimera_check"];
  o.horizon = c.horizon();
  o.sample_dt = c.num()["sample_dt"];
  o.locking.discard_fraction = c.num()["discard"];
  o.tol = c.tol();
  o.seed = c.seed();
  o.threads = c.threads;
  const auto tree = aggregate(network_from(c.params()), o);
  c.emit("tree.json", tree.to_json() + "\n");
  std::ostringstream os;
  os << "level,cluster,node,validated\n";
  for (std::size_t l = 0; l < tree.levels.size(); ++l)
    for (std::size_t k = 0; k < tree.levels[l].partition.size(); ++k)
      for (std::size_t v : tree.levels[l].partition[k])
        os << l + 1 << ',' << k << ',' << v << ',' << (tree.levels[l].validated ? 1 : 0) << "\n";
  c.emit("clusters.csv", os.str());
}

void run_lyapunov(Context& c) {
  const J& s = c.section();
  const auto sys = system_for(c.model(), c.params());
  const double transient = s["transient"];
  ode::IntegrateOptions io;
  io.tol = c.tol();
  auto x = c.x0();
  if (transient > 0) x = ode::propagate(sys, x, 0.0, transient, io);
  const auto ex = ode::lyapunov_exponents(sys, x, s["count"], transient, transient + c.horizon(),
                                          s["renorm"], c.tol(), c.seed());
  std::ostringstream os;
  os << "index,exponent\n";
  for (std::size_t i = 0; i < ex.size(); ++i) os << i << ',' << format_double(ex[i]) << "\n";
  c.emit("lyapunov.csv", os.str());
}

void run_coherence(Context& c) {
  const J& s = c.section();
  const auto sys = system_for(c.model(), c.params());
  const J& sj = s["section"];
  SectionSpec sec;
  sec.normal = sj["normal"].get<std::vector<double>>();
  sec.offset = sj["offset"];
  const std::string dir = sj["direction"];
  sec.direction = dir == "positive" ? CrossingDirection::Positive
                                    : (dir == "negative" ? CrossingDirection::Negative : CrossingDirection::Both);
  sec.half_normal = sj["half_normal"].get<std::vector<double>>();
  sec.half_offset = sj["half_offset"];
  const double transient = s["transient"];
  ode::IntegrateOptions io;
  io.tol = c.tol();
  auto x = c.x0();
  if (transient > 0) x = ode::propagate(sys, x, 0.0, transient, io);
  const auto traj = ode::integrate(sys, x, transient, transient + c.horizon(), io);
  const auto cr = section_crossings(traj, sec);
  std::ostringstream os;
  os << "index,time";
  for (std::size_t i = 0; i < sys.dim(); ++i) os << ",x" << i;
  os << "\n";
  for (std::size_t k = 0; k < cr.size(); ++k) {
    os << k << ',' << format_double(cr[k].time);
    for (double v : cr[k].state) os << ',' << format_double(v);
    os << "\n";
  }
  c.emit("crossings.csv", os.str());
  c.diagnostics["crossings"] = cr.size();
  const auto rep = coherence(crossing_times(cr));
  J j = {{"c", num_json(rep.c)},
         {"spread", num_json(rep.spread)},
         {"coherence_index", num_json(rep.coherence_index)},
         {"count", rep.count}};
  c.emit("coherence.json", j.dump(2) + "\n");
}

}  // namespace

// --- Config -------------------------------------------------------------------

Config::Config(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Config::Config(const Config& o) : impl_(std::make_unique<Impl>(*o.impl_)) {}
Config& Config::operator=(const Config& o) {
  impl_ = std::make_unique<Impl>(*o.impl_);
  return *this;
}
Config::Config(Config&&) noexcept = default;
Config& Config::operator=(Config&&) noexcept = default;
Config::~Config() = default;

Config Config::parse(std::string_view text) {
  J in;
  try {
    in = J::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    cfg_fail("", std::string("invalid JSON: ") + e.what());
  }
  auto impl = std::make_unique<Impl>();
  impl->cfg = normalize(in);
  return Config(std::move(impl));
}

Config Config::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Config, path + ": cannot read config file");
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

std::string Config::normalized() const { return impl_->cfg.dump(2) + "\n"; }
std::string Config::kind() const { return impl_->cfg["experiment"]; }
std::string Config::model() const { return impl_->cfg["model"]; }
std::uint64_t Config::seed() const { return impl_->cfg["numerics"]["seed"]; }
std::string Config::output_dir() const { return impl_->cfg["output_dir"]; }
std::optional<std::size_t> Config::threads() const {
  const J& t = impl_->cfg["threads"];
  if (t.is_null()) return std::nullopt;
  return t.get<std::size_t>();
}
void Config::set_seed(std::uint64_t seed) { impl_->cfg["numerics"]["seed"] = seed; }
void Config::set_output_dir(const std::string& dir) {
  if (dir.empty()) fail(ErrorCode::Config, "output_dir: must not be empty");
  impl_->cfg["output_dir"] = dir;
}
void Config::set_threads(std::size_t threads) {
  if (threads > 4096) fail(ErrorCode::Config, "threads: value out of range [0, 4096]");
  impl_->cfg["threads"] = threads;
}

std::size_t resolve_threads(const Config& config) {
  if (auto t = config.threads()) return detail::resolve_threads(*t);
  if (const char* env = std::getenv("NHSYNC_THREADS"); env && *env) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || v > 4096)
      fail(ErrorCode::Config, std::string("NHSYNC_THREADS: invalid value '") + env + "'");
    return detail::resolve_threads(v);
  }
  const std::string k = config.kind();
  return (k == "tongue" || k == "aggregate") ? detail::resolve_threads(0) : 1;
}

RunResult run(const Config& config) {
  RunResult res;
  const J& cfg = config.impl().cfg;
  res.output_dir = cfg["output_dir"];
  std::size_t threads = 1;
  try {
    threads = resolve_threads(config);
  } catch (const Error& e) {
    res.exit_code = kExitConfig;
    res.message = e.what();
    res.error_name = error_code_name(e.code());
    return res;
  }

  std::error_code ec;
  std::filesystem::create_directories(res.output_dir, ec);
  if (ec) {
    res.exit_code = kExitNumerical;
    res.message = "cannot create output directory " + res.output_dir + ": " + ec.message();
    res.error_name = error_code_name(ErrorCode::Io);
    return res;
  }

  Context ctx{cfg, res.output_dir, threads, {}, J::object()};
  const auto start = std::chrono::steady_clock::now();
  J failure = nullptr;
  try {
    const std::string k = cfg["experiment"];
    if (k == "simulate") run_simulate(ctx);
    else if (k == "graph") run_graph(ctx);
    else if (k == "tongue") run_tongue(ctx);
    else if (k == "collapse") run_collapse(ctx);
    else if (k == "aggregate") run_aggregate(ctx);
    else if (k == "lyapunov") run_lyapunov(ctx);
    else run_coherence(ctx);
  } catch (const Error& e) {
    res.exit_code = e.code() == ErrorCode::Config ? kExitConfig : kExitNumerical;
    res.message = e.what();
    res.error_name = error_code_name(e.code());
    failure = {{"error", res.error_name}, {"message", res.message}};
    if (const auto* ie = dynamic_cast<const IntegrationError*>(&e))
      failure["last_good_time"] = num_json(ie->last_good_time());
  } catch (const std::exception& e) {
    res.exit_code = kExitNumerical;
    res.message = e.what();
    res.error_name = error_code_name(ErrorCode::InternalConsistency);
    failure = {{"error", res.error_name}, {"message", res.message}};
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  try {
    if (!failure.is_null()) {
      J d = failure;
      for (auto it = ctx.diagnostics.begin(); it != ctx.diagnostics.end(); ++it) d[it.key()] = it.value();
      write_file(ctx.dir / "diagnostics.json", d.dump(2) + "\n");
      ctx.artifacts.push_back("diagnostics.json");
    }
    J manifest = {{"tool", "nhsync"},
                  {"version", NHSYNC_VERSION},
                  {"experiment", cfg["experiment"]},
                  {"model", cfg["model"]},
                  {"seed", cfg["numerics"]["seed"]},
                  {"threads", threads},
                  {"status", failure.is_null() ? "ok" : "failed"},
                  {"exit_code", res.exit_code},
                  {"wall_time_seconds", wall},
                  {"artifacts", ctx.artifacts},
                  {"config", cfg}};
    write_file(ctx.dir / "manifest.json", manifest.dump(2) + "\n");
    ctx.artifacts.push_back("manifest.json");
  } catch (const Error& e) {
    res.exit_code = kExitNumerical;
    res.message = e.what();
    res.error_name = error_code_name(e.code());
  }
  res.artifacts = ctx.artifacts;
  return res;
}

}  // namespace nhsync::experiment
