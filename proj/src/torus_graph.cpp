#include "nhsync/torus_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "nhsync/error.hpp"
#include "nhsync/format.hpp"

namespace nhsync {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Solves the circulant system (c[i-1] + 4 c[i] + c[i+1]) / 6 = v[i] in place
// (Sherman-Morrison around the Thomas algorithm).
void periodic_prefilter(std::vector<double>& line) {
  const std::size_t n = line.size();
  const double a = 1.0 / 6, b = 4.0 / 6, c = 1.0 / 6;
  const double alpha = c, beta = a;  // corner entries A[n-1][0], A[0][n-1]
  const double gamma = -b;
  std::vector<double> diag(n, b);
  diag[0] = b - gamma;
  diag[n - 1] = b - alpha * beta / gamma;

  auto solve = [&](std::vector<double>& rhs) {
    std::vector<double> cp(n);
    cp[0] = c / diag[0];
    rhs[0] /= diag[0];
    for (std::size_t i = 1; i < n; ++i) {
      const double m = diag[i] - a * cp[i - 1];
      cp[i] = c / m;
      rhs[i] = (rhs[i] - a * rhs[i - 1]) / m;
    }
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= cp[i] * rhs[i + 1];
  };

  std::vector<double> u(n, 0.0);
  u[0] = gamma;
  u[n - 1] = alpha;
  solve(line);
  solve(u);
  const double fact = (line[0] + beta * line[n - 1] / gamma) /
                      (1.0 + u[0] + beta * u[n - 1] / gamma);
  for (std::size_t i = 0; i < n; ++i) line[i] -= fact * u[i];
}

inline void bspline_weights(double t, double* w, double* dw) {
  const double t2 = t * t, t3 = t2 * t, s = 1.0 - t;
  w[0] = s * s * s / 6.0;
  w[1] = (3 * t3 - 6 * t2 + 4) / 6.0;
  w[2] = (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0;
  w[3] = t3 / 6.0;
  if (dw) {
    dw[0] = -s * s / 2.0;
    dw[1] = (3 * t2 - 4 * t) / 2.0;
    dw[2] = (-3 * t2 + 2 * t + 1) / 2.0;
    dw[3] = t2 / 2.0;
  }
}

}  // namespace

TorusGraph::TorusGraph(std::size_t phase_dims, std::vector<std::size_t> resolution,
                       std::size_t normal_dim, std::vector<double> values)
    : phase_dims_(phase_dims), resolution_(std::move(resolution)), p_(normal_dim),
      values_(std::move(values)) {
  const std::size_t m = resolution_.size();
  require(m >= 1 && m <= 3, ErrorCode::InvalidArgument, "TorusGraph: torus dimension must be 1..3");
  require(phase_dims_ >= 1 && phase_dims_ <= m, ErrorCode::InvalidArgument,
          "TorusGraph: phase dimensions must be 1..m");
  require(p_ >= 1, ErrorCode::InvalidArgument, "TorusGraph: normal dimension must be positive");
  nodes_ = 1;
  for (std::size_t n : resolution_) {
    require(n >= 4, ErrorCode::InvalidArgument, "TorusGraph: resolution must be at least 4");
    nodes_ *= n;
  }
  require(values_.size() == nodes_ * p_, ErrorCode::InvalidArgument,
          "TorusGraph: value count does not match grid");
  for (double v : values_) {
    require(std::isfinite(v), ErrorCode::NaNFailure, "TorusGraph: non-finite value");
  }
  strides_.assign(m, 1);
  for (std::size_t d = m - 1; d-- > 0;) strides_[d] = strides_[d + 1] * resolution_[d + 1];
  build_coefficients();
}

TorusGraph TorusGraph::constant(std::size_t phase_dims, std::vector<std::size_t> resolution,
                                std::span<const double> value) {
  std::size_t nodes = 1;
  for (std::size_t n : resolution) nodes *= n;
  std::vector<double> vals;
  vals.reserve(nodes * value.size());
  for (std::size_t i = 0; i < nodes; ++i) vals.insert(vals.end(), value.begin(), value.end());
  return TorusGraph(phase_dims, std::move(resolution), value.size(), std::move(vals));
}

TorusGraph TorusGraph::from_function(std::size_t phase_dims, std::vector<std::size_t> resolution,
                                     std::size_t normal_dim, const NodeFunction& fn) {
  const std::size_t m = resolution.size();
  std::size_t nodes = 1;
  for (std::size_t n : resolution) nodes *= n;
  std::vector<double> vals(nodes * normal_dim);
  std::vector<double> angles(m);
  for (std::size_t node = 0; node < nodes; ++node) {
    std::size_t rem = node;
    for (std::size_t d = m; d-- > 0;) {
      angles[d] = kTwoPi * static_cast<double>(rem % resolution[d]) /
                  static_cast<double>(resolution[d]);
      rem /= resolution[d];
    }
    fn(angles, std::span<double>(vals.data() + node * normal_dim, normal_dim));
  }
  return TorusGraph(phase_dims, std::move(resolution), normal_dim, std::move(vals));
}

double TorusGraph::spacing(std::size_t dim) const {
  return kTwoPi / static_cast<double>(resolution_[dim]);
}

void TorusGraph::node_index(std::size_t node, std::span<std::size_t> idx) const {
  for (std::size_t d = 0; d < resolution_.size(); ++d) idx[d] = (node / strides_[d]) % resolution_[d];
}

void TorusGraph::node_angles(std::size_t node, std::span<double> angles) const {
  for (std::size_t d = 0; d < resolution_.size(); ++d) {
    angles[d] = kTwoPi * static_cast<double>((node / strides_[d]) % resolution_[d]) /
                static_cast<double>(resolution_[d]);
  }
}

std::span<const double> TorusGraph::value(std::size_t node) const {
  return {values_.data() + node * p_, p_};
}

void TorusGraph::build_coefficients() {
  coeffs_ = values_;
  const std::size_t m = resolution_.size();
  std::vector<double> line;
  for (std::size_t d = 0; d < m; ++d) {
    const std::size_t n = resolution_[d], stride = strides_[d];
    line.resize(n);
    // Every line along dimension d: nodes whose index in d is zero.
    for (std::size_t base = 0; base < nodes_; ++base) {
      if ((base / stride) % n != 0) continue;
      for (std::size_t c = 0; c < p_; ++c) {
        for (std::size_t i = 0; i < n; ++i) line[i] = coeffs_[(base + i * stride) * p_ + c];
        periodic_prefilter(line);
        for (std::size_t i = 0; i < n; ++i) coeffs_[(base + i * stride) * p_ + c] = line[i];
      }
    }
  }
}

void TorusGraph::basis(std::span<const double> angles, std::size_t* idx, double* w,
                       double* dw) const {
  for (std::size_t d = 0; d < resolution_.size(); ++d) {
    const auto n = static_cast<long long>(resolution_[d]);
    const double u = angles[d] * static_cast<double>(n) / kTwoPi;
    const double fl = std::floor(u);
    const double t = u - fl;
    long long i0 = (static_cast<long long>(fl) - 1) % n;
    if (i0 < 0) i0 += n;
    for (int j = 0; j < 4; ++j) {
      long long v = i0 + j;
      if (v >= n) v -= n;
      idx[d * 4 + j] = static_cast<std::size_t>(v);
    }
    bspline_weights(t, w + d * 4, dw ? dw + d * 4 : nullptr);
  }
}

void TorusGraph::evaluate(std::span<const double> angles, std::span<double> out) const {
  const std::size_t m = resolution_.size();
  std::size_t idx[12];
  double w[12];
  basis(angles, idx, w, nullptr);
  for (std::size_t c = 0; c < p_; ++c) out[c] = 0.0;
  if (m == 1) {
    for (int a = 0; a < 4; ++a) {
      const double* cf = coeffs_.data() + idx[a] * p_;
      for (std::size_t c = 0; c < p_; ++c) out[c] += w[a] * cf[c];
    }
  } else if (m == 2) {
    for (std::size_t c = 0; c < p_; ++c) {
      double acc = 0.0;
      for (int a = 0; a < 4; ++a) {
        const double* row = coeffs_.data() + idx[a] * strides_[0] * p_ + c;
        const double s = w[4] * row[idx[4] * p_] + w[5] * row[idx[5] * p_] +
                         w[6] * row[idx[6] * p_] + w[7] * row[idx[7] * p_];
        acc += w[a] * s;
      }
      out[c] = acc;
    }
  } else {
    std::size_t off[4];
    for (int e = 0; e < 4; ++e) off[e] = idx[8 + e] * p_;
    for (std::size_t c = 0; c < p_; ++c) {
      double acc = 0.0;
      for (int a = 0; a < 4; ++a) {
        const std::size_t ra = idx[a] * strides_[0];
        double sa = 0.0;
        for (int b = 0; b < 4; ++b) {
          const double* row = coeffs_.data() + (ra + idx[4 + b] * strides_[1]) * p_ + c;
          const double sb = w[8] * row[off[0]] + w[9] * row[off[1]] + w[10] * row[off[2]] +
                            w[11] * row[off[3]];
          sa += w[4 + b] * sb;
        }
        acc += w[a] * sa;
      }
      out[c] = acc;
    }
  }
}

std::vector<double> TorusGraph::evaluate(std::span<const double> angles) const {
  std::vector<double> out(p_);
  evaluate(angles, out);
  return out;
}

void TorusGraph::evaluate_with_gradient(std::span<const double> angles, std::span<double> out,
                                        std::span<double> grad) const {
  const std::size_t m = resolution_.size();
  std::size_t idx[12];
  double w[12], dw[12];
  basis(angles, idx, w, dw);
  for (std::size_t c = 0; c < p_; ++c) out[c] = 0.0;
  for (std::size_t i = 0; i < p_ * m; ++i) grad[i] = 0.0;
  double inv_h[3];
  for (std::size_t d = 0; d < m; ++d) inv_h[d] = 1.0 / spacing(d);

  std::size_t total = 1;
  for (std::size_t d = 0; d < m; ++d) total *= 4;
  for (std::size_t combo = 0; combo < total; ++combo) {
    std::size_t sel[3];
    std::size_t rem = combo;
    for (std::size_t d = m; d-- > 0;) {
      sel[d] = rem % 4;
      rem /= 4;
    }
    std::size_t node = 0;
    double weight = 1.0;
    double partial[3];
    for (std::size_t d = 0; d < m; ++d) {
      node += idx[d * 4 + sel[d]] * strides_[d];
      weight *= w[d * 4 + sel[d]];
    }
    for (std::size_t j = 0; j < m; ++j) {
      double pw = dw[j * 4 + sel[j]] * inv_h[j];
      for (std::size_t d = 0; d < m; ++d)
        if (d != j) pw *= w[d * 4 + sel[d]];
      partial[j] = pw;
    }
    const double* cf = coeffs_.data() + node * p_;
    for (std::size_t c = 0; c < p_; ++c) {
      out[c] += weight * cf[c];
      for (std::size_t j = 0; j < m; ++j) grad[c * m + j] += partial[j] * cf[c];
    }
  }
}

double TorusGraph::sup_norm() const {
  double s = 0;
  for (double v : values_) s = std::max(s, std::abs(v));
  return s;
}

double TorusGraph::sup_distance(const TorusGraph& other) const {
  require(same_grid(other), ErrorCode::InvalidArgument, "TorusGraph: grids differ");
  double s = 0;
  for (std::size_t i = 0; i < values_.size(); ++i)
    s = std::max(s, std::abs(values_[i] - other.values_[i]));
  return s;
}

double TorusGraph::lipschitz_estimate() const {
  const std::size_t m = resolution_.size();
  std::vector<double> angles(m), out(p_), grad(p_ * m);
  double best = 0;
  for (std::size_t node = 0; node < nodes_; ++node) {
    node_angles(node, angles);
    evaluate_with_gradient(angles, out, grad);
    double s = 0;
    for (double g : grad) s += g * g;
    best = std::max(best, std::sqrt(s));
  }
  return best;
}

double TorusGraph::interpolation_error_estimate() const {
  const std::size_t m = resolution_.size();
  std::vector<std::size_t> coarse_res(m);
  for (std::size_t d = 0; d < m; ++d) {
    require(resolution_[d] % 2 == 0 && resolution_[d] >= 8, ErrorCode::InvalidArgument,
            "interpolation_error_estimate: resolutions must be even and >= 8");
    coarse_res[d] = resolution_[d] / 2;
  }
  std::size_t coarse_nodes = 1;
  for (std::size_t n : coarse_res) coarse_nodes *= n;
  std::vector<double> coarse_vals(coarse_nodes * p_);
  for (std::size_t cn = 0; cn < coarse_nodes; ++cn) {
    std::size_t rem = cn, fine = 0;
    for (std::size_t d = m; d-- > 0;) {
      fine += 2 * (rem % coarse_res[d]) * strides_[d];
      rem /= coarse_res[d];
    }
    for (std::size_t c = 0; c < p_; ++c) coarse_vals[cn * p_ + c] = values_[fine * p_ + c];
  }
  TorusGraph coarse(phase_dims_, coarse_res, p_, std::move(coarse_vals));
  std::vector<double> angles(m), out(p_);
  double worst = 0;
  for (std::size_t node = 0; node < nodes_; ++node) {
    node_angles(node, angles);
    coarse.evaluate(angles, out);
    for (std::size_t c = 0; c < p_; ++c)
      worst = std::max(worst, std::abs(out[c] - values_[node * p_ + c]));
  }
  return worst / 16.0;
}

bool TorusGraph::same_grid(const TorusGraph& other) const {
  return phase_dims_ == other.phase_dims_ && resolution_ == other.resolution_ && p_ == other.p_;
}

// ---------------------------------------------------------------------------

void save_graph(const TorusGraph& graph, const std::filesystem::path& csv_path,
                const std::filesystem::path& json_path) {
  const std::size_t m = graph.torus_dim(), k = graph.phase_dims(), p = graph.normal_dim();
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw Error(ErrorCode::Io, "cannot write " + csv_path.string());
  for (std::size_t d = 0; d < k; ++d) csv << (d ? "," : "") << "i_theta" << d;
  for (std::size_t d = k; d < m; ++d) csv << ",i_phi" << (d - k);
  for (std::size_t c = 0; c < p; ++c) csv << ",r" << c;
  csv << "\n";
  std::vector<std::size_t> idx(m);
  for (std::size_t node = 0; node < graph.node_count(); ++node) {
    graph.node_index(node, idx);
    for (std::size_t d = 0; d < m; ++d) csv << (d ? "," : "") << idx[d];
    for (double v : graph.value(node)) csv << "," << format_double(v);
    csv << "\n";
  }
  if (!csv) throw Error(ErrorCode::Io, "failed writing " + csv_path.string());

  nlohmann::json meta;
  meta["format"] = "nhsync-torus-graph";
  meta["version"] = 1;
  meta["phase_dims"] = k;
  meta["forcing_dims"] = m - k;
  meta["normal_dim"] = p;
  meta["resolution"] = graph.resolution();
  meta["interpolation"] = "periodic-cubic-bspline";
  meta["node_angle"] = "2*pi*index/resolution";
  meta["csv"] = csv_path.filename().string();
  std::ofstream js(json_path, std::ios::binary);
  if (!js) throw Error(ErrorCode::Io, "cannot write " + json_path.string());
  js << meta.dump(2) << "\n";
}

TorusGraph load_graph(const std::filesystem::path& csv_path,
                      const std::filesystem::path& json_path) {
  std::ifstream js(json_path);
  if (!js) throw Error(ErrorCode::Io, "cannot read " + json_path.string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("graph sidecar: ") + e.what());
  }
  if (meta.value("format", "") != "nhsync-torus-graph") {
    throw Error(ErrorCode::Io, "graph sidecar: unexpected format tag");
  }
  const auto k = meta.at("phase_dims").get<std::size_t>();
  const auto p = meta.at("normal_dim").get<std::size_t>();
  auto res = meta.at("resolution").get<std::vector<std::size_t>>();
  const std::size_t m = res.size();
  std::vector<std::size_t> strides(m, 1);
  for (std::size_t d = m - 1; d-- > 0;) strides[d] = strides[d + 1] * res[d + 1];
  std::size_t nodes = 1;
  for (std::size_t n : res) nodes *= n;

  std::ifstream csv(csv_path);
  if (!csv) throw Error(ErrorCode::Io, "cannot read " + csv_path.string());
  std::string line;
  std::getline(csv, line);  // header
  std::vector<double> values(nodes * p, 0.0);
  std::vector<char> seen(nodes, 0);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view sv(line);
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = sv.find(',', pos);
      cells.push_back(sv.substr(pos, comma == std::string_view::npos ? sv.npos : comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (cells.size() != m + p) throw Error(ErrorCode::Io, "graph csv: wrong column count");
    std::size_t node = 0;
    for (std::size_t d = 0; d < m; ++d) {
      const auto i = static_cast<std::size_t>(parse_double(cells[d]));
      if (i >= res[d]) throw Error(ErrorCode::Io, "graph csv: index out of range");
      node += i * strides[d];
    }
    for (std::size_t c = 0; c < p; ++c) values[node * p + c] = parse_double(cells[m + c]);
    seen[node] = 1;
    ++rows;
  }
  if (rows != nodes || std::count(seen.begin(), seen.end(), 1) != static_cast<long>(nodes)) {
    throw Error(ErrorCode::Io, "graph csv: node set incomplete");
  }
  return TorusGraph(k, std::move(res), p, std::move(values));
}

}  // namespace nhsync
