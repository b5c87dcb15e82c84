#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace nhsync {

// A graph r = rho(theta, phi) over the torus T^m (m = phase dims + forcing
// dims, 1 <= m <= 3) sampled on a uniform grid, node i of a dimension with n
// points sitting at angle 2 pi i / n. Values are vectors in R^p. Between nodes
// the graph is the periodic cubic B-spline interpolant, which is C^2 and
// matches value and derivative across 0 = 2 pi.
class TorusGraph {
 public:
  using NodeFunction = std::function<void(std::span<const double> angles, std::span<double> out)>;

  TorusGraph() = default;
  TorusGraph(std::size_t phase_dims, std::vector<std::size_t> resolution, std::size_t normal_dim,
             std::vector<double> values);

  static TorusGraph constant(std::size_t phase_dims, std::vector<std::size_t> resolution,
                             std::span<const double> value);
  static TorusGraph from_function(std::size_t phase_dims, std::vector<std::size_t> resolution,
                                  std::size_t normal_dim, const NodeFunction& fn);

  std::size_t torus_dim() const noexcept { return resolution_.size(); }
  std::size_t phase_dims() const noexcept { return phase_dims_; }
  std::size_t forcing_dims() const noexcept { return resolution_.size() - phase_dims_; }
  std::size_t normal_dim() const noexcept { return p_; }
  std::size_t node_count() const noexcept { return nodes_; }
  const std::vector<std::size_t>& resolution() const noexcept { return resolution_; }
  double spacing(std::size_t dim) const;

  void node_index(std::size_t node, std::span<std::size_t> idx) const;
  void node_angles(std::size_t node, std::span<double> angles) const;
  std::span<const double> value(std::size_t node) const;
  const std::vector<double>& values() const noexcept { return values_; }

  void evaluate(std::span<const double> angles, std::span<double> out) const;
  std::vector<double> evaluate(std::span<const double> angles) const;
  // grad is p x m row-major: d rho_c / d angle_j.
  void evaluate_with_gradient(std::span<const double> angles, std::span<double> out,
                              std::span<double> grad) const;

  double sup_norm() const;
  double sup_distance(const TorusGraph& other) const;
  // Largest Frobenius norm of the interpolant's gradient over the nodes.
  double lipschitz_estimate() const;
  // Interpolation error scale: rebuild from the even-index subgrid, measure
  // the discrepancy at the fine nodes, and scale by the O(h^4) rate. Needs
  // every resolution even and >= 8.
  double interpolation_error_estimate() const;

  bool same_grid(const TorusGraph& other) const;

 private:
  void build_coefficients();
  void basis(std::span<const double> angles, std::size_t* idx, double* w, double* dw) const;

  std::size_t phase_dims_ = 0;
  std::vector<std::size_t> resolution_;
  std::vector<std::size_t> strides_;
  std::size_t p_ = 0;
  std::size_t nodes_ = 0;
  std::vector<double> values_;
  std::vector<double> coeffs_;
};

// CSV with columns (i_theta..., i_phi..., r...) plus a JSON sidecar holding the
// grid metadata. Values use shortest round-trip formatting, so a save/load
// cycle reproduces the graph bit for bit.
void save_graph(const TorusGraph& graph, const std::filesystem::path& csv_path,
                const std::filesystem::path& json_path);
TorusGraph load_graph(const std::filesystem::path& csv_path, const std::filesystem::path& json_path);

}  // namespace nhsync
