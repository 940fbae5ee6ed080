#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace didiv {

// (V - row mean) - (column mean - grand mean). Zero row and column means.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> double_demean(
    const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  const auto row = v.rowwise().mean().eval();
  const auto col = v.colwise().mean().eval();
  const S grand = row.mean();
  Mat out = v.colwise() - row;
  out.rowwise() -= (col.array() - grand).matrix();
  return out;
}

// Row weights w (one per unit): column means and the grand mean are
// w-weighted, row means are plain. Output has zero row means and zero
// w-weighted column means.
template <typename Derived, typename WDerived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> double_demean(
    const Eigen::MatrixBase<Derived>& v, const Eigen::MatrixBase<WDerived>& w) {
  using S = typename Derived::Scalar;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  const S total = w.sum();
  const auto row = v.rowwise().mean().eval();
  const auto col = ((w.transpose() * v) / total).eval();
  const S grand = w.dot(row) / total;
  Mat out = v.colwise() - row;
  out.rowwise() -= (col.array() - grand).matrix();
  return out;
}

struct TwoWayResidual {
  Eigen::VectorXd residual;
  int sweeps = 0;
  double last_change = 0.0;
  int components = 1;                 // connected unit-time components
  std::vector<int> unit_component;    // per unit
};

struct ProjectionControl {
  double tolerance = 1e-11;
  int max_sweeps = 10000;
};

// Least-squares residual of `values` on unit and time indicators over the
// observed cells, by alternating weighted demeaning. `obs_weights` is per
// observation. Throws ConvergenceFailure past the sweep cap.
TwoWayResidual residualize_two_way(const Eigen::VectorXd& values, std::span<const int> unit_index,
                                   std::span<const int> time_index, int n_units, int n_periods,
                                   const std::optional<Eigen::VectorXd>& obs_weights = std::nullopt,
                                   ProjectionControl control = {});

}  // namespace didiv
