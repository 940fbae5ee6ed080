#include "didiv/fixed_effects.hpp"

#include <cmath>
#include <numeric>

#include "didiv/errors.hpp"

namespace didiv {

namespace {

int find_root(std::vector<int>& parent, int a) {
  while (parent[static_cast<std::size_t>(a)] != a) {
    auto& p = parent[static_cast<std::size_t>(a)];
    p = parent[static_cast<std::size_t>(p)];
    a = p;
  }
  return a;
}

}  // namespace

TwoWayResidual residualize_two_way(const Eigen::VectorXd& values, std::span<const int> unit_index,
                                   std::span<const int> time_index, int n_units, int n_periods,
                                   const std::optional<Eigen::VectorXd>& obs_weights,
                                   ProjectionControl control) {
  const auto n = values.size();
  if (static_cast<std::size_t>(n) != unit_index.size() || unit_index.size() != time_index.size())
    fail(ErrorCode::SchemaError, "residualize_two_way: index length mismatch");
  const Eigen::VectorXd w = obs_weights ? *obs_weights : Eigen::VectorXd::Ones(n);

  TwoWayResidual out;
  // Units occupy nodes [0, N), periods [N, N+T).
  std::vector<int> parent(static_cast<std::size_t>(n_units + n_periods));
  std::iota(parent.begin(), parent.end(), 0);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!(w[k] > 0.0)) continue;
    const int a = find_root(parent, unit_index[static_cast<std::size_t>(k)]);
    const int b = find_root(parent, n_units + time_index[static_cast<std::size_t>(k)]);
    if (a != b) parent[static_cast<std::size_t>(a)] = b;
  }
  std::vector<int> label(parent.size(), -1);
  std::vector<char> used(parent.size(), 0);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!(w[k] > 0.0)) continue;
    used[static_cast<std::size_t>(unit_index[static_cast<std::size_t>(k)])] = 1;
  }
  int components = 0;
  out.unit_component.assign(static_cast<std::size_t>(n_units), -1);
  for (int i = 0; i < n_units; ++i) {
    if (!used[static_cast<std::size_t>(i)]) continue;
    const int r = find_root(parent, i);
    if (label[static_cast<std::size_t>(r)] < 0) label[static_cast<std::size_t>(r)] = components++;
    out.unit_component[static_cast<std::size_t>(i)] = label[static_cast<std::size_t>(r)];
  }
  out.components = components;

  Eigen::VectorXd unit_mass = Eigen::VectorXd::Zero(n_units);
  Eigen::VectorXd time_mass = Eigen::VectorXd::Zero(n_periods);
  for (Eigen::Index k = 0; k < n; ++k) {
    unit_mass[unit_index[static_cast<std::size_t>(k)]] += w[k];
    time_mass[time_index[static_cast<std::size_t>(k)]] += w[k];
  }

  Eigen::VectorXd r = values;
  Eigen::VectorXd unit_sum(n_units), time_sum(n_periods);
  for (int sweep = 1; sweep <= control.max_sweeps; ++sweep) {
    double change = 0.0;
    unit_sum.setZero();
    for (Eigen::Index k = 0; k < n; ++k) unit_sum[unit_index[static_cast<std::size_t>(k)]] += w[k] * r[k];
    for (int i = 0; i < n_units; ++i)
      unit_sum[i] = unit_mass[i] > 0.0 ? unit_sum[i] / unit_mass[i] : 0.0;
    for (Eigen::Index k = 0; k < n; ++k) r[k] -= unit_sum[unit_index[static_cast<std::size_t>(k)]];
    change = std::max(change, unit_sum.cwiseAbs().maxCoeff());

    time_sum.setZero();
    for (Eigen::Index k = 0; k < n; ++k) time_sum[time_index[static_cast<std::size_t>(k)]] += w[k] * r[k];
    for (int t = 0; t < n_periods; ++t)
      time_sum[t] = time_mass[t] > 0.0 ? time_sum[t] / time_mass[t] : 0.0;
    for (Eigen::Index k = 0; k < n; ++k) r[k] -= time_sum[time_index[static_cast<std::size_t>(k)]];
    change = std::max(change, time_sum.cwiseAbs().maxCoeff());

    out.sweeps = sweep;
    out.last_change = change;
    if (change <= control.tolerance) {
      out.residual = std::move(r);
      return out;
    }
  }
  Error e(ErrorCode::ConvergenceFailure,
          "alternating projections did not converge; last change " + std::to_string(out.last_change));
  e.last_change = out.last_change;
  throw e;
}

}  // namespace didiv
