#pragma once

// Helpers shared by the test binaries: random panels built without the
// library's simulator, and brute-force references.

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "didiv/panel.hpp"

namespace testing {

using didiv::kNever;

struct RandomPanelSpec {
  int N = 40;
  int T = 6;
  std::vector<int> cohorts;  // adoption dates, kNever allowed; each gets >= 2 units
  bool weights = false;
  int covariates = 0;
  double noise = 1.0;
  double x_loading = 0.3;  // covariate dependence on Z
};

inline double rel_gap(double a, double b) {
  const double s = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / s;
}

inline didiv::LongPanel random_long(std::mt19937_64& rng, const RandomPanelSpec& spec) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto K = static_cast<int>(spec.cohorts.size());
  std::vector<int> cohort_of(static_cast<std::size_t>(spec.N));
  for (int i = 0; i < spec.N; ++i)
    cohort_of[static_cast<std::size_t>(i)] =
        i < 2 * K ? i % K : std::uniform_int_distribution<int>(0, K - 1)(rng);

  std::vector<double> xt(static_cast<std::size_t>(spec.T));
  for (auto& v : xt) v = normal(rng);

  didiv::LongPanel p;
  p.x.assign(static_cast<std::size_t>(spec.covariates), {});
  for (int j = 0; j < spec.covariates; ++j) p.x_names.push_back("x" + std::to_string(j + 1));
  if (spec.weights) p.weight.emplace();
  std::vector<double> bt(static_cast<std::size_t>(spec.T)), ft(static_cast<std::size_t>(spec.T));
  for (int t = 0; t < spec.T; ++t) {
    bt[static_cast<std::size_t>(t)] = normal(rng);
    ft[static_cast<std::size_t>(t)] = normal(rng);
  }
  for (int i = 0; i < spec.N; ++i) {
    const int e = spec.cohorts[static_cast<std::size_t>(cohort_of[static_cast<std::size_t>(i)])];
    const double a = normal(rng), c = normal(rng);
    const double take = 0.3 + 0.6 * uniform(rng);
    const double gain = 1.0 + normal(rng);
    const double w = 0.5 + 1.5 * uniform(rng);
    for (int t = 1; t <= spec.T; ++t) {
      const double z = e != kNever && t >= e ? 1.0 : 0.0;
      double d = a + bt[static_cast<std::size_t>(t - 1)] + take * z + 0.3 * spec.noise * normal(rng);
      double y = c + ft[static_cast<std::size_t>(t - 1)] + gain * d + spec.noise * normal(rng);
      for (int j = 0; j < spec.covariates; ++j) {
        const double x = normal(rng) + spec.x_loading * z * (j + 1) + 0.5 * xt[static_cast<std::size_t>(t - 1)];
        p.x[static_cast<std::size_t>(j)].push_back(x);
        y += 0.7 * x;
        d += 0.2 * x;
      }
      p.unit.push_back("u" + std::to_string(i));
      p.time.push_back(t);
      p.y.push_back(y);
      p.d.push_back(d);
      p.z.push_back(z);
      if (spec.weights) p.weight->push_back(w);
    }
  }
  return p;
}

// Random staggered design: distinct adoption dates in 1..T, optionally NEVER.
inline std::vector<int> random_cohorts(std::mt19937_64& rng, int T, int count, bool never) {
  // Dates start at 2: a cohort exposed from the first period carries no
  // instrument variation after removing unit effects.
  std::vector<int> dates(static_cast<std::size_t>(T - 1));
  for (int t = 0; t < T - 1; ++t) dates[static_cast<std::size_t>(t)] = t + 2;
  std::shuffle(dates.begin(), dates.end(), rng);
  const int exposed = std::min(T - 1, never ? count - 1 : count);
  std::vector<int> out(dates.begin(), dates.begin() + exposed);
  std::sort(out.begin(), out.end());
  if (never) out.push_back(kNever);
  return out;
}

// Drops a random fraction of rows, keeping at least one row per unit.
inline didiv::LongPanel drop_rows(std::mt19937_64& rng, const didiv::LongPanel& p, double fraction) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  didiv::LongPanel out;
  out.x.assign(p.x.size(), {});
  out.x_names = p.x_names;
  if (p.weight) out.weight.emplace();
  std::string last;
  for (std::size_t r = 0; r < p.unit.size(); ++r) {
    const bool first_of_unit = p.unit[r] != last;
    last = p.unit[r];
    if (!first_of_unit && uniform(rng) < fraction) continue;
    out.unit.push_back(p.unit[r]);
    out.time.push_back(p.time[r]);
    out.y.push_back(p.y[r]);
    out.d.push_back(p.d[r]);
    out.z.push_back(p.z[r]);
    for (std::size_t j = 0; j < p.x.size(); ++j) out.x[j].push_back(p.x[j][r]);
    if (p.weight) out.weight->push_back((*p.weight)[r]);
  }
  return out;
}

// Residual of v on unit and time dummies by dense least squares.
inline Eigen::VectorXd dummy_residual(const didiv::PanelDataset& panel, const Eigen::VectorXd& v) {
  const Eigen::Index n = panel.n_obs();
  const int N = panel.n_units(), T = panel.n_periods();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, N + T - 1);
  const auto ui = panel.unit_index();
  const auto ti = panel.time_index();
  for (Eigen::Index r = 0; r < n; ++r) {
    A(r, ui[static_cast<std::size_t>(r)]) = 1.0;
    const int t = ti[static_cast<std::size_t>(r)];
    if (t > 0) A(r, N + t - 1) = 1.0;
  }
  return v - A * A.colPivHouseholderQr().solve(v);
}

// Plain mean of v over a cohort's units in periods [a, b] (1-based, inclusive).
inline double raw_window_mean(const didiv::PanelDataset& panel, const Eigen::VectorXd& v,
                              const std::vector<int>& units, int a, int b) {
  double s = 0.0;
  int count = 0;
  const auto ui = panel.unit_index();
  const auto ti = panel.time_index();
  for (Eigen::Index r = 0; r < panel.n_obs(); ++r) {
    const int t = ti[static_cast<std::size_t>(r)] + 1;
    if (t < a || t > b) continue;
    if (std::find(units.begin(), units.end(), ui[static_cast<std::size_t>(r)]) == units.end()) continue;
    s += v[r];
    ++count;
  }
  return s / count;
}

struct BruteCell {
  double did_treatment = 0.0;
  double wald = 0.0;     // subsample IV ratio
  double variance = 0.0; // mean squared residual instrument on the subsample
  double fs_weight = 0.0;
  double iv_weight = 0.0;
};

// Per-cell weights rebuilt from subsample regressions: each cell keeps its two
// cohorts over the periods its windows span, residualizes Z on dummies there,
// and is scaled by (pair share * window length / T)^2. Unweighted panels only.
inline std::map<std::string, BruteCell> brute_force_cells(const didiv::PanelDataset& panel) {
  const int T = panel.n_periods();
  const int N = panel.n_units();
  // cohort of each unit by direct scan
  std::vector<int> first(static_cast<std::size_t>(N), kNever);
  const auto ui = panel.unit_index();
  const auto ti = panel.time_index();
  for (Eigen::Index r = 0; r < panel.n_obs(); ++r)
    if (panel.z()[r] == 1.0) {
      auto& f = first[static_cast<std::size_t>(ui[static_cast<std::size_t>(r)])];
      f = std::min(f, ti[static_cast<std::size_t>(r)] + 1);
    }
  std::map<int, std::vector<int>> members;
  for (int i = 0; i < N; ++i) members[first[static_cast<std::size_t>(i)]].push_back(i);

  auto key = [](int e) { return e == kNever ? std::string("never") : std::to_string(e); };
  std::map<std::string, BruteCell> out;
  auto cell = [&](const std::string& id, int treated, int control, int a, int b, int before_last) {
    if (a > before_last) return;  // empty pre-window
    std::vector<int> units = members[treated];
    units.insert(units.end(), members[control].begin(), members[control].end());
    std::sort(units.begin(), units.end());
    didiv::LongPanel l;
    const auto full = panel.to_long();
    for (std::size_t r = 0; r < full.unit.size(); ++r) {
      const int u = ui[r];
      const int t = ti[r] + 1;
      if (t < a || t > b || !std::binary_search(units.begin(), units.end(), u)) continue;
      l.unit.push_back(full.unit[r]);
      l.time.push_back(full.time[r]);
      l.y.push_back(full.y[r]);
      l.d.push_back(full.d[r]);
      l.z.push_back(full.z[r]);
    }
    const auto sub = didiv::PanelDataset::build(l);
    const Eigen::VectorXd zt = dummy_residual(sub, sub.z());
    BruteCell c;
    c.variance = zt.squaredNorm() / static_cast<double>(sub.n_obs());
    c.wald = zt.dot(sub.y()) / zt.dot(sub.d());
    c.did_treatment = zt.dot(sub.d()) / zt.squaredNorm();
    const double share = static_cast<double>(units.size()) / N * (b - a + 1) / static_cast<double>(T);
    c.fs_weight = share * share * c.variance;
    out[id] = c;
  };
  std::vector<int> dates;
  for (const auto& [e, m] : members)
    if (e != kNever) dates.push_back(e);
  const bool never = members.count(kNever) > 0;
  for (int k : dates) {
    if (never) cell("UE:" + key(k) + "-never", k, kNever, 1, T, k - 1);
    for (int l : dates) {
      if (l <= k) continue;
      cell("ENY:" + key(k) + "-" + key(l), k, l, 1, l - 1, k - 1);
      cell("EES:" + key(l) + "-" + key(k), l, k, k, T, l - 1);
    }
  }
  double total = 0.0;
  for (auto& [id, c] : out) total += c.fs_weight * c.did_treatment;
  for (auto& [id, c] : out) c.iv_weight = c.fs_weight * c.did_treatment / total;
  return out;
}

}  // namespace testing
