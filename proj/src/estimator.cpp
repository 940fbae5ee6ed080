#include "didiv/estimator.hpp"

#include <cmath>

#include "didiv/fixed_effects.hpp"

namespace didiv {

std::string_view spec_name(Spec s) noexcept {
  switch (s) {
    case Spec::plain: return "plain";
    case Spec::weighted: return "weighted";
    case Spec::covariates: break;
  }
  return "covariates";
}

double weak_threshold(const PanelDataset& panel, double factor) {
  return factor * (panel.d().cwiseAbs().maxCoeff() + 1.0);
}

namespace {

Eigen::VectorXd observation_weights(const PanelDataset& panel, const Eigen::VectorXd& unit_weights) {
  Eigen::VectorXd w(panel.n_obs());
  const auto ui = panel.unit_index();
  for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = unit_weights[ui[static_cast<std::size_t>(k)]];
  return w;
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      out.data(), m.rows(), m.cols()) = m;
  return out;
}

// Weighted inner product normalized by total observation mass.
double wcov(const Eigen::VectorXd& w, const Eigen::VectorXd& a, const Eigen::VectorXd& b, double mass) {
  return (w.array() * a.array() * b.array()).sum() / mass;
}

void check_weights(const Eigen::VectorXd& unit_weights, int n_units) {
  if (unit_weights.size() != n_units)
    fail(ErrorCode::InvalidWeights, "weight vector length does not match the number of units");
  if ((unit_weights.array() < 0.0).any() || !unit_weights.allFinite())
    fail(ErrorCode::InvalidWeights, "analytic weights must be finite and non-negative");
  if (!(unit_weights.array() > 0.0).any()) fail(ErrorCode::DegenerateWeights, "all analytic weights are zero");
}

IVEstimate ratio_estimate(const PanelDataset& panel, const Eigen::VectorXd& ztil,
                          const Eigen::VectorXd& obs_w, double weak_factor, Spec spec) {
  const double mass = obs_w.sum();
  IVEstimate est;
  est.spec = spec;
  est.var_z = wcov(obs_w, ztil, ztil, mass);
  if (!(ztil.cwiseAbs().maxCoeff() > 1e-12))
    fail(ErrorCode::NoVariation, "instrument has no variation after removing unit and time effects");
  est.c_dz = wcov(obs_w, ztil, panel.d(), mass);
  est.c_yz = wcov(obs_w, ztil, panel.y(), mass);
  est.first_stage = est.c_dz / est.var_z;
  est.reduced_form = est.c_yz / est.var_z;
  if (std::abs(est.c_dz) <= weak_threshold(panel, weak_factor))
    fail(ErrorCode::WeakDenominator, "first-stage covariance is numerically zero");
  est.beta_iv = est.c_yz / est.c_dz;
  return est;
}

}  // namespace

Eigen::VectorXd fe_residual(const PanelDataset& panel, const Eigen::VectorXd& v,
                            const Eigen::VectorXd& unit_weights) {
  if (panel.balanced()) return flatten(double_demean(panel.as_matrix(v), unit_weights));
  return residualize_two_way(v, panel.unit_index(), panel.time_index(), panel.n_units(),
                             panel.n_periods(), observation_weights(panel, unit_weights))
      .residual;
}

IVEstimate twfeiv_weighted(const PanelDataset& panel, const Eigen::VectorXd& unit_weights,
                           double weak_factor) {
  check_weights(unit_weights, panel.n_units());
  const Eigen::VectorXd ztil = fe_residual(panel, panel.z(), unit_weights);
  return ratio_estimate(panel, ztil, observation_weights(panel, unit_weights), weak_factor,
                        Spec::weighted);
}

IVEstimate twfeiv(const PanelDataset& panel, double weak_factor) {
  IVEstimate est = twfeiv_weighted(panel, Eigen::VectorXd::Ones(panel.n_units()), weak_factor);
  est.spec = Spec::plain;
  return est;
}

IVEstimate twfeiv_weighted(const PanelDataset& panel, double weak_factor) {
  return twfeiv_weighted(panel, panel.unit_weights(), weak_factor);
}

IVEstimate twfeiv_spec(const PanelDataset& panel, Spec spec, double weak_factor) {
  switch (spec) {
    case Spec::plain: return twfeiv(panel, weak_factor);
    case Spec::weighted: return twfeiv_weighted(panel, weak_factor);
    case Spec::covariates: break;
  }
  const CovariateIVEstimate c = twfeiv_covariates(panel, {weak_factor, Weighting::unweighted});
  IVEstimate est;
  est.beta_iv = c.beta_iv_x;
  est.first_stage = c.first_stage;
  est.reduced_form = c.reduced_form;
  est.c_dz = c.c_dz;
  est.c_yz = c.c_yz;
  est.var_z = c.c_dz / c.first_stage;
  est.spec = Spec::covariates;
  return est;
}

namespace {

std::optional<double> safe_ratio(double num, double den, double threshold) {
  if (std::abs(den) <= threshold) return std::nullopt;
  return num / den;
}

CovariateSplit split_residual(const PanelDataset& panel, const Eigen::VectorXd& unit_w,
                              const Eigen::VectorXd& obs_w, const Eigen::VectorXd& q,
                              const Eigen::VectorXd& p, double threshold) {
  const CohortPartition cp = infer_cohorts(panel);
  // Shares follow the supplied weights, not unit counts.
  std::vector<double> share(cp.size(), 0.0);
  double total = 0.0;
  for (int i = 0; i < panel.n_units(); ++i) {
    share[static_cast<std::size_t>(cp.cohort_of_unit[static_cast<std::size_t>(i)])] += unit_w[i];
    total += unit_w[i];
  }
  for (auto& s : share) s /= total;

  const Eigen::Index N = panel.n_units();
  const Eigen::Index T = panel.n_periods();
  auto between = [&](const Eigen::VectorXd& v, Eigen::MatrixXd& g) {
    const Eigen::MatrixXd m = cohort_period_means(panel, cp, v, unit_w);
    g = m.colwise() - m.rowwise().mean();
    for (std::size_t c = 0; c < cp.size(); ++c)
      if (share[c] == 0.0) g.row(static_cast<Eigen::Index>(c)).setZero();
    Eigen::RowVectorXd gbar = Eigen::RowVectorXd::Zero(T);
    for (std::size_t c = 0; c < cp.size(); ++c) gbar += share[c] * g.row(static_cast<Eigen::Index>(c));
    Eigen::VectorXd out(N * T);
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto c = static_cast<Eigen::Index>(cp.cohort_of_unit[static_cast<std::size_t>(i)]);
      out.segment(i * T, T) = (g.row(c) - gbar).transpose();
    }
    return out;
  };

  Eigen::MatrixXd gq, gp;
  const Eigen::VectorXd zb = between(q, gq);
  const Eigen::VectorXd pb = between(p, gp);
  const Eigen::MatrixXd qm = panel.as_matrix(q);
  const Eigen::VectorXd qbar_i = qm.rowwise().mean();
  Eigen::VectorXd zw(N * T);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto c = static_cast<Eigen::Index>(cp.cohort_of_unit[static_cast<std::size_t>(i)]);
    zw.segment(i * T, T) = (qm.row(i).array() - qbar_i[i] - gq.row(c).array()).transpose();
  }

  const double mass = obs_w.sum();
  CovariateSplit s;
  s.c_within = wcov(obs_w, zw, panel.d(), mass);
  s.c_between = wcov(obs_w, zb, panel.d(), mass);
  s.cy_within = wcov(obs_w, zw, panel.y(), mass);
  s.cy_between = wcov(obs_w, zb, panel.y(), mass);
  s.c_p_between = wcov(obs_w, pb, panel.d(), mass);
  const double cy_p_between = wcov(obs_w, pb, panel.y(), mass);

  // z_w identically zero when X varies only at cohort-time level.
  const bool within_zero = !(zw.cwiseAbs().maxCoeff() > 1e-12);
  s.omega = within_zero ? 0.0 : s.c_within / (s.c_within + s.c_between);
  if (!within_zero) s.beta_within = safe_ratio(s.cy_within, s.c_within, threshold);
  s.within_contribution = within_zero ? 0.0 : s.cy_within / (s.c_within + s.c_between);
  s.beta_between = safe_ratio(s.cy_between, s.c_between, threshold);
  s.beta_p_between = safe_ratio(cy_p_between, s.c_p_between, threshold);

  // Dual route through the plain estimator.
  const Eigen::VectorXd ztil = fe_residual(panel, panel.z(), unit_w);
  const double c_dz = wcov(obs_w, ztil, panel.d(), mass);
  const double c_yz = wcov(obs_w, ztil, panel.y(), mass);
  if (std::abs(c_dz) > threshold && std::abs(s.c_between) > threshold) {
    const double plain = c_yz / c_dz;
    const double p_term = s.beta_p_between ? s.c_p_between * *s.beta_p_between : cy_p_between;
    s.beta_between_dual = (c_dz * plain - p_term) / s.c_between;
  }
  return s;
}

}  // namespace

CovariateIVEstimate twfeiv_covariates(const PanelDataset& panel, EstimatorOptions options) {
  if (panel.n_covariates() == 0)
    fail(ErrorCode::SchemaError, "covariate-adjusted estimator requires at least one covariate");
  const Eigen::VectorXd unit_w = panel.weights_for(options.weighting);
  check_weights(unit_w, panel.n_units());
  const Eigen::VectorXd obs_w = observation_weights(panel, unit_w);
  const double threshold = weak_threshold(panel, options.weak_factor);

  const Eigen::Index n = panel.n_obs();
  const Eigen::Index p = panel.n_covariates();
  const Eigen::VectorXd ztil = fe_residual(panel, panel.z(), unit_w);
  Eigen::MatrixXd xtil(n, p);
  for (Eigen::Index j = 0; j < p; ++j) xtil.col(j) = fe_residual(panel, panel.x().col(j), unit_w);

  // Weighted least squares of Z~ on X~ through an SVD of sqrt(w) X~.
  const Eigen::VectorXd sw = obs_w.cwiseSqrt();
  const Eigen::MatrixXd xs = sw.asDiagonal() * xtil;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(xs, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double xnorm = (sw.asDiagonal() * panel.x()).norm();
  if (sv.size() == 0 || !(sv[0] > 1e-10 * std::max(1.0, xnorm)) || sv[sv.size() - 1] < 1e-10 * sv[0])
    fail(ErrorCode::CollinearCovariates,
         "covariates are collinear with each other or with the fixed effects");

  CovariateIVEstimate est;
  est.gamma = svd.solve((sw.array() * ztil.array()).matrix());
  const Eigen::VectorXd zres = ztil - xtil * est.gamma;
  const double mass = obs_w.sum();
  const double var_z = wcov(obs_w, zres, zres, mass);
  if (!(zres.cwiseAbs().maxCoeff() > 1e-12))
    fail(ErrorCode::NoVariation, "instrument is fully explained by the covariates");
  est.c_dz = wcov(obs_w, zres, panel.d(), mass);
  est.c_yz = wcov(obs_w, zres, panel.y(), mass);
  est.first_stage = est.c_dz / var_z;
  est.reduced_form = est.c_yz / var_z;
  if (std::abs(est.c_dz) <= threshold)
    fail(ErrorCode::WeakDenominator, "covariate-adjusted first-stage covariance is numerically zero");
  est.beta_iv_x = est.c_yz / est.c_dz;

  if (panel.balanced()) {
    const Eigen::VectorXd proj = panel.x() * est.gamma;
    const Eigen::VectorXd q = panel.z() - proj;
    est.split = split_residual(panel, unit_w, obs_w, q, proj, threshold);
    est.omega = est.split->omega;
    est.beta_within = est.split->beta_within;
    est.beta_between = est.split->beta_between;
  }
  return est;
}

double dummy_regression_oracle(const PanelDataset& panel, Spec spec) {
  if (static_cast<double>(panel.n_units()) * panel.n_periods() > 10000.0)
    fail(ErrorCode::OracleSingular, "dummy-regression oracle is limited to N*T <= 10000");
  Eigen::VectorXd unit_w = spec == Spec::weighted ? panel.unit_weights()
                                                  : Eigen::VectorXd::Ones(panel.n_units());
  const auto ui = panel.unit_index();
  const auto ti = panel.time_index();

  std::vector<Eigen::Index> rows;
  for (Eigen::Index k = 0; k < panel.n_obs(); ++k)
    if (unit_w[ui[static_cast<std::size_t>(k)]] > 0.0) rows.push_back(k);
  std::vector<int> unit_col(static_cast<std::size_t>(panel.n_units()), -1);
  int n_unit_cols = 0;
  for (auto k : rows) {
    auto& c = unit_col[static_cast<std::size_t>(ui[static_cast<std::size_t>(k)])];
    if (c < 0) c = n_unit_cols++;
  }
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index T = panel.n_periods();
  const Eigen::Index px = spec == Spec::covariates ? panel.n_covariates() : 0;
  const Eigen::Index q = n_unit_cols + (T - 1) + px;

  // Exogenous block: unit dummies, time dummies for periods 2..T, covariates.
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(m, q);
  Eigen::VectorXd y(m), d(m), z(m), s(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto k = rows[static_cast<std::size_t>(r)];
    const int i = ui[static_cast<std::size_t>(k)];
    const int t = ti[static_cast<std::size_t>(k)];
    W(r, unit_col[static_cast<std::size_t>(i)]) = 1.0;
    if (t > 0) W(r, n_unit_cols + t - 1) = 1.0;
    for (Eigen::Index j = 0; j < px; ++j) W(r, n_unit_cols + (T - 1) + j) = panel.x()(k, j);
    y[r] = panel.y()[k];
    d[r] = panel.d()[k];
    z[r] = panel.z()[k];
    s[r] = std::sqrt(unit_w[i]);
  }

  Eigen::MatrixXd A(m, q + 1), X(m, q + 1);
  A << z, W;
  X << d, W;
  A = s.asDiagonal() * A;
  X = s.asDiagonal() * X;
  const Eigen::VectorXd ys = s.asDiagonal() * y;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qa(A);
  if (qa.rank() < A.cols()) fail(ErrorCode::OracleSingular, "instrument design matrix is rank deficient");
  const Eigen::MatrixXd xhat = A * qa.solve(X);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qx(xhat);
  if (qx.rank() < xhat.cols()) fail(ErrorCode::OracleSingular, "projected regressor matrix is rank deficient");
  const Eigen::VectorXd coef = qx.solve(ys);
  return coef[0];
}

}  // namespace didiv
