#include <doctest.h>

#include <cstring>

#include "didiv/estimator.hpp"
#include "support.hpp"

using namespace didiv;
using testing::rel_gap;

namespace {

PanelDataset random_panel(std::uint64_t seed, int N, int T, std::vector<int> cohorts, bool weights = false,
                          int covariates = 0) {
  std::mt19937_64 rng(seed);
  testing::RandomPanelSpec spec;
  spec.N = N;
  spec.T = T;
  spec.cohorts = std::move(cohorts);
  spec.weights = weights;
  spec.covariates = covariates;
  return PanelDataset::build(testing::random_long(rng, spec));
}

bool bitwise_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("two-period two-group estimate is the Wald-DID ratio") {
  const auto p = random_panel(1, 8, 2, {2, kNever});
  const auto cp = infer_cohorts(p);
  auto mean = [&](const Eigen::VectorXd& v, std::size_t k, int t) {
    return testing::raw_window_mean(p, v, cp.members[k], t, t);
  };
  const double dy = (mean(p.y(), 0, 2) - mean(p.y(), 0, 1)) - (mean(p.y(), 1, 2) - mean(p.y(), 1, 1));
  const double dd = (mean(p.d(), 0, 2) - mean(p.d(), 0, 1)) - (mean(p.d(), 1, 2) - mean(p.d(), 1, 1));
  CHECK(rel_gap(twfeiv(p).beta_iv, dy / dd) < 1e-12);
}

TEST_CASE("FWL estimates match the dummy-regression oracle") {
  for (std::uint64_t s = 0; s < 8; ++s) {
    const auto p = random_panel(100 + s, 6 + 3 * static_cast<int>(s), 4 + static_cast<int>(s % 3), {2, 3, kNever},
                                true, 2);
    const auto plain = twfeiv(p);
    CHECK(rel_gap(plain.beta_iv, dummy_regression_oracle(p, Spec::plain)) < 1e-8);
    CHECK(rel_gap(twfeiv_weighted(p).beta_iv, dummy_regression_oracle(p, Spec::weighted)) < 1e-8);
    CHECK(rel_gap(twfeiv_covariates(p).beta_iv_x, dummy_regression_oracle(p, Spec::covariates)) < 1e-8);
    CHECK(rel_gap(plain.beta_iv, plain.reduced_form / plain.first_stage) < 1e-10);
    CHECK(rel_gap(plain.first_stage, plain.c_dz / plain.var_z) < 1e-10);
  }
}

TEST_CASE("unbalanced panels go through alternating projections") {
  std::mt19937_64 rng(77);
  testing::RandomPanelSpec spec;
  spec.N = 30;
  spec.T = 6;
  spec.cohorts = {2, 4, kNever};
  spec.weights = true;
  const auto p = PanelDataset::build(testing::drop_rows(rng, testing::random_long(rng, spec), 0.1));
  REQUIRE_FALSE(p.balanced());
  CHECK(rel_gap(twfeiv(p).beta_iv, dummy_regression_oracle(p, Spec::plain)) < 1e-8);
  CHECK(rel_gap(twfeiv_weighted(p).beta_iv, dummy_regression_oracle(p, Spec::weighted)) < 1e-8);
}

TEST_CASE("weighted estimator with unit weights is bitwise the plain one") {
  const auto p = random_panel(5, 20, 6, {2, 4, kNever});
  const auto a = twfeiv(p);
  const auto b = twfeiv_weighted(p, Eigen::VectorXd::Ones(p.n_units()));
  CHECK(bitwise_equal(a.beta_iv, b.beta_iv));
  CHECK(bitwise_equal(a.c_dz, b.c_dz));

  const auto pw = random_panel(6, 20, 6, {2, 4, kNever}, true);
  const Eigen::VectorXd w = pw.unit_weights();
  CHECK(rel_gap(twfeiv_weighted(pw, w).beta_iv, twfeiv_weighted(pw, (2.0 * w).eval()).beta_iv) < 1e-13);
  CHECK_THROWS_AS(twfeiv_weighted(pw, Eigen::VectorXd::Zero(pw.n_units())), Error);
}

TEST_CASE("translation invariance and scale equivariance") {
  const auto p = random_panel(9, 15, 5, {2, 3, kNever});
  const auto base = twfeiv(p);
  Eigen::VectorXd y = p.y();
  for (Eigen::Index r = 0; r < y.size(); ++r)
    y[r] += 3.0 * p.unit_index()[static_cast<std::size_t>(r)] - 2.0 * p.time_index()[static_cast<std::size_t>(r)];
  CHECK(rel_gap(twfeiv(p.with_values(Variable::Y, y)).beta_iv, base.beta_iv) < 1e-9);
  Eigen::VectorXd d = p.d().array() + 0.5 * p.unit_index().size();
  CHECK(rel_gap(twfeiv(p.with_values(Variable::D, d)).beta_iv, base.beta_iv) < 1e-9);

  const auto ys = twfeiv(p.with_values(Variable::Y, (4.0 * p.y()).eval()));
  CHECK(rel_gap(ys.beta_iv, 4.0 * base.beta_iv) < 1e-12);
  CHECK(rel_gap(ys.reduced_form, 4.0 * base.reduced_form) < 1e-12);
  const auto ds = twfeiv(p.with_values(Variable::D, (4.0 * p.d()).eval()));
  CHECK(rel_gap(ds.beta_iv, base.beta_iv / 4.0) < 1e-12);
  CHECK(rel_gap(ds.first_stage, 4.0 * base.first_stage) < 1e-12);
}

TEST_CASE("covariates orthogonal to the instrument leave the estimate unchanged") {
  // Covariate varies only within a period block unrelated to Z after demeaning:
  // use Z~ orthogonal noise by construction.
  auto l = random_panel(12, 24, 6, {3, kNever}).to_long();
  const auto p0 = PanelDataset::build(l);
  const Eigen::VectorXd zt = fe_residual(p0, p0.z(), Eigen::VectorXd::Ones(p0.n_units()));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Eigen::VectorXd x(p0.n_obs());
  for (auto& v : x) v = normal(rng);
  x = fe_residual(p0, x, Eigen::VectorXd::Ones(p0.n_units()));
  x -= zt * (zt.dot(x) / zt.dot(zt));  // exact orthogonality to Z~
  l = p0.to_long();
  l.x = {std::vector<double>(x.data(), x.data() + x.size())};
  l.x_names = {"x"};
  const auto p = PanelDataset::build(l);
  const auto c = twfeiv_covariates(p);
  CHECK(c.gamma.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(rel_gap(c.beta_iv_x, twfeiv(p).beta_iv) < 1e-8);
}

TEST_CASE("fixed-effect covariates are collinear") {
  auto l = random_panel(4, 10, 4, {2, kNever}).to_long();
  std::vector<double> x;
  for (std::size_t r = 0; r < l.unit.size(); ++r) x.push_back(static_cast<double>(l.time[r]) * 0.5 + (l.unit[r].size() % 3));
  l.x = {x};
  l.x_names = {"fe"};
  try {
    (void)twfeiv_covariates(PanelDataset::build(l));
    FAIL("expected CollinearCovariates");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CollinearCovariates);
  }
}

TEST_CASE("covariate split recombines the covariate-adjusted estimate") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto p = random_panel(300 + s, 40, 7, {2, 4, 6, kNever}, false, 2);
    const auto c = twfeiv_covariates(p);
    REQUIRE(c.split);
    REQUIRE(c.beta_within);
    REQUIRE(c.beta_between);
    CHECK(rel_gap(c.omega * *c.beta_within + (1.0 - c.omega) * *c.beta_between, c.beta_iv_x) < 1e-8);
    CHECK(rel_gap(c.split->within_contribution, c.omega * *c.beta_within) < 1e-8);
    REQUIRE(c.split->beta_between_dual);
    CHECK(rel_gap(*c.split->beta_between_dual, *c.beta_between) < 1e-8);
  }
}

TEST_CASE("degenerate inputs raise typed errors") {
  auto l = random_panel(2, 10, 4, {2, kNever}).to_long();
  for (std::size_t r = 0; r < l.d.size(); ++r) l.d[r] = 1.0;
  try {
    (void)twfeiv(PanelDataset::build(l));
    FAIL("expected WeakDenominator");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WeakDenominator);
  }
  // Every unit adopts in period 1: Z is absorbed by the unit effects.
  auto all = random_panel(2, 10, 4, {1}).to_long();
  try {
    (void)twfeiv(PanelDataset::build(all));
    FAIL("expected NoVariation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoVariation);
  }
  CHECK_THROWS_AS(dummy_regression_oracle(random_panel(2, 200, 60, {5, kNever}), Spec::plain), Error);
}
