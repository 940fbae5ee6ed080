#include <doctest.h>

#include <cstdlib>

#include "didiv/dgp.hpp"
#include "support.hpp"

using namespace didiv;
using testing::rel_gap;

namespace {

CohortSpec cohort(int e, int units, int T, double caet, double clatt) {
  const auto h = static_cast<std::size_t>(T - e + 1);
  return {e, units, std::vector<double>(h, caet), std::vector<double>(h, clatt)};
}

DgpConfig noiseless(int T, std::vector<CohortSpec> cohorts) {
  DgpConfig cfg;
  cfg.T = T;
  cfg.cohorts = std::move(cohorts);
  cfg.draw = ComplierDraw::quota;
  cfg.unit_fe_sd = 1.0;
  cfg.time_fe_sd = 1.0;
  cfg.trend_y = 0.3;
  return cfg;
}

ErrorCode code_of(const DgpConfig& cfg) {
  try {
    validate(cfg);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("config validation") {
  auto cfg = noiseless(6, {cohort(3, 10, 6, 0.5, 1.0), {kNever, 10, {}, {}}});
  CHECK_NOTHROW(validate(cfg));
  auto short_schedule = cfg;
  short_schedule.cohorts[0].caet.pop_back();
  CHECK(code_of(short_schedule) == ErrorCode::IncompleteSchedule);
  auto bad_share = cfg;
  bad_share.cohorts[0].caet[1] = 1.5;
  CHECK(code_of(bad_share) == ErrorCode::InvalidConfig);
  auto dup = cfg;
  dup.cohorts.push_back(cohort(3, 5, 6, 0.1, 1.0));
  CHECK(code_of(dup) == ErrorCode::InvalidConfig);
  auto tiny = cfg;
  tiny.T = 1;
  CHECK(code_of(tiny) == ErrorCode::InvalidConfig);
  auto ordered = cfg;
  ordered.support = TreatmentSupport::ordered;
  ordered.level_mix = {0.5, 0.4};
  ordered.level_response = {1.0, 1.0};
  CHECK(code_of(ordered) == ErrorCode::InvalidConfig);
  CHECK_THROWS_AS(preset("nope"), Error);
}

TEST_CASE("config JSON round trip and scalar schedules") {
  for (const auto& name : preset_names()) {
    const auto cfg = preset(name);
    const auto back = parse_config(config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));
    CHECK(generate(back).y() == generate(cfg).y());
  }
  const auto cfg = parse_config(R"({"T": 5, "complier_draw": "quota",
      "cohorts": [{"adoption": 2, "units": 4, "caet": 0.5, "clatt": [1, 2, 3, 4]},
                  {"adoption": "never", "units": 4}]})");
  CHECK(cfg.cohorts[0].caet.size() == 4);
  CHECK(cfg.cohorts[0].clatt[3] == 4.0);
  CHECK(cfg.cohorts[1].adoption == kNever);
  try {
    (void)parse_config(R"({"T": 5, "cohorts": [{"adoption": 2, "units": 4, "caet": [0.5], "clatt": 1}]})");
    FAIL("expected IncompleteSchedule");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IncompleteSchedule);
  }
  CHECK_THROWS_AS(parse_config("{not json"), Error);
}

TEST_CASE("generation is deterministic and sized by the config") {
  const auto cfg = preset("figure1");
  const auto p = generate(cfg);
  CHECK(p.n_obs() == 300 * 100);
  CHECK(p.balanced());
  CHECK(generate(cfg).y() == p.y());
  const auto r = preset("random-adoption");
  CHECK(generate(r, 1).y() != generate(r, 2).y());
  CHECK(replication_seed(1, 0) != replication_seed(1, 1));
  CHECK(replication_seed(1, 0) != replication_seed(2, 0));
}

TEST_CASE("quota draws hit the complier share exactly") {
  const auto cfg = noiseless(8, {cohort(3, 40, 8, 0.25, 2.0), cohort(6, 40, 8, 0.6, 1.0), {kNever, 40, {}, {}}});
  const auto p = generate(cfg);
  const auto cp = infer_cohorts(p);
  const auto m = cohort_means(p, cp);
  // D carries unit and time effects of zero sd here, so means are shares.
  CHECK(m.d(0, 4) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(m.d(1, 7) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(m.d(1, 2) == 0.0);
}

TEST_CASE("oracle matches the sample estimate on exact noiseless designs") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pct(5, 95);
  std::uniform_real_distribution<double> eff(-3.0, 6.0);
  for (int rep = 0; rep < 25; ++rep) {
    const int T = 5 + rep % 8;
    const auto dates = testing::random_cohorts(rng, T, 2 + rep % 4, rep % 3 != 0);
    DgpConfig cfg;
    cfg.T = T;
    cfg.draw = ComplierDraw::quota;
    cfg.unit_fe_sd = 1.0;
    cfg.time_fe_sd = 1.0;
    for (int e : dates) {
      CohortSpec c{e, 100, {}, {}};
      if (e != kNever)
        for (int t = e; t <= T; ++t) {
          c.caet.push_back(pct(rng) / 100.0);
          c.clatt.push_back(eff(rng));
        }
      cfg.cohorts.push_back(c);
    }
    EstimandOracle o;
    try {
      o = oracle_estimand(cfg);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::OracleDegenerate);
      continue;
    }
    CHECK(rel_gap(o.denominator, o.denominator_direct) < 1e-10);
    const auto dec = decompose(generate(cfg));
    CHECK(rel_gap(dec.beta_iv, o.estimand) < 1e-9);
    CHECK(rel_gap(dec.c_dz, o.denominator) < 1e-9);
    for (const auto& w : o.weights) {
      const auto* c = dec.find(w.kind, w.treated, w.control);
      REQUIRE(c);
      CHECK(std::abs(c->iv_weight - w.iv_weight) < 1e-9);
    }
  }
}

TEST_CASE("ordered treatment oracle") {
  auto cfg = noiseless(8, {cohort(3, 200, 8, 0.5, 2.0), cohort(5, 200, 8, 0.3, 1.5), {kNever, 200, {}, {}}});
  cfg.support = TreatmentSupport::ordered;
  cfg.level_mix = {0.5, 0.5};
  cfg.level_response = {1.0, 0.5};
  const auto o = oracle_estimand(cfg);
  CHECK(o.target_label == "CACRT");
  CHECK(o.stable);
  CHECK(std::abs(o.delta_clatt) < 1e-12);
  const auto dec = decompose(generate(cfg));
  CHECK(rel_gap(dec.beta_iv, o.estimand) < 1e-9);
  // Per-unit-of-treatment response: clatt * (S1 r1 + S2 r2) / (S1 + S2).
  const double kappa = (1.0 * 1.0 + 0.5 * 0.5) / 1.5;
  for (const auto& c : dec.components)
    if (c.cell.kind == CellKind::UnexposedExposed && c.cell.treated == 3)
      CHECK(*c.wald_did == doctest::Approx(2.0 * kappa).epsilon(1e-10));
}

TEST_CASE("stability removes the bias term and dynamics create it") {
  const auto stable = oracle_estimand(preset("lemma3-stable"));
  CHECK(stable.stable);
  CHECK(stable.delta_clatt == 0.0);
  double s = 0.0;
  for (const auto& [e, w] : stable.cohort_weights) {
    CHECK(w > 0.0);
    s += w;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

  const auto neg = oracle_estimand(preset("negative-weight"));
  CHECK_FALSE(neg.stable);
  CHECK(std::abs(neg.delta_clatt) > 0.01);
  bool negative = false;
  for (const auto& w : neg.weights)
    if (w.kind == CellKind::ExposedExposedShift && w.iv_weight < 0.0) negative = true;
  CHECK(negative);
  CHECK(rel_gap(neg.estimand, neg.wclatt - neg.delta_clatt) < 1e-14);
}

TEST_CASE("finite-sample gap shrinks with N") {
  auto gap = [](int units) {
    auto cfg = noiseless(7, {cohort(3, units, 7, 0.123, 2.0), cohort(5, units, 7, 0.377, 5.0), {kNever, units, {}, {}}});
    return std::abs(decompose(generate(cfg)).beta_iv - oracle_estimand(cfg).estimand);
  };
  const double small = gap(30), large = gap(300);
  CHECK(small > 1e-6);
  CHECK(large < small / 3.0);
}

TEST_CASE("random adoption targets the pooled effect") {
  const auto cfg = preset("random-adoption");
  const auto o = oracle_estimand(cfg);
  CHECK(o.target_label == "LATE");
  const auto p = generate(cfg);
  const auto cp = infer_cohorts(p);
  CHECK(cp.size() == 3);
  CHECK(cp.members[0].size() != 500);
}

TEST_CASE("Monte Carlo is independent of the thread count") {
  auto cfg = preset("lemma3-stable");
  for (auto& c : cfg.cohorts) c.units = 60;
  ::setenv("DIDIV_THREADS", "1", 1);
  CHECK(thread_budget() == 1);
  const auto one = monte_carlo(cfg, 12);
  ::setenv("DIDIV_THREADS", "4", 1);
  CHECK(thread_budget() == 4);
  const auto four = monte_carlo(cfg, 12);
  ::unsetenv("DIDIV_THREADS");
  CHECK(one.estimates == four.estimates);
  CHECK(one.used == 12);
  REQUIRE(one.oracle_estimand);
  CHECK(one.cells.size() == 9);
  CHECK(one.mc_se > 0.0);
}
