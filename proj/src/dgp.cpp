#include "didiv/dgp.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <random>
#include <thread>

namespace didiv {

using nlohmann::json;

int DgpConfig::total_units() const noexcept {
  int n = 0;
  for (const auto& c : cohorts) n += c.units;
  return n;
}

bool DgpConfig::noiseless() const noexcept {
  if (draw != ComplierDraw::quota || noise_sd_d != 0.0 || noise_sd_y != 0.0 || random_adoption) return false;
  return std::all_of(covariates.begin(), covariates.end(),
                     [](const CovariateSpec& c) { return c.effect_y == 0.0 && c.effect_d == 0.0; });
}

namespace {

std::string date_text(int e) { return e == kNever ? std::string("never") : std::to_string(e); }

double mean_level(const DgpConfig& cfg) {
  if (cfg.support == TreatmentSupport::binary) return 1.0;
  double m = 0.0;
  for (std::size_t j = 0; j < cfg.level_mix.size(); ++j) m += static_cast<double>(j + 1) * cfg.level_mix[j];
  return m;
}

// Ratio turning the clatt schedule into the per-unit-of-treatment response.
double response_scale(const DgpConfig& cfg) {
  if (cfg.support == TreatmentSupport::binary) return 1.0;
  double num = 0.0, den = 0.0, tail = 0.0;
  for (std::size_t j = cfg.level_mix.size(); j-- > 0;) {
    tail += cfg.level_mix[j];  // S_j = P(level >= j+1)
    num += tail * cfg.level_response[j];
    den += tail;
  }
  return num / den;
}

}  // namespace

void validate(const DgpConfig& cfg) {
  if (cfg.T < 2) fail(ErrorCode::InvalidConfig, "T must be at least 2");
  if (cfg.cohorts.empty()) fail(ErrorCode::InvalidConfig, "config lists no cohorts");
  std::vector<int> seen;
  for (const auto& c : cfg.cohorts) {
    if (c.units <= 0) fail(ErrorCode::InvalidConfig, "cohort " + date_text(c.adoption) + " has no units");
    if (c.adoption != kNever && (c.adoption < 1 || c.adoption > cfg.T))
      fail(ErrorCode::InvalidConfig, "adoption date " + std::to_string(c.adoption) + " outside 1..T");
    if (std::find(seen.begin(), seen.end(), c.adoption) != seen.end())
      fail(ErrorCode::InvalidConfig, "adoption date " + date_text(c.adoption) + " listed twice");
    seen.push_back(c.adoption);
    if (c.adoption == kNever) continue;
    const auto horizon = static_cast<std::size_t>(cfg.T - c.adoption + 1);
    if (c.caet.size() < horizon || c.clatt.size() < horizon)
      fail(ErrorCode::IncompleteSchedule, "schedule for cohort " + std::to_string(c.adoption) +
                                              " must cover relative periods 0.." +
                                              std::to_string(horizon - 1));
    for (std::size_t l = 0; l < horizon; ++l) {
      if (!(c.caet[l] >= 0.0 && c.caet[l] <= 1.0))
        fail(ErrorCode::InvalidConfig, "complier share outside [0,1] for cohort " + std::to_string(c.adoption));
      if (!std::isfinite(c.clatt[l])) fail(ErrorCode::InvalidConfig, "non-finite effect in schedule");
    }
  }
  if (cfg.support == TreatmentSupport::ordered) {
    if (cfg.level_mix.empty() || cfg.level_mix.size() != cfg.level_response.size())
      fail(ErrorCode::InvalidConfig, "ordered treatment needs level mix and response of equal length");
    double s = 0.0;
    for (double p : cfg.level_mix) {
      if (p < 0.0) fail(ErrorCode::InvalidConfig, "negative level probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) fail(ErrorCode::InvalidConfig, "level mix must sum to one");
  }
  for (double v : {cfg.unit_fe_sd, cfg.time_fe_sd, cfg.d_unit_fe_sd, cfg.d_time_fe_sd, cfg.noise_sd_d, cfg.noise_sd_y})
    if (!(v >= 0.0)) fail(ErrorCode::InvalidConfig, "standard deviations must be non-negative");
  if (cfg.weight_sd && !(*cfg.weight_sd >= 0.0)) fail(ErrorCode::InvalidConfig, "weight sd must be non-negative");
}

std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t replication) noexcept {
  // splitmix64 finalizer over a combined key
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + replication + 0xD1B54A32D192ED03ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

PanelDataset generate(const DgpConfig& cfg) { return generate(cfg, cfg.seed); }

PanelDataset generate(const DgpConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const int T = cfg.T;
  const int N = cfg.total_units();
  const int K = static_cast<int>(cfg.cohorts.size());

  // Cohort per unit.
  std::vector<int> spec_of(static_cast<std::size_t>(N));
  if (cfg.random_adoption) {
    std::vector<double> p;
    for (const auto& c : cfg.cohorts) p.push_back(c.units);
    std::discrete_distribution<int> pick(p.begin(), p.end());
    for (auto& s : spec_of) s = pick(rng);
  } else {
    std::size_t u = 0;
    for (int c = 0; c < K; ++c)
      for (int j = 0; j < cfg.cohorts[static_cast<std::size_t>(c)].units; ++j) spec_of[u++] = c;
  }

  std::vector<double> latent(static_cast<std::size_t>(N)), level_draw(static_cast<std::size_t>(N));
  std::vector<double> fe_y(static_cast<std::size_t>(N)), fe_d(static_cast<std::size_t>(N)), weight(static_cast<std::size_t>(N), 1.0);
  for (int i = 0; i < N; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    latent[ii] = uniform(rng);
    level_draw[ii] = uniform(rng);
    fe_y[ii] = cfg.unit_fe_sd * normal(rng);
    fe_d[ii] = cfg.d_unit_fe_sd * normal(rng);
    if (cfg.weight_sd) weight[ii] = std::exp(*cfg.weight_sd * normal(rng));
  }
  std::vector<double> lambda(static_cast<std::size_t>(T)), zeta(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    lambda[static_cast<std::size_t>(t)] = cfg.time_fe_sd * normal(rng);
    zeta[static_cast<std::size_t>(t)] = cfg.d_time_fe_sd * normal(rng);
  }
  // Cohort-level covariate shocks, K x T per covariate.
  std::vector<std::vector<double>> cohort_shock(cfg.covariates.size());
  for (std::size_t j = 0; j < cfg.covariates.size(); ++j) {
    cohort_shock[j].resize(static_cast<std::size_t>(K * T));
    for (auto& v : cohort_shock[j]) v = normal(rng);
  }

  // Rank of each unit within its cohort by the latent draw.
  std::vector<int> rank(static_cast<std::size_t>(N));
  std::vector<int> cohort_size(static_cast<std::size_t>(K), 0);
  {
    std::vector<std::vector<int>> members(static_cast<std::size_t>(K));
    for (int i = 0; i < N; ++i) members[static_cast<std::size_t>(spec_of[static_cast<std::size_t>(i)])].push_back(i);
    for (int c = 0; c < K; ++c) {
      auto& m = members[static_cast<std::size_t>(c)];
      std::stable_sort(m.begin(), m.end(), [&](int a, int b) {
        return latent[static_cast<std::size_t>(a)] < latent[static_cast<std::size_t>(b)];
      });
      for (std::size_t r = 0; r < m.size(); ++r) rank[static_cast<std::size_t>(m[r])] = static_cast<int>(r);
      cohort_size[static_cast<std::size_t>(c)] = static_cast<int>(m.size());
    }
  }

  const std::size_t J = cfg.support == TreatmentSupport::binary ? 1 : cfg.level_mix.size();
  const std::vector<double> mix = cfg.support == TreatmentSupport::binary ? std::vector<double>{1.0} : cfg.level_mix;
  const std::vector<double> resp = cfg.support == TreatmentSupport::binary ? std::vector<double>{1.0} : cfg.level_response;
  std::vector<double> cum(J);
  std::partial_sum(mix.begin(), mix.end(), cum.begin());

  LongPanel rows;
  const auto n = static_cast<std::size_t>(N) * static_cast<std::size_t>(T);
  rows.unit.reserve(n);
  rows.time.reserve(n);
  rows.y.reserve(n);
  rows.d.reserve(n);
  rows.z.reserve(n);
  rows.x.assign(cfg.covariates.size(), {});
  for (const auto& c : cfg.covariates) rows.x_names.push_back(c.name);
  if (cfg.weight_sd) rows.weight.emplace();

  for (int i = 0; i < N; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const int c = spec_of[ii];
    const CohortSpec& spec = cfg.cohorts[static_cast<std::size_t>(c)];
    const std::string id = std::to_string(i + 1);
    for (int t = 1; t <= T; ++t) {
      const bool exposed = spec.adoption != kNever && t >= spec.adoption;
      int level = 0;
      double effect = 0.0;
      if (exposed) {
        const auto l = static_cast<std::size_t>(t - spec.adoption);
        const double share = spec.caet[l];
        bool complier = false;
        double position = 0.0;  // in [0,1) among compliers
        if (cfg.draw == ComplierDraw::quota) {
          const long long m = std::llround(share * cohort_size[static_cast<std::size_t>(c)]);
          complier = rank[ii] < m;
          if (complier) position = (rank[ii] + 0.5) / static_cast<double>(m);
        } else {
          complier = latent[ii] < share;
          position = level_draw[ii];
        }
        if (complier) {
          level = static_cast<int>(J);
          for (std::size_t j = 0; j < J; ++j)
            if (position < cum[j]) {
              level = static_cast<int>(j + 1);
              break;
            }
          double steps = 0.0;
          for (int j = 0; j < level; ++j) steps += resp[static_cast<std::size_t>(j)];
          effect = spec.clatt[l] * steps;
        }
      }
      const double z = exposed ? 1.0 : 0.0;
      double d = fe_d[ii] + zeta[static_cast<std::size_t>(t - 1)] + cfg.trend_d * t + level;
      double y = fe_y[ii] + lambda[static_cast<std::size_t>(t - 1)] + cfg.trend_y * t + effect;
      if (cfg.noise_sd_d > 0.0) d += cfg.noise_sd_d * normal(rng);
      if (cfg.noise_sd_y > 0.0) y += cfg.noise_sd_y * normal(rng);
      for (std::size_t j = 0; j < cfg.covariates.size(); ++j) {
        const CovariateSpec& cs = cfg.covariates[j];
        const double base = cs.level == CovariateLevel::unit
                                ? normal(rng)
                                : cohort_shock[j][static_cast<std::size_t>(c * T + t - 1)];
        const double x = cs.sd * base + cs.loading_z * z;
        rows.x[j].push_back(x);
        y += cs.effect_y * x;
        d += cs.effect_d * x;
      }
      rows.unit.push_back(id);
      rows.time.push_back(t);
      rows.y.push_back(y);
      rows.d.push_back(d);
      rows.z.push_back(z);
      if (cfg.weight_sd) rows.weight->push_back(weight[ii]);
    }
  }
  return PanelDataset::build(rows);
}

// ---------------------------------------------------------------- config I/O

namespace {

std::vector<double> schedule_from(const json& j, int horizon, const std::string& what) {
  if (j.is_number()) return std::vector<double>(static_cast<std::size_t>(std::max(horizon, 0)), j.get<double>());
  if (j.is_array()) return j.get<std::vector<double>>();
  fail(ErrorCode::InvalidConfig, what + " must be a number or an array");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() || it->is_null() ? fallback : it->get<T>();
}

}  // namespace

DgpConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  try {
    DgpConfig cfg;
    cfg.name = get_or<std::string>(j, "name", "custom");
    cfg.T = j.at("T").get<int>();
    cfg.seed = get_or<std::uint64_t>(j, "seed", 1);
    const std::string treatment = get_or<std::string>(j, "treatment", "binary");
    if (treatment == "ordered") cfg.support = TreatmentSupport::ordered;
    else if (treatment != "binary") fail(ErrorCode::InvalidConfig, "treatment must be binary or ordered");
    if (j.contains("levels")) {
      cfg.level_mix = j["levels"].at("mix").get<std::vector<double>>();
      cfg.level_response = j["levels"].at("response").get<std::vector<double>>();
    }
    const std::string draw = get_or<std::string>(j, "complier_draw", "bernoulli");
    if (draw == "quota") cfg.draw = ComplierDraw::quota;
    else if (draw != "bernoulli") fail(ErrorCode::InvalidConfig, "complier_draw must be quota or bernoulli");
    for (const auto& c : j.at("cohorts")) {
      CohortSpec cs;
      const auto& a = c.at("adoption");
      cs.adoption = a.is_string() ? (a.get<std::string>() == "never" ? kNever : -1) : a.get<int>();
      if (cs.adoption == -1) fail(ErrorCode::InvalidConfig, "adoption must be an integer or \"never\"");
      cs.units = c.at("units").get<int>();
      if (cs.adoption != kNever) {
        const int horizon = cfg.T - cs.adoption + 1;
        if (!c.contains("caet") || !c.contains("clatt"))
          fail(ErrorCode::IncompleteSchedule, "cohort " + std::to_string(cs.adoption) + " lacks a schedule");
        cs.caet = schedule_from(c["caet"], horizon, "caet");
        cs.clatt = schedule_from(c["clatt"], horizon, "clatt");
      }
      cfg.cohorts.push_back(std::move(cs));
    }
    if (j.contains("fixed_effects")) {
      const auto& f = j["fixed_effects"];
      cfg.unit_fe_sd = get_or(f, "unit_sd", 0.0);
      cfg.time_fe_sd = get_or(f, "time_sd", 0.0);
      cfg.d_unit_fe_sd = get_or(f, "d_unit_sd", 0.0);
      cfg.d_time_fe_sd = get_or(f, "d_time_sd", 0.0);
    }
    if (j.contains("noise")) {
      cfg.noise_sd_d = get_or(j["noise"], "d_sd", 0.0);
      cfg.noise_sd_y = get_or(j["noise"], "y_sd", 0.0);
    }
    if (j.contains("trends")) {
      cfg.trend_y = get_or(j["trends"], "y", 0.0);
      cfg.trend_d = get_or(j["trends"], "d", 0.0);
    }
    if (j.contains("weights")) cfg.weight_sd = j["weights"].at("lognormal_sd").get<double>();
    if (j.contains("covariates"))
      for (const auto& c : j["covariates"]) {
        CovariateSpec cs;
        cs.name = get_or<std::string>(c, "name", "x" + std::to_string(cfg.covariates.size() + 1));
        cs.sd = get_or(c, "sd", 1.0);
        const std::string level = get_or<std::string>(c, "level", "unit");
        if (level == "cohort") cs.level = CovariateLevel::cohort;
        else if (level != "unit") fail(ErrorCode::InvalidConfig, "covariate level must be unit or cohort");
        cs.loading_z = get_or(c, "loading_z", 0.0);
        cs.effect_y = get_or(c, "effect_y", 0.0);
        cs.effect_d = get_or(c, "effect_d", 0.0);
        cfg.covariates.push_back(cs);
      }
    cfg.random_adoption = get_or(j, "random_adoption", false);
    validate(cfg);
    return cfg;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("malformed config: ") + e.what());
  }
}

std::string config_to_json(const DgpConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["T"] = cfg.T;
  j["seed"] = cfg.seed;
  j["treatment"] = cfg.support == TreatmentSupport::binary ? "binary" : "ordered";
  if (cfg.support == TreatmentSupport::ordered) j["levels"] = {{"mix", cfg.level_mix}, {"response", cfg.level_response}};
  j["complier_draw"] = cfg.draw == ComplierDraw::quota ? "quota" : "bernoulli";
  j["cohorts"] = json::array();
  for (const auto& c : cfg.cohorts) {
    json cj;
    if (c.adoption == kNever) cj["adoption"] = "never";
    else cj["adoption"] = c.adoption;
    cj["units"] = c.units;
    if (c.adoption != kNever) {
      cj["caet"] = c.caet;
      cj["clatt"] = c.clatt;
    }
    j["cohorts"].push_back(cj);
  }
  j["fixed_effects"] = {{"unit_sd", cfg.unit_fe_sd}, {"time_sd", cfg.time_fe_sd},
                        {"d_unit_sd", cfg.d_unit_fe_sd}, {"d_time_sd", cfg.d_time_fe_sd}};
  j["noise"] = {{"d_sd", cfg.noise_sd_d}, {"y_sd", cfg.noise_sd_y}};
  j["trends"] = {{"y", cfg.trend_y}, {"d", cfg.trend_d}};
  if (cfg.weight_sd) j["weights"] = {{"lognormal_sd", *cfg.weight_sd}};
  if (!cfg.covariates.empty()) {
    j["covariates"] = json::array();
    for (const auto& c : cfg.covariates)
      j["covariates"].push_back({{"name", c.name}, {"sd", c.sd},
                                 {"level", c.level == CovariateLevel::unit ? "unit" : "cohort"},
                                 {"loading_z", c.loading_z}, {"effect_y", c.effect_y}, {"effect_d", c.effect_d}});
  }
  j["random_adoption"] = cfg.random_adoption;
  return j.dump(2);
}

std::vector<std::string> preset_names() {
  return {"figure1", "lemma3-stable", "negative-weight", "random-adoption"};
}

DgpConfig preset(const std::string& name) {
  auto stable = [](int e, int units, int T, double caet, double clatt) {
    const auto h = static_cast<std::size_t>(T - e + 1);
    return CohortSpec{e, units, std::vector<double>(h, caet), std::vector<double>(h, clatt)};
  };
  DgpConfig cfg;
  cfg.name = name;
  if (name == "figure1") {
    cfg.T = 100;
    cfg.cohorts = {stable(34, 100, 100, 0.15, 60.0), stable(80, 100, 100, 0.10, 100.0), {kNever, 100, {}, {}}};
    cfg.draw = ComplierDraw::quota;
  } else if (name == "lemma3-stable") {
    cfg.T = 8;
    cfg.cohorts = {stable(3, 600, 8, 0.5, 2.0), stable(5, 600, 8, 0.4, 4.0), stable(7, 600, 8, 0.3, 6.0),
                   {kNever, 600, {}, {}}};
    cfg.unit_fe_sd = 1.0;
    cfg.time_fe_sd = 1.0;
    cfg.noise_sd_y = 1.0;
    cfg.weight_sd = 0.5;
    cfg.covariates = {CovariateSpec{"x1", 1.0, CovariateLevel::unit, 0.0, 0.5, 0.0}};
    cfg.seed = 20240101;
  } else if (name == "negative-weight") {
    cfg.T = 10;
    CohortSpec early = stable(3, 400, 10, 0.1, 2.0);
    // First-stage effect jumps once the late cohort is exposed.
    for (std::size_t l = 4; l < early.caet.size(); ++l) early.caet[l] = 0.9;
    cfg.cohorts = {early, stable(7, 400, 10, 0.2, 3.0), {kNever, 400, {}, {}}};
    cfg.draw = ComplierDraw::quota;
    cfg.unit_fe_sd = 1.0;
    cfg.time_fe_sd = 1.0;
    cfg.seed = 7;
  } else if (name == "random-adoption") {
    cfg.T = 8;
    cfg.cohorts = {stable(3, 500, 8, 0.5, 2.0), stable(6, 500, 8, 0.3, 3.0), {kNever, 500, {}, {}}};
    cfg.random_adoption = true;
    cfg.unit_fe_sd = 1.0;
    cfg.time_fe_sd = 1.0;
    cfg.noise_sd_y = 1.0;
    cfg.weight_sd = 0.3;
    cfg.seed = 99;
  } else {
    fail(ErrorCode::InvalidConfig, "unknown preset '" + name + "'");
  }
  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------- oracle

std::string OracleCellWeight::id() const {
  return std::string(kind_short(kind)) + ":" + date_text(treated) + "-" + date_text(control);
}

EstimandOracle oracle_estimand(const DgpConfig& cfg) {
  validate(cfg);
  const int T = cfg.T;
  const double Td = T;
  const double N = cfg.total_units();
  const double scale_d = mean_level(cfg);
  const double scale_y = response_scale(cfg);

  struct Cohort {
    int e;
    double p;
    const CohortSpec* spec;
  };
  std::vector<Cohort> exposed;
  std::optional<double> p_never;
  for (const auto& c : cfg.cohorts) {
    if (c.adoption == kNever) p_never = c.units / N;
    else exposed.push_back({c.adoption, c.units / N, &c});
  }
  std::sort(exposed.begin(), exposed.end(), [](const Cohort& a, const Cohort& b) { return a.e < b.e; });

  auto caet1 = [&](const Cohort& c, int t) { return c.spec->caet[static_cast<std::size_t>(t - c.e)] * scale_d; };
  auto caiet = [&](const Cohort& c, int t) {
    return caet1(c, t) * c.spec->clatt[static_cast<std::size_t>(t - c.e)] * scale_y;
  };
  auto mean_caet = [&](const Cohort& c, int a, int b) {
    double s = 0.0;
    for (int t = a; t <= b; ++t) s += caet1(c, t);
    return s / (b - a + 1);
  };
  auto target_cm = [&](const Cohort& c, int a, int b) {
    double num = 0.0, den = 0.0;
    for (int t = a; t <= b; ++t) {
      num += caiet(c, t);
      den += caet1(c, t);
    }
    return den > 0.0 ? num / den : 0.0;
  };
  auto target_time = [&](const Cohort& c, int a, int b) {
    double s = 0.0;
    for (int t = a; t <= b; ++t) s += caiet(c, t);
    return s / (b - a + 1);
  };

  EstimandOracle o;
  o.target_label = cfg.random_adoption ? "LATE" : (cfg.support == TreatmentSupport::ordered ? "CACRT" : "CLATT");
  o.stable = true;
  for (const auto& c : exposed) {
    const auto& s = *c.spec;
    for (int t = c.e; t <= T; ++t) {
      const auto l = static_cast<std::size_t>(t - c.e);
      if (s.caet[l] != s.caet[0] || s.clatt[l] != s.clatt[0]) o.stable = false;
    }
  }

  auto aggregate = [&](const Cohort& c, const std::string& label, int a, int b) {
    o.aggregates.push_back({c.e, label, a, b, mean_caet(c, a, b), target_cm(c, a, b), target_time(c, a, b)});
  };

  // First pass: population weights and first-stage DIDs.
  if (p_never)
    for (const auto& k : exposed) {
      OracleCellWeight w{CellKind::UnexposedExposed, k.e, kNever};
      w.fs_weight = k.p * *p_never * ((T - k.e + 1) / Td) * ((k.e - 1) / Td);
      w.first_stage = k.e > 1 ? mean_caet(k, k.e, T) : 0.0;
      o.wcaet += w.fs_weight * w.first_stage;
      o.weights.push_back(w);
      aggregate(k, "POST(" + std::to_string(k.e) + ")", k.e, T);
    }
  for (std::size_t a = 0; a < exposed.size(); ++a)
    for (std::size_t b = a + 1; b < exposed.size(); ++b) {
      const Cohort& k = exposed[a];
      const Cohort& l = exposed[b];
      OracleCellWeight eny{CellKind::ExposedNotYetExposed, k.e, l.e};
      eny.fs_weight = k.p * l.p * ((k.e - 1) / Td) * ((l.e - k.e) / Td);
      eny.first_stage = mean_caet(k, k.e, l.e - 1);
      OracleCellWeight ees{CellKind::ExposedExposedShift, l.e, k.e};
      ees.fs_weight = k.p * l.p * ((T - l.e + 1) / Td) * ((l.e - k.e) / Td);
      const double shift = mean_caet(k, l.e, T) - mean_caet(k, k.e, l.e - 1);
      ees.first_stage = mean_caet(l, l.e, T) - shift;
      o.wcaet += eny.fs_weight * eny.first_stage + ees.fs_weight * mean_caet(l, l.e, T);
      o.delta_caet += ees.fs_weight * shift;
      o.weights.push_back(eny);
      o.weights.push_back(ees);
      const std::string mid = "MID(" + std::to_string(k.e) + "," + std::to_string(l.e) + ")";
      aggregate(k, mid, k.e, l.e - 1);
      aggregate(k, "POST(" + std::to_string(l.e) + ")", l.e, T);
      aggregate(l, "POST(" + std::to_string(l.e) + ")", l.e, T);
    }
  o.denominator = o.wcaet - o.delta_caet;
  for (const auto& w : o.weights) o.denominator_direct += w.fs_weight * w.first_stage;
  if (!(o.denominator > 0.0)) {
    fail(ErrorCode::OracleDegenerate,
         "population first-stage covariance is not positive (" + std::to_string(o.denominator) + ")");
  }
  const double C = o.denominator;

  auto cohort = [&](int e) -> const Cohort& {
    return *std::find_if(exposed.begin(), exposed.end(), [&](const Cohort& c) { return c.e == e; });
  };
  std::map<int, double> lemma3;
  for (auto& w : o.weights) {
    w.iv_weight = w.fs_weight * w.first_stage / C;
    switch (w.kind) {
      case CellKind::UnexposedExposed: {
        const Cohort& k = cohort(w.treated);
        w.closed_form_weight = w.fs_weight * w.first_stage / C;
        o.wclatt += w.closed_form_weight * target_cm(k, k.e, T);
        lemma3[k.e] += w.closed_form_weight;
        break;
      }
      case CellKind::ExposedNotYetExposed: {
        const Cohort& k = cohort(w.treated);
        const Cohort& l = cohort(w.control);
        w.closed_form_weight = w.fs_weight * w.first_stage / C;
        o.wclatt += w.closed_form_weight * target_cm(k, k.e, l.e - 1);
        lemma3[k.e] += w.closed_form_weight;
        break;
      }
      case CellKind::ExposedExposedShift: {
        const Cohort& l = cohort(w.treated);
        const Cohort& k = cohort(w.control);
        w.closed_form_weight = w.fs_weight / C;  // sigma^l
        o.wclatt += w.closed_form_weight * target_time(l, l.e, T);
        o.delta_clatt += w.closed_form_weight * (target_time(k, l.e, T) - target_time(k, k.e, l.e - 1));
        lemma3[l.e] += w.closed_form_weight * mean_caet(l, l.e, T);
        break;
      }
    }
  }
  o.estimand = o.wclatt - o.delta_clatt;
  for (const auto& [e, w] : lemma3) o.cohort_weights.emplace_back(e, w);
  return o;
}

// ---------------------------------------------------------------- Monte Carlo

int thread_budget() noexcept {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("DIDIV_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<int>(std::min<long>(v, 1024));
  }
  return hw;
}

MonteCarloSummary monte_carlo(const DgpConfig& cfg, int replications) {
  if (replications < 1) fail(ErrorCode::InvalidConfig, "replications must be at least 1");
  validate(cfg);

  struct Rep {
    bool ok = false;
    double beta = 0.0;
    std::vector<std::pair<std::string, double>> weights;
  };
  std::vector<Rep> reps(static_cast<std::size_t>(replications));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < replications; r = next++) {
      Rep& out = reps[static_cast<std::size_t>(r)];
      try {
        const PanelDataset panel = generate(cfg, replication_seed(cfg.seed, static_cast<std::uint64_t>(r)));
        const DecompositionResult dec = decompose(panel);
        out.beta = dec.beta_iv;
        for (const auto& c : dec.components) out.weights.emplace_back(c.cell.id(), c.iv_weight);
        out.ok = true;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::WeakDenominator && e.code() != ErrorCode::NoVariation) throw;
      }
    }
  };
  const int threads = std::max(1, std::min(thread_budget(), replications));
  {
    std::vector<std::jthread> pool;
    for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
  }

  MonteCarloSummary s;
  s.replications = replications;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++s.degenerate;
      continue;
    }
    s.estimates.push_back(r.beta);
  }
  s.used = static_cast<int>(s.estimates.size());
  if (s.used > 0) {
    s.mean = std::accumulate(s.estimates.begin(), s.estimates.end(), 0.0) / s.used;
    double ss = 0.0;
    for (double b : s.estimates) ss += (b - s.mean) * (b - s.mean);
    s.sd = s.used > 1 ? std::sqrt(ss / (s.used - 1)) : 0.0;
    s.mc_se = s.sd / std::sqrt(static_cast<double>(s.used));
  }

  std::optional<EstimandOracle> oracle;
  try {
    oracle = oracle_estimand(cfg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::OracleDegenerate) throw;
  }
  if (oracle && s.used > 0) {
    s.oracle_estimand = oracle->estimand;
    s.deviation = s.mean - oracle->estimand;
  }

  std::vector<std::string> order;
  std::map<std::string, CellWeightSummary> cells;
  std::map<std::string, int> seen;
  for (const auto& r : reps) {
    if (!r.ok) continue;
    for (const auto& [id, w] : r.weights) {
      auto [it, fresh] = cells.try_emplace(id);
      if (fresh) order.push_back(id);
      it->second.id = id;
      it->second.mean_iv_weight += w;
      if (w < 0.0) ++it->second.negative_replications;
      ++seen[id];
    }
  }
  for (const auto& id : order) {
    CellWeightSummary c = cells[id];
    c.mean_iv_weight /= seen[id];
    const std::string head = id.substr(0, id.find(':'));
    c.kind = head == "UE" ? CellKind::UnexposedExposed
                          : (head == "ENY" ? CellKind::ExposedNotYetExposed : CellKind::ExposedExposedShift);
    if (oracle)
      for (const auto& w : oracle->weights)
        if (w.id() == id) c.population_iv_weight = w.iv_weight;
    s.cells.push_back(c);
  }
  return s;
}

}  // namespace didiv
