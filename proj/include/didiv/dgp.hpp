#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "didiv/decompose.hpp"
#include "didiv/panel.hpp"

namespace didiv {

enum class TreatmentSupport { binary, ordered };
enum class ComplierDraw { quota, bernoulli };
enum class CovariateLevel { unit, cohort };

struct CohortSpec {
  int adoption = kNever;
  int units = 0;
  // Indexed by relative period l = t - e; length must reach T - e + 1.
  std::vector<double> caet;   // complier share (ordered: share moved off zero)
  std::vector<double> clatt;  // effect per complier (ordered: scale of step responses)
};

struct CovariateSpec {
  std::string name = "x";
  double sd = 1.0;
  CovariateLevel level = CovariateLevel::unit;
  double loading_z = 0.0;  // added loading on the instrument
  double effect_y = 0.0;
  double effect_d = 0.0;
};

struct DgpConfig {
  std::string name = "custom";
  int T = 0;
  std::vector<CohortSpec> cohorts;
  TreatmentSupport support = TreatmentSupport::binary;
  std::vector<double> level_mix;       // ordered: P(level = m | complier), m = 1..J
  std::vector<double> level_response;  // ordered: relative response of step j
  ComplierDraw draw = ComplierDraw::bernoulli;
  double unit_fe_sd = 0.0, time_fe_sd = 0.0;
  double d_unit_fe_sd = 0.0, d_time_fe_sd = 0.0;
  double noise_sd_d = 0.0, noise_sd_y = 0.0;
  double trend_y = 0.0, trend_d = 0.0;  // per-period drift common to all units
  std::optional<double> weight_sd;      // lognormal unit weights when set
  std::vector<CovariateSpec> covariates;
  bool random_adoption = false;
  std::uint64_t seed = 1;

  int total_units() const noexcept;
  // Exact shares and no noise, so sample DIDs equal the schedule.
  bool noiseless() const noexcept;
};

// Validates ranges and schedule horizons.
void validate(const DgpConfig& cfg);

DgpConfig parse_config(const std::string& json_text);
std::string config_to_json(const DgpConfig& cfg);
DgpConfig preset(const std::string& name);
std::vector<std::string> preset_names();

PanelDataset generate(const DgpConfig& cfg);
PanelDataset generate(const DgpConfig& cfg, std::uint64_t seed);

std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t replication) noexcept;

struct OracleCellWeight {
  CellKind kind;
  int treated = 0;
  int control = 0;
  double fs_weight = 0.0;     // population w
  double first_stage = 0.0;   // population first-stage DID of the cell
  double iv_weight = 0.0;     // w * first_stage / C
  double closed_form_weight = 0.0;  // w_IV,kU, w^k_IV or sigma^l
  std::string id() const;
};

struct CohortAggregate {
  int cohort = 0;
  std::string window;  // "POST(k)", "MID(k,l)", "POST(l)"
  int first = 0, last = 0;
  double caet = 0.0;
  double target_cm = 0.0;       // compliers-weighted
  double target_time = 0.0;     // time-corrected
};

struct EstimandOracle {
  std::string target_label = "CLATT";  // CACRT, LATE
  std::vector<OracleCellWeight> weights;
  double wcaet = 0.0;
  double delta_caet = 0.0;
  double denominator = 0.0;  // WCAET - dCAET
  double denominator_direct = 0.0;  // sum over cells of w * first-stage DID
  double wclatt = 0.0;
  double delta_clatt = 0.0;
  double estimand = 0.0;
  std::vector<CohortAggregate> aggregates;
  std::vector<std::pair<int, double>> cohort_weights;  // per-cohort IV weight under time-stable effects
  bool stable = false;
};

EstimandOracle oracle_estimand(const DgpConfig& cfg);

struct CellWeightSummary {
  std::string id;
  CellKind kind;
  double mean_iv_weight = 0.0;
  double population_iv_weight = 0.0;
  int negative_replications = 0;
};

struct MonteCarloSummary {
  int replications = 0;
  int used = 0;
  int degenerate = 0;
  double mean = 0.0;
  double sd = 0.0;
  double mc_se = 0.0;
  std::optional<double> oracle_estimand;
  std::optional<double> deviation;
  std::vector<double> estimates;
  std::vector<CellWeightSummary> cells;
};

// Threads capped by DIDIV_THREADS; results independent of thread count.
MonteCarloSummary monte_carlo(const DgpConfig& cfg, int replications);

int thread_budget() noexcept;

}  // namespace didiv
