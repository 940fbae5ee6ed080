#pragma once

#include <optional>
#include <string>
#include <vector>

#include "didiv/decompose.hpp"
#include "didiv/estimator.hpp"

namespace didiv {

// One element of an s'beta representation of an estimate.
struct WeightedTerm {
  std::string id;
  std::string kind;
  double weight = 0.0;
  std::optional<double> value;
  double contribution = 0.0;  // weight * value when value is defined
};

struct PairedComponent {
  std::string id;
  std::string kind;
  std::optional<double> base_wald, alt_wald;
  double base_weight = 0.0, alt_weight = 0.0;
  bool phantom_base = false, phantom_alt = false;
};

struct SpecComparison {
  double base_estimate = 0.0;
  double alt_estimate = 0.0;
  double term_walddids = 0.0;
  double term_weights = 0.0;
  double term_interaction = 0.0;
  double term_within = 0.0;
  double difference = 0.0;
  double identity_residual = 0.0;
  int phantom_cells = 0;
  int undefined_cells = 0;
  std::string level;  // "cell" or "pair"
  std::vector<PairedComponent> paired_components;
};

std::vector<WeightedTerm> terms_of(const DecompositionResult& dec);

// Reference vectors are the base side: s'(b_alt - b) + (s_alt - s)'b + (s_alt - s)'(b_alt - b).
SpecComparison oaxaca(const std::vector<WeightedTerm>& base, double base_estimate,
                      const std::vector<WeightedTerm>& alt, double alt_estimate,
                      double within_term = 0.0);

SpecComparison oaxaca(const DecompositionResult& base, const DecompositionResult& alt,
                      double within_term = 0.0);

CovariateSplit covariate_split(const PanelDataset& panel, EstimatorOptions options = {});

struct BetweenCell {
  int early = 0;
  int late = 0;  // kNever allowed
  double pair_weight_sq = 0.0;       // (n_k + n_l)^2
  double s_b = 0.0;                  // (n_k+n_l)^2 C_b,kl / C_b
  std::optional<double> beta_b;      // C(Y, z_b)_kl / C(D, z_b)_kl
  double contribution = 0.0;         // (n_k+n_l)^2 C(Y, z_b)_kl / C_b
  double c_b = 0.0;                  // C(D, z_b)_kl
  double c_dz = 0.0;                 // C(D, Z~)_kl
  std::optional<double> beta_2x2;    // two-cohort plain IV
  double c_p = 0.0;                  // C(D, p_b)_kl
  std::optional<double> beta_p;      // IV with p_b on the pair
  std::optional<double> beta_b_dual; // (C_dz beta_2x2 - C_p beta_p) / C_b,kl
  double plain_s = 0.0;              // (n_k+n_l)^2 C_dz,kl / C^{DZ}
  double plain_contribution = 0.0;
  std::string id() const;
};

struct BetweenCellReport {
  std::vector<BetweenCell> cells;
  double c_between = 0.0;
  double beta_between = 0.0;
  double weight_sum = 0.0;
  double reconstructed = 0.0;
  double identity_residual = 0.0;
  double c_dz = 0.0;  // plain, assembled from pairs
  double beta_iv = 0.0;
};

BetweenCellReport between_cells(const PanelDataset& panel, EstimatorOptions options = {});

// Both sides of the covariate comparison as pair-level s'beta terms.
struct CovariatePairTerms {
  std::vector<WeightedTerm> plain, adjusted;
  double plain_estimate = 0.0;
  double adjusted_estimate = 0.0;
  double within_term = 0.0;
};

CovariatePairTerms covariate_pair_terms(const PanelDataset& panel, EstimatorOptions options = {});

// Covariate-adjusted versus plain on cohort pairs; within term = Omega beta_w.
SpecComparison compare_covariates(const PanelDataset& panel, EstimatorOptions options = {});

}  // namespace didiv
