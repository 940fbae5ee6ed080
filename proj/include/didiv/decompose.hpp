#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "didiv/estimator.hpp"
#include "didiv/panel.hpp"

namespace didiv {

enum class CellKind { UnexposedExposed = 0, ExposedNotYetExposed = 1, ExposedExposedShift = 2 };

inline constexpr std::array<CellKind, 3> kAllKinds = {
    CellKind::UnexposedExposed, CellKind::ExposedNotYetExposed, CellKind::ExposedExposedShift};

std::string_view kind_name(CellKind k) noexcept;   // "UnexposedExposed", ...
std::string_view kind_short(CellKind k) noexcept;  // "UE", "ENY", "EES"

struct DesignCell {
  CellKind kind;
  int treated;
  int control;  // kNever for UE
  TimeWindow before;
  TimeWindow after;
  bool empty_window = false;

  // "UE:34-never" style key, stable across runs.
  std::string id() const;
  friend bool operator<(const DesignCell& a, const DesignCell& b) noexcept {
    if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
    if (a.treated != b.treated) return a.treated < b.treated;
    return a.control < b.control;
  }
};

struct WaldDID {
  double did_outcome = 0.0;
  double did_treatment = 0.0;
  std::optional<double> ratio;
};

struct CellVariance {
  double variance = 0.0;
  double share_sq = 0.0;
};

struct WaldDIDComponent {
  DesignCell cell;
  std::optional<double> did_outcome{};    // absent for empty-window cells
  std::optional<double> did_treatment{};
  double variance = 0.0;
  double share_sq = 0.0;
  double fs_weight = 0.0;
  double iv_weight = 0.0;
  std::optional<double> wald_did{};
  double contribution = 0.0;  // fs_weight * did_outcome / c_dz
  bool weak = false;          // |did_treatment| at or below the threshold
};

struct KindTotals {
  CellKind kind;
  int components = 0;
  double total_weight = 0.0;
  double total_wald_did = 0.0;     // plain sum of defined Wald-DIDs
  double weighted_wald_did = 0.0;  // sum of contributions
  int negative_weights = 0;
};

struct DecompositionResult {
  std::vector<WaldDIDComponent> components;
  double c_dz = 0.0;         // assembled from components
  double c_dz_direct = 0.0;  // (1/NT) sum Z~ D
  double beta_iv = 0.0;
  double weight_sum = 0.0;
  double identity_residual = 0.0;
  double denominator_residual = 0.0;
  double weak_threshold = 0.0;
  std::array<KindTotals, 3> totals{};
  int weak_cells = 0;
  int empty_cells = 0;
  bool weighted = false;
  int T = 0;
  std::vector<int> cohorts;
  std::vector<double> shares;

  int negative_weight_count(CellKind k) const noexcept {
    return totals[static_cast<std::size_t>(k)].negative_weights;
  }
  const WaldDIDComponent* find(CellKind k, int treated, int control) const noexcept;
};

struct DecomposeOptions {
  double weak_factor = kWeakFactor;
  Weighting weighting = Weighting::unweighted;
};

std::vector<DesignCell> enumerate_cells(const CohortPartition& partition);

WaldDID wald_did(const CohortMeans& means, const CohortPartition& partition, const DesignCell& cell,
                 double threshold);
WaldDID wald_did(const PanelDataset& panel, const DesignCell& cell, DecomposeOptions options = {});

CellVariance cell_variance(const DesignCell& cell, const CohortPartition& partition);

DecompositionResult decompose(const PanelDataset& panel, DecomposeOptions options = {});

struct TwoCohortResult {
  double estimate = 0.0;      // subsample TWFEIV
  double weight_early = 0.0;  // on the ExposedNotYetExposed Wald-DID
  std::optional<double> wald_eny;
  std::optional<double> wald_ees;
  double reconstructed = 0.0;
  double residual = 0.0;
};

TwoCohortResult two_cohort_estimate(const PanelDataset& panel, int k, int l,
                                    DecomposeOptions options = {});

enum class ControlChoice { never, last };

struct UnbalancedEntry {
  int cohort = 0;
  int period = 0;
  double residual_mean = 0.0;
  double cell_share = 0.0;
  std::optional<double> caet_estimate;
  std::optional<double> outcome_did;
  double weight = 0.0;
  bool bias_term = false;  // post-l entries under the last-cohort control
  bool empty = false;
  std::optional<double> wald;  // outcome_did / caet_estimate
};

struct UnbalancedWeightReport {
  std::vector<UnbalancedEntry> entries;
  ControlChoice control = ControlChoice::never;
  int control_cohort = kNever;
  double normalization = 0.0;
  double weight_sum = 0.0;
  int negative_flags = 0;
  int bias_entries = 0;
  int empty_entries = 0;
  int components = 1;  // connected unit-time components
  int sweeps = 0;
};

UnbalancedWeightReport unbalanced_weights(const PanelDataset& panel, ControlChoice control);

}  // namespace didiv
