#include "didiv/decompose.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "didiv/fixed_effects.hpp"

namespace didiv {

std::string_view kind_name(CellKind k) noexcept {
  switch (k) {
    case CellKind::UnexposedExposed: return "UnexposedExposed";
    case CellKind::ExposedNotYetExposed: return "ExposedNotYetExposed";
    case CellKind::ExposedExposedShift: break;
  }
  return "ExposedExposedShift";
}

std::string_view kind_short(CellKind k) noexcept {
  switch (k) {
    case CellKind::UnexposedExposed: return "UE";
    case CellKind::ExposedNotYetExposed: return "ENY";
    case CellKind::ExposedExposedShift: break;
  }
  return "EES";
}

namespace {

std::string date_key(int e) { return e == kNever ? std::string("never") : std::to_string(e); }

}  // namespace

std::string DesignCell::id() const {
  return std::string(kind_short(kind)) + ":" + date_key(treated) + "-" + date_key(control);
}

const WaldDIDComponent* DecompositionResult::find(CellKind k, int treated, int control) const noexcept {
  for (const auto& c : components)
    if (c.cell.kind == k && c.cell.treated == treated && c.cell.control == control) return &c;
  return nullptr;
}

std::vector<DesignCell> enumerate_cells(const CohortPartition& partition) {
  const int T = partition.T;
  std::vector<int> exposed;
  bool never = false;
  for (std::size_t c = 0; c < partition.size(); ++c) {
    if (!(partition.share[c] > 0.0)) continue;
    if (partition.cohorts[c] == kNever) never = true;
    else exposed.push_back(partition.cohorts[c]);
  }
  if (exposed.empty() || exposed.size() + (never ? 1 : 0) < 2)
    fail(ErrorCode::NoVariation, "decomposition needs at least two cohorts, one of them exposed");

  std::vector<DesignCell> cells;
  if (never)
    for (int k : exposed)
      cells.push_back({CellKind::UnexposedExposed, k, kNever, TimeWindow::pre(k), TimeWindow::post(k, T), k == 1});
  for (std::size_t a = 0; a < exposed.size(); ++a)
    for (std::size_t b = a + 1; b < exposed.size(); ++b) {
      const int k = exposed[a];
      const int l = exposed[b];
      cells.push_back({CellKind::ExposedNotYetExposed, k, l, TimeWindow::pre(k), TimeWindow::mid(k, l), k == 1});
      cells.push_back({CellKind::ExposedExposedShift, l, k, TimeWindow::mid(k, l), TimeWindow::post(l, T), false});
    }
  std::sort(cells.begin(), cells.end());
  return cells;
}

WaldDID wald_did(const CohortMeans& means, const CohortPartition& partition, const DesignCell& cell,
                 double threshold) {
  if (cell.before.empty() || cell.after.empty())
    fail(ErrorCode::EmptyCell, "design cell " + cell.id() + " has an empty window");
  const auto tr = partition.index_of(cell.treated);
  const auto co = partition.index_of(cell.control);
  auto did = [&](Variable v) {
    const double dt = window_mean(means, v, tr, cell.after) - window_mean(means, v, tr, cell.before);
    const double dc = window_mean(means, v, co, cell.after) - window_mean(means, v, co, cell.before);
    return dt - dc;
  };
  WaldDID w;
  w.did_outcome = did(Variable::Y);
  w.did_treatment = did(Variable::D);
  if (std::abs(w.did_treatment) > threshold) w.ratio = w.did_outcome / w.did_treatment;
  return w;
}

WaldDID wald_did(const PanelDataset& panel, const DesignCell& cell, DecomposeOptions options) {
  const CohortPartition cp = infer_cohorts(panel, options.weighting);
  const CohortMeans m = cohort_means(panel, cp, options.weighting);
  return wald_did(m, cp, cell, weak_threshold(panel, options.weak_factor));
}

CellVariance cell_variance(const DesignCell& cell, const CohortPartition& partition) {
  const double nt = partition.share_of(cell.treated);
  const double nc = partition.share_of(cell.control);
  CellVariance out;
  switch (cell.kind) {
    case CellKind::UnexposedExposed: {
      const double zk = partition.exposure_share(cell.treated);
      const double n = nt / (nt + nc);
      out.variance = n * (1.0 - n) * zk * (1.0 - zk);
      out.share_sq = (nt + nc) * (nt + nc);
      break;
    }
    case CellKind::ExposedNotYetExposed: {
      // treated k early, control l late
      const double zk = partition.exposure_share(cell.treated);
      const double zl = partition.exposure_share(cell.control);
      const double n = nt / (nt + nc);
      out.variance = n * (1.0 - n) * ((zk - zl) / (1.0 - zl)) * ((1.0 - zk) / (1.0 - zl));
      const double s = (nt + nc) * (1.0 - zl);
      out.share_sq = s * s;
      break;
    }
    case CellKind::ExposedExposedShift: {
      // treated l late, control k early; n_kl is the early cohort's share
      const double zk = partition.exposure_share(cell.control);
      const double zl = partition.exposure_share(cell.treated);
      const double n = nc / (nt + nc);
      out.variance = n * (1.0 - n) * (zl / zk) * ((zk - zl) / zk);
      const double s = (nt + nc) * zk;
      out.share_sq = s * s;
      break;
    }
  }
  return out;
}

DecompositionResult decompose(const PanelDataset& panel, DecomposeOptions options) {
  if (!panel.balanced()) fail(ErrorCode::NotBalanced, "the cell decomposition requires a balanced panel");
  const Eigen::VectorXd unit_w = panel.weights_for(options.weighting);
  const CohortPartition cp = infer_cohorts(panel, options.weighting);
  const std::vector<DesignCell> cells = enumerate_cells(cp);
  const IVEstimate est = twfeiv_weighted(panel, unit_w, options.weak_factor);
  const CohortMeans means = cohort_means(panel, cp, options.weighting);

  DecompositionResult r;
  r.weighted = options.weighting == Weighting::analytic;
  r.T = cp.T;
  r.weak_threshold = weak_threshold(panel, options.weak_factor);
  r.beta_iv = est.beta_iv;
  r.c_dz_direct = est.c_dz;
  for (std::size_t c = 0; c < cp.size(); ++c)
    if (cp.share[c] > 0.0) {
      r.cohorts.push_back(cp.cohorts[c]);
      r.shares.push_back(cp.share[c]);
    }

  r.components.reserve(cells.size());
  double c_dz = 0.0;
  for (const auto& cell : cells) {
    WaldDIDComponent comp{cell};
    const CellVariance v = cell_variance(cell, cp);
    comp.variance = v.variance;
    comp.share_sq = v.share_sq;
    if (cell.empty_window) {
      // No pre-period: the variance factor must vanish on its own.
      if (std::abs(v.variance) > 1e-14)
        throw std::logic_error("empty-window cell " + cell.id() + " has nonzero variance");
      comp.variance = 0.0;
      ++r.empty_cells;
    } else {
      const WaldDID w = wald_did(means, cp, cell, r.weak_threshold);
      comp.did_outcome = w.did_outcome;
      comp.did_treatment = w.did_treatment;
      comp.wald_did = w.ratio;
      comp.weak = !w.ratio.has_value();
      if (comp.weak) ++r.weak_cells;
    }
    comp.fs_weight = comp.share_sq * comp.variance;
    if (comp.did_treatment) c_dz += comp.fs_weight * *comp.did_treatment;
    r.components.push_back(std::move(comp));
  }
  r.c_dz = c_dz;
  if (std::abs(c_dz) <= r.weak_threshold)
    fail(ErrorCode::WeakDenominator, "assembled first-stage covariance is numerically zero");

  double weight_sum = 0.0;
  double reconstructed = 0.0;
  for (auto& comp : r.components) {
    auto& tot = r.totals[static_cast<std::size_t>(comp.cell.kind)];
    tot.kind = comp.cell.kind;
    ++tot.components;
    if (comp.did_treatment) {
      comp.iv_weight = comp.fs_weight * *comp.did_treatment / c_dz;
      comp.contribution = comp.fs_weight * *comp.did_outcome / c_dz;
    }
    weight_sum += comp.iv_weight;
    reconstructed += comp.wald_did ? comp.iv_weight * *comp.wald_did : comp.contribution;
    tot.total_weight += comp.iv_weight;
    tot.weighted_wald_did += comp.contribution;
    if (comp.wald_did) tot.total_wald_did += *comp.wald_did;
    if (comp.iv_weight < 0.0) ++tot.negative_weights;
  }
  for (std::size_t k = 0; k < r.totals.size(); ++k) r.totals[k].kind = kAllKinds[k];
  r.weight_sum = weight_sum;
  r.identity_residual = std::abs(reconstructed - r.beta_iv);
  r.denominator_residual = std::abs(r.c_dz - r.c_dz_direct) / std::abs(r.c_dz_direct);
  return r;
}

TwoCohortResult two_cohort_estimate(const PanelDataset& panel, int k, int l, DecomposeOptions options) {
  if (!(k < l) || l == kNever)
    fail(ErrorCode::EmptyCell, "two_cohort_estimate needs two exposed cohorts with k < l");
  const CohortPartition cp = infer_cohorts(panel);
  const auto& a = cp.members[cp.index_of(k)];
  const auto& b = cp.members[cp.index_of(l)];
  std::vector<int> units(a.begin(), a.end());
  units.insert(units.end(), b.begin(), b.end());
  std::sort(units.begin(), units.end());
  const PanelDataset sub = panel.subset_units(units);

  const DecompositionResult dec = decompose(sub, options);
  TwoCohortResult out;
  out.estimate = dec.beta_iv;
  for (const auto& c : dec.components) {
    if (c.cell.kind == CellKind::ExposedNotYetExposed) {
      out.weight_early = c.iv_weight;
      out.wald_eny = c.wald_did;
    } else {
      out.wald_ees = c.wald_did;
    }
    out.reconstructed += c.wald_did ? c.iv_weight * *c.wald_did : c.contribution;
  }
  out.residual = std::abs(out.reconstructed - out.estimate);
  return out;
}

UnbalancedWeightReport unbalanced_weights(const PanelDataset& panel, ControlChoice control) {
  const CohortPartition cp = infer_cohorts(panel);
  UnbalancedWeightReport rep;
  rep.control = control;
  if (control == ControlChoice::never) {
    if (!cp.has_never()) fail(ErrorCode::MissingControl, "no never-exposed cohort to use as control");
    rep.control_cohort = kNever;
  } else {
    if (cp.n_exposed() < 2) fail(ErrorCode::MissingControl, "last-cohort control needs two exposed cohorts");
    rep.control_cohort = cp.cohorts[static_cast<std::size_t>(cp.n_exposed() - 1)];
  }

  const TwoWayResidual zres = residualize_two_way(panel.z(), panel.unit_index(), panel.time_index(),
                                                  panel.n_units(), panel.n_periods());
  rep.components = zres.components;
  rep.sweeps = zres.sweeps;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(panel.n_units());
  const Eigen::MatrixXd zhat = cohort_period_means(panel, cp, zres.residual, ones);
  const CohortMeans m = cohort_means(panel, cp);
  const double n_obs = static_cast<double>(panel.n_obs());
  const double threshold = weak_threshold(panel);
  const auto c = static_cast<Eigen::Index>(cp.index_of(rep.control_cohort));
  const int T = cp.T;

  for (std::size_t ci = 0; ci < cp.size(); ++ci) {
    const int e = cp.cohorts[ci];
    if (e == kNever || e == rep.control_cohort) continue;
    const auto row = static_cast<Eigen::Index>(ci);
    for (int t = e; t <= T; ++t) {
      UnbalancedEntry en;
      en.cohort = e;
      en.period = t;
      en.bias_term = control == ControlChoice::last && t >= rep.control_cohort;
      const int ref = e - 1;
      const bool observed = m.count(row, t - 1) > 0.0;
      en.empty = !observed || ref < 1 || m.count(row, ref - 1) <= 0.0 || m.count(c, t - 1) <= 0.0 ||
                 m.count(c, ref - 1) <= 0.0;
      if (observed) {
        en.residual_mean = zhat(row, t - 1);
        en.cell_share = m.count(row, t - 1) / n_obs;
      }
      if (!en.empty) {
        const auto r0 = ref - 1;
        en.caet_estimate = m.d(row, t - 1) - m.d(row, r0) - (m.d(c, t - 1) - m.d(c, r0));
        en.outcome_did = m.y(row, t - 1) - m.y(row, r0) - (m.y(c, t - 1) - m.y(c, r0));
        if (std::abs(*en.caet_estimate) > threshold) en.wald = *en.outcome_did / *en.caet_estimate;
        en.weight = en.residual_mean * en.cell_share * *en.caet_estimate;
        rep.normalization += en.weight;
      } else {
        ++rep.empty_entries;
      }
      rep.entries.push_back(en);
    }
  }
  if (!(std::abs(rep.normalization) > 0.0))
    fail(ErrorCode::WeakDenominator, "unbalanced weight normalization is zero");
  for (auto& en : rep.entries) {
    if (en.empty) continue;
    en.weight /= rep.normalization;
    rep.weight_sum += en.weight;
    if (en.weight < 0.0) ++rep.negative_flags;
    if (en.bias_term) ++rep.bias_entries;
  }
  return rep;
}

}  // namespace didiv
