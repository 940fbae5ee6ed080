#include "didiv/compare.hpp"

#include <cmath>
#include <map>

namespace didiv {

std::vector<WeightedTerm> terms_of(const DecompositionResult& dec) {
  std::vector<WeightedTerm> out;
  out.reserve(dec.components.size());
  for (const auto& c : dec.components)
    out.push_back({c.cell.id(), std::string(kind_short(c.cell.kind)), c.iv_weight, c.wald_did, c.contribution});
  return out;
}

SpecComparison oaxaca(const std::vector<WeightedTerm>& base, double base_estimate,
                      const std::vector<WeightedTerm>& alt, double alt_estimate, double within_term) {
  std::map<std::string, const WeightedTerm*> alt_by_id;
  for (const auto& t : alt) alt_by_id.emplace(t.id, &t);
  std::map<std::string, const WeightedTerm*> base_by_id;
  for (const auto& t : base) base_by_id.emplace(t.id, &t);

  SpecComparison sc;
  sc.level = "cell";
  sc.base_estimate = base_estimate;
  sc.alt_estimate = alt_estimate;
  sc.difference = alt_estimate - base_estimate;
  sc.term_within = within_term;

  auto add = [&](const WeightedTerm* b, const WeightedTerm* a) {
    PairedComponent pc;
    const WeightedTerm& any = b ? *b : *a;
    pc.id = any.id;
    pc.kind = any.kind;
    pc.phantom_base = b == nullptr;
    pc.phantom_alt = a == nullptr;
    if (b) {
      pc.base_wald = b->value;
      pc.base_weight = b->weight;
    }
    if (a) {
      pc.alt_wald = a->value;
      pc.alt_weight = a->weight;
    }
    if (!b || !a) {
      // Zero-weight phantom carrying the other side's Wald-DID.
      ++sc.phantom_cells;
      sc.term_weights += a ? a->contribution : -b->contribution;
    } else if (b->value && a->value) {
      const double s = b->weight, beta = *b->value;
      const double ds = a->weight - s, db = *a->value - beta;
      sc.term_walddids += s * db;
      sc.term_weights += ds * beta;
      sc.term_interaction += ds * db;
    } else {
      ++sc.undefined_cells;
      sc.term_walddids += a->contribution - b->contribution;
    }
    sc.paired_components.push_back(std::move(pc));
  };

  for (const auto& t : base) {
    auto it = alt_by_id.find(t.id);
    add(&t, it == alt_by_id.end() ? nullptr : it->second);
  }
  for (const auto& t : alt)
    if (!base_by_id.count(t.id)) add(nullptr, &t);

  const double sum = sc.term_walddids + sc.term_weights + sc.term_interaction + sc.term_within;
  sc.identity_residual = std::abs(sum - sc.difference);
  return sc;
}

SpecComparison oaxaca(const DecompositionResult& base, const DecompositionResult& alt, double within_term) {
  if (base.T != alt.T) fail(ErrorCode::IncompatibleSpecs, "specifications cover different time horizons");
  int common = 0;
  for (const auto& c : base.components)
    if (alt.find(c.cell.kind, c.cell.treated, c.cell.control)) ++common;
  if (common == 0) fail(ErrorCode::IncompatibleSpecs, "specifications share no design cell");
  return oaxaca(terms_of(base), base.beta_iv, terms_of(alt), alt.beta_iv, within_term);
}

CovariateSplit covariate_split(const PanelDataset& panel, EstimatorOptions options) {
  if (!panel.balanced()) fail(ErrorCode::NotBalanced, "the within/between split requires a balanced panel");
  const CovariateIVEstimate est = twfeiv_covariates(panel, options);
  return *est.split;
}

std::string BetweenCell::id() const {
  auto key = [](int e) { return e == kNever ? std::string("never") : std::to_string(e); };
  return "pair:" + key(early) + "-" + key(late);
}

namespace {

struct PairInputs {
  CohortPartition cp;
  Eigen::MatrixXd dbar, ybar, gz, gp;
  CovariateIVEstimate est;
};

PairInputs pair_inputs(const PanelDataset& panel, EstimatorOptions options) {
  if (!panel.balanced()) fail(ErrorCode::NotBalanced, "between cells require a balanced panel");
  PairInputs in;
  in.est = twfeiv_covariates(panel, options);
  in.cp = infer_cohorts(panel, options.weighting);
  const Eigen::VectorXd w = panel.weights_for(options.weighting);
  const CohortMeans m = cohort_means(panel, in.cp, options.weighting);
  in.dbar = m.d;
  in.ybar = m.y;
  in.gz = m.z.colwise() - m.z.rowwise().mean();
  const Eigen::MatrixXd pm = cohort_period_means(panel, in.cp, panel.x() * in.est.gamma, w);
  in.gp = pm.colwise() - pm.rowwise().mean();
  return in;
}

}  // namespace

BetweenCellReport between_cells(const PanelDataset& panel, EstimatorOptions options) {
  const PairInputs in = pair_inputs(panel, options);
  const CohortPartition& cp = in.cp;
  const double threshold = weak_threshold(panel, options.weak_factor);
  const double T = cp.T;

  BetweenCellReport rep;
  double cb_total = 0.0, cdz_total = 0.0;
  for (std::size_t a = 0; a < cp.size(); ++a) {
    if (!(cp.share[a] > 0.0)) continue;
    for (std::size_t b = a + 1; b < cp.size(); ++b) {
      if (!(cp.share[b] > 0.0)) continue;
      const auto ka = static_cast<Eigen::Index>(a), kb = static_cast<Eigen::Index>(b);
      const double nk = cp.share[a], nl = cp.share[b];
      const double n = nk / (nk + nl);
      const double f = n * (1.0 - n) / T;
      const Eigen::RowVectorXd dd = in.dbar.row(ka) - in.dbar.row(kb);
      const Eigen::RowVectorXd dy = in.ybar.row(ka) - in.ybar.row(kb);
      const Eigen::RowVectorXd gz = in.gz.row(ka) - in.gz.row(kb);
      const Eigen::RowVectorXd gp = in.gp.row(ka) - in.gp.row(kb);
      const Eigen::RowVectorXd g = gz - gp;

      BetweenCell cell;
      cell.early = cp.cohorts[a];
      cell.late = cp.cohorts[b];
      cell.pair_weight_sq = (nk + nl) * (nk + nl);
      cell.c_b = f * dd.dot(g);
      const double cy_b = f * dy.dot(g);
      cell.c_dz = f * dd.dot(gz);
      const double cy_z = f * dy.dot(gz);
      cell.c_p = f * dd.dot(gp);
      const double cy_p = f * dy.dot(gp);
      if (std::abs(cell.c_b) > threshold) cell.beta_b = cy_b / cell.c_b;
      if (std::abs(cell.c_dz) > threshold) cell.beta_2x2 = cy_z / cell.c_dz;
      if (std::abs(cell.c_p) > threshold) cell.beta_p = cy_p / cell.c_p;
      if (cell.beta_b) {
        const double zpart = cell.beta_2x2 ? cell.c_dz * *cell.beta_2x2 : cy_z;
        const double ppart = cell.beta_p ? cell.c_p * *cell.beta_p : cy_p;
        cell.beta_b_dual = (zpart - ppart) / cell.c_b;
      }
      cell.contribution = cy_b;          // rescaled below
      cell.plain_contribution = cy_z;    // rescaled below
      cb_total += cell.pair_weight_sq * cell.c_b;
      cdz_total += cell.pair_weight_sq * cell.c_dz;
      rep.cells.push_back(cell);
    }
  }
  if (std::abs(cb_total) <= threshold)
    fail(ErrorCode::WeakDenominator, "between first-stage covariance is numerically zero");
  rep.c_between = cb_total;
  rep.c_dz = cdz_total;
  for (auto& c : rep.cells) {
    c.s_b = c.pair_weight_sq * c.c_b / cb_total;
    c.contribution = c.pair_weight_sq * c.contribution / cb_total;
    c.plain_s = c.pair_weight_sq * c.c_dz / cdz_total;
    c.plain_contribution = c.pair_weight_sq * c.plain_contribution / cdz_total;
    rep.weight_sum += c.s_b;
    rep.reconstructed += c.beta_b ? c.s_b * *c.beta_b : c.contribution;
    rep.beta_iv += c.plain_contribution;
  }
  const CovariateSplit& split = *in.est.split;
  rep.beta_between = split.beta_between ? *split.beta_between : rep.reconstructed;
  rep.identity_residual = std::abs(rep.reconstructed - rep.beta_between);
  return rep;
}

CovariatePairTerms covariate_pair_terms(const PanelDataset& panel, EstimatorOptions options) {
  const BetweenCellReport rep = between_cells(panel, options);
  const CovariateIVEstimate est = twfeiv_covariates(panel, options);
  const IVEstimate plain = twfeiv_weighted(panel, panel.weights_for(options.weighting), options.weak_factor);
  const CovariateSplit& split = *est.split;
  const double total = split.c_within + split.c_between;

  CovariatePairTerms out;
  out.plain_estimate = plain.beta_iv;
  out.adjusted_estimate = est.beta_iv_x;
  out.within_term = split.within_contribution;
  for (const auto& c : rep.cells) {
    out.plain.push_back({c.id(), "pair", c.plain_s, c.beta_2x2, c.plain_contribution});
    const double w = c.pair_weight_sq * c.c_b / total;
    const double contrib = c.contribution * rep.c_between / total;
    out.adjusted.push_back({c.id(), "pair", w, c.beta_b, contrib});
  }
  return out;
}

SpecComparison compare_covariates(const PanelDataset& panel, EstimatorOptions options) {
  const CovariatePairTerms t = covariate_pair_terms(panel, options);
  SpecComparison sc = oaxaca(t.plain, t.plain_estimate, t.adjusted, t.adjusted_estimate, t.within_term);
  sc.level = "pair";
  return sc;
}

}  // namespace didiv
