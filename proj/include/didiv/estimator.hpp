#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string_view>

#include "didiv/panel.hpp"

namespace didiv {

enum class Spec { plain, weighted, covariates };

std::string_view spec_name(Spec s) noexcept;

// Default floor for |denominator|: factor * (max|D| + 1).
inline constexpr double kWeakFactor = 1e-12;

double weak_threshold(const PanelDataset& panel, double factor = kWeakFactor);

// Covariances use the 1/(omega mass * T) convention.
struct IVEstimate {
  double beta_iv = 0.0;
  double first_stage = 0.0;
  double reduced_form = 0.0;
  double c_dz = 0.0;
  double c_yz = 0.0;
  double var_z = 0.0;
  Spec spec = Spec::plain;
};

struct CovariateSplit {
  double omega = 0.0;
  std::optional<double> beta_within;
  std::optional<double> beta_between;
  double within_contribution = 0.0;  // C(Y, z_w) / (C_w + C_b), equals omega * beta_within
  double c_within = 0.0;   // C(D, z_w)
  double c_between = 0.0;  // C(D, z_b)
  double cy_within = 0.0;  // C(Y, z_w)
  double cy_between = 0.0; // C(Y, z_b)
  double c_p_between = 0.0;      // C(D, p_b)
  std::optional<double> beta_p_between;  // IV with p_b as instrument
  std::optional<double> beta_between_dual;  // (C^{DZ} beta_iv - C^p_b beta^p_b) / C_b
};

struct CovariateIVEstimate {
  double beta_iv_x = 0.0;
  double first_stage = 0.0;
  double reduced_form = 0.0;
  double c_dz = 0.0;  // C(D, z~)
  double c_yz = 0.0;
  Eigen::VectorXd gamma;
  std::optional<CovariateSplit> split;  // balanced panels only
  // Copied from split; omega = 0 and both absent without a split.
  double omega = 0.0;
  std::optional<double> beta_within;
  std::optional<double> beta_between;
};

struct EstimatorOptions {
  double weak_factor = kWeakFactor;
  Weighting weighting = Weighting::unweighted;
};

// Residual of Z on unit and time effects, omega-weighted; double demeaning on
// balanced panels, alternating projections otherwise.
Eigen::VectorXd fe_residual(const PanelDataset& panel, const Eigen::VectorXd& v,
                            const Eigen::VectorXd& unit_weights);

IVEstimate twfeiv(const PanelDataset& panel, double weak_factor = kWeakFactor);
IVEstimate twfeiv_weighted(const PanelDataset& panel, const Eigen::VectorXd& unit_weights,
                           double weak_factor = kWeakFactor);
IVEstimate twfeiv_weighted(const PanelDataset& panel, double weak_factor = kWeakFactor);
IVEstimate twfeiv_spec(const PanelDataset& panel, Spec spec, double weak_factor = kWeakFactor);

CovariateIVEstimate twfeiv_covariates(const PanelDataset& panel, EstimatorOptions options = {});

// Explicit 2SLS with unit dummies, time dummies and (for Spec::covariates)
// the covariates as exogenous regressors; rows scaled by sqrt(omega) for
// Spec::weighted. Dense; intended for verification.
double dummy_regression_oracle(const PanelDataset& panel, Spec spec);

}  // namespace didiv
