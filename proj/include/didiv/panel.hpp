#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "didiv/errors.hpp"

namespace didiv {

// Adoption date of units never exposed; sorts after every finite date.
inline constexpr int kNever = std::numeric_limits<int>::max();

enum class Variable { Y, D, Z };

enum class Weighting { unweighted, analytic };

// Raw string table as read from a CSV file.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct PanelSchema {
  std::string unit = "unit";
  std::string time = "time";
  std::string y = "y";
  std::string d = "d";
  std::string z = "z";
  std::vector<std::string> x;
  std::optional<std::string> weight;
};

// Long-format observations in arbitrary order; input to PanelDataset::build.
struct LongPanel {
  std::vector<std::string> unit;
  std::vector<long long> time;
  std::vector<double> y, d, z;
  std::vector<std::vector<double>> x;  // one vector per covariate, row aligned
  std::vector<std::string> x_names;
  std::optional<std::vector<double>> weight;  // row aligned, constant within unit
};

// Immutable validated panel. Rows are sorted by (unit, time); when balanced,
// row i*T + t holds unit i, period t (both 0-based).
class PanelDataset {
 public:
  static PanelDataset build(const LongPanel& rows);

  int n_units() const noexcept { return static_cast<int>(unit_ids_.size()); }
  int n_periods() const noexcept { return static_cast<int>(time_labels_.size()); }
  Eigen::Index n_obs() const noexcept { return y_.size(); }
  bool balanced() const noexcept { return balanced_; }

  const std::vector<std::string>& unit_ids() const noexcept { return unit_ids_; }
  const std::vector<long long>& time_labels() const noexcept { return time_labels_; }
  std::span<const int> unit_index() const noexcept { return unit_index_; }
  std::span<const int> time_index() const noexcept { return time_index_; }

  const Eigen::VectorXd& y() const noexcept { return y_; }
  const Eigen::VectorXd& d() const noexcept { return d_; }
  const Eigen::VectorXd& z() const noexcept { return z_; }
  const Eigen::VectorXd& values(Variable v) const noexcept;
  const Eigen::MatrixXd& x() const noexcept { return x_; }
  const std::vector<std::string>& covariate_names() const noexcept { return x_names_; }
  int n_covariates() const noexcept { return static_cast<int>(x_.cols()); }

  bool has_weights() const noexcept { return unit_weight_.has_value(); }
  // Per-unit analytic weights; throws InvalidWeights when absent.
  const Eigen::VectorXd& unit_weights() const;
  // Per-unit weights for the requested scheme (ones when unweighted).
  Eigen::VectorXd weights_for(Weighting w) const;

  // N x T view of a long vector; requires balance.
  Eigen::MatrixXd as_matrix(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd as_matrix(Variable v) const { return as_matrix(values(v)); }

  LongPanel to_long() const;
  // Keeps the listed units (indices into unit_ids), in their current order.
  PanelDataset subset_units(std::span<const int> units) const;
  PanelDataset with_values(Variable v, Eigen::VectorXd values) const;

 private:
  std::vector<std::string> unit_ids_;
  std::vector<long long> time_labels_;
  std::vector<int> unit_index_;
  std::vector<int> time_index_;
  Eigen::VectorXd y_, d_, z_;
  Eigen::MatrixXd x_;
  std::vector<std::string> x_names_;
  std::optional<Eigen::VectorXd> unit_weight_;
  bool balanced_ = false;
};

PanelDataset load_panel(const Table& table, const PanelSchema& schema);

// Normalized adoption dates are in 1..T; kNever for never-exposed units.
struct CohortPartition {
  int T = 0;
  std::vector<int> adoption;        // per unit
  std::vector<int> cohort_of_unit;  // index into cohorts
  std::vector<int> cohorts;         // ascending, kNever last
  std::vector<double> mass;         // unit count or omega mass
  std::vector<double> share;        // mass / total, sums to one
  std::vector<std::vector<int>> members;

  std::size_t size() const noexcept { return cohorts.size(); }
  bool has_never() const noexcept { return !cohorts.empty() && cohorts.back() == kNever; }
  int n_exposed() const noexcept { return static_cast<int>(cohorts.size()) - (has_never() ? 1 : 0); }
  // Index of adoption date e in cohorts; throws EmptyCell if absent.
  std::size_t index_of(int e) const;
  double share_of(int e) const { return share[index_of(e)]; }
  // |{t >= e}| / T, zero for NEVER.
  double exposure_share(int e) const noexcept;
  // n_a / (n_a + n_b).
  double pair_share(int a, int b) const;
};

CohortPartition infer_cohorts(const PanelDataset& panel,
                              Weighting weighting = Weighting::unweighted);

class TimeWindow {
 public:
  enum class Kind { Pre, Mid, Post };

  static TimeWindow pre(int a) { return {Kind::Pre, 1, a - 1}; }
  static TimeWindow mid(int a, int b) { return {Kind::Mid, a, b - 1}; }
  static TimeWindow post(int a, int T) { return {Kind::Post, a, T}; }

  Kind kind() const noexcept { return kind_; }
  int first() const noexcept { return first_; }
  int last() const noexcept { return last_; }
  int length() const noexcept { return last_ >= first_ ? last_ - first_ + 1 : 0; }
  bool empty() const noexcept { return length() == 0; }
  bool within(int T) const noexcept { return first_ >= 1 && last_ <= T; }

 private:
  TimeWindow(Kind k, int first, int last) : kind_(k), first_(first), last_(last) {}
  Kind kind_;
  int first_;
  int last_;
};

// Cohort-by-period means (K x T), omega-weighted when requested.
struct CohortMeans {
  Eigen::MatrixXd y, d, z;
  Eigen::MatrixXd count;  // observed units per cell (unweighted)

  const Eigen::MatrixXd& of(Variable v) const noexcept {
    return v == Variable::Y ? y : (v == Variable::D ? d : z);
  }
};

CohortMeans cohort_means(const PanelDataset& panel, const CohortPartition& partition,
                         Weighting weighting = Weighting::unweighted);

// Cohort-by-period omega-weighted means of an arbitrary observation vector.
Eigen::MatrixXd cohort_period_means(const PanelDataset& panel, const CohortPartition& partition,
                                    const Eigen::VectorXd& values,
                                    const Eigen::VectorXd& unit_weights);

// Time average over the window of one cohort's period means.
// Throws EmptyCell for an empty window or an unobserved cohort-period cell.
double window_mean(const CohortMeans& means, Variable v, std::size_t cohort_row,
                   const TimeWindow& w);

double window_mean(const PanelDataset& panel, Variable v, int cohort, const TimeWindow& w,
                   Weighting weighting = Weighting::unweighted);

}  // namespace didiv
