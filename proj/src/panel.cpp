#include "didiv/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

namespace didiv {

namespace {

bool parse_integer(const std::string& s, long long& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc{} && p == e;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

bool is_missing_token(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "." || s == "null";
}

double parse_real(const std::string& raw, const std::string& column, std::size_t row) {
  const std::string s = trim(raw);
  if (is_missing_token(s))
    fail(ErrorCode::MissingValue,
         "missing value in column '" + column + "' at data row " + std::to_string(row + 1));
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v))
    fail(ErrorCode::SchemaError, "non-numeric value '" + s + "' in column '" + column +
                                     "' at data row " + std::to_string(row + 1));
  return v;
}

// Numeric order when every id is an integer, else lexicographic.
std::vector<std::string> ordered_ids(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<long long> nums(ids.size());
  bool numeric = true;
  for (std::size_t i = 0; i < ids.size() && numeric; ++i) numeric = parse_integer(ids[i], nums[i]);
  if (numeric) {
    std::vector<std::size_t> idx(ids.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return nums[a] < nums[b]; });
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (auto i : idx) out.push_back(ids[i]);
    // "01" and "1" would collide numerically.
    for (std::size_t i = 1; i < idx.size(); ++i)
      if (nums[idx[i]] == nums[idx[i - 1]]) return ids;
    return out;
  }
  return ids;
}

}  // namespace

const Eigen::VectorXd& PanelDataset::values(Variable v) const noexcept {
  switch (v) {
    case Variable::Y: return y_;
    case Variable::D: return d_;
    case Variable::Z: break;
  }
  return z_;
}

const Eigen::VectorXd& PanelDataset::unit_weights() const {
  if (!unit_weight_) fail(ErrorCode::InvalidWeights, "panel carries no analytic weights");
  return *unit_weight_;
}

Eigen::VectorXd PanelDataset::weights_for(Weighting w) const {
  if (w == Weighting::analytic) return unit_weights();
  return Eigen::VectorXd::Ones(n_units());
}

Eigen::MatrixXd PanelDataset::as_matrix(const Eigen::VectorXd& v) const {
  if (!balanced_) fail(ErrorCode::NotBalanced, "matrix view requires a balanced panel");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      v.data(), n_units(), n_periods());
}

PanelDataset PanelDataset::build(const LongPanel& rows) {
  const std::size_t n = rows.unit.size();
  if (rows.time.size() != n || rows.y.size() != n || rows.d.size() != n || rows.z.size() != n)
    fail(ErrorCode::SchemaError, "panel columns have different lengths");
  if (rows.x.size() != rows.x_names.size())
    fail(ErrorCode::SchemaError, "covariate names do not match covariate columns");
  for (const auto& col : rows.x)
    if (col.size() != n) fail(ErrorCode::SchemaError, "covariate column length mismatch");
  if (rows.weight && rows.weight->size() != n)
    fail(ErrorCode::SchemaError, "weight column length mismatch");
  if (n == 0) fail(ErrorCode::SchemaError, "panel has no rows");

  PanelDataset p;
  p.unit_ids_ = ordered_ids(rows.unit);
  p.time_labels_ = rows.time;
  std::sort(p.time_labels_.begin(), p.time_labels_.end());
  p.time_labels_.erase(std::unique(p.time_labels_.begin(), p.time_labels_.end()),
                       p.time_labels_.end());

  std::unordered_map<std::string, int> unit_pos;
  for (std::size_t i = 0; i < p.unit_ids_.size(); ++i) unit_pos.emplace(p.unit_ids_[i], static_cast<int>(i));
  std::unordered_map<long long, int> time_pos;
  for (std::size_t t = 0; t < p.time_labels_.size(); ++t) time_pos.emplace(p.time_labels_[t], static_cast<int>(t));

  std::vector<int> ui(n), ti(n);
  for (std::size_t r = 0; r < n; ++r) {
    ui[r] = unit_pos.at(rows.unit[r]);
    ti[r] = time_pos.at(rows.time[r]);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return ui[a] != ui[b] ? ui[a] < ui[b] : ti[a] < ti[b];
  });

  const auto N = static_cast<Eigen::Index>(n);
  p.unit_index_.resize(n);
  p.time_index_.resize(n);
  p.y_.resize(N);
  p.d_.resize(N);
  p.z_.resize(N);
  p.x_.resize(N, static_cast<Eigen::Index>(rows.x.size()));
  p.x_names_ = rows.x_names;
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = order[k];
    if (k > 0 && ui[r] == ui[order[k - 1]] && ti[r] == ti[order[k - 1]]) {
      Error e(ErrorCode::DuplicateCell, "duplicate row for unit '" + rows.unit[r] +
                                            "' at period " + std::to_string(rows.time[r]));
      e.unit = rows.unit[r];
      e.period = rows.time[r];
      throw e;
    }
    p.unit_index_[k] = ui[r];
    p.time_index_[k] = ti[r];
    p.y_[static_cast<Eigen::Index>(k)] = rows.y[r];
    p.d_[static_cast<Eigen::Index>(k)] = rows.d[r];
    const double z = rows.z[r];
    if (z != 0.0 && z != 1.0)
      fail(ErrorCode::InvalidInstrument, "instrument value " + std::to_string(z) + " for unit '" +
                                             rows.unit[r] + "' is not 0 or 1");
    p.z_[static_cast<Eigen::Index>(k)] = z;
    for (std::size_t j = 0; j < rows.x.size(); ++j) {
      const double v = rows.x[j][r];
      if (!std::isfinite(v))
        fail(ErrorCode::MissingValue, "covariate '" + rows.x_names[j] + "' missing for unit '" +
                                          rows.unit[r] + "'");
      p.x_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = v;
    }
    if (!std::isfinite(rows.y[r]) || !std::isfinite(rows.d[r]))
      fail(ErrorCode::MissingValue, "outcome or treatment missing for unit '" + rows.unit[r] + "'");
  }

  // Staggered adoption: once exposed, always exposed.
  for (std::size_t k = 1; k < n; ++k) {
    if (p.unit_index_[k] != p.unit_index_[k - 1]) continue;
    const auto kk = static_cast<Eigen::Index>(k);
    if (p.z_[kk] < p.z_[kk - 1]) {
      const auto& id = p.unit_ids_[static_cast<std::size_t>(p.unit_index_[k])];
      const long long period = p.time_labels_[static_cast<std::size_t>(p.time_index_[k])];
      Error e(ErrorCode::NotStaggered,
              "instrument switches off for unit '" + id + "' at period " + std::to_string(period));
      e.unit = id;
      e.period = period;
      throw e;
    }
  }

  if (rows.weight) {
    Eigen::VectorXd w = Eigen::VectorXd::Constant(p.n_units(), std::nan(""));
    for (std::size_t k = 0; k < n; ++k) {
      const double v = (*rows.weight)[order[k]];
      const auto& id = p.unit_ids_[static_cast<std::size_t>(p.unit_index_[k])];
      if (!std::isfinite(v)) fail(ErrorCode::MissingValue, "weight missing for unit '" + id + "'");
      if (v < 0.0) fail(ErrorCode::InvalidWeights, "negative weight for unit '" + id + "'");
      double& slot = w[p.unit_index_[k]];
      if (std::isnan(slot)) slot = v;
      else if (slot != v)
        fail(ErrorCode::InvalidWeights, "weight varies over time for unit '" + id +
                                            "'; only per-unit weights are supported");
    }
    if (!(w.array() > 0.0).any()) fail(ErrorCode::DegenerateWeights, "all analytic weights are zero");
    p.unit_weight_ = std::move(w);
  }

  p.balanced_ = static_cast<std::size_t>(p.n_units()) * p.time_labels_.size() == n;
  return p;
}

LongPanel PanelDataset::to_long() const {
  LongPanel out;
  const auto n = static_cast<std::size_t>(n_obs());
  out.unit.resize(n);
  out.time.resize(n);
  out.y.assign(y_.data(), y_.data() + n);
  out.d.assign(d_.data(), d_.data() + n);
  out.z.assign(z_.data(), z_.data() + n);
  out.x_names = x_names_;
  out.x.assign(static_cast<std::size_t>(x_.cols()), std::vector<double>(n));
  if (unit_weight_) out.weight.emplace(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(unit_index_[k]);
    out.unit[k] = unit_ids_[i];
    out.time[k] = time_labels_[static_cast<std::size_t>(time_index_[k])];
    for (Eigen::Index j = 0; j < x_.cols(); ++j)
      out.x[static_cast<std::size_t>(j)][k] = x_(static_cast<Eigen::Index>(k), j);
    if (unit_weight_) (*out.weight)[k] = (*unit_weight_)[static_cast<Eigen::Index>(i)];
  }
  return out;
}

PanelDataset PanelDataset::subset_units(std::span<const int> units) const {
  std::vector<char> keep(unit_ids_.size(), 0);
  for (int u : units) keep.at(static_cast<std::size_t>(u)) = 1;
  LongPanel all = to_long();
  LongPanel out;
  out.x_names = all.x_names;
  out.x.resize(all.x.size());
  if (all.weight) out.weight.emplace();
  for (std::size_t k = 0; k < all.unit.size(); ++k) {
    if (!keep[static_cast<std::size_t>(unit_index_[k])]) continue;
    out.unit.push_back(all.unit[k]);
    out.time.push_back(all.time[k]);
    out.y.push_back(all.y[k]);
    out.d.push_back(all.d[k]);
    out.z.push_back(all.z[k]);
    for (std::size_t j = 0; j < all.x.size(); ++j) out.x[j].push_back(all.x[j][k]);
    if (all.weight) out.weight->push_back((*all.weight)[k]);
  }
  return build(out);
}

PanelDataset PanelDataset::with_values(Variable v, Eigen::VectorXd values) const {
  if (values.size() != n_obs()) fail(ErrorCode::SchemaError, "replacement vector length mismatch");
  PanelDataset copy = *this;
  switch (v) {
    case Variable::Y: copy.y_ = std::move(values); break;
    case Variable::D: copy.d_ = std::move(values); break;
    case Variable::Z: {
      LongPanel rows = to_long();
      rows.z.assign(values.data(), values.data() + values.size());
      return build(rows);
    }
  }
  return copy;
}

PanelDataset load_panel(const Table& table, const PanelSchema& schema) {
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < table.header.size(); ++j) col.emplace(trim(table.header[j]), j);
  auto need = [&](const std::string& name, const char* role) {
    auto it = col.find(name);
    if (it == col.end())
      fail(ErrorCode::SchemaError, std::string("missing ") + role + " column '" + name + "'");
    return it->second;
  };
  const auto cu = need(schema.unit, "unit");
  const auto ct = need(schema.time, "time");
  const auto cy = need(schema.y, "outcome");
  const auto cd = need(schema.d, "treatment");
  const auto cz = need(schema.z, "instrument");
  std::vector<std::size_t> cx;
  for (const auto& name : schema.x) cx.push_back(need(name, "covariate"));
  std::optional<std::size_t> cw;
  if (schema.weight) cw = need(*schema.weight, "weight");

  LongPanel rows;
  rows.x_names = schema.x;
  rows.x.resize(cx.size());
  if (cw) rows.weight.emplace();
  const std::size_t width = table.header.size();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    if (cells.size() != width)
      fail(ErrorCode::SchemaError, "data row " + std::to_string(r + 1) + " has " +
                                       std::to_string(cells.size()) + " fields, expected " +
                                       std::to_string(width));
    const std::string unit = trim(cells[cu]);
    if (unit.empty()) fail(ErrorCode::MissingValue, "empty unit id at data row " + std::to_string(r + 1));
    long long t = 0;
    const std::string ts = trim(cells[ct]);
    if (is_missing_token(ts)) fail(ErrorCode::MissingValue, "missing time at data row " + std::to_string(r + 1));
    if (!parse_integer(ts, t))
      fail(ErrorCode::SchemaError, "time value '" + ts + "' is not an integer");
    rows.unit.push_back(unit);
    rows.time.push_back(t);
    rows.y.push_back(parse_real(cells[cy], schema.y, r));
    rows.d.push_back(parse_real(cells[cd], schema.d, r));
    rows.z.push_back(parse_real(cells[cz], schema.z, r));
    for (std::size_t j = 0; j < cx.size(); ++j) rows.x[j].push_back(parse_real(cells[cx[j]], schema.x[j], r));
    if (cw) rows.weight->push_back(parse_real(cells[*cw], *schema.weight, r));
  }
  return PanelDataset::build(rows);
}

std::size_t CohortPartition::index_of(int e) const {
  auto it = std::lower_bound(cohorts.begin(), cohorts.end(), e);
  if (it == cohorts.end() || *it != e)
    fail(ErrorCode::EmptyCell, "cohort " + (e == kNever ? std::string("NEVER") : std::to_string(e)) +
                                   " has no units");
  return static_cast<std::size_t>(it - cohorts.begin());
}

double CohortPartition::exposure_share(int e) const noexcept {
  if (e == kNever) return 0.0;
  return static_cast<double>(T - e + 1) / static_cast<double>(T);
}

double CohortPartition::pair_share(int a, int b) const {
  const double na = share_of(a);
  const double nb = share_of(b);
  return na / (na + nb);
}

CohortPartition infer_cohorts(const PanelDataset& panel, Weighting weighting) {
  CohortPartition cp;
  cp.T = panel.n_periods();
  const int N = panel.n_units();
  cp.adoption.assign(static_cast<std::size_t>(N), kNever);
  const auto ui = panel.unit_index();
  const auto ti = panel.time_index();
  const auto& z = panel.z();
  for (Eigen::Index k = 0; k < panel.n_obs(); ++k) {
    auto& a = cp.adoption[static_cast<std::size_t>(ui[static_cast<std::size_t>(k)])];
    if (z[k] == 1.0) a = std::min(a, ti[static_cast<std::size_t>(k)] + 1);
  }
  cp.cohorts = cp.adoption;
  std::sort(cp.cohorts.begin(), cp.cohorts.end());
  cp.cohorts.erase(std::unique(cp.cohorts.begin(), cp.cohorts.end()), cp.cohorts.end());
  if (cp.cohorts.size() == 1 && cp.cohorts.front() == kNever)
    fail(ErrorCode::NoVariation, "no unit is ever exposed to the instrument");

  const Eigen::VectorXd w = panel.weights_for(weighting);
  cp.members.assign(cp.cohorts.size(), {});
  cp.mass.assign(cp.cohorts.size(), 0.0);
  cp.cohort_of_unit.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    const auto c = static_cast<std::size_t>(
        std::lower_bound(cp.cohorts.begin(), cp.cohorts.end(), cp.adoption[static_cast<std::size_t>(i)]) -
        cp.cohorts.begin());
    cp.cohort_of_unit[static_cast<std::size_t>(i)] = static_cast<int>(c);
    cp.members[c].push_back(i);
    cp.mass[c] += w[i];
  }
  const double total = std::accumulate(cp.mass.begin(), cp.mass.end(), 0.0);
  if (!(total > 0.0)) fail(ErrorCode::DegenerateWeights, "total analytic weight is zero");
  cp.share.resize(cp.mass.size());
  for (std::size_t c = 0; c < cp.mass.size(); ++c) cp.share[c] = cp.mass[c] / total;
  return cp;
}

Eigen::MatrixXd cohort_period_means(const PanelDataset& panel, const CohortPartition& partition,
                                    const Eigen::VectorXd& values,
                                    const Eigen::VectorXd& unit_weights) {
  const auto K = static_cast<Eigen::Index>(partition.size());
  const Eigen::Index T = panel.n_periods();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(K, T);
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(K, T);
  const auto ui = panel.unit_index();
  const auto ti = panel.time_index();
  for (Eigen::Index k = 0; k < panel.n_obs(); ++k) {
    const int i = ui[static_cast<std::size_t>(k)];
    const int c = partition.cohort_of_unit[static_cast<std::size_t>(i)];
    const int t = ti[static_cast<std::size_t>(k)];
    sum(c, t) += unit_weights[i] * values[k];
    mass(c, t) += unit_weights[i];
  }
  Eigen::MatrixXd out(K, T);
  for (Eigen::Index c = 0; c < K; ++c)
    for (Eigen::Index t = 0; t < T; ++t)
      out(c, t) = mass(c, t) > 0.0 ? sum(c, t) / mass(c, t) : std::nan("");
  return out;
}

CohortMeans cohort_means(const PanelDataset& panel, const CohortPartition& partition,
                         Weighting weighting) {
  const Eigen::VectorXd w = panel.weights_for(weighting);
  CohortMeans m;
  m.y = cohort_period_means(panel, partition, panel.y(), w);
  m.d = cohort_period_means(panel, partition, panel.d(), w);
  m.z = cohort_period_means(panel, partition, panel.z(), w);
  m.count = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(partition.size()), panel.n_periods());
  const auto ui = panel.unit_index();
  const auto ti = panel.time_index();
  for (Eigen::Index k = 0; k < panel.n_obs(); ++k) {
    const int i = ui[static_cast<std::size_t>(k)];
    m.count(partition.cohort_of_unit[static_cast<std::size_t>(i)], ti[static_cast<std::size_t>(k)]) += 1.0;
  }
  return m;
}

double window_mean(const CohortMeans& means, Variable v, std::size_t cohort_row,
                   const TimeWindow& w) {
  const auto& m = means.of(v);
  const auto row = static_cast<Eigen::Index>(cohort_row);
  if (w.empty()) fail(ErrorCode::EmptyCell, "empty time window");
  if (!w.within(static_cast<int>(m.cols()))) fail(ErrorCode::EmptyCell, "time window outside the panel horizon");
  double acc = 0.0;
  for (int t = w.first(); t <= w.last(); ++t) {
    if (means.count(row, t - 1) <= 0.0)
      fail(ErrorCode::EmptyCell, "cohort has no observations at period index " + std::to_string(t));
    acc += m(row, t - 1);
  }
  return acc / static_cast<double>(w.length());
}

double window_mean(const PanelDataset& panel, Variable v, int cohort, const TimeWindow& w,
                   Weighting weighting) {
  const CohortPartition cp = infer_cohorts(panel, weighting);
  const CohortMeans m = cohort_means(panel, cp, weighting);
  return window_mean(m, v, cp.index_of(cohort), w);
}

}  // namespace didiv
