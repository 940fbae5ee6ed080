#include "didiv/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace didiv::io {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 40> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

std::string format_double(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// ---------------------------------------------------------------- CSV

Table read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  char c;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field_started && field.empty()) quoted = true;
        else field.push_back(c);
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (quoted) fail(ErrorCode::SchemaError, "unterminated quoted field in CSV");
  if (any && (field_started || !field.empty() || !record.empty())) end_record();
  if (records.empty()) fail(ErrorCode::SchemaError, "CSV input has no header row");

  Table t;
  t.header = std::move(records.front());
  if (!t.header.empty() && t.header[0].starts_with("\xEF\xBB\xBF")) t.header[0].erase(0, 3);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      fail(ErrorCode::SchemaError, "CSV row " + std::to_string(r + 1) + " has " +
                                       std::to_string(records[r].size()) + " fields, header has " +
                                       std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

Table read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  return read_csv(in);
}

namespace {

void write_field(std::ostream& out, const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) {
    out << f;
    return;
  }
  out << '"';
  for (char c : f) {
    if (c == '"') out << '"';
    out << c;
  }
  out << '"';
}

void write_record(std::ostream& out, const std::vector<std::string>& r) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (i) out << ',';
    write_field(out, r[i]);
  }
  out << '\n';
}

}  // namespace

void write_csv(std::ostream& out, const Table& table) {
  write_record(out, table.header);
  for (const auto& r : table.rows) write_record(out, r);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  out << text;
  if (!out.flush()) fail(ErrorCode::IoError, "write to '" + path.string() + "' failed");
}

void write_csv_file(const std::filesystem::path& path, const Table& table) {
  std::ostringstream s;
  write_csv(s, table);
  write_text_file(path, s.str());
}

// ---------------------------------------------------------------- tables

namespace {

std::string date_text(int e) { return e == kNever ? std::string("never") : std::to_string(e); }

std::string window_text(const TimeWindow& w) {
  return w.empty() ? std::string() : std::to_string(w.first()) + "-" + std::to_string(w.last());
}

}  // namespace

Table panel_table(const PanelDataset& panel) {
  Table t;
  t.header = {"unit", "time", "y", "d", "z"};
  for (const auto& n : panel.covariate_names()) t.header.push_back(n);
  if (panel.has_weights()) t.header.push_back("weight");
  const auto ui = panel.unit_index();
  const auto ti = panel.time_index();
  t.rows.reserve(static_cast<std::size_t>(panel.n_obs()));
  for (Eigen::Index r = 0; r < panel.n_obs(); ++r) {
    const auto i = static_cast<std::size_t>(ui[static_cast<std::size_t>(r)]);
    std::vector<std::string> row = {panel.unit_ids()[i],
                                    std::to_string(panel.time_labels()[static_cast<std::size_t>(ti[static_cast<std::size_t>(r)])]),
                                    format_double(panel.y()[r]), format_double(panel.d()[r]),
                                    format_double(panel.z()[r])};
    for (Eigen::Index j = 0; j < panel.x().cols(); ++j) row.push_back(format_double(panel.x()(r, j)));
    if (panel.has_weights()) row.push_back(format_double(panel.unit_weights()[static_cast<Eigen::Index>(i)]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table components_table(const DecompositionResult& dec) {
  Table t;
  t.header = {"id", "kind", "treated", "control", "before", "after", "did_outcome", "did_treatment",
              "variance", "share_sq", "fs_weight", "iv_weight", "wald_did", "contribution", "weak", "empty_window"};
  for (const auto& c : dec.components)
    t.rows.push_back({c.cell.id(), std::string(kind_name(c.cell.kind)), date_text(c.cell.treated),
                      date_text(c.cell.control), window_text(c.cell.before), window_text(c.cell.after),
                      format_double(c.did_outcome), format_double(c.did_treatment), format_double(c.variance),
                      format_double(c.share_sq), format_double(c.fs_weight), format_double(c.iv_weight),
                      format_double(c.wald_did), format_double(c.contribution), c.weak ? "1" : "0",
                      c.cell.empty_window ? "1" : "0"});
  return t;
}

Table summary_table(const DecompositionResult& dec) {
  Table t;
  t.header = {"kind", "components", "total_weight", "total_wald_did", "weighted_wald_did", "negative_weights"};
  for (const auto& k : dec.totals)
    t.rows.push_back({std::string(kind_name(k.kind)), std::to_string(k.components), format_double(k.total_weight),
                      format_double(k.total_wald_did), format_double(k.weighted_wald_did),
                      std::to_string(k.negative_weights)});
  return t;
}

Table paired_table(const SpecComparison& sc) {
  Table t;
  t.header = {"id", "kind", "base_wald_did", "alt_wald_did", "base_weight", "alt_weight", "phantom_base", "phantom_alt"};
  for (const auto& p : sc.paired_components)
    t.rows.push_back({p.id, p.kind, format_double(p.base_wald), format_double(p.alt_wald),
                      format_double(p.base_weight), format_double(p.alt_weight), p.phantom_base ? "1" : "0",
                      p.phantom_alt ? "1" : "0"});
  return t;
}

Table unbalanced_table(const UnbalancedWeightReport& rep) {
  Table t;
  t.header = {"cohort", "period", "residual_mean", "cell_share", "caet_estimate", "outcome_did",
              "wald",   "weight", "bias_term",     "empty"};
  for (const auto& e : rep.entries)
    t.rows.push_back({std::to_string(e.cohort), std::to_string(e.period), format_double(e.residual_mean),
                      format_double(e.cell_share), format_double(e.caet_estimate), format_double(e.outcome_did),
                      format_double(e.wald), format_double(e.weight), e.bias_term ? "1" : "0",
                      e.empty ? "1" : "0"});
  return t;
}

// ---------------------------------------------------------------- JSON

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json date_json(int e) { return e == kNever ? json("never") : json(e); }

json window_json(const TimeWindow& w) {
  if (w.empty()) return nullptr;
  return {{"first", w.first()}, {"last", w.last()}};
}

json header(const char* kind) { return {{"schema_version", kSchemaVersion}, {"kind", kind}}; }

}  // namespace

json thresholds_json(const Thresholds& t) {
  return {{"weak_factor", t.weak_factor},
          {"weak_threshold", t.weak_threshold},
          {"identity_tolerance", t.identity_tolerance},
          {"weight_tolerance", t.weight_tolerance}};
}

json to_json(const DecompositionResult& dec, const Thresholds& t) {
  json j = header("decomposition");
  j["thresholds"] = thresholds_json(t);
  j["weighted"] = dec.weighted;
  j["T"] = dec.T;
  j["cohorts"] = json::array();
  for (std::size_t k = 0; k < dec.cohorts.size(); ++k)
    j["cohorts"].push_back({{"adoption", date_json(dec.cohorts[k])}, {"share", dec.shares[k]}});
  j["beta_iv"] = dec.beta_iv;
  j["c_dz"] = dec.c_dz;
  j["c_dz_direct"] = dec.c_dz_direct;
  j["weight_sum"] = dec.weight_sum;
  j["identity_residual"] = dec.identity_residual;
  j["denominator_residual"] = dec.denominator_residual;
  j["weak_cells"] = dec.weak_cells;
  j["empty_cells"] = dec.empty_cells;
  j["components"] = json::array();
  for (const auto& c : dec.components)
    j["components"].push_back({{"id", c.cell.id()},
                               {"kind", kind_name(c.cell.kind)},
                               {"treated", date_json(c.cell.treated)},
                               {"control", date_json(c.cell.control)},
                               {"before", window_json(c.cell.before)},
                               {"after", window_json(c.cell.after)},
                               {"empty_window", c.cell.empty_window},
                               {"did_outcome", opt(c.did_outcome)},
                               {"did_treatment", opt(c.did_treatment)},
                               {"variance", c.variance},
                               {"share_sq", c.share_sq},
                               {"fs_weight", c.fs_weight},
                               {"iv_weight", c.iv_weight},
                               {"wald_did", opt(c.wald_did)},
                               {"contribution", c.contribution},
                               {"weak", c.weak}});
  j["totals"] = json::array();
  for (const auto& k : dec.totals)
    j["totals"].push_back({{"kind", kind_name(k.kind)},
                           {"components", k.components},
                           {"total_weight", k.total_weight},
                           {"total_wald_did", k.total_wald_did},
                           {"weighted_wald_did", k.weighted_wald_did},
                           {"negative_weights", k.negative_weights}});
  return j;
}

json to_json(const SpecComparison& sc, const Thresholds& t) {
  json j = header("comparison");
  j["thresholds"] = thresholds_json(t);
  j["level"] = sc.level;
  j["base_estimate"] = sc.base_estimate;
  j["alt_estimate"] = sc.alt_estimate;
  j["difference"] = sc.difference;
  j["terms"] = {{"wald_dids", sc.term_walddids},
                {"weights", sc.term_weights},
                {"interaction", sc.term_interaction},
                {"within", sc.term_within}};
  j["identity_residual"] = sc.identity_residual;
  j["phantom_cells"] = sc.phantom_cells;
  j["undefined_cells"] = sc.undefined_cells;
  j["paired_components"] = json::array();
  for (const auto& p : sc.paired_components)
    j["paired_components"].push_back({{"id", p.id},
                                      {"kind", p.kind},
                                      {"base_wald_did", opt(p.base_wald)},
                                      {"alt_wald_did", opt(p.alt_wald)},
                                      {"base_weight", p.base_weight},
                                      {"alt_weight", p.alt_weight},
                                      {"phantom_base", p.phantom_base},
                                      {"phantom_alt", p.phantom_alt}});
  return j;
}

json to_json(const EstimandOracle& o) {
  json j = header("oracle");
  j["target"] = o.target_label;
  j["stable"] = o.stable;
  j["wcaet"] = o.wcaet;
  j["delta_caet"] = o.delta_caet;
  j["denominator"] = o.denominator;
  j["denominator_direct"] = o.denominator_direct;
  j["wclatt"] = o.wclatt;
  j["delta_clatt"] = o.delta_clatt;
  j["estimand"] = o.estimand;
  j["weights"] = json::array();
  for (const auto& w : o.weights)
    j["weights"].push_back({{"id", w.id()},
                            {"kind", kind_name(w.kind)},
                            {"treated", date_json(w.treated)},
                            {"control", date_json(w.control)},
                            {"fs_weight", w.fs_weight},
                            {"first_stage", w.first_stage},
                            {"iv_weight", w.iv_weight},
                            {"closed_form_weight", w.closed_form_weight}});
  j["aggregates"] = json::array();
  for (const auto& a : o.aggregates)
    j["aggregates"].push_back({{"cohort", a.cohort},
                               {"window", a.window},
                               {"first", a.first},
                               {"last", a.last},
                               {"caet", a.caet},
                               {"target_compliers_weighted", a.target_cm},
                               {"target_time_corrected", a.target_time}});
  j["cohort_weights"] = json::array();
  for (const auto& [e, w] : o.cohort_weights) j["cohort_weights"].push_back({{"cohort", e}, {"weight", w}});
  // thresholds are not used by the population computation
  j["thresholds"] = json::object();
  return j;
}

json to_json(const MonteCarloSummary& mc) {
  json j = header("monte_carlo");
  j["thresholds"] = thresholds_json({});
  j["replications"] = mc.replications;
  j["used"] = mc.used;
  j["degenerate"] = mc.degenerate;
  j["mean"] = mc.mean;
  j["sd"] = mc.sd;
  j["mc_se"] = mc.mc_se;
  j["oracle_estimand"] = opt(mc.oracle_estimand);
  j["deviation"] = opt(mc.deviation);
  j["deviation_in_se"] = mc.deviation && mc.mc_se > 0.0 ? json(*mc.deviation / mc.mc_se) : json(nullptr);
  j["cells"] = json::array();
  for (const auto& c : mc.cells)
    j["cells"].push_back({{"id", c.id},
                          {"kind", kind_name(c.kind)},
                          {"mean_iv_weight", c.mean_iv_weight},
                          {"population_iv_weight", c.population_iv_weight},
                          {"negative_replications", c.negative_replications}});
  j["estimates"] = mc.estimates;
  return j;
}

json to_json(const UnbalancedWeightReport& rep, const Thresholds& t) {
  json j = header("unbalanced_weights");
  j["thresholds"] = thresholds_json(t);
  j["control"] = rep.control == ControlChoice::never ? "never" : "last";
  j["control_cohort"] = date_json(rep.control_cohort);
  j["normalization"] = rep.normalization;
  j["weight_sum"] = rep.weight_sum;
  j["negative_flags"] = rep.negative_flags;
  j["bias_entries"] = rep.bias_entries;
  j["empty_entries"] = rep.empty_entries;
  j["components"] = rep.components;
  j["sweeps"] = rep.sweeps;
  j["entries"] = json::array();
  for (const auto& e : rep.entries)
    j["entries"].push_back({{"cohort", e.cohort},
                            {"period", e.period},
                            {"residual_mean", e.residual_mean},
                            {"cell_share", e.cell_share},
                            {"caet_estimate", opt(e.caet_estimate)},
                            {"outcome_did", opt(e.outcome_did)},
                            {"wald", opt(e.wald)},
                            {"weight", e.weight},
                            {"bias_term", e.bias_term},
                            {"empty", e.empty}});
  return j;
}

json error_json(const Error& e) {
  json body = {{"code", code_name(e.code())}, {"message", e.what()}};
  if (e.unit) body["unit"] = *e.unit;
  if (e.period) body["period"] = *e.period;
  if (e.last_change) body["last_change"] = *e.last_change;
  return {{"schema_version", kSchemaVersion}, {"error", body}};
}

// ---------------------------------------------------------------- SVG

namespace {

std::string num(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.2f", v);
  return buf.data();
}

std::string label(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf.data();
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      const double pad = std::max(std::abs(lo) * 0.1, 0.5);
      lo -= pad;
      hi += pad;
    }
    const double pad = 0.06 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

// One plotting panel inside an SVG canvas.
class Frame {
 public:
  Frame(double x0, double y0, double w, double h, Range xr, Range yr)
      : x0_(x0), y0_(y0), w_(w), h_(h), xr_(xr), yr_(yr) {}

  double px(double x) const { return x0_ + (x - xr_.lo) / (xr_.hi - xr_.lo) * w_; }
  double py(double y) const { return y0_ + h_ - (y - yr_.lo) / (yr_.hi - yr_.lo) * h_; }

  void axes(std::ostringstream& s, const std::string& title, const std::string& xl, const std::string& yl) const {
    s << "<rect x=\"" << num(x0_) << "\" y=\"" << num(y0_) << "\" width=\"" << num(w_) << "\" height=\"" << num(h_)
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double xv = xr_.lo + (xr_.hi - xr_.lo) * k / 4.0;
      const double yv = yr_.lo + (yr_.hi - yr_.lo) * k / 4.0;
      s << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(y0_ + h_ + 16) << "\" text-anchor=\"middle\">"
        << label(xv) << "</text>\n";
      s << "<text x=\"" << num(x0_ - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << label(yv)
        << "</text>\n";
    }
    if (yr_.lo < 0.0 && yr_.hi > 0.0)
      s << "<line x1=\"" << num(x0_) << "\" y1=\"" << num(py(0)) << "\" x2=\"" << num(x0_ + w_) << "\" y2=\""
        << num(py(0)) << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
    s << "<text x=\"" << num(x0_ + w_ / 2) << "\" y=\"" << num(y0_ - 10) << "\" text-anchor=\"middle\">" << title
      << "</text>\n";
    s << "<text x=\"" << num(x0_ + w_ / 2) << "\" y=\"" << num(y0_ + h_ + 36) << "\" text-anchor=\"middle\">" << xl
      << "</text>\n";
    s << "<text transform=\"translate(" << num(x0_ - 52) << "," << num(y0_ + h_ / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">" << yl << "</text>\n";
  }

 private:
  double x0_, y0_, w_, h_;
  Range xr_, yr_;
};

void glyph(std::ostringstream& s, const std::string& kind, double x, double y) {
  if (kind == "UE") {
    s << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
  } else if (kind == "ENY") {
    s << "<rect x=\"" << num(x - 4) << "\" y=\"" << num(y - 4)
      << "\" width=\"8\" height=\"8\" fill=\"#2ca02c\"/>\n";
  } else if (kind == "EES") {
    s << "<polygon points=\"" << num(x) << "," << num(y - 5) << " " << num(x - 5) << "," << num(y + 4) << " "
      << num(x + 5) << "," << num(y + 4) << "\" fill=\"#d62728\"/>\n";
  } else {
    s << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"4\" fill=\"none\" stroke=\"#9467bd\"/>\n";
  }
}

std::string open_svg(int w, int h) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(w) + "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
         std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void legend(std::ostringstream& s, double x, double y) {
  const std::array<std::pair<const char*, const char*>, 3> rows = {
      {{"UE", "unexposed/exposed"}, {"ENY", "exposed/not yet exposed"}, {"EES", "exposed/exposed shift"}}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double yy = y + 16.0 * static_cast<double>(i);
    glyph(s, rows[i].first, x, yy);
    s << "<text x=\"" << num(x + 10) << "\" y=\"" << num(yy + 4) << "\">" << rows[i].second << "</text>\n";
  }
}

}  // namespace

std::string scatter_svg(const DecompositionResult& dec) {
  Range xr, yr;
  for (const auto& c : dec.components)
    if (c.wald_did) {
      xr.add(*c.wald_did);
      yr.add(c.iv_weight);
    }
  yr.add(0.0);
  xr.finish();
  yr.finish();
  const Frame f(80, 40, 460, 320, xr, yr);
  std::ostringstream s;
  s << open_svg(720, 420);
  f.axes(s, "Weights and Wald-DID estimates (beta = " + label(dec.beta_iv) + ")", "Wald-DID", "weight");
  for (const auto& c : dec.components)
    if (c.wald_did) glyph(s, std::string(kind_short(c.cell.kind)), f.px(*c.wald_did), f.py(c.iv_weight));
  legend(s, 560, 60);
  s << "</svg>\n";
  return s.str();
}

std::string scatter45_svg(const SpecComparison& sc) {
  Range wr, sr;
  for (const auto& p : sc.paired_components) {
    if (p.base_wald && p.alt_wald) {
      wr.add(*p.base_wald);
      wr.add(*p.alt_wald);
    }
    sr.add(p.base_weight);
    sr.add(p.alt_weight);
  }
  wr.finish();
  sr.finish();
  const Frame left(80, 40, 300, 300, wr, wr), right(480, 40, 300, 300, sr, sr);
  std::ostringstream s;
  s << open_svg(900, 470);
  left.axes(s, "Wald-DID estimates", "base", "alternative");
  right.axes(s, "Weights", "base", "alternative");
  auto diagonal = [&](const Frame& f, const Range& r) {
    s << "<line x1=\"" << num(f.px(r.lo)) << "\" y1=\"" << num(f.py(r.lo)) << "\" x2=\"" << num(f.px(r.hi))
      << "\" y2=\"" << num(f.py(r.hi)) << "\" stroke=\"#888\" stroke-dasharray=\"5 4\"/>\n";
  };
  diagonal(left, wr);
  diagonal(right, sr);
  for (const auto& p : sc.paired_components) {
    if (p.base_wald && p.alt_wald) glyph(s, p.kind, left.px(*p.base_wald), left.py(*p.alt_wald));
    glyph(s, p.kind, right.px(p.base_weight), right.py(p.alt_weight));
  }
  if (sc.level == "cell") legend(s, 80, 400);
  s << "</svg>\n";
  return s.str();
}

}  // namespace didiv::io
