#include "didiv/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "didiv/compare.hpp"
#include "didiv/decompose.hpp"
#include "didiv/dgp.hpp"
#include "didiv/io.hpp"

namespace didiv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Source {
  std::string input;
  PanelSchema schema;
  std::string x_cols;
  std::string weight_col;
  std::string preset_name;
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

struct Output {
  std::string dir = ".";
  std::string formats = "json,csv,svg";
  double weak_factor = kWeakFactor;

  std::set<std::string> format_set() const {
    std::set<std::string> s;
    std::stringstream ss(formats);
    for (std::string f; std::getline(ss, f, ',');) {
      if (f != "json" && f != "csv" && f != "svg") fail(ErrorCode::InvalidConfig, "unknown output format '" + f + "'");
      s.insert(f);
    }
    return s;
  }
  fs::path path(const std::string& name) const { return fs::path(dir) / name; }
  void prepare() const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) fail(ErrorCode::IoError, "output directory '" + dir + "' is not writable");
  }
};

void add_source(CLI::App* cmd, Source& s, bool panel_flags) {
  if (panel_flags) {
    cmd->add_option("--input", s.input, "Long-format CSV panel");
    cmd->add_option("--unit-col", s.schema.unit, "Unit id column")->capture_default_str();
    cmd->add_option("--time-col", s.schema.time, "Integer time column")->capture_default_str();
    cmd->add_option("--y-col", s.schema.y, "Outcome column")->capture_default_str();
    cmd->add_option("--d-col", s.schema.d, "Treatment column")->capture_default_str();
    cmd->add_option("--z-col", s.schema.z, "Binary instrument column")->capture_default_str();
    cmd->add_option("--x-cols", s.x_cols, "Comma-separated covariate columns");
    cmd->add_option("--weight-col", s.weight_col, "Analytic unit weight column");
  }
  cmd->add_option("--preset", s.preset_name, "Simulation preset: figure1, lemma3-stable, negative-weight, random-adoption");
  cmd->add_option("--config", s.config_path, "Simulation config (JSON)");
  cmd->add_option("--seed", s.seed, "Override the config seed");
}

void add_output(CLI::App* cmd, Output& o) {
  cmd->add_option("--out", o.dir, "Output directory")->capture_default_str();
  cmd->add_option("--formats", o.formats, "Comma list of json, csv, svg")->capture_default_str();
  cmd->add_option("--weak-threshold", o.weak_factor, "Weak-denominator factor, scaled by max|D| + 1")
      ->capture_default_str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::optional<DgpConfig> config_of(const Source& s) {
  if (!s.config_path.empty() && !s.preset_name.empty())
    fail(ErrorCode::InvalidConfig, "--preset and --config are mutually exclusive");
  std::optional<DgpConfig> cfg;
  if (!s.config_path.empty()) cfg = parse_config(read_file(s.config_path));
  if (!s.preset_name.empty()) cfg = preset(s.preset_name);
  if (cfg && s.seed) cfg->seed = *s.seed;
  return cfg;
}

DgpConfig require_config(const Source& s) {
  auto cfg = config_of(s);
  if (!cfg) fail(ErrorCode::InvalidConfig, "a --preset or --config is required");
  return *cfg;
}

PanelDataset panel_of(const Source& s) {
  if (!s.input.empty()) {
    PanelSchema schema = s.schema;
    std::stringstream ss(s.x_cols);
    for (std::string c; std::getline(ss, c, ',');)
      if (!c.empty()) schema.x.push_back(c);
    if (!s.weight_col.empty()) schema.weight = s.weight_col;
    return load_panel(io::read_csv_file(s.input), schema);
  }
  if (auto cfg = config_of(s)) return generate(*cfg);
  fail(ErrorCode::InvalidConfig, "an --input panel or a --preset/--config is required");
}

io::Thresholds thresholds_for(const PanelDataset& panel, const Output& o) {
  io::Thresholds t;
  t.weak_factor = o.weak_factor;
  t.weak_threshold = weak_threshold(panel, o.weak_factor);
  return t;
}

void write_json(const Output& o, const std::string& name, const json& j) {
  io::write_text_file(o.path(name), j.dump(2) + "\n");
}

Weighting weighting_named(const std::string& s) {
  if (s == "plain") return Weighting::unweighted;
  if (s == "weighted") return Weighting::analytic;
  fail(ErrorCode::InvalidConfig, "unknown specification '" + s + "'");
}

ControlChoice control_named(const std::string& s) {
  if (s == "never") return ControlChoice::never;
  if (s == "last") return ControlChoice::last;
  fail(ErrorCode::InvalidConfig, "--control must be never or last");
}

void write_unbalanced(const PanelDataset& panel, const Output& o, ControlChoice control, std::ostream& out) {
  const auto rep = unbalanced_weights(panel, control);
  const auto formats = o.format_set();
  o.prepare();
  if (formats.count("json")) write_json(o, "unbalanced.json", io::to_json(rep, thresholds_for(panel, o)));
  if (formats.count("csv")) io::write_csv_file(o.path("unbalanced.csv"), io::unbalanced_table(rep));
  out << "unbalanced weights: entries=" << rep.entries.size() << " weight_sum=" << io::format_double(rep.weight_sum)
      << " bias_entries=" << rep.bias_entries << " empty_entries=" << rep.empty_entries << "\n";
}

int decompose_panel(const PanelDataset& panel, const Output& o, Weighting weighting,
                    const std::string& control, std::ostream& out) {
  if (!panel.balanced()) {
    write_unbalanced(panel, o, control_named(control.empty() ? "never" : control), out);
    return kExitOk;
  }
  const DecompositionResult dec = decompose(panel, {o.weak_factor, weighting});
  const auto formats = o.format_set();
  o.prepare();
  if (formats.count("json")) write_json(o, "decomposition.json", io::to_json(dec, thresholds_for(panel, o)));
  if (formats.count("csv")) {
    io::write_csv_file(o.path("components.csv"), io::components_table(dec));
    io::write_csv_file(o.path("summary.csv"), io::summary_table(dec));
  }
  if (formats.count("svg")) io::write_text_file(o.path("scatter.svg"), io::scatter_svg(dec));
  if (!control.empty()) write_unbalanced(panel, o, control_named(control), out);
  out << "beta_iv=" << io::format_double(dec.beta_iv) << " components=" << dec.components.size()
      << " weight_sum=" << io::format_double(dec.weight_sum) << " weak_cells=" << dec.weak_cells << "\n";
  return dec.weak_cells > 0 ? kExitDiagnostics : kExitOk;
}

struct SpecChoice {
  Weighting weighting = Weighting::unweighted;
  bool covariates = false;
};

SpecChoice spec_named(const std::string& s) {
  if (s == "plain") return {Weighting::unweighted, false};
  if (s == "weighted") return {Weighting::analytic, false};
  if (s == "covariates") return {Weighting::unweighted, true};
  if (s == "weighted-covariates") return {Weighting::analytic, true};
  fail(ErrorCode::InvalidConfig, "unknown specification '" + s + "'");
}

SpecComparison compare_specs(const PanelDataset& panel, const SpecChoice& base, const SpecChoice& alt,
                             double weak_factor) {
  if (!base.covariates && !alt.covariates) {
    const auto b = decompose(panel, {weak_factor, base.weighting});
    const auto a = decompose(panel, {weak_factor, alt.weighting});
    return oaxaca(b, a);
  }
  if (base.weighting != alt.weighting)
    fail(ErrorCode::IncompatibleSpecs, "covariate comparisons require the same weighting on both sides");
  const CovariatePairTerms t = covariate_pair_terms(panel, {weak_factor, base.weighting});
  SpecComparison sc;
  if (base.covariates && alt.covariates)
    sc = oaxaca(t.adjusted, t.adjusted_estimate, t.adjusted, t.adjusted_estimate);
  else if (alt.covariates)
    sc = oaxaca(t.plain, t.plain_estimate, t.adjusted, t.adjusted_estimate, t.within_term);
  else
    sc = oaxaca(t.adjusted, t.adjusted_estimate, t.plain, t.plain_estimate, -t.within_term);
  sc.level = "pair";
  return sc;
}

int emit_error(std::ostream& err, const json& j) {
  err << j.dump() << "\n";
  return kExitError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decomposition diagnostics for two-way fixed effects IV estimates under staggered instruments",
               "didiv"};
  app.require_subcommand(1);

  Source src;
  Output o;
  std::string spec = "plain", control, base = "plain", alt = "weighted";
  bool also_decompose = false;
  int reps = 0;

  auto* dec_cmd = app.add_subcommand("decompose", "Weights and Wald-DIDs of every design cell");
  add_source(dec_cmd, src, true);
  add_output(dec_cmd, o);
  dec_cmd->add_option("--spec", spec, "plain or weighted")->capture_default_str();
  dec_cmd->add_option("--control", control, "Control for unbalanced weights: never or last");

  auto* cmp_cmd = app.add_subcommand("compare", "Oaxaca-style comparison of two specifications");
  add_source(cmp_cmd, src, true);
  add_output(cmp_cmd, o);
  cmp_cmd->add_option("--base", base, "plain, weighted, covariates, weighted-covariates")->capture_default_str();
  cmp_cmd->add_option("--alt", alt, "plain, weighted, covariates, weighted-covariates")->capture_default_str();

  auto* sim_cmd = app.add_subcommand("simulate", "Draw a panel from a preset or config");
  add_source(sim_cmd, src, false);
  add_output(sim_cmd, o);
  sim_cmd->add_flag("--decompose", also_decompose, "Also decompose the simulated panel");

  auto* orc_cmd = app.add_subcommand("oracle", "Population estimand and optional Monte Carlo");
  add_source(orc_cmd, src, false);
  add_output(orc_cmd, o);
  orc_cmd->add_option("--reps", reps, "Monte Carlo replications (0 skips)")->check(CLI::NonNegativeNumber);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (dec_cmd->parsed()) return decompose_panel(panel_of(src), o, weighting_named(spec), control, out);

    if (cmp_cmd->parsed()) {
      const PanelDataset panel = panel_of(src);
      const SpecComparison sc = compare_specs(panel, spec_named(base), spec_named(alt), o.weak_factor);
      const double scale = std::max({1.0, std::abs(sc.base_estimate), std::abs(sc.alt_estimate)});
      if (!(sc.identity_residual <= 1e-10 * scale))
        return emit_error(err, {{"schema_version", io::kSchemaVersion},
                                {"error", {{"code", "IDENTITY_VIOLATION"},
                                           {"message", "comparison terms do not sum to the difference"},
                                           {"residual", sc.identity_residual}}}});
      const auto formats = o.format_set();
      o.prepare();
      if (formats.count("json")) write_json(o, "comparison.json", io::to_json(sc, thresholds_for(panel, o)));
      if (formats.count("csv")) io::write_csv_file(o.path("paired.csv"), io::paired_table(sc));
      if (formats.count("svg")) io::write_text_file(o.path("scatter45.svg"), io::scatter45_svg(sc));
      out << "difference=" << io::format_double(sc.difference) << " wald_dids=" << io::format_double(sc.term_walddids)
          << " weights=" << io::format_double(sc.term_weights)
          << " interaction=" << io::format_double(sc.term_interaction)
          << " within=" << io::format_double(sc.term_within) << "\n";
      return kExitOk;
    }

    if (sim_cmd->parsed()) {
      const DgpConfig cfg = require_config(src);
      const PanelDataset panel = generate(cfg);
      o.prepare();
      io::write_csv_file(o.path("panel.csv"), io::panel_table(panel));
      io::write_text_file(o.path("config.json"), config_to_json(cfg) + "\n");
      out << "panel rows=" << panel.n_obs() << " units=" << panel.n_units() << " periods=" << panel.n_periods()
          << "\n";
      if (also_decompose) return decompose_panel(panel, o, Weighting::unweighted, "", out);
      return kExitOk;
    }

    if (orc_cmd->parsed()) {
      const DgpConfig cfg = require_config(src);
      const EstimandOracle oracle = oracle_estimand(cfg);
      o.prepare();
      write_json(o, "oracle.json", io::to_json(oracle));
      out << "estimand=" << io::format_double(oracle.estimand) << " wclatt=" << io::format_double(oracle.wclatt)
          << " delta_clatt=" << io::format_double(oracle.delta_clatt) << "\n";
      if (reps > 0) {
        const MonteCarloSummary mc = monte_carlo(cfg, reps);
        write_json(o, "mc_report.json", io::to_json(mc));
        out << "monte_carlo mean=" << io::format_double(mc.mean) << " mc_se=" << io::format_double(mc.mc_se)
            << " used=" << mc.used << "\n";
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    return emit_error(err, io::error_json(e));
  } catch (const std::exception& e) {
    return emit_error(err, {{"schema_version", io::kSchemaVersion},
                            {"error", {{"code", "INTERNAL"}, {"message", e.what()}}}});
  }
  return kExitError;
}

}  // namespace didiv::cli
