#pragma once

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "didiv/compare.hpp"
#include "didiv/decompose.hpp"
#include "didiv/dgp.hpp"
#include "didiv/errors.hpp"
#include "didiv/panel.hpp"

namespace didiv::io {

inline constexpr int kSchemaVersion = 1;

// Tolerances recorded alongside every JSON output.
struct Thresholds {
  double weak_factor = kWeakFactor;
  double weak_threshold = 0.0;  // absolute, resolved against the panel
  double identity_tolerance = 1e-9;
  double weight_tolerance = 1e-10;
};

// Round-trip decimal rendering (17 significant digits); empty for nullopt.
std::string format_double(double v);
std::string format_double(const std::optional<double>& v);

Table read_csv(std::istream& in);
Table read_csv_file(const std::filesystem::path& path);
void write_csv(std::ostream& out, const Table& table);
void write_csv_file(const std::filesystem::path& path, const Table& table);
void write_text_file(const std::filesystem::path& path, const std::string& text);

Table panel_table(const PanelDataset& panel);
Table components_table(const DecompositionResult& dec);
Table summary_table(const DecompositionResult& dec);
Table paired_table(const SpecComparison& sc);
Table unbalanced_table(const UnbalancedWeightReport& rep);

nlohmann::json thresholds_json(const Thresholds& t);
nlohmann::json to_json(const DecompositionResult& dec, const Thresholds& t);
nlohmann::json to_json(const SpecComparison& sc, const Thresholds& t);
nlohmann::json to_json(const EstimandOracle& o);
nlohmann::json to_json(const MonteCarloSummary& mc);
nlohmann::json to_json(const UnbalancedWeightReport& rep, const Thresholds& t);
nlohmann::json error_json(const Error& e);

// Weight against Wald-DID, one glyph per design kind.
std::string scatter_svg(const DecompositionResult& dec);
// Base against alternative for Wald-DIDs and weights, with the 45-degree line.
std::string scatter45_svg(const SpecComparison& sc);

}  // namespace didiv::io
