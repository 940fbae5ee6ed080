#include <doctest.h>

#include <sstream>

#include "didiv/io.hpp"
#include "support.hpp"

using namespace didiv;

TEST_CASE("CSV reader handles quotes, CRLF and BOM") {
  std::istringstream in("\xEF\xBB\xBFunit,time,note\r\n\"a,1\",1,\"say \"\"hi\"\"\"\r\nb,2,\r\n");
  const Table t = io::read_csv(in);
  REQUIRE(t.header.size() == 3);
  CHECK(t.header[0] == "unit");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "a,1");
  CHECK(t.rows[0][2] == "say \"hi\"");
  CHECK(t.rows[1][2].empty());

  std::ostringstream out;
  io::write_csv(out, t);
  std::istringstream again(out.str());
  const Table u = io::read_csv(again);
  CHECK(u.rows == t.rows);

  std::istringstream ragged("a,b\n1\n");
  CHECK_THROWS_AS(io::read_csv(ragged), Error);
  std::istringstream open_quote("a\n\"x\n");
  CHECK_THROWS_AS(io::read_csv(open_quote), Error);
}

TEST_CASE("decimal rendering round-trips doubles") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = normal(rng) / 7.0;
    CHECK(std::stod(io::format_double(v)) == v);
  }
  CHECK(io::format_double(std::optional<double>{}).empty());
}

TEST_CASE("panel CSV round trip preserves estimates") {
  std::mt19937_64 rng(4);
  testing::RandomPanelSpec spec;
  spec.N = 50;
  spec.T = 7;
  spec.cohorts = {2, 5, kNever};
  spec.weights = true;
  spec.covariates = 1;
  const auto p = PanelDataset::build(testing::random_long(rng, spec));
  std::ostringstream out;
  io::write_csv(out, io::panel_table(p));
  std::istringstream in(out.str());
  PanelSchema schema;
  schema.x = {"x1"};
  schema.weight = "weight";
  const auto q = load_panel(io::read_csv(in), schema);
  CHECK(q.y() == p.y());
  CHECK(q.x() == p.x());
  CHECK(decompose(q).beta_iv == decompose(p).beta_iv);
  CHECK(twfeiv_weighted(q).beta_iv == twfeiv_weighted(p).beta_iv);
}

TEST_CASE("JSON outputs carry schema version and thresholds") {
  const auto cfg = preset("negative-weight");
  const auto p = generate(cfg);
  const auto dec = decompose(p);
  io::Thresholds t;
  t.weak_threshold = weak_threshold(p);
  const auto j = io::to_json(dec, t);
  CHECK(j["schema_version"] == io::kSchemaVersion);
  CHECK(j["thresholds"]["weak_threshold"].get<double>() == t.weak_threshold);
  CHECK(j["components"].size() == dec.components.size());
  CHECK(j["components"][0]["control"] == "never");

  const auto sc = oaxaca(dec, dec);
  CHECK(io::to_json(sc, t)["terms"]["weights"].get<double>() == 0.0);
  const auto o = io::to_json(oracle_estimand(cfg));
  CHECK(o["schema_version"] == io::kSchemaVersion);
  CHECK(o["delta_clatt"].get<double>() > 0.01);

  Error e(ErrorCode::NotStaggered, "switches off");
  e.unit = "u7";
  e.period = 4;
  const auto ej = io::error_json(e);
  CHECK(ej["error"]["code"] == "NOT_STAGGERED");
  CHECK(ej["error"]["unit"] == "u7");
  CHECK(ej["error"]["period"] == 4);
}

TEST_CASE("SVG output is deterministic") {
  const auto p = generate(preset("figure1"));
  const auto dec = decompose(p);
  const auto a = io::scatter_svg(dec);
  CHECK(a == io::scatter_svg(decompose(generate(preset("figure1")))));
  CHECK(a.starts_with("<?xml"));
  CHECK(a.find("</svg>") != std::string::npos);
  CHECK(a.find("<circle") != std::string::npos);
  CHECK(a.find("<polygon") != std::string::npos);
  const auto sc = oaxaca(dec, dec);
  CHECK(io::scatter45_svg(sc) == io::scatter45_svg(sc));
}

TEST_CASE("tables mirror the result structures") {
  const auto dec = decompose(generate(preset("figure1")));
  const auto comp = io::components_table(dec);
  CHECK(comp.rows.size() == 4);
  CHECK(comp.header[11] == "iv_weight");
  const auto sum = io::summary_table(dec);
  CHECK(sum.rows.size() == 3);
  double weighted = 0.0;
  for (const auto& r : sum.rows) weighted += std::stod(r[4]);
  CHECK(weighted == doctest::Approx(dec.beta_iv).epsilon(1e-12));
}
