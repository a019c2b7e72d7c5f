#include <catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "irtforge/error.hpp"
#include "irtforge/io.hpp"
#include "irtforge/mml.hpp"
#include "oracles.hpp"

using namespace irtforge;

namespace {

ResponsePatternDataset parse(const std::string& text) {
  std::istringstream in(text);
  return read_jsonlines(in);
}

}  // namespace

TEST_CASE("read_jsonlines") {
  SECTION("two subjects") {
    const ResponsePatternDataset ds = parse(
        R"({"subject_id": "pedro", "responses": {"q1": 1, "q2": 0, "q3": 1, "q4": 1}})"
        "\n"
        R"({"subject_id": "pinguino", "responses": {"q1": 0, "q2": true, "q3": 1.0, "q4": 0}})"
        "\n");
    CHECK(ds.subject_count() == 2);
    CHECK(ds.item_count() == 4);
    CHECK(ds.observation_count() == 8);
    CHECK(ds.subject_ids() == std::vector<std::string>{"pedro", "pinguino"});
    CHECK(ds.item_ids() == std::vector<std::string>{"q1", "q2", "q3", "q4"});
    CHECK(ds.subject_observations(1)[1].response == 1);
  }
  SECTION("blank lines and empty responses") {
    const ResponsePatternDataset ds = parse("\n{\"subject_id\": \"a\", \"responses\": {}}\n   \n"
                                            "{\"subject_id\": \"b\", \"responses\": {\"x\": 1}}\n");
    CHECK(ds.subject_count() == 2);
    CHECK(ds.subject_observations(0).empty());
  }
  SECTION("empty input") {
    try {
      parse("");
      FAIL("expected an error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("no subjects") != std::string::npos);
    }
    CHECK_THROWS_AS(parse("\n\n"), FormatError);
  }
  SECTION("malformed line reports its position") {
    try {
      parse("{\"subject_id\": \"a\", \"responses\": {}}\n\n{\"subject_id\": \"b\", \"responses\": {\"x\": 1,}}\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(e.column() > 0);
      CHECK(std::string(e.what()).rfind("line 3", 0) == 0);
    }
    CHECK_THROWS_AS(parse("[1, 2]\n"), ParseError);
    CHECK_THROWS_AS(parse("{\"responses\": {}}\n"), ParseError);
    CHECK_THROWS_AS(parse("{\"subject_id\": 5, \"responses\": {}}\n"), ParseError);
  }
  SECTION("content errors") {
    CHECK_THROWS_AS(parse("{\"subject_id\": \"a\", \"responses\": {}}\n{\"subject_id\": \"a\", \"responses\": {}}\n"),
                    FormatError);
    CHECK_THROWS_AS(parse("{\"subject_id\": \"a\", \"responses\": {\"x\": 2}}\n"), FormatError);
    CHECK_THROWS_AS(parse("{\"subject_id\": \"a\", \"responses\": {\"x\": 0.5}}\n"), FormatError);
    CHECK_THROWS_AS(parse("{\"subject_id\": \"a\", \"responses\": {\"x\": \"1\"}}\n"), FormatError);
    try {
      parse("{\"subject_id\": \"a\", \"responses\": {}}\n{\"subject_id\": \"a\", \"responses\": {}}\n");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(read_jsonlines(std::filesystem::path("/nonexistent/data.jsonlines")), IoError);
  }
}

TEST_CASE("jsonlines round trip") {
  const SimulationResult sim = simulate({ModelKind::OneParam, 40, 12, std::nullopt, 0.3, 5});
  std::ostringstream out;
  write_jsonlines(sim.dataset, out);
  const ResponsePatternDataset back = parse(out.str());
  // Item order follows first appearance, so text is stable from the second
  // pass on.
  std::ostringstream again;
  write_jsonlines(back, again);
  const ResponsePatternDataset third = parse(again.str());
  CHECK(third == back);
  std::ostringstream once_more;
  write_jsonlines(third, once_more);
  CHECK(once_more.str() == again.str());
  CHECK(back.observation_count() == sim.dataset.observation_count());
  CHECK(back.subject_ids() == sim.dataset.subject_ids());
  // Compare cells through ids.
  for (const Observation& o : sim.dataset.observations()) {
    const auto j = *back.subject_index(sim.dataset.subject_ids()[o.subject]);
    const auto i = *back.item_index(sim.dataset.item_ids()[o.item]);
    const auto row = back.subject_observations(j);
    const auto it = std::find_if(row.begin(), row.end(), [&](const Observation& b) { return b.item == i; });
    REQUIRE(it != row.end());
    CHECK(it->response == o.response);
  }
}

TEST_CASE("parameters document") {
  const SimulationResult sim = simulate({ModelKind::ThreeParam, 6, 4, std::nullopt, 0.0, 8});
  FitReport report;
  report.kind = ModelKind::ThreeParam;
  report.estimator = Estimator::Svi;
  report.items = sim.items;
  report.abilities = sim.abilities;
  report.scales = PosteriorScales{std::vector<double>(6, 0.2), std::vector<double>(4, 0.1), std::vector<double>(4, 0.3),
                                  std::vector<double>(4, 0.4), {}};
  const ParametersDocument doc = make_parameters_document("3pl", report, sim.dataset, 17);

  SECTION("text round trip is lossless") {
    const std::string text = to_json_text(doc);
    const ParametersDocument back = parse_parameters(text);
    CHECK(back == doc);
    CHECK(to_json_text(back) == text);
    CHECK(text.find("\"guess\"") != std::string::npos);
    CHECK(text.find("\"lambda\"") == std::string::npos);
    CHECK(text.find("\"model\"") < text.find("\"diff\""));
    CHECK(text.find("\"diff\"") < text.find("\"ability\""));
    CHECK(text.find("\"ability\"") < text.find("\"item_ids\""));
  }
  SECTION("1PL omits unused arrays") {
    const SimulationResult one = simulate({ModelKind::OneParam, 3, 3, std::nullopt, 0.0, 1});
    const std::string text = to_json_text(make_truth_document("1pl", one.items, one.abilities, one.dataset));
    CHECK(text.find("\"disc\"") == std::string::npos);
    CHECK(text.find("\"guess\"") == std::string::npos);
    CHECK(text.find("\"lambda\"") == std::string::npos);
    CHECK(text.find("\"estimator\": \"truth\"") != std::string::npos);
  }
  SECTION("item ids are a bijection over indices") {
    const ParametersDocument back = parse_parameters(to_json_text(doc));
    CHECK(back.item_ids == sim.dataset.item_ids());
    const std::string bad = R"({"model": "1pl", "diff": [0.0, 1.0], "ability": [], "item_ids": {"0": "a", "0": "b"},
                               "subject_ids": {}})";
    CHECK_THROWS_AS(parse_parameters(bad), FormatError);
    const std::string gap = R"({"model": "1pl", "diff": [0.0, 1.0], "ability": [], "item_ids": {"0": "a", "2": "b"},
                               "subject_ids": {}})";
    CHECK_THROWS_AS(parse_parameters(gap), FormatError);
    const std::string short_diff = R"({"model": "1pl", "diff": [0.0], "ability": [], "item_ids": {"0": "a", "1": "b"},
                               "subject_ids": {}})";
    CHECK_THROWS_AS(parse_parameters(short_diff), FormatError);
    CHECK_THROWS_AS(parse_parameters("{\"model\": \n 1pl}"), ParseError);
  }
  SECTION("numbers survive the decimal text exactly") {
    ParametersDocument odd = doc;
    odd.difficulty = {0.1, 1.0 / 3.0, -5.551115123125783e-17, 1e-300};
    odd.ability[0] = 123456789.12345679;
    CHECK(parse_parameters(to_json_text(odd)).difficulty == odd.difficulty);
    CHECK(parse_parameters(to_json_text(odd)).ability == odd.ability);
  }
  SECTION("files") {
    oracle::TempDir dir("io");
    const auto path = write_parameters(doc, dir / "nested" / "out");
    CHECK(path.filename() == "best_parameters.json");
    CHECK(read_parameters(path) == doc);
    CHECK_THROWS_AS(write_parameters(doc, "/proc/irtforge-unwritable"), IoError);
    CHECK_THROWS_AS(read_parameters(dir / "missing.json"), IoError);

    const std::vector<EpochRecord> trace{{1, 3.25, 0.5}, {2, 1.0 / 3.0, 1.25}};
    write_training_log(trace, dir / "training_log.csv");
    CHECK(oracle::read_file(dir / "training_log.csv") ==
          "epoch,loss,seconds\n1,3.25,0.500000\n2,0.33333333333333331,1.250000\n");
  }
  SECTION("kind inference") {
    CHECK(infer_kind(doc) == ModelKind::ThreeParam);
    CHECK(item_params_of(doc, ModelKind::ThreeParam) == sim.items);
  }
}

TEST_CASE("jsonlines to parameters and back is a fixpoint") {
  oracle::TempDir dir("fixpoint");
  const SimulationResult sim = simulate({ModelKind::TwoParam, 120, 10, std::nullopt, 0.1, 3});
  write_jsonlines(sim.dataset, dir / "data.jsonlines");
  const ResponsePatternDataset ds = read_jsonlines(dir / "data.jsonlines");
  const FitReport report = fit_mml(ds, ModelKind::TwoParam);
  const ParametersDocument doc = make_parameters_document("2pl", report, ds, 1);
  write_parameters(doc, dir.path());
  const ParametersDocument back = read_parameters(dir / "best_parameters.json");
  CHECK(back == doc);
  write_parameters(back, dir / "again");
  CHECK(oracle::read_file(dir / "again" / "best_parameters.json") == oracle::read_file(dir / "best_parameters.json"));
  CHECK(item_params_of(back, ModelKind::TwoParam) == report.items);
}

TEST_CASE("shuffling input lines keeps id-to-estimate association") {
  const SimulationResult sim = simulate({ModelKind::OneParam, 300, 15, std::nullopt, 0.2, 44});
  std::ostringstream out;
  write_jsonlines(sim.dataset, out);
  std::vector<std::string> lines;
  std::istringstream in(out.str());
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  std::vector<std::string> shuffled = lines;
  Rng rng(2);
  for (std::size_t k = shuffled.size() - 1; k > 0; --k) std::swap(shuffled[k], shuffled[rng.below(k + 1)]);
  std::string shuffled_text;
  for (const auto& l : shuffled) shuffled_text += l + "\n";

  const ResponsePatternDataset a = parse(out.str());
  const ResponsePatternDataset b = parse(shuffled_text);
  REQUIRE(a.subject_ids() != b.subject_ids());
  MmlConfig config;
  config.tolerance = 1e-10;
  const FitReport fa = fit_mml(a, ModelKind::OneParam, config);
  const FitReport fb = fit_mml(b, ModelKind::OneParam, config);
  for (std::size_t j = 0; j < a.subject_count(); ++j) {
    const auto jb = *b.subject_index(a.subject_ids()[j]);
    CHECK_THAT(fb.abilities.theta[jb], Catch::Matchers::WithinAbs(fa.abilities.theta[j], 1e-6));
  }
  for (std::size_t i = 0; i < a.item_count(); ++i) {
    const auto ib = *b.item_index(a.item_ids()[i]);
    CHECK_THAT(fb.items.difficulty()[ib], Catch::Matchers::WithinAbs(fa.items.difficulty()[i], 1e-6));
  }
}
