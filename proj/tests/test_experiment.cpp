#include "doctest.h"

#include <cstdlib>
#include <stdexcept>
#include <string>

#include "defect_fpp/experiment.hpp"
#include "defect_fpp/limits.hpp"
#include "json.hpp"

using namespace dfpp;

namespace {

const std::string kVolumeCfg = R"({
  "experiment": "volume",
  "seed": 99,
  "params": {"d": 2, "xi": 0.0},
  "u": 0.2,
  "box_side": 15.0,
  "replicas": 4,
  "probes": 1000
})";

nlohmann::json parse(const std::string& s) { return nlohmann::json::parse(s); }

} // namespace

TEST_SUITE("experiment") {

TEST_CASE("fnv1a64 matches the reference test vectors") {
    CHECK(fnv1a64("") == 0xCBF29CE484222325ULL);
    CHECK(fnv1a64("a") == 0xAF63DC4C8601EC8CULL);
    CHECK(fnv1a64("foobar") == 0x85944171F73967E8ULL);
}

TEST_CASE("volume config runs end to end") {
    ExperimentOutput out = run_experiment_json(kVolumeCfg, std::nullopt, 1);
    CHECK(out.experiment == "volume");
    CHECK(out.seed == 99);
    REQUIRE(out.records.size() == 1);
    CHECK(out.records[0].n == 4);
    REQUIRE(out.files.size() == 1);
    CHECK(out.files[0].first == "records.csv");
    CHECK(out.files[0].second.rfind("record,name,replica,value\n", 0) == 0);

    auto doc = parse(out.summary_json);
    CHECK(doc.at("schema") == 1);
    CHECK(doc.at("experiment") == "volume");
    CHECK(doc.at("seed") == 99);
    CHECK(doc.at("records").size() == 1);
    CHECK(doc.at("records")[0].at("extras").at("target").get<double>() ==
          doctest::Approx(0.5334880910911033).epsilon(1e-14));
}

TEST_CASE("seed precedence: override beats config beats environment beats default") {
    unsetenv("DEFECT_FPP_SEED");
    CHECK(resolve_seed(kVolumeCfg, std::nullopt) == 99);
    CHECK(resolve_seed(kVolumeCfg, 1234) == 1234);
    std::string no_seed = R"({"experiment":"volume","u":0.1,"box_side":5.0,"replicas":1,"probes":10})";
    CHECK(resolve_seed(no_seed, std::nullopt) == kDefaultSeed);
    setenv("DEFECT_FPP_SEED", "777", 1);
    CHECK(resolve_seed(no_seed, std::nullopt) == 777);
    CHECK(resolve_seed(kVolumeCfg, std::nullopt) == 99); // config still wins
    setenv("DEFECT_FPP_SEED", "bogus", 1);
    CHECK_THROWS_AS(resolve_seed(no_seed, std::nullopt), std::invalid_argument);
    unsetenv("DEFECT_FPP_SEED");
}

TEST_CASE("runner outputs are byte-identical for any job count") {
    ExperimentOutput a = run_experiment_json(kVolumeCfg, std::nullopt, 1);
    ExperimentOutput b = run_experiment_json(kVolumeCfg, std::nullopt, 3);
    CHECK(a.summary_json == b.summary_json);
    REQUIRE(a.files.size() == b.files.size());
    for (std::size_t i = 0; i < a.files.size(); ++i) {
        CHECK(a.files[i].first == b.files[i].first);
        CHECK(a.files[i].second == b.files[i].second);
    }
}

TEST_CASE("config validation failures name the offending field") {
    auto expect_message = [](const std::string& cfg, const std::string& needle) {
        try {
            run_experiment_json(cfg, std::nullopt, 1);
            FAIL_CHECK("expected invalid_argument for: " << cfg);
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    expect_message("not json at all", "config");
    expect_message(R"([1,2,3])", "config");
    expect_message(R"({"u":0.1})", "experiment");
    expect_message(R"({"experiment":"frobnicate"})", "experiment");
    expect_message(R"({"experiment":"volume","u":0.1,"box_side":5.0,"replicas":1})",
                   "probes");
    expect_message(
        R"({"experiment":"volume","u":0.1,"box_side":5.0,"replcias":1,"probes":10})",
        "replcias");
    expect_message(
        R"({"experiment":"volume","u":"high","box_side":5.0,"replicas":1,"probes":10})",
        "u");
    expect_message(
        R"({"experiment":"eta","u":0.5,"R_list":[10.0],"replicas":2})",
        "u_star");
    expect_message(
        R"({"experiment":"eta","u":0.1,"R_list":[10.0],"replicas":2,"seed":-4})",
        "seed");
    expect_message(
        R"({"experiment":"eta","u":0.1,"R_list":[10.0],"replicas":2,
            "params":{"d":2,"zeta":0.1}})",
        "zeta");
}

TEST_CASE("dimension-dependent threshold default is wired through params") {
    // d = 3 has a lower default threshold, so u = 0.1 must be rejected there
    std::string d3 = R"({
      "experiment": "eta", "params": {"d": 3},
      "u": 0.1, "R_list": [5.0], "replicas": 1
    })";
    CHECK_THROWS_AS(run_experiment_json(d3, std::nullopt, 1), std::invalid_argument);
    std::string d3ok = R"({
      "experiment": "eta", "params": {"d": 3},
      "u": 0.05, "R_list": [5.0], "replicas": 1, "seed": 3
    })";
    ExperimentOutput out = run_experiment_json(d3ok, std::nullopt, 1);
    CHECK(out.records.size() == 1);
}

TEST_CASE("eta summary carries the fit and bound diagnostics") {
    std::string cfg = R"({
      "experiment": "eta", "seed": 7,
      "u": 0.15, "R_list": [10.0, 20.0], "replicas": 6
    })";
    ExperimentOutput out = run_experiment_json(cfg, std::nullopt, 2);
    REQUIRE(out.records.size() == 2);
    auto doc = parse(out.summary_json);
    const auto& extra = doc.at("extra");
    CHECK(extra.at("eta_hat").get<double>() > 0.0);
    CHECK(extra.at("upper_bound").get<double>() ==
          doctest::Approx(eta_upper_bound(0.15, 0.0, 2)).epsilon(1e-14));
    CHECK_FALSE(extra.at("bound_violated").get<bool>());
    CHECK(extra.at("tail_prob").size() == 2);
}

TEST_CASE("tail runs emit the diameters file alongside the records") {
    std::string cfg = R"({
      "experiment": "tail", "seed": 21,
      "u": 0.15, "box_side": 40.0, "replicas": 6
    })";
    ExperimentOutput out = run_experiment_json(cfg, std::nullopt, 1);
    REQUIRE(out.records.size() == 1);
    CHECK(out.records[0].name == "tail_cluster_count");
    CHECK(out.records[0].n == 6);
    REQUIRE(out.files.size() == 2);
    CHECK(out.files[0].first == "records.csv");
    CHECK(out.files[1].first == "diameters.csv");
    CHECK(out.files[1].second.rfind("diameter\n", 0) == 0);
    auto doc = parse(out.summary_json);
    CHECK(doc.at("extra").at("slope").get<double>() < 0.0);
    CHECK(doc.at("extra").at("clusters").get<long long>() > 0);
}

TEST_CASE("threshold runs produce one crossing record per side and level") {
    std::string cfg = R"({
      "experiment": "threshold", "seed": 5,
      "params": {"allow_supercritical": true},
      "u_grid": [0.1, 0.5], "box_sides": [15.0, 25.0], "replicas": 20
    })";
    ExperimentOutput out = run_experiment_json(cfg, std::nullopt, 2);
    REQUIRE(out.records.size() == 4); // side-major
    CHECK(out.records[0].extras.at("side") == 15.0);
    CHECK(out.records[0].extras.at("u") == 0.1);
    CHECK(out.records[1].extras.at("u") == 0.5);
    CHECK(out.records[2].extras.at("side") == 25.0);
    for (const auto& rec : out.records) {
        CHECK(rec.n == 20);
        for (double v : rec.per_replica) CHECK((v == 0.0 || v == 1.0));
    }
    auto doc = parse(out.summary_json);
    CHECK(doc.at("extra").at("u_star").size() == 2);
    CHECK(doc.at("extra").at("crossing_prob").size() == 2);
}

TEST_CASE("coupled runs add a paired-gap record") {
    std::string cfg = R"({
      "experiment": "coupled", "seed": 17,
      "u_low": 0.05, "u_high": 0.15, "L": 20.0, "replicas": 8
    })";
    ExperimentOutput out = run_experiment_json(cfg, std::nullopt, 2);
    REQUIRE(out.records.size() == 3);
    CHECK(out.records[0].name == "coupled_low");
    CHECK(out.records[1].name == "coupled_high");
    CHECK(out.records[2].name == "coupled_gap");
    for (double g : out.records[2].per_replica) CHECK(g >= -1e-9);
    auto doc = parse(out.summary_json);
    CHECK(doc.at("extra").at("paired_gap").get<double>() > 0.0);
}

TEST_CASE("distortion config accepts an inline eta table") {
    std::string cfg = R"({
      "experiment": "distortion", "seed": 31,
      "field": {"kind": "constant", "value": 0.1},
      "domain": {"kind": "box", "lo": [0.0, 0.0], "hi": [8.0, 8.0]},
      "R_list": [4.0],
      "net_spacing": 4.0,
      "conformal_spacing": 0.5,
      "replicas": 2,
      "eta_table": {"d": 2, "xi": 0.0,
                    "entries": [{"u": 0.0, "eta": 1.0, "stderr": 0.0},
                                 {"u": 0.1, "eta": 0.32, "stderr": 0.02}],
                    "R": 40.0, "replicas": 12}
    })";
    ExperimentOutput out = run_experiment_json(cfg, std::nullopt, 1);
    REQUIRE(out.records.size() == 1);
    CHECK(out.records[0].extras.at("net_points") == 9.0);
    for (double v : out.records[0].per_replica) CHECK(v >= 0.0);
}

TEST_CASE("measure config parses field kinds and test functions") {
    std::string cfg = R"({
      "experiment": "measure", "seed": 41,
      "field": {"kind": "linear",
                "box": {"lo": [0.0, 0.0], "hi": [6.0, 6.0]},
                "axis": 0, "value_lo": 0.05, "value_hi": 0.2},
      "domain": {"kind": "box", "lo": [0.0, 0.0], "hi": [6.0, 6.0]},
      "R_list": [3.0],
      "functions": [{"name": "one", "kind": "constant", "value": 1.0},
                     {"name": "bump", "kind": "gaussian",
                      "center": [3.0, 3.0], "width": 2.0}],
      "replicas": 3,
      "probes": 500,
      "quadrature_cells": 64
    })";
    ExperimentOutput out = run_experiment_json(cfg, std::nullopt, 1);
    REQUIRE(out.records.size() == 2);
    CHECK(out.records[0].name == "measure.one");
    CHECK(out.records[1].name == "measure.bump");
    CHECK(out.records[0].extras.at("quadrature_target") > 0.0);
}

TEST_CASE("surjectivity config runs on a box union") {
    std::string cfg = R"({
      "experiment": "surjectivity", "seed": 51,
      "domain": {"kind": "box_union",
                 "boxes": [{"lo": [0.0, 0.0], "hi": [8.0, 4.0]},
                            {"lo": [0.0, 0.0], "hi": [4.0, 8.0]}]},
      "field": {"kind": "constant", "value": 0.15},
      "R_list": [5.0],
      "probe_spacing": 2.0,
      "replicas": 3
    })";
    ExperimentOutput out = run_experiment_json(cfg, std::nullopt, 1);
    REQUIRE(out.records.size() == 1);
    for (double v : out.records[0].per_replica) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 / 5.0 + 1e-12);
    }
}

TEST_CASE("records csv uses full precision and replica-major rows") {
    ExperimentOutput out = run_experiment_json(kVolumeCfg, std::nullopt, 1);
    const std::string& csv = out.files[0].second;
    // one header plus one row per replica
    std::size_t rows = 0;
    for (char c : csv)
        if (c == '\n') ++rows;
    CHECK(rows == 1 + 4);
    // a round-trip through %.17g re-reads to the exact double
    std::size_t line_start = csv.find('\n') + 1;
    std::size_t last_comma = csv.find_last_of(',', csv.find('\n', line_start));
    double v = std::strtod(csv.c_str() + last_comma + 1, nullptr);
    CHECK(v == out.records[0].per_replica[0]);
}

} // TEST_SUITE
