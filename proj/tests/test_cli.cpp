// End-to-end checks of the command-line tool: these spawn the real binary,
// so they cover argument parsing, exit codes, and on-disk output formats.
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "defect_fpp/experiment.hpp"
#include "json.hpp"

#ifndef DEFECT_FPP_CLI_PATH
#error "DEFECT_FPP_CLI_PATH must point at the built binary"
#endif

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int rc = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch_dir() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() /
                     ("defect_fpp_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

fs::path fresh_path(const std::string& stem) {
    static int counter = 0;
    return scratch_dir() / (stem + "_" + std::to_string(counter++));
}

CmdResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    fs::path outf = fresh_path("stdout");
    fs::path errf = fresh_path("stderr");
    std::string cmd = env_prefix + DEFECT_FPP_CLI_PATH + " " + args + " >" +
                      outf.string() + " 2>" + errf.string();
    int status = std::system(cmd.c_str());
    CmdResult r;
    r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(outf);
    r.err = slurp(errf);
    return r;
}

fs::path write_file(const std::string& stem, const std::string& body) {
    fs::path p = fresh_path(stem);
    std::ofstream out(p, std::ios::binary);
    out << body;
    return p;
}

const std::string kVolumeCfg = R"({
  "experiment": "volume",
  "seed": 99,
  "u": 0.2,
  "box_side": 15.0,
  "replicas": 4,
  "probes": 1000
})";

} // namespace

TEST_SUITE("cli") {

TEST_CASE("run writes records, summary, and a manifest with the config hash") {
    fs::path cfg = write_file("vol_cfg", kVolumeCfg);
    fs::path dir = fresh_path("out_vol");
    CmdResult r = run_cli("run " + cfg.string() + " --out-dir " + dir.string());
    CHECK(r.rc == 0);
    CHECK(r.out.find("volume_fraction") != std::string::npos);

    REQUIRE(fs::exists(dir / "records.csv"));
    REQUIRE(fs::exists(dir / "summary.json"));
    REQUIRE(fs::exists(dir / "manifest.json"));
    CHECK_FALSE(fs::exists(dir / "records.csv.partial"));

    auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    char expect[32];
    std::snprintf(expect, sizeof expect, "fnv1a64:%016llx",
                  (unsigned long long)dfpp::fnv1a64(kVolumeCfg));
    CHECK(manifest.at("config_hash") == expect);
    CHECK(manifest.at("experiment") == "volume");
    CHECK(manifest.at("seed") == 99);
    CHECK(manifest.at("exit") == "ok");

    auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    CHECK(summary.at("schema") == 1);
    CHECK(summary.at("records")[0].at("n") == 4);
}

TEST_CASE("repeat runs and parallel runs give byte-identical outputs") {
    fs::path cfg = write_file("vol_cfg", kVolumeCfg);
    fs::path d1 = fresh_path("rep1");
    fs::path d2 = fresh_path("rep2");
    fs::path d3 = fresh_path("rep3");
    CHECK(run_cli("run " + cfg.string() + " --out-dir " + d1.string()).rc == 0);
    CHECK(run_cli("run " + cfg.string() + " --out-dir " + d2.string()).rc == 0);
    CHECK(run_cli("run " + cfg.string() + " --jobs 3 --out-dir " + d3.string()).rc == 0);
    std::string csv1 = slurp(d1 / "records.csv");
    CHECK(csv1 == slurp(d2 / "records.csv"));
    CHECK(csv1 == slurp(d3 / "records.csv"));
    CHECK(slurp(d1 / "summary.json") == slurp(d2 / "summary.json"));
    CHECK(slurp(d1 / "summary.json") == slurp(d3 / "summary.json"));
}

TEST_CASE("seed resolution: flag beats config beats environment") {
    std::string no_seed = R"({"experiment":"volume","u":0.2,"box_side":10.0,
                              "replicas":2,"probes":200})";
    fs::path cfg = write_file("noseed_cfg", no_seed);
    fs::path cfg_seeded = write_file("seeded_cfg", kVolumeCfg);

    fs::path d1 = fresh_path("seed_flag");
    CHECK(run_cli("run " + cfg_seeded.string() + " --seed 1234 --out-dir " +
                  d1.string()).rc == 0);
    CHECK(nlohmann::json::parse(slurp(d1 / "summary.json")).at("seed") == 1234);

    fs::path d2 = fresh_path("seed_env");
    CHECK(run_cli("run " + cfg.string() + " --out-dir " + d2.string(),
                  "DEFECT_FPP_SEED=777 ").rc == 0);
    CHECK(nlohmann::json::parse(slurp(d2 / "summary.json")).at("seed") == 777);

    fs::path d3 = fresh_path("seed_cfg");
    CHECK(run_cli("run " + cfg_seeded.string() + " --out-dir " + d3.string(),
                  "DEFECT_FPP_SEED=777 ").rc == 0);
    CHECK(nlohmann::json::parse(slurp(d3 / "summary.json")).at("seed") == 99);

    fs::path d4 = fresh_path("seed_default");
    CHECK(run_cli("run " + cfg.string() + " --out-dir " + d4.string()).rc == 0);
    CHECK(nlohmann::json::parse(slurp(d4 / "summary.json")).at("seed") ==
          dfpp::kDefaultSeed);
}

TEST_CASE("json mode puts the machine-readable summary on stdout") {
    fs::path cfg = write_file("vol_cfg", kVolumeCfg);
    fs::path dir = fresh_path("out_json");
    CmdResult r = run_cli("run " + cfg.string() + " --json --out-dir " + dir.string());
    CHECK(r.rc == 0);
    auto doc = nlohmann::json::parse(r.out); // throws on garbage
    CHECK(doc.at("experiment") == "volume");
    CHECK(r.err.find("wrote") != std::string::npos);
}

TEST_CASE("invalid configs exit 2 with a field-level message") {
    fs::path bad = write_file("bad_cfg",
        R"({"experiment":"eta","u":0.5,"R_list":[10.0],"replicas":2})");
    CmdResult r = run_cli("run " + bad.string() + " --out-dir " +
                          fresh_path("never").string());
    CHECK(r.rc == 2);
    CHECK(r.err.find("u") != std::string::npos);

    CmdResult missing = run_cli("run /nonexistent/config.json");
    CHECK(missing.rc == 2);

    fs::path typo = write_file("typo_cfg",
        R"({"experiment":"volume","u":0.1,"box_side":5.0,"replcias":2,"probes":10})");
    CmdResult t = run_cli("run " + typo.string());
    CHECK(t.rc == 2);
    CHECK(t.err.find("replcias") != std::string::npos);
}

TEST_CASE("hard data failures exit 3") {
    // u = 0 produces no clusters, so the tail fit cannot run
    fs::path cfg = write_file("tail0_cfg",
        R"({"experiment":"tail","u":0.0,"box_side":10.0,"replicas":2,"seed":1})");
    CmdResult r = run_cli("run " + cfg.string() + " --out-dir " +
                          fresh_path("tail0").string());
    CHECK(r.rc == 3);
    CHECK(r.err.find("insufficient data") != std::string::npos);
}

TEST_CASE("sample-dump is deterministic and honors u = 0") {
    std::string args = "sample-dump --u 0.3 --d 2 --radius 1 --lo -2,-2 --hi 12,12 "
                       "--seed 42";
    CmdResult a = run_cli(args);
    CmdResult b = run_cli(args);
    CHECK(a.rc == 0);
    CHECK(a.out == b.out);
    CHECK(a.out.rfind("x0,x1\n", 0) == 0);
    CHECK(a.out.size() > 6); // at least one center at this intensity

    CmdResult empty = run_cli("sample-dump --u 0 --d 2 --lo 0,0 --hi 5,5 --seed 1");
    CHECK(empty.rc == 0);
    CHECK(empty.out == "x0,x1\n");

    fs::path out = fresh_path("dump_csv");
    CmdResult filed = run_cli(args + " --out " + out.string());
    CHECK(filed.rc == 0);
    CHECK(slurp(out) == a.out);
}

TEST_CASE("dist-query reproduces known distances from a dump") {
    fs::path empty = write_file("empty_dump", "x0,x1\n");
    CmdResult r = run_cli("dist-query --dump " + empty.string() +
                          " --from 0,0 --to 3,4");
    CHECK(r.rc == 0);
    auto doc = nlohmann::json::parse(r.out);
    CHECK(doc.at("value").get<double>() == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(doc.at("exact") == true);
    CHECK(doc.at("balls") == 0);

    // one unit ball centered on the segment removes a chord of length 2
    fs::path one = write_file("one_dump", "x0,x1\n5,0\n");
    CmdResult r1 = run_cli("dist-query --dump " + one.string() +
                           " --from 0,0 --to 10,0 --path");
    CHECK(r1.rc == 0);
    auto doc1 = nlohmann::json::parse(r1.out);
    CHECK(doc1.at("value").get<double>() == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(doc1.at("clusters") == 1);
    CHECK(doc1.at("polyline").size() >= 2);

    // positive interior speed: refinement from below as K doubles
    CmdResult k8 = run_cli("dist-query --dump " + one.string() +
                           " --from 0,0 --to 10,0 --xi 0.5 --K 8");
    CmdResult k16 = run_cli("dist-query --dump " + one.string() +
                            " --from 0,0 --to 10,0 --xi 0.5 --K 16");
    REQUIRE(k8.rc == 0);
    REQUIRE(k16.rc == 0);
    double v8 = nlohmann::json::parse(k8.out).at("value").get<double>();
    double v16 = nlohmann::json::parse(k16.out).at("value").get<double>();
    CHECK(v16 <= v8 + 1e-12);
    CHECK(v8 <= 10.0);
    CHECK(v16 >= 8.0);

    fs::path mal = write_file("bad_dump", "a,b\n1,2\n");
    CmdResult bad = run_cli("dist-query --dump " + mal.string() +
                            " --from 0,0 --to 1,1");
    CHECK(bad.rc == 2);
}

TEST_CASE("eta-table validate and merge round-trip") {
    std::string t1 = R"({"schema":1,"d":2,"xi":0.0,"R":40.0,"replicas":12,
      "entries":[{"u":0.0,"eta":1.0,"stderr":0.0},
                  {"u":0.1,"eta":0.32,"stderr":0.05}]})";
    std::string t2 = R"({"schema":1,"d":2,"xi":0.0,"R":80.0,"replicas":8,
      "entries":[{"u":0.0,"eta":1.0,"stderr":0.0},
                  {"u":0.1,"eta":0.30,"stderr":0.02},
                  {"u":0.2,"eta":0.10,"stderr":0.03}]})";
    fs::path f1 = write_file("tab1", t1);
    fs::path f2 = write_file("tab2", t2);

    CHECK(run_cli("eta-table validate " + f1.string()).rc == 0);

    fs::path merged = fresh_path("merged_tab");
    CmdResult m = run_cli("eta-table merge --out " + merged.string() + " " +
                          f1.string() + " " + f2.string());
    CHECK(m.rc == 0);
    auto doc = nlohmann::json::parse(slurp(merged));
    CHECK(doc.at("R") == 80.0);
    CHECK(doc.at("replicas") == 8);
    REQUIRE(doc.at("entries").size() == 3); // duplicate u = 0.1 deduplicated
    CHECK(doc.at("entries")[1].at("stderr") == 0.02); // smaller error kept
    CHECK(run_cli("eta-table validate " + merged.string()).rc == 0);

    fs::path junk = write_file("junk_tab", "{\"schema\":1}");
    CHECK(run_cli("eta-table validate " + junk.string()).rc == 2);

    // dimension mismatch must be refused
    std::string t3 = R"({"schema":1,"d":3,"xi":0.0,"R":10.0,"replicas":2,
      "entries":[{"u":0.0,"eta":1.0,"stderr":0.0}]})";
    fs::path f3 = write_file("tab3", t3);
    CHECK(run_cli("eta-table merge --out " + fresh_path("m2").string() + " " +
                  f1.string() + " " + f3.string()).rc == 2);
}

TEST_CASE("usage errors exit 2") {
    CHECK(run_cli("").rc == 2);
    CHECK(run_cli("frobnicate").rc == 2);
    CHECK(run_cli("run").rc == 2);                     // missing config
    CHECK(run_cli("sample-dump --u 0.1").rc == 2);     // missing box
    CHECK(run_cli("dist-query --from 0,0 --to 1,1").rc == 2); // missing dump
}

} // TEST_SUITE
