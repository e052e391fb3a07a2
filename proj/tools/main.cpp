// defect-fpp: batch harness and one-shot inspection commands for the defect
// first-passage toolkit.
//
// Exit codes: 0 success; 2 invalid configuration or arguments (parse errors,
// precondition violations, malformed inputs); 3 runtime failure (pathwise
// invariant violations, insufficient data, I/O errors mid-run).

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "defect_fpp/clusters.hpp"
#include "defect_fpp/experiment.hpp"
#include "defect_fpp/limits.hpp"
#include "defect_fpp/metric.hpp"
#include "defect_fpp/sampler.hpp"

namespace {

constexpr const char* kToolVersion = "defect-fpp 0.1.0";

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string iso_now() {
    std::time_t t = std::chrono::system_clock::to_time_t(
        std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_file(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::invalid_argument(std::string(what) + ": cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Write to path.partial, then rename: a cancelled run leaves only .partial
// files behind, never a truncated final artifact.
void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error("cannot write " + tmp.string());
        out << bytes;
        out.flush();
        if (!out)
            throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::uint64_t seed_or_env(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("DEFECT_FPP_SEED")) {
        char* end = nullptr;
        unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0')
            throw std::invalid_argument(
                "DEFECT_FPP_SEED: must be a nonnegative integer");
        return static_cast<std::uint64_t>(v);
    }
    return dfpp::kDefaultSeed;
}

std::vector<double> parse_coords(const std::string& text, const char* what) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t comma = text.find(',', pos);
        std::string tok = text.substr(
            pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            std::size_t used = 0;
            double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string(what) +
                                        ": expected comma-separated numbers, got \"" +
                                        text + "\"");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty())
        throw std::invalid_argument(std::string(what) + ": empty coordinate list");
    return out;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            int jobs, const std::string& out_dir, bool json_mode) {
    std::string config = read_file(config_path, "config");
    std::string started = iso_now();
    dfpp::ExperimentOutput out = dfpp::run_experiment_json(config, seed, jobs);

    std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    std::vector<std::string> names;
    for (const auto& [name, bytes] : out.files) {
        write_atomic(dir / name, bytes);
        names.push_back(name);
    }
    write_atomic(dir / "summary.json", out.summary_json);
    names.push_back("summary.json");

    char hash[32];
    std::snprintf(hash, sizeof hash, "fnv1a64:%016llx",
                  static_cast<unsigned long long>(dfpp::fnv1a64(config)));
    nlohmann::ordered_json manifest;
    manifest["schema"] = 1;
    manifest["tool"] = kToolVersion;
    manifest["experiment"] = out.experiment;
    manifest["config_hash"] = hash;
    manifest["seed"] = out.seed;
    manifest["jobs"] = jobs;
    manifest["started"] = started;
    manifest["finished"] = iso_now();
    manifest["outputs"] = names;
    manifest["exit"] = "ok";
    write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

    std::cerr << "wrote " << (dir / "manifest.json").string() << " and "
              << names.size() << " output file(s)\n";
    if (json_mode) {
        std::cout << out.summary_json;
    } else {
        for (const auto& rec : out.records) {
            std::printf("%-24s n=%-6lld mean=%-14.8g stderr=%.4g\n",
                        rec.name.c_str(), static_cast<long long>(rec.n), rec.mean,
                        rec.err);
        }
    }
    return 0;
}

int cmd_sample_dump(double u, int d, double radius, const std::string& lo_s,
                    const std::string& hi_s, std::optional<std::uint64_t> seed_flag,
                    const std::string& out_path) {
    dfpp::Box box;
    box.lo = parse_coords(lo_s, "--lo");
    box.hi = parse_coords(hi_s, "--hi");
    if (static_cast<int>(box.lo.size()) != d || static_cast<int>(box.hi.size()) != d)
        throw std::invalid_argument("--lo/--hi: coordinate count must equal --d");
    std::uint64_t seed = seed_or_env(seed_flag);
    dfpp::RngStream rng(seed, 0);
    dfpp::PointConfiguration cfg = dfpp::sample_poisson_box(rng, u, box, radius);

    std::string csv;
    for (int k = 0; k < d; ++k) {
        csv += (k ? ",x" : "x");
        csv += std::to_string(k);
    }
    csv += '\n';
    for (std::size_t i = 0; i < cfg.size(); ++i) {
        std::span<const double> c = cfg.center(i);
        for (int k = 0; k < d; ++k) {
            if (k) csv += ',';
            csv += fmt17(c[static_cast<std::size_t>(k)]);
        }
        csv += '\n';
    }
    if (out_path.empty() || out_path == "-") {
        std::cout << csv;
    } else {
        write_atomic(out_path, csv);
        std::cerr << "wrote " << out_path << " (" << cfg.size() << " centers)\n";
    }
    return 0;
}

dfpp::PointConfiguration parse_dump(const std::string& text, double radius) {
    dfpp::PointConfiguration cfg;
    cfg.radius = radius;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw std::invalid_argument("--dump: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<double> probe;
    {
        std::size_t pos = 0;
        int expect = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            std::string tok = line.substr(
                pos, comma == std::string::npos ? std::string::npos : comma - pos);
            if (tok != "x" + std::to_string(expect))
                throw std::invalid_argument(
                    "--dump: malformed header, expected x0,x1,...");
            ++expect;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        cfg.dim = expect;
    }
    if (cfg.dim < 1) throw std::invalid_argument("--dump: malformed header");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row = parse_coords(line, "--dump");
        if (static_cast<int>(row.size()) != cfg.dim)
            throw std::invalid_argument("--dump: row " + std::to_string(lineno) +
                                        " has wrong column count");
        cfg.xs.insert(cfg.xs.end(), row.begin(), row.end());
    }
    return cfg;
}

int cmd_dist_query(const std::string& dump_path, const std::string& from_s,
                   const std::string& to_s, double radius, double xi, int K,
                   bool with_path) {
    dfpp::PointConfiguration cfg = parse_dump(read_file(dump_path, "--dump"), radius);
    std::vector<double> from = parse_coords(from_s, "--from");
    std::vector<double> to = parse_coords(to_s, "--to");
    if (static_cast<int>(from.size()) != cfg.dim ||
        static_cast<int>(to.size()) != cfg.dim)
        throw std::invalid_argument("--from/--to: dimension mismatch with the dump");
    dfpp::ClusterSet cs = dfpp::find_clusters(cfg);
    dfpp::DistanceResult res;
    if (xi == 0.0)
        res = dfpp::distance_xi0(cfg, cs, from, to, with_path);
    else
        res = dfpp::distance_graph_xi(cfg, cs, xi, from, to, K);

    nlohmann::ordered_json j;
    j["schema"] = 1;
    j["value"] = res.value;
    j["exact"] = res.exact;
    j["refinement"] = res.refinement;
    j["dim"] = cfg.dim;
    j["balls"] = cfg.size();
    j["clusters"] = cs.count;
    j["clusters_visited"] = res.clusters_visited;
    if (with_path) j["polyline"] = res.polyline;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_eta_validate(const std::vector<std::string>& files) {
    for (const auto& f : files) {
        dfpp::EtaTable t = dfpp::EtaTable::from_json(read_file(f, "table"));
        std::cout << "ok " << f << " d=" << t.d << " xi=" << t.xi
                  << " entries=" << t.entries.size() << " u_max=" << t.u_max()
                  << "\n";
    }
    return 0;
}

int cmd_eta_merge(const std::string& out_path,
                  const std::vector<std::string>& files) {
    dfpp::EtaTable merged;
    bool first = true;
    for (const auto& f : files) {
        dfpp::EtaTable t = dfpp::EtaTable::from_json(read_file(f, "table"));
        if (first) {
            merged = t;
            first = false;
            continue;
        }
        if (t.d != merged.d || t.xi != merged.xi)
            throw std::invalid_argument("table: " + f +
                                        " has mismatched (d, xi) for the merge");
        merged.R = std::max(merged.R, t.R);
        merged.replicas = std::min(merged.replicas, t.replicas);
        merged.entries.insert(merged.entries.end(), t.entries.begin(),
                              t.entries.end());
    }
    std::sort(merged.entries.begin(), merged.entries.end(),
              [](const auto& a, const auto& b) {
                  return a.u < b.u || (a.u == b.u && a.err < b.err);
              });
    // duplicate levels: keep the tightest estimate
    std::vector<dfpp::EtaTable::Entry> dedup;
    for (const auto& e : merged.entries)
        if (dedup.empty() || dedup.back().u != e.u) dedup.push_back(e);
    merged.entries = std::move(dedup);
    merged.validate();
    write_atomic(out_path, merged.to_json());
    std::cerr << "wrote " << out_path << " (" << merged.entries.size()
              << " entries)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kToolVersion) +
                 ": estimators for metrics in media with defects"};
    app.require_subcommand(1);

    // run
    std::string config_path, out_dir = ".";
    std::optional<std::uint64_t> seed_flag;
    int jobs = 1;
    bool json_mode = false;
    CLI::App* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--seed", seed_flag, "seed override (else config, env, default)");
    run->add_option("--jobs", jobs, "worker threads (results identical for any value)")
        ->check(CLI::PositiveNumber);
    run->add_option("--out-dir", out_dir, "output directory (default .)");
    run->add_flag("--json", json_mode, "print the summary JSON to stdout");

    // sample-dump
    double sd_u = 0.0, sd_radius = 1.0;
    int sd_d = 2;
    std::string sd_lo, sd_hi, sd_out;
    CLI::App* sdump = app.add_subcommand("sample-dump",
                                         "dump one Poisson realization as CSV");
    sdump->add_option("--u", sd_u, "intensity")->required();
    sdump->add_option("--d", sd_d, "dimension (default 2)");
    sdump->add_option("--radius", sd_radius, "ball radius (default 1)");
    sdump->add_option("--lo", sd_lo, "box lower corner, comma-separated")->required();
    sdump->add_option("--hi", sd_hi, "box upper corner, comma-separated")->required();
    sdump->add_option("--seed", seed_flag, "seed (else env, default)");
    sdump->add_option("--out", sd_out, "output file (default stdout)");

    // dist-query
    std::string dq_dump, dq_from, dq_to;
    double dq_radius = 1.0, dq_xi = 0.0;
    int dq_K = 32;
    bool dq_path = false;
    CLI::App* dq = app.add_subcommand("dist-query",
                                      "distance between two points in a dumped "
                                      "configuration (JSON on stdout)");
    dq->add_option("--dump", dq_dump, "CSV of centers from sample-dump")->required();
    dq->add_option("--from", dq_from, "source point, comma-separated")->required();
    dq->add_option("--to", dq_to, "target point, comma-separated")->required();
    dq->add_option("--radius", dq_radius, "ball radius (default 1)");
    dq->add_option("--xi", dq_xi, "crossing cost in [0,1) (default 0, exact)");
    dq->add_option("--K", dq_K, "refinement for xi > 0 (default 32)");
    dq->add_flag("--path", dq_path, "include the geodesic polyline");

    // eta-table
    CLI::App* et = app.add_subcommand("eta-table",
                                      "validate or merge eta table files");
    et->require_subcommand(1);
    std::vector<std::string> et_files;
    CLI::App* etv = et->add_subcommand("validate", "parse and validate tables");
    etv->add_option("files", et_files, "table files")->required();
    std::string et_out;
    std::vector<std::string> etm_files;
    CLI::App* etm = et->add_subcommand("merge", "merge tables over one (d, xi)");
    etm->add_option("--out", et_out, "merged output file")->required();
    etm->add_option("files", etm_files, "table files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed())
            return cmd_run(config_path, seed_flag, jobs, out_dir, json_mode);
        if (sdump->parsed())
            return cmd_sample_dump(sd_u, sd_d, sd_radius, sd_lo, sd_hi, seed_flag,
                                   sd_out);
        if (dq->parsed())
            return cmd_dist_query(dq_dump, dq_from, dq_to, dq_radius, dq_xi, dq_K,
                                  dq_path);
        if (et->parsed()) {
            if (etv->parsed()) return cmd_eta_validate(et_files);
            return cmd_eta_merge(et_out, etm_files);
        }
    } catch (const dfpp::HardFailure& e) {
        std::cerr << "hard failure: " << e.what() << "\n";
        return 3;
    } catch (const dfpp::InsufficientData& e) {
        std::cerr << "insufficient data: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::out_of_range& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
