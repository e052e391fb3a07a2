#include "defect_fpp/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dfpp {
namespace {

using njson = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
}

const njson& require(const njson& j, const std::string& field) {
    auto it = j.find(field);
    if (it == j.end()) bad(field, "missing");
    return *it;
}

double as_num(const njson& j, const std::string& field) {
    const njson& v = require(j, field);
    if (!v.is_number()) bad(field, "must be a number");
    return v.get<double>();
}

double num_or(const njson& j, const std::string& field, double def) {
    auto it = j.find(field);
    if (it == j.end()) return def;
    if (!it->is_number()) bad(field, "must be a number");
    return it->get<double>();
}

int as_int(const njson& j, const std::string& field) {
    const njson& v = require(j, field);
    if (!v.is_number_integer()) bad(field, "must be an integer");
    return v.get<int>();
}

int int_or(const njson& j, const std::string& field, int def) {
    auto it = j.find(field);
    if (it == j.end()) return def;
    if (!it->is_number_integer()) bad(field, "must be an integer");
    return it->get<int>();
}

bool bool_or(const njson& j, const std::string& field, bool def) {
    auto it = j.find(field);
    if (it == j.end()) return def;
    if (!it->is_boolean()) bad(field, "must be a boolean");
    return it->get<bool>();
}

std::string as_str(const njson& j, const std::string& field) {
    const njson& v = require(j, field);
    if (!v.is_string()) bad(field, "must be a string");
    return v.get<std::string>();
}

std::vector<double> as_dvec(const njson& j, const std::string& field) {
    const njson& v = require(j, field);
    if (!v.is_array() || v.empty()) bad(field, "must be a nonempty array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& e : v) {
        if (!e.is_number()) bad(field, "must be a nonempty array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

// Reject unknown keys so typos surface as exit-2 config errors instead of
// silently falling back to defaults.
void check_keys(const njson& j, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) bad(where, "must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            bad(where.empty() ? it.key() : where + "." + it.key(),
                "unknown field");
}

SimParams parse_params(const njson& top) {
    SimParams p;
    auto it = top.find("params");
    if (it == top.end()) return p;
    const njson& j = *it;
    check_keys(j, {"d", "xi", "radius", "u_star", "allow_supercritical"}, "params");
    p.d = int_or(j, "d", 2);
    p.xi = num_or(j, "xi", 0.0);
    p.radius = num_or(j, "radius", 1.0);
    p.u_star = j.contains("u_star") ? as_num(j, "u_star") : default_u_star(p.d);
    p.allow_supercritical = bool_or(j, "allow_supercritical", false);
    return p;
}

Box parse_box(const njson& j, const std::string& where) {
    check_keys(j, {"lo", "hi"}, where);
    Box b;
    b.lo = as_dvec(j, "lo");
    b.hi = as_dvec(j, "hi");
    if (b.lo.size() != b.hi.size()) bad(where, "lo and hi must share a length");
    return b;
}

Domain parse_domain(const njson& top, const std::string& field) {
    const njson& j = require(top, field);
    if (!j.is_object()) bad(field, "must be an object");
    std::string kind = as_str(j, "kind");
    if (kind == "box") {
        check_keys(j, {"kind", "lo", "hi"}, field);
        Box b;
        b.lo = as_dvec(j, "lo");
        b.hi = as_dvec(j, "hi");
        if (b.lo.size() != b.hi.size()) bad(field, "lo and hi must share a length");
        return Domain::make_box(std::move(b));
    }
    if (kind == "box_union") {
        check_keys(j, {"kind", "boxes"}, field);
        const njson& arr = require(j, "boxes");
        if (!arr.is_array() || arr.empty()) bad(field + ".boxes", "must be a nonempty array");
        std::vector<Box> boxes;
        for (const auto& e : arr) boxes.push_back(parse_box(e, field + ".boxes"));
        return Domain::make_box_union(std::move(boxes));
    }
    if (kind == "polytope") {
        check_keys(j, {"kind", "normals", "offsets", "bbox"}, field);
        const njson& nr = require(j, "normals");
        if (!nr.is_array() || nr.empty()) bad(field + ".normals", "must be a nonempty array");
        std::vector<std::vector<double>> normals;
        for (std::size_t i = 0; i < nr.size(); ++i) {
            if (!nr[i].is_array()) bad(field + ".normals", "rows must be arrays");
            std::vector<double> row;
            for (const auto& e : nr[i]) {
                if (!e.is_number()) bad(field + ".normals", "rows must be numeric");
                row.push_back(e.get<double>());
            }
            normals.push_back(std::move(row));
        }
        std::vector<double> offsets = as_dvec(j, "offsets");
        Box bbox = parse_box(require(j, "bbox"), field + ".bbox");
        return Domain::make_polytope(std::move(normals), std::move(offsets),
                                     std::move(bbox));
    }
    bad(field + ".kind", "must be box, box_union or polytope");
}

IntensityField parse_field(const njson& top, const std::string& field) {
    const njson& j = require(top, field);
    if (!j.is_object()) bad(field, "must be an object");
    std::string kind = as_str(j, "kind");
    if (kind == "constant") {
        check_keys(j, {"kind", "value"}, field);
        return IntensityField::constant(as_num(j, "value"));
    }
    if (kind == "grid") {
        check_keys(j, {"kind", "origin", "spacing", "dims", "values"}, field);
        std::vector<double> origin = as_dvec(j, "origin");
        double spacing = as_num(j, "spacing");
        const njson& dj = require(j, "dims");
        if (!dj.is_array() || dj.empty()) bad(field + ".dims", "must be a nonempty array");
        std::vector<int> dims;
        for (const auto& e : dj) {
            if (!e.is_number_integer()) bad(field + ".dims", "must be integers");
            dims.push_back(e.get<int>());
        }
        std::vector<double> values = as_dvec(j, "values");
        return IntensityField::grid(std::move(origin), spacing, std::move(dims),
                                    std::move(values));
    }
    if (kind == "linear") {
        check_keys(j, {"kind", "box", "axis", "value_lo", "value_hi"}, field);
        Box box = parse_box(require(j, "box"), field + ".box");
        return IntensityField::linear_on_box(box, as_int(j, "axis"),
                                             as_num(j, "value_lo"),
                                             as_num(j, "value_hi"));
    }
    bad(field + ".kind", "must be constant, grid or linear");
}

EtaTable parse_eta_table(const njson& top, const std::string& field) {
    const njson& j = require(top, field);
    if (j.is_string()) {
        std::ifstream in(j.get<std::string>(), std::ios::binary);
        if (!in) bad(field, "cannot open file " + j.get<std::string>());
        std::ostringstream buf;
        buf << in.rdbuf();
        return EtaTable::from_json(buf.str());
    }
    if (j.is_object()) return EtaTable::from_json(j.dump());
    bad(field, "must be an inline table object or a file path string");
}

std::vector<TestFunction> parse_functions(const njson& top, const std::string& field) {
    const njson& arr = require(top, field);
    if (!arr.is_array() || arr.empty()) bad(field, "must be a nonempty array");
    std::vector<TestFunction> fs;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const njson& j = arr[i];
        std::string where = field + "[" + std::to_string(i) + "]";
        if (!j.is_object()) bad(where, "must be an object");
        std::string kind = as_str(j, "kind");
        std::string name = j.contains("name") ? as_str(j, "name")
                                              : kind + std::to_string(i);
        TestFunction tf;
        tf.name = name;
        if (kind == "constant") {
            check_keys(j, {"kind", "name", "value"}, where);
            double v = as_num(j, "value");
            tf.f = [v](std::span<const double>) { return v; };
        } else if (kind == "coordinate") {
            check_keys(j, {"kind", "name", "axis", "scale", "offset"}, where);
            int axis = as_int(j, "axis");
            double scale = num_or(j, "scale", 1.0);
            double offset = num_or(j, "offset", 0.0);
            if (axis < 0) bad(where + ".axis", "must be nonnegative");
            tf.f = [axis, scale, offset](std::span<const double> p) {
                return offset + scale * p[static_cast<std::size_t>(axis)];
            };
        } else if (kind == "gaussian") {
            check_keys(j, {"kind", "name", "center", "width"}, where);
            std::vector<double> center = as_dvec(j, "center");
            double width = as_num(j, "width");
            if (!(width > 0.0)) bad(where + ".width", "must be positive");
            tf.f = [center, width](std::span<const double> p) {
                double s = 0.0;
                for (std::size_t k = 0; k < center.size(); ++k)
                    s += (p[k] - center[k]) * (p[k] - center[k]);
                return std::exp(-s / (2.0 * width * width));
            };
        } else {
            bad(where + ".kind", "must be constant, coordinate or gaussian");
        }
        fs.push_back(std::move(tf));
    }
    return fs;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string records_csv(const std::vector<EstimateRecord>& records) {
    std::string out = "record,name,replica,value\n";
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t r = 0; r < records[i].per_replica.size(); ++r) {
            out += std::to_string(i);
            out += ',';
            out += records[i].name;
            out += ',';
            out += std::to_string(r);
            out += ',';
            out += fmt17(records[i].per_replica[r]);
            out += '\n';
        }
    return out;
}

std::string build_summary(const std::string& exp, std::uint64_t seed,
                          const std::vector<EstimateRecord>& records,
                          const njson& extra) {
    njson doc;
    doc["schema"] = 1;
    doc["experiment"] = exp;
    doc["seed"] = seed;
    doc["records"] = njson::array();
    for (const auto& rec : records)
        doc["records"].push_back(njson::parse(rec.to_json()));
    doc["extra"] = extra;
    return doc.dump(2) + "\n";
}

njson parse_config(const std::string& config_json) {
    njson j;
    try {
        j = njson::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
        bad("config", std::string("not valid JSON (") + e.what() + ")");
    }
    if (!j.is_object()) bad("config", "top level must be an object");
    return j;
}

std::uint64_t seed_from(const njson& j,
                        std::optional<std::uint64_t> seed_override) {
    if (seed_override) return *seed_override;
    if (auto it = j.find("seed"); it != j.end()) {
        if (!it->is_number_integer() ||
            (it->is_number_integer() && !it->is_number_unsigned() &&
             it->get<std::int64_t>() < 0))
            bad("seed", "must be a nonnegative integer");
        return it->get<std::uint64_t>();
    }
    if (const char* env = std::getenv("DEFECT_FPP_SEED")) {
        char* end = nullptr;
        unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0')
            bad("DEFECT_FPP_SEED", "must be a nonnegative integer");
        return static_cast<std::uint64_t>(v);
    }
    return kDefaultSeed;
}

} // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t resolve_seed(const std::string& config_json,
                           std::optional<std::uint64_t> seed_override) {
    return seed_from(parse_config(config_json), seed_override);
}

ExperimentOutput run_experiment_json(const std::string& config_json,
                                     std::optional<std::uint64_t> seed_override,
                                     int jobs) {
    njson j = parse_config(config_json);
    std::string exp = as_str(j, "experiment");
    std::uint64_t seed = seed_from(j, seed_override);
    SimParams prm = parse_params(j);
    if (jobs < 1) bad("jobs", "must be >= 1");

    ExperimentOutput out;
    out.experiment = exp;
    out.seed = seed;
    njson extra = njson::object();
    const std::set<std::string> common{"experiment", "seed", "params"};
    auto keys = [&](std::set<std::string> own) {
        own.insert(common.begin(), common.end());
        return own;
    };

    if (exp == "eta") {
        check_keys(j, keys({"u", "R_list", "replicas", "margin_factor", "K"}), "");
        EtaEstimate est = estimate_eta(
            as_num(j, "u"), prm, as_dvec(j, "R_list"), as_int(j, "replicas"), seed,
            jobs, num_or(j, "margin_factor", 10.0), int_or(j, "K", 32));
        out.records = std::move(est.per_R);
        extra["eta_hat"] = est.eta_hat;
        extra["eta_stderr"] = est.eta_err;
        extra["fit_a"] = est.fit_a;
        extra["fit_b"] = est.fit_b;
        extra["upper_bound"] = est.upper_bound;
        extra["bound_violated"] = est.bound_violated;
        extra["tail_eps"] = est.tail_eps;
        extra["tail_prob"] = est.tail_prob;
    } else if (exp == "volume") {
        check_keys(j, keys({"u", "box_side", "replicas", "probes"}), "");
        const njson& pv = require(j, "probes");
        if (!pv.is_number_integer()) bad("probes", "must be an integer");
        out.records.push_back(estimate_volume_fraction(
            as_num(j, "u"), prm, as_num(j, "box_side"), as_int(j, "replicas"),
            pv.get<std::int64_t>(), seed, jobs));
    } else if (exp == "deviation") {
        check_keys(j, keys({"u", "lengths", "replicas", "margin_factor"}), "");
        out.records = geodesic_deviation(
            as_num(j, "u"), prm, as_dvec(j, "lengths"), as_int(j, "replicas"),
            seed, jobs, num_or(j, "margin_factor", 10.0));
    } else if (exp == "tail") {
        check_keys(j, keys({"u", "box_side", "replicas"}), "");
        TailEstimate est = cluster_tail(as_num(j, "u"), prm, as_num(j, "box_side"),
                                        as_int(j, "replicas"), seed, jobs);
        std::ostringstream ps;
        ps << "u=" << as_num(j, "u") << " d=" << prm.d
           << " side=" << as_num(j, "box_side") << " replicas=" << as_int(j, "replicas");
        out.records.push_back(summarize("tail_cluster_count", ps.str(), seed,
                                        est.cluster_counts, true));
        extra["slope"] = est.slope;
        extra["intercept"] = est.intercept;
        extra["r2"] = est.r2;
        extra["clusters"] = est.clusters;
        extra["band_t"] = est.band_t;
        extra["band_log_survival"] = est.band_log_s;
        extra["diameters_file"] = "diameters.csv";
        std::string csv = "diameter\n";
        for (double t : est.diameters) {
            csv += fmt17(t);
            csv += '\n';
        }
        out.files.emplace_back("diameters.csv", std::move(csv));
    } else if (exp == "threshold") {
        check_keys(j, keys({"u_grid", "box_sides", "replicas"}), "");
        ThresholdScan scan = threshold_scan(as_dvec(j, "u_grid"), prm,
                                            as_dvec(j, "box_sides"),
                                            as_int(j, "replicas"), seed, jobs);
        for (std::size_t si = 0; si < scan.sides.size(); ++si)
            for (std::size_t ui = 0; ui < scan.u_grid.size(); ++ui) {
                std::ostringstream ps;
                ps << "side=" << scan.sides[si] << " u=" << scan.u_grid[ui]
                   << " d=" << prm.d;
                EstimateRecord rec = summarize("crossing", ps.str(), seed,
                                               scan.indicators[si][ui], false);
                rec.extras["side"] = scan.sides[si];
                rec.extras["u"] = scan.u_grid[ui];
                rec.extras["binomial_stderr"] = scan.prob_err[si][ui];
                out.records.push_back(std::move(rec));
            }
        extra["u_grid"] = scan.u_grid;
        extra["sides"] = scan.sides;
        extra["crossing_prob"] = scan.crossing_prob;
        extra["binomial_stderr"] = scan.prob_err;
        extra["u_star"] = scan.u_star; // NaN serializes as null when absent
    } else if (exp == "coupled") {
        check_keys(j, keys({"u_low", "u_high", "L", "replicas", "margin_factor"}), "");
        CoupledResult res = coupled_monotonicity(
            as_num(j, "u_low"), as_num(j, "u_high"), prm, as_num(j, "L"),
            as_int(j, "replicas"), seed, jobs, num_or(j, "margin_factor", 10.0));
        std::vector<double> gaps(res.low.per_replica.size());
        for (std::size_t r = 0; r < gaps.size(); ++r)
            gaps[r] = res.low.per_replica[r] - res.high.per_replica[r];
        EstimateRecord gap = summarize("coupled_gap", res.low.params, seed,
                                       std::move(gaps), true);
        extra["mean_low"] = res.low.mean;
        extra["mean_high"] = res.high.mean;
        extra["paired_gap"] = gap.mean;
        extra["paired_gap_stderr"] = gap.err;
        out.records.push_back(std::move(res.low));
        out.records.push_back(std::move(res.high));
        out.records.push_back(std::move(gap));
    } else if (exp == "distortion") {
        check_keys(j, keys({"field", "domain", "R_list", "net_spacing", "eta_table",
                            "replicas", "pair_cap", "conformal_spacing"}),
                   "");
        int cap = int_or(j, "pair_cap", 10000);
        if (cap < 1) bad("pair_cap", "must be >= 1");
        out.records = distortion_experiment(
            parse_field(j, "field"), parse_domain(j, "domain"), prm,
            as_dvec(j, "R_list"), as_num(j, "net_spacing"),
            parse_eta_table(j, "eta_table"), as_int(j, "replicas"), seed, jobs,
            static_cast<std::size_t>(cap), num_or(j, "conformal_spacing", 0.0));
    } else if (exp == "measure") {
        check_keys(j, keys({"field", "domain", "R_list", "functions", "replicas",
                            "probes", "quadrature_cells"}),
                   "");
        const njson& pv = require(j, "probes");
        if (!pv.is_number_integer()) bad("probes", "must be an integer");
        out.records = measure_experiment(
            parse_field(j, "field"), parse_domain(j, "domain"), prm,
            as_dvec(j, "R_list"), parse_functions(j, "functions"),
            as_int(j, "replicas"), pv.get<std::int64_t>(), seed, jobs,
            int_or(j, "quadrature_cells", 256));
    } else if (exp == "surjectivity") {
        check_keys(j, keys({"domain", "field", "R_list", "probe_spacing",
                            "replicas"}),
                   "");
        out.records = surjectivity_experiment(
            parse_domain(j, "domain"), parse_field(j, "field"), prm,
            as_dvec(j, "R_list"), as_num(j, "probe_spacing"),
            as_int(j, "replicas"), seed, jobs);
    } else {
        bad("experiment", "unknown experiment \"" + exp + "\"");
    }

    out.summary_json = build_summary(exp, seed, out.records, extra);
    out.files.insert(out.files.begin(), {"records.csv", records_csv(out.records)});
    return out;
}

} // namespace dfpp
