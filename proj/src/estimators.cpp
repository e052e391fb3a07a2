#include "defect_fpp/estimators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <utility>

#include "defect_fpp/clusters.hpp"
#include "defect_fpp/metric.hpp"
#include "defect_fpp/sampler.hpp"
#include "json.hpp"

namespace dfpp {
namespace {

// Neumaier compensated accumulator: the merge order of per-replica values is
// fixed (replica index), so sums are bit-identical for any job count.
struct CompSum {
    double s = 0.0, c = 0.0;
    void add(double v) {
        double t = s + v;
        if (std::abs(s) >= std::abs(v))
            c += (s - t) + v;
        else
            c += (v - t) + s;
        s = t;
    }
    double value() const { return s + c; }
};

double comp_mean(const std::vector<double>& v) {
    CompSum acc;
    for (double x : v) acc.add(x);
    return acc.value() / static_cast<double>(v.size());
}

double comp_stderr(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    CompSum acc;
    for (double x : v) acc.add((x - mean) * (x - mean));
    double n = static_cast<double>(v.size());
    double var = acc.value() / (n - 1.0);
    if (var < 0.0) var = 0.0;
    return std::sqrt(var / n);
}

// Linear-interpolated quantile of an ascending vector at rank q * (n - 1).
double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    double pos = q * static_cast<double>(sorted.size() - 1);
    std::size_t i = static_cast<std::size_t>(pos);
    if (i + 1 >= sorted.size()) return sorted.back();
    double frac = pos - static_cast<double>(i);
    return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

void check_params_u(const SimParams& params, double u, bool need_subcritical) {
    params.validate();
    if (!(u >= 0.0) || !std::isfinite(u))
        throw std::invalid_argument("u: must be finite and nonnegative");
    if (need_subcritical && !params.allow_supercritical && u >= params.u_star)
        throw std::invalid_argument("u: must stay below u_star (the distance degenerates)");
}

void check_replicas(int replicas) {
    if (replicas < 1) throw std::invalid_argument("replicas: must be >= 1");
}

void check_scales(const std::vector<double>& R_list) {
    if (R_list.empty()) throw std::invalid_argument("R_list: must be nonempty");
    double prev = 0.0;
    for (double R : R_list) {
        if (!(R > prev) || !std::isfinite(R))
            throw std::invalid_argument("R_list: must be positive and strictly increasing");
        prev = R;
    }
}

// Box [-margin, L + margin] x [-margin, margin]^(d-1) around the segment
// [0, L e1]. The margin grows like log(1 + L), wide enough that geodesics at
// subcritical intensity stay inside with overwhelming probability.
Box segment_box(int d, double L, double margin) {
    Box b;
    b.lo.assign(static_cast<std::size_t>(d), -margin);
    b.hi.assign(static_cast<std::size_t>(d), margin);
    b.hi[0] = L + margin;
    return b;
}

// Closed-ball coverage query against a CellGrid of cell size 2r: any center
// within r of p sits within one cell ring.
bool is_covered(const PointConfiguration& cfg, const CellGrid& grid,
                std::span<const double> p) {
    if (cfg.size() == 0) return false;
    const double r2 = cfg.radius * cfg.radius;
    bool hit = false;
    grid.for_each_near(p, 1, [&](std::int32_t i) {
        if (!hit && sq_dist(p, cfg.center(static_cast<std::size_t>(i))) <= r2)
            hit = true;
    });
    return hit;
}

// dist(0, L e1) in one fresh sample; exact at xi = 0, refinable bound at K
// boundary points per ball otherwise. An empty sample gives exactly L.
double sampled_distance(double u, const SimParams& params, double L,
                        double margin_factor, int K, RngStream& rng) {
    const int d = params.d;
    Box box = segment_box(d, L, margin_factor * std::log1p(L));
    PointConfiguration cfg = sample_poisson_box(rng, u, box, params.radius);
    std::vector<double> x(static_cast<std::size_t>(d), 0.0);
    std::vector<double> y(static_cast<std::size_t>(d), 0.0);
    y[0] = L;
    if (cfg.size() == 0) return L;
    ClusterSet cs = find_clusters(cfg);
    if (params.xi == 0.0) return distance_xi0(cfg, cs, x, y, false).value;
    return distance_graph_xi(cfg, cs, params.xi, x, y, K).value;
}

// Least squares y ~ a + b * x; returns {a, b}. Degenerate designs (fewer than
// two distinct x) collapse to a = mean(y), b = 0.
std::pair<double, double> fit_affine(const std::vector<double>& x,
                                     const std::vector<double>& y) {
    const std::size_t n = x.size();
    CompSum sx, sy, sxx, sxy;
    for (std::size_t i = 0; i < n; ++i) {
        sx.add(x[i]);
        sy.add(y[i]);
        sxx.add(x[i] * x[i]);
        sxy.add(x[i] * y[i]);
    }
    double nn = static_cast<double>(n);
    double det = nn * sxx.value() - sx.value() * sx.value();
    if (!(std::abs(det) > 1e-300))
        return {sy.value() / nn, 0.0};
    double b = (nn * sxy.value() - sx.value() * sy.value()) / det;
    double a = (sy.value() - b * sx.value()) / nn;
    return {a, b};
}

// Axis-aligned lattice of step `spacing` over the domain's bounding box,
// restricted to the domain. Flat, dim-strided.
std::vector<double> lattice_in_domain(const Domain& domain, double spacing) {
    const int d = domain.dim();
    const Box& bb = domain.bounding_box();
    std::vector<int> counts(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) {
        double span = bb.hi[k] - bb.lo[k];
        counts[static_cast<std::size_t>(k)] =
            static_cast<int>(std::floor(span / spacing + 1e-9)) + 1;
    }
    std::vector<double> out;
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    std::vector<double> p(static_cast<std::size_t>(d));
    for (;;) {
        for (int k = 0; k < d; ++k)
            p[static_cast<std::size_t>(k)] =
                bb.lo[k] + spacing * idx[static_cast<std::size_t>(k)];
        if (domain.contains(p)) out.insert(out.end(), p.begin(), p.end());
        int k = d - 1;
        while (k >= 0) {
            if (++idx[static_cast<std::size_t>(k)] < counts[static_cast<std::size_t>(k)]
                ) break;
            idx[static_cast<std::size_t>(k)] = 0;
            --k;
        }
        if (k < 0) break;
    }
    return out;
}

// Weighted volume density sigma(u)^d = vac + xi^d (1 - vac), vac = e^{-u kappa_d}.
double weighted_density(double u, double xi, int d) {
    double vac = std::exp(-u * kappa(d));
    return vac + std::pow(xi, d) * (1.0 - vac);
}

} // namespace

std::string EstimateRecord::to_json() const {
    nlohmann::ordered_json j;
    j["schema"] = 1;
    j["name"] = name;
    j["params"] = params;
    j["n"] = n;
    j["mean"] = mean;
    j["stderr"] = err;
    if (has_quantiles) {
        j["q05"] = q05;
        j["q50"] = q50;
        j["q95"] = q95;
    }
    j["seed"] = seed;
    nlohmann::ordered_json ex = nlohmann::ordered_json::object();
    for (const auto& [k, v] : extras) ex[k] = v; // std::map iterates in key order
    j["extras"] = std::move(ex);
    j["per_replica"] = per_replica;
    return j.dump();
}

EstimateRecord summarize(std::string name, std::string params, std::uint64_t seed,
                         std::vector<double> per_replica, bool quantiles) {
    EstimateRecord rec;
    rec.name = std::move(name);
    rec.params = std::move(params);
    rec.seed = seed;
    rec.n = static_cast<std::int64_t>(per_replica.size());
    if (!per_replica.empty()) {
        rec.mean = comp_mean(per_replica);
        rec.err = comp_stderr(per_replica, rec.mean);
        if (quantiles) {
            std::vector<double> sorted = per_replica;
            std::sort(sorted.begin(), sorted.end());
            rec.has_quantiles = true;
            rec.q05 = quantile_sorted(sorted, 0.05);
            rec.q50 = quantile_sorted(sorted, 0.50);
            rec.q95 = quantile_sorted(sorted, 0.95);
        }
    }
    rec.per_replica = std::move(per_replica);
    return rec;
}

EtaEstimate estimate_eta(double u, const SimParams& params,
                         const std::vector<double>& R_list, int replicas,
                         std::uint64_t seed, int jobs, double margin_factor,
                         int K) {
    check_params_u(params, u, true);
    check_scales(R_list);
    check_replicas(replicas);
    if (!(margin_factor > 0.0))
        throw std::invalid_argument("margin_factor: must be positive");
    if (K < 1) throw std::invalid_argument("K: must be >= 1");

    EtaEstimate est;
    est.upper_bound = eta_upper_bound(u, params.xi, params.d);
    std::vector<double> inv_R, means;
    for (double R : R_list) {
        // stream_base 0 at every R: replica r sees the same stream for each
        // scale, so the eta(R) trend is a paired comparison.
        std::function<double(int, RngStream&)> fn = [&](int, RngStream& rng) {
            return sampled_distance(u, params, R, margin_factor, K, rng) / R;
        };
        std::vector<double> ratios = run_replicated<double>(replicas, jobs, seed, 0, fn);
        std::ostringstream ps;
        ps << "u=" << num(u) << " xi=" << num(params.xi) << " d=" << params.d
           << " R=" << num(R) << " margin_factor=" << num(margin_factor)
           << " replicas=" << replicas;
        EstimateRecord rec = summarize("eta", ps.str(), seed, ratios, true);
        rec.extras["R"] = R;
        rec.extras["upper_bound"] = est.upper_bound;
        double tail = 0.0;
        for (double v : ratios)
            if (std::abs(v - rec.mean) > est.tail_eps) tail += 1.0;
        est.tail_prob.push_back(tail / static_cast<double>(ratios.size()));
        rec.extras["tail_prob"] = est.tail_prob.back();
        inv_R.push_back(1.0 / R);
        means.push_back(rec.mean);
        est.per_R.push_back(std::move(rec));
    }
    est.eta_hat = est.per_R.back().mean;
    est.eta_err = est.per_R.back().err;
    auto [a, b] = fit_affine(inv_R, means);
    est.fit_a = a;
    est.fit_b = b;
    est.bound_violated = est.eta_hat > est.upper_bound + 3.0 * est.eta_err;
    return est;
}

EstimateRecord estimate_volume_fraction(double u, const SimParams& params,
                                        double box_side, int replicas,
                                        std::int64_t probes, std::uint64_t seed,
                                        int jobs) {
    check_params_u(params, u, false);
    check_replicas(replicas);
    if (!(box_side > 0.0)) throw std::invalid_argument("box_side: must be positive");
    if (probes < 1) throw std::invalid_argument("probes: must be >= 1");

    const int d = params.d;
    // Stratification: one probe per cell of an m^d grid, remainder uniform.
    std::int64_t m = static_cast<std::int64_t>(
        std::floor(std::pow(static_cast<double>(probes), 1.0 / d) + 1e-9));
    while (m > 0) {
        std::int64_t cells = 1;
        for (int k = 0; k < d; ++k) cells *= m;
        if (cells <= probes) break;
        --m;
    }

    std::function<double(int, RngStream&)> fn = [&](int, RngStream& rng) {
        Box inner;
        inner.lo.assign(static_cast<std::size_t>(d), 0.0);
        inner.hi.assign(static_cast<std::size_t>(d), box_side);
        // Balls centered just outside the box still reach into it.
        Box sampling = inner.inflated(params.radius);
        PointConfiguration cfg = sample_poisson_box(rng, u, sampling, params.radius);
        CellGrid grid(cfg, 2.0 * params.radius);
        const double w_in = std::pow(params.xi, d);
        CompSum acc;
        std::int64_t count = 0;
        std::vector<double> p(static_cast<std::size_t>(d));
        if (m > 0) {
            const double cell = box_side / static_cast<double>(m);
            std::vector<std::int64_t> idx(static_cast<std::size_t>(d), 0);
            for (;;) {
                for (int k = 0; k < d; ++k)
                    p[static_cast<std::size_t>(k)] =
                        (static_cast<double>(idx[static_cast<std::size_t>(k)]) +
                         rng.uniform01()) * cell;
                acc.add(is_covered(cfg, grid, p) ? w_in : 1.0);
                ++count;
                int k = d - 1;
                while (k >= 0) {
                    if (++idx[static_cast<std::size_t>(k)] < m) break;
                    idx[static_cast<std::size_t>(k)] = 0;
                    --k;
                }
                if (k < 0) break;
            }
        }
        for (; count < probes; ++count) {
            rng.uniform_in_box(inner.lo, inner.hi, p);
            acc.add(is_covered(cfg, grid, p) ? w_in : 1.0);
        }
        return acc.value() / static_cast<double>(probes);
    };
    std::vector<double> fractions = run_replicated<double>(replicas, jobs, seed, 0, fn);

    std::ostringstream ps;
    ps << "u=" << num(u) << " xi=" << num(params.xi) << " d=" << d
       << " side=" << num(box_side) << " probes=" << probes
       << " replicas=" << replicas;
    EstimateRecord rec = summarize("volume_fraction", ps.str(), seed, fractions, true);
    rec.extras["target"] = weighted_density(u, params.xi, d);
    rec.extras["box_side"] = box_side;
    rec.extras["probes"] = static_cast<double>(probes);
    rec.extras["strata_per_axis"] = static_cast<double>(m);
    return rec;
}

double polyline_segment_deviation(std::span<const double> polyline, int dim,
                                  std::span<const double> a,
                                  std::span<const double> b, double step) {
    if (dim < 1 || polyline.size() % static_cast<std::size_t>(dim) != 0)
        throw std::invalid_argument("polyline: length must be a multiple of dim");
    if (!(step > 0.0)) throw std::invalid_argument("step: must be positive");
    const std::size_t m = polyline.size() / static_cast<std::size_t>(dim);
    if (m < 2) return 0.0;
    const std::size_t d = static_cast<std::size_t>(dim);
    double sup = 0.0;
    std::vector<double> q(d);
    // polyline -> segment direction
    for (std::size_t i = 0; i + 1 < m; ++i) {
        std::span<const double> p0{polyline.data() + i * d, d};
        std::span<const double> p1{polyline.data() + (i + 1) * d, d};
        double len = euclid(p0, p1);
        int steps = std::max(1, static_cast<int>(std::ceil(len / step)));
        for (int t = 0; t <= steps; ++t) {
            double s = static_cast<double>(t) / static_cast<double>(steps);
            for (std::size_t k = 0; k < d; ++k) q[k] = p0[k] + s * (p1[k] - p0[k]);
            sup = std::max(sup, point_segment_distance(q, a, b));
        }
    }
    // segment -> polyline direction
    double lab = euclid(a, b);
    int steps = std::max(1, static_cast<int>(std::ceil(lab / step)));
    for (int t = 0; t <= steps; ++t) {
        double s = static_cast<double>(t) / static_cast<double>(steps);
        for (std::size_t k = 0; k < d; ++k) q[k] = a[k] + s * (b[k] - a[k]);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i + 1 < m && best > 0.0; ++i) {
            std::span<const double> p0{polyline.data() + i * d, d};
            std::span<const double> p1{polyline.data() + (i + 1) * d, d};
            best = std::min(best, point_segment_distance(q, p0, p1));
        }
        sup = std::max(sup, best);
    }
    return sup;
}

std::vector<EstimateRecord> geodesic_deviation(double u, const SimParams& params,
                                               const std::vector<double>& lengths,
                                               int replicas, std::uint64_t seed,
                                               int jobs, double margin_factor) {
    check_params_u(params, u, true);
    if (params.xi != 0.0)
        throw std::invalid_argument("xi: geodesic polylines are exact only at xi = 0");
    check_scales(lengths);
    check_replicas(replicas);

    const int d = params.d;
    std::vector<EstimateRecord> out;
    for (double L : lengths) {
        std::function<double(int, RngStream&)> fn = [&](int, RngStream& rng) {
            Box box = segment_box(d, L, margin_factor * std::log1p(L));
            PointConfiguration cfg = sample_poisson_box(rng, u, box, params.radius);
            std::vector<double> x(static_cast<std::size_t>(d), 0.0);
            std::vector<double> y(static_cast<std::size_t>(d), 0.0);
            y[0] = L;
            if (cfg.size() == 0) return 0.0; // geodesic is the segment itself
            ClusterSet cs = find_clusters(cfg);
            DistanceResult res = distance_xi0(cfg, cs, x, y, true);
            double dev = polyline_segment_deviation(res.polyline, d, x, y,
                                                    params.radius / 4.0);
            return dev / L;
        };
        std::vector<double> devs = run_replicated<double>(replicas, jobs, seed, 0, fn);
        std::ostringstream ps;
        ps << "u=" << num(u) << " d=" << d << " L=" << num(L)
           << " replicas=" << replicas;
        EstimateRecord rec = summarize("geodesic_deviation", ps.str(), seed, devs, true);
        rec.extras["L"] = L;
        out.push_back(std::move(rec));
    }
    return out;
}

TailEstimate cluster_tail(double u, const SimParams& params, double box_side,
                          int replicas, std::uint64_t seed, int jobs) {
    check_params_u(params, u, false);
    check_replicas(replicas);
    if (!(box_side > 0.0)) throw std::invalid_argument("box_side: must be positive");

    const int d = params.d;
    std::function<std::vector<double>(int, RngStream&)> fn =
        [&](int, RngStream& rng) {
            Box box;
            box.lo.assign(static_cast<std::size_t>(d), 0.0);
            box.hi.assign(static_cast<std::size_t>(d), box_side);
            PointConfiguration cfg = sample_poisson_box(rng, u, box, params.radius);
            std::vector<double> diams;
            if (cfg.size() == 0) return diams;
            ClusterSet cs = find_clusters(cfg);
            diams.reserve(static_cast<std::size_t>(cs.count));
            for (std::int32_t k = 0; k < cs.count; ++k)
                diams.push_back(cluster_diameter(cfg, cs, k));
            return diams;
        };
    std::vector<std::vector<double>> parts =
        run_replicated<std::vector<double>>(replicas, jobs, seed, 0, fn);

    TailEstimate est;
    for (const auto& part : parts) {
        est.diameters.insert(est.diameters.end(), part.begin(), part.end());
        est.cluster_counts.push_back(static_cast<double>(part.size()));
    }
    std::sort(est.diameters.begin(), est.diameters.end());
    est.clusters = static_cast<std::int64_t>(est.diameters.size());
    if (est.clusters == 0)
        throw InsufficientData("cluster_tail: no clusters sampled (u too small?)");

    // Survival S(t) = P(diameter > t) at each distinct observed diameter,
    // fitted on log scale where S lands in [1e-3, 1e-1].
    const double n = static_cast<double>(est.clusters);
    std::size_t i = 0;
    while (i < est.diameters.size()) {
        std::size_t j = i;
        while (j + 1 < est.diameters.size() &&
               est.diameters[j + 1] == est.diameters[i])
            ++j;
        double survival = static_cast<double>(est.diameters.size() - (j + 1)) / n;
        if (survival >= 1e-3 && survival <= 1e-1) {
            est.band_t.push_back(est.diameters[i]);
            est.band_log_s.push_back(std::log(survival));
        }
        i = j + 1;
    }
    if (est.band_t.size() < 3)
        throw InsufficientData("cluster_tail: fewer than 3 distinct diameters in the "
                               "survival band [1e-3, 1e-1]");
    auto [a, b] = fit_affine(est.band_t, est.band_log_s);
    est.intercept = a;
    est.slope = b;
    CompSum sstot, ssres, sy;
    for (double y : est.band_log_s) sy.add(y);
    double ybar = sy.value() / static_cast<double>(est.band_log_s.size());
    for (std::size_t t = 0; t < est.band_t.size(); ++t) {
        double resid = est.band_log_s[t] - (a + b * est.band_t[t]);
        ssres.add(resid * resid);
        double dev = est.band_log_s[t] - ybar;
        sstot.add(dev * dev);
    }
    est.r2 = sstot.value() > 0.0 ? 1.0 - ssres.value() / sstot.value() : 0.0;
    return est;
}

namespace {

// A cluster crosses the box along axis 0 when some ball's closed ball meets
// the face {x0 = 0} x [0, side]^(d-1) and some ball's meets {x0 = side} x ...
bool crosses_axis0(const PointConfiguration& cfg, const ClusterSet& cs,
                   double side) {
    if (cs.count == 0) return false;
    const int d = cfg.dim;
    const double r2 = cfg.radius * cfg.radius;
    std::vector<unsigned char> lo_touch(static_cast<std::size_t>(cs.count), 0);
    std::vector<unsigned char> hi_touch(static_cast<std::size_t>(cs.count), 0);
    for (std::size_t i = 0; i < cfg.size(); ++i) {
        std::span<const double> c = cfg.center(i);
        double lat = 0.0; // squared distance to the face rectangle, lateral part
        for (int k = 1; k < d; ++k) {
            double e = 0.0;
            if (c[k] < 0.0) e = -c[k];
            else if (c[k] > side) e = c[k] - side;
            lat += e * e;
        }
        std::size_t cl = static_cast<std::size_t>(cs.cluster_of_point[i]);
        if (c[0] * c[0] + lat <= r2) lo_touch[cl] = 1;
        double dx = c[0] - side;
        if (dx * dx + lat <= r2) hi_touch[cl] = 1;
    }
    for (std::int32_t k = 0; k < cs.count; ++k)
        if (lo_touch[static_cast<std::size_t>(k)] &&
            hi_touch[static_cast<std::size_t>(k)])
            return true;
    return false;
}

} // namespace

ThresholdScan threshold_scan(const std::vector<double>& u_grid,
                             const SimParams& params,
                             const std::vector<double>& box_sides, int replicas,
                             std::uint64_t seed, int jobs) {
    params.validate();
    if (u_grid.empty()) throw std::invalid_argument("u_grid: must be nonempty");
    double prev = -1.0;
    for (double u : u_grid) {
        if (!(u >= 0.0) || !std::isfinite(u) || u <= prev)
            throw std::invalid_argument("u_grid: must be nonnegative, finite and "
                                        "strictly increasing");
        prev = u;
    }
    if (!(u_grid.back() > 0.0))
        throw std::invalid_argument("u_grid: must contain a positive level");
    check_scales(box_sides);
    check_replicas(replicas);

    ThresholdScan scan;
    scan.u_grid = u_grid;
    scan.sides = box_sides;
    const double u_top = u_grid.back();
    const int d = params.d;
    for (std::size_t si = 0; si < box_sides.size(); ++si) {
        const double side = box_sides[si];
        // One marked sample per replica, restricted at every level: crossing
        // indicators are then monotone in u pathwise, not just on average.
        std::function<std::vector<double>(int, RngStream&)> fn =
            [&](int, RngStream& rng) {
                Box inner;
                inner.lo.assign(static_cast<std::size_t>(d), 0.0);
                inner.hi.assign(static_cast<std::size_t>(d), side);
                Box sampling = inner.inflated(params.radius);
                MarkedConfiguration mc =
                    sample_marked_box(rng, u_top, sampling, params.radius);
                std::vector<double> ind;
                ind.reserve(u_grid.size());
                for (double u : u_grid) {
                    PointConfiguration cfg = mc.restrict_level(u);
                    ClusterSet cs = find_clusters(cfg);
                    ind.push_back(crosses_axis0(cfg, cs, side) ? 1.0 : 0.0);
                }
                return ind;
            };
        std::vector<std::vector<double>> rows = run_replicated<std::vector<double>>(
            replicas, jobs, seed, static_cast<std::uint64_t>(si) << 32, fn);
        std::vector<double> prob(u_grid.size(), 0.0), perr(u_grid.size(), 0.0);
        std::vector<std::vector<double>> inds(
            u_grid.size(), std::vector<double>(static_cast<std::size_t>(replicas)));
        for (std::size_t ui = 0; ui < u_grid.size(); ++ui) {
            CompSum acc;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                acc.add(rows[r][ui]);
                inds[ui][r] = rows[r][ui];
            }
            double p = acc.value() / static_cast<double>(replicas);
            prob[ui] = p;
            perr[ui] = std::sqrt(std::max(0.0, p * (1.0 - p)) /
                                 static_cast<double>(replicas));
        }
        scan.indicators.push_back(std::move(inds));
        double ustar = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t ui = 0; ui < prob.size(); ++ui) {
            if (prob[ui] >= 0.5) {
                if (ui == 0) {
                    ustar = u_grid[0];
                } else {
                    double p0 = prob[ui - 1], p1 = prob[ui];
                    ustar = u_grid[ui - 1] +
                            (0.5 - p0) * (u_grid[ui] - u_grid[ui - 1]) / (p1 - p0);
                }
                break;
            }
        }
        scan.crossing_prob.push_back(std::move(prob));
        scan.prob_err.push_back(std::move(perr));
        scan.u_star.push_back(ustar);
    }
    return scan;
}

CoupledResult coupled_monotonicity(double u_low, double u_high,
                                   const SimParams& params, double L,
                                   int replicas, std::uint64_t seed, int jobs,
                                   double margin_factor) {
    check_params_u(params, u_high, true);
    if (!(u_low >= 0.0) || u_low > u_high)
        throw std::invalid_argument("u_low: need 0 <= u_low <= u_high");
    if (!(L > 0.0)) throw std::invalid_argument("L: must be positive");
    check_replicas(replicas);

    const int d = params.d;
    const int K = 32;
    std::function<std::array<double, 2>(int, RngStream&)> fn =
        [&](int, RngStream& rng) {
            Box box = segment_box(d, L, margin_factor * std::log1p(L));
            MarkedConfiguration mc =
                sample_marked_box(rng, u_high, box, params.radius);
            std::vector<double> x(static_cast<std::size_t>(d), 0.0);
            std::vector<double> y(static_cast<std::size_t>(d), 0.0);
            y[0] = L;
            auto dist_of = [&](const PointConfiguration& cfg) {
                if (cfg.size() == 0) return L;
                ClusterSet cs = find_clusters(cfg);
                if (params.xi == 0.0) return distance_xi0(cfg, cs, x, y, false).value;
                return distance_graph_xi(cfg, cs, params.xi, x, y, K).value;
            };
            std::array<double, 2> pair{};
            pair[0] = dist_of(mc.restrict_level(u_low));
            pair[1] = dist_of(mc.restrict_level(u_high));
            return pair;
        };
    std::vector<std::array<double, 2>> pairs =
        run_replicated<std::array<double, 2>>(replicas, jobs, seed, 0, fn);

    std::vector<double> lows, highs;
    lows.reserve(pairs.size());
    highs.reserve(pairs.size());
    for (std::size_t r = 0; r < pairs.size(); ++r) {
        if (pairs[r][1] > pairs[r][0] + 1e-9) {
            std::ostringstream os;
            os << "coupled_monotonicity: replica " << r << " violated the coupling: "
               << "dist(u_high) = " << pairs[r][1] << " > dist(u_low) = "
               << pairs[r][0];
            throw HardFailure(os.str());
        }
        lows.push_back(pairs[r][0]);
        highs.push_back(pairs[r][1]);
    }
    std::ostringstream ps;
    ps << "u_low=" << num(u_low) << " u_high=" << num(u_high) << " xi="
       << num(params.xi) << " d=" << d << " L=" << num(L)
       << " replicas=" << replicas;
    CoupledResult res;
    res.low = summarize("coupled_low", ps.str(), seed, std::move(lows), true);
    res.high = summarize("coupled_high", ps.str(), seed, std::move(highs), true);
    res.replicas = replicas;
    return res;
}

std::vector<EstimateRecord> distortion_experiment(
    const IntensityField& field, const Domain& domain, const SimParams& params,
    const std::vector<double>& R_list, double net_spacing, const EtaTable& table,
    int replicas, std::uint64_t seed, int jobs, std::size_t pair_cap,
    double conformal_spacing) {
    params.validate();
    if (domain.dim() != params.d)
        throw std::invalid_argument("domain: dimension mismatch with params.d");
    if (!field.is_constant() && field.dim() != params.d)
        throw std::invalid_argument("field: dimension mismatch with params.d");
    check_scales(R_list);
    check_replicas(replicas);
    if (!(net_spacing > 0.0))
        throw std::invalid_argument("net_spacing: must be positive");
    table.validate();
    if (table.d != params.d || table.xi != params.xi)
        throw std::invalid_argument("table: (d, xi) mismatch with params");
    if (field.sup_value() > table.u_max())
        throw std::invalid_argument("table: does not cover the field's range "
                                    "(sup u exceeds the last tabulated level)");

    const int d = params.d;
    std::vector<double> net = lattice_in_domain(domain, net_spacing);
    const std::size_t n_net = net.size() / static_cast<std::size_t>(d);
    if (n_net < 2)
        throw std::invalid_argument("net_spacing: fewer than two net points in the domain");
    const std::size_t n_pairs = n_net * (n_net - 1) / 2;
    if (n_pairs > pair_cap)
        throw std::invalid_argument("net_spacing: pair count exceeds the cap; coarsen "
                                    "the net or raise pair_cap");

    // Conformal targets, computed once: rho(x) = eta(u(x)) via the table.
    double h = conformal_spacing > 0.0 ? conformal_spacing : net_spacing / 10.0;
    ConformalGrid cg(domain, h, [&](std::span<const double> p) {
        return table.lookup(field.value(p));
    });
    std::vector<std::vector<double>> conf(n_net);
    for (std::size_t i = 0; i + 1 < n_net; ++i) {
        std::span<const double> src{net.data() + i * static_cast<std::size_t>(d),
                                    static_cast<std::size_t>(d)};
        std::vector<Point> ys;
        ys.reserve(n_net - i - 1);
        for (std::size_t j = i + 1; j < n_net; ++j)
            ys.emplace_back(net.begin() + static_cast<std::ptrdiff_t>(
                                              j * static_cast<std::size_t>(d)),
                            net.begin() + static_cast<std::ptrdiff_t>(
                                              (j + 1) * static_cast<std::size_t>(d)));
        conf[i] = cg.distances(src, ys);
    }

    std::vector<EstimateRecord> out;
    for (double R : R_list) {
        std::function<double(int, RngStream&)> fn = [&](int, RngStream& rng) {
            Domain scaled = domain.scaled(R);
            Box sbox = scaled.bounding_box().inflated(params.radius);
            PointConfiguration cfg =
                sample_poisson_field(rng, field.scaled_domain(R), sbox, params.radius);
            ClusterSet cs = find_clusters(cfg);
            std::vector<double> sx(static_cast<std::size_t>(d));
            double sup = 0.0;
            if (domain.convex() && params.xi == 0.0) {
                GapGraph g(cfg, cs, nullptr, &scaled);
                std::vector<double> targets;
                for (std::size_t i = 0; i + 1 < n_net; ++i) {
                    for (int k = 0; k < d; ++k)
                        sx[static_cast<std::size_t>(k)] =
                            R * net[i * static_cast<std::size_t>(d) +
                                    static_cast<std::size_t>(k)];
                    targets.assign(net.begin() + static_cast<std::ptrdiff_t>(
                                                     (i + 1) * static_cast<std::size_t>(d)),
                                   net.end());
                    for (double& t : targets) t *= R;
                    std::vector<double> vals = g.sweep(sx, targets);
                    for (std::size_t jj = 0; jj < vals.size(); ++jj)
                        sup = std::max(sup, std::abs(conf[i][jj] - vals[jj] / R));
                }
            } else {
                std::vector<double> sy(static_cast<std::size_t>(d));
                for (std::size_t i = 0; i + 1 < n_net; ++i) {
                    for (int k = 0; k < d; ++k)
                        sx[static_cast<std::size_t>(k)] =
                            R * net[i * static_cast<std::size_t>(d) +
                                    static_cast<std::size_t>(k)];
                    for (std::size_t j = i + 1; j < n_net; ++j) {
                        for (int k = 0; k < d; ++k)
                            sy[static_cast<std::size_t>(k)] =
                                R * net[j * static_cast<std::size_t>(d) +
                                        static_cast<std::size_t>(k)];
                        DistanceResult res = distance_intrinsic(cfg, cs, scaled, sx,
                                                                sy, params.xi, 16);
                        sup = std::max(sup, std::abs(conf[i][j - i - 1] -
                                                     res.value / R));
                    }
                }
            }
            return sup;
        };
        std::vector<double> sups = run_replicated<double>(replicas, jobs, seed, 0, fn);
        std::ostringstream ps;
        ps << "xi=" << num(params.xi) << " d=" << d << " R=" << num(R)
           << " net_spacing=" << num(net_spacing) << " net_points=" << n_net
           << " replicas=" << replicas;
        EstimateRecord rec = summarize("distortion", ps.str(), seed, sups, true);
        rec.extras["R"] = R;
        rec.extras["net_points"] = static_cast<double>(n_net);
        rec.extras["pairs"] = static_cast<double>(n_pairs);
        rec.extras["conformal_anisotropy"] = cg.anisotropy_bound();
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<EstimateRecord> measure_experiment(
    const IntensityField& field, const Domain& domain, const SimParams& params,
    const std::vector<double>& R_list, const std::vector<TestFunction>& fs,
    int replicas, std::int64_t probes, std::uint64_t seed, int jobs,
    int quadrature_cells) {
    params.validate();
    if (domain.dim() != params.d)
        throw std::invalid_argument("domain: dimension mismatch with params.d");
    if (domain.kind() == Domain::Kind::Polytope)
        throw std::invalid_argument("domain: measure experiment needs a box or "
                                    "box union (exact volume required)");
    if (!field.is_constant() && field.dim() != params.d)
        throw std::invalid_argument("field: dimension mismatch with params.d");
    check_scales(R_list);
    check_replicas(replicas);
    if (probes < 1) throw std::invalid_argument("probes: must be >= 1");
    if (fs.empty()) throw std::invalid_argument("fs: need at least one test function");
    for (const auto& tf : fs)
        if (!tf.f) throw std::invalid_argument("fs: empty function");
    if (quadrature_cells < 2)
        throw std::invalid_argument("quadrature_cells: must be >= 2");

    const int d = params.d;
    const Box& bb = domain.bounding_box();
    const double vol = domain.volume();
    const double w_in = std::pow(params.xi, d);

    // Midpoint quadrature of f * sigma(u(x))^d over the domain, once per f.
    // The quadrature error is a constant offset across R, so trends in the
    // per-R records are unaffected by it.
    int q = quadrature_cells;
    if (d >= 3 && q > 64) q = 64;
    std::vector<double> mu(fs.size(), 0.0);
    {
        std::vector<CompSum> acc(fs.size());
        double cellvol = 1.0;
        for (int k = 0; k < d; ++k) cellvol *= (bb.hi[k] - bb.lo[k]) / q;
        std::vector<int> idx(static_cast<std::size_t>(d), 0);
        std::vector<double> ct(static_cast<std::size_t>(d));
        for (;;) {
            for (int k = 0; k < d; ++k)
                ct[static_cast<std::size_t>(k)] =
                    bb.lo[k] + (idx[static_cast<std::size_t>(k)] + 0.5) *
                                   (bb.hi[k] - bb.lo[k]) / q;
            if (domain.contains(ct)) {
                double w = weighted_density(field.value(ct), params.xi, d);
                for (std::size_t fi = 0; fi < fs.size(); ++fi)
                    acc[fi].add(fs[fi].f(ct) * w * cellvol);
            }
            int k = d - 1;
            while (k >= 0) {
                if (++idx[static_cast<std::size_t>(k)] < q) break;
                idx[static_cast<std::size_t>(k)] = 0;
                --k;
            }
            if (k < 0) break;
        }
        for (std::size_t fi = 0; fi < fs.size(); ++fi) mu[fi] = acc[fi].value();
    }

    std::vector<EstimateRecord> out;
    for (double R : R_list) {
        std::function<std::vector<double>(int, RngStream&)> fn =
            [&](int, RngStream& rng) {
                Domain scaled = domain.scaled(R);
                Box sbox = scaled.bounding_box().inflated(params.radius);
                PointConfiguration cfg = sample_poisson_field(
                    rng, field.scaled_domain(R), sbox, params.radius);
                CellGrid grid(cfg, 2.0 * params.radius);
                std::vector<CompSum> acc(fs.size());
                std::vector<double> x(static_cast<std::size_t>(d));
                std::vector<double> sx(static_cast<std::size_t>(d));
                for (std::int64_t i = 0; i < probes; ++i) {
                    do {
                        rng.uniform_in_box(bb.lo, bb.hi, x);
                    } while (!domain.contains(x));
                    for (int k = 0; k < d; ++k)
                        sx[static_cast<std::size_t>(k)] =
                            R * x[static_cast<std::size_t>(k)];
                    double w = is_covered(cfg, grid, sx) ? w_in : 1.0;
                    for (std::size_t fi = 0; fi < fs.size(); ++fi)
                        acc[fi].add(fs[fi].f(x) * w);
                }
                std::vector<double> gaps(fs.size());
                for (std::size_t fi = 0; fi < fs.size(); ++fi) {
                    double nu = vol * acc[fi].value() / static_cast<double>(probes);
                    gaps[fi] = std::abs(nu - mu[fi]);
                }
                return gaps;
            };
        std::vector<std::vector<double>> rows =
            run_replicated<std::vector<double>>(replicas, jobs, seed, 0, fn);
        for (std::size_t fi = 0; fi < fs.size(); ++fi) {
            std::vector<double> vals;
            vals.reserve(rows.size());
            for (const auto& row : rows) vals.push_back(row[fi]);
            std::ostringstream ps;
            ps << "f=" << fs[fi].name << " xi=" << num(params.xi) << " d=" << d
               << " R=" << num(R) << " probes=" << probes
               << " replicas=" << replicas;
            EstimateRecord rec =
                summarize("measure." + fs[fi].name, ps.str(), seed, vals, true);
            rec.extras["R"] = R;
            rec.extras["quadrature_target"] = mu[fi];
            rec.extras["probes"] = static_cast<double>(probes);
            out.push_back(std::move(rec));
        }
    }
    return out;
}

std::vector<EstimateRecord> surjectivity_experiment(
    const Domain& domain, const IntensityField& field, const SimParams& params,
    const std::vector<double>& R_list, double probe_spacing, int replicas,
    std::uint64_t seed, int jobs) {
    params.validate();
    if (params.xi != 0.0)
        throw std::invalid_argument("xi: the covering-depth proxy is defined at xi = 0");
    if (domain.dim() != params.d)
        throw std::invalid_argument("domain: dimension mismatch with params.d");
    if (!field.is_constant() && field.dim() != params.d)
        throw std::invalid_argument("field: dimension mismatch with params.d");
    check_scales(R_list);
    check_replicas(replicas);
    if (!(probe_spacing > 0.0))
        throw std::invalid_argument("probe_spacing: must be positive");

    const int d = params.d;
    std::vector<double> probes = lattice_in_domain(domain, probe_spacing);
    const std::size_t n_probes = probes.size() / static_cast<std::size_t>(d);
    if (n_probes == 0)
        throw std::invalid_argument("probe_spacing: no probes landed in the domain");

    std::vector<EstimateRecord> out;
    for (double R : R_list) {
        std::function<double(int, RngStream&)> fn = [&](int, RngStream& rng) {
            Domain scaled = domain.scaled(R);
            Box sbox = scaled.bounding_box().inflated(params.radius);
            PointConfiguration cfg = sample_poisson_field(
                rng, field.scaled_domain(R), sbox, params.radius);
            CellGrid grid(cfg, 2.0 * params.radius);
            ClusterSet cs = find_clusters(cfg, grid.empty() ? nullptr : &grid);
            std::vector<double> sx(static_cast<std::size_t>(d));
            double worst = 0.0;
            for (std::size_t i = 0; i < n_probes; ++i) {
                for (int k = 0; k < d; ++k)
                    sx[static_cast<std::size_t>(k)] =
                        R * probes[i * static_cast<std::size_t>(d) +
                                   static_cast<std::size_t>(k)];
                std::int32_t cl = covering_cluster(cfg, cs, sx,
                                                   grid.empty() ? nullptr : &grid);
                if (cl < 0) continue; // vacant probes are hit exactly
                double depth = std::numeric_limits<double>::infinity();
                for (std::int32_t b : cs.cluster_members(cl)) {
                    double dd = std::abs(
                        euclid(sx, cfg.center(static_cast<std::size_t>(b))) -
                        params.radius);
                    depth = std::min(depth, dd);
                }
                worst = std::max(worst, depth);
            }
            return worst / R;
        };
        std::vector<double> vals = run_replicated<double>(replicas, jobs, seed, 0, fn);
        std::ostringstream ps;
        ps << "d=" << d << " R=" << num(R) << " probe_spacing=" << num(probe_spacing)
           << " probes=" << n_probes << " replicas=" << replicas;
        EstimateRecord rec = summarize("surjectivity", ps.str(), seed, vals, true);
        rec.extras["R"] = R;
        rec.extras["probes"] = static_cast<double>(n_probes);
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace dfpp
