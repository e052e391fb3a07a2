#include "doctest.h"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "defect_fpp/clusters.hpp"
#include "defect_fpp/estimators.hpp"
#include "defect_fpp/metric.hpp"

using namespace dfpp;

namespace {

SimParams plane_params(double xi = 0.0) {
    SimParams p;
    p.d = 2;
    p.xi = xi;
    return p;
}

} // namespace

TEST_SUITE("estimators") {

TEST_CASE("summarize: mean, stderr and quantiles of a known vector") {
    EstimateRecord rec = summarize("demo", "none", 7, {1.0, 2.0, 3.0, 4.0}, true);
    CHECK(rec.n == 4);
    CHECK(rec.mean == doctest::Approx(2.5).epsilon(1e-15));
    // sample sd = sqrt(5/3), stderr = sd / 2
    CHECK(rec.err == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(rec.has_quantiles);
    CHECK(rec.q50 == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(rec.q05 == doctest::Approx(1.15).epsilon(1e-12));
    CHECK(rec.q95 == doctest::Approx(3.85).epsilon(1e-12));
    CHECK(rec.seed == 7);
    std::string js = rec.to_json();
    CHECK(js.find("\"schema\":1") != std::string::npos);
    CHECK(js.find("\"name\":\"demo\"") != std::string::npos);

    EstimateRecord single = summarize("one", "", 0, {0.25}, true);
    CHECK(single.mean == 0.25);
    CHECK(single.err == 0.0);
    CHECK(single.q05 == 0.25);
    CHECK(single.q95 == 0.25);
}

TEST_CASE("run_replicated: results are keyed by replica, not by schedule") {
    std::function<double(int, RngStream&)> fn = [](int r, RngStream& rng) {
        return static_cast<double>(r) + rng.uniform01();
    };
    auto serial = run_replicated<double>(16, 1, 99, 5, fn);
    auto parallel = run_replicated<double>(16, 4, 99, 5, fn);
    REQUIRE(serial.size() == 16);
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i] == parallel[i]); // bitwise
        CHECK(serial[i] >= static_cast<double>(i));
        CHECK(serial[i] < static_cast<double>(i) + 1.0);
    }

    std::function<double(int, RngStream&)> boom = [](int r, RngStream&) -> double {
        if (r == 3) throw std::runtime_error("replica 3 exploded");
        return 0.0;
    };
    CHECK_THROWS_AS(run_replicated<double>(8, 3, 0, 0, boom), std::runtime_error);
    CHECK_THROWS_AS(run_replicated<double>(-1, 1, 0, 0, fn), std::invalid_argument);
}

TEST_CASE("eta at u = 0 is exactly one with zero spread") {
    EtaEstimate est = estimate_eta(0.0, plane_params(), {10.0, 20.0}, 6, 42);
    CHECK(est.eta_hat == 1.0);
    CHECK(est.eta_err == 0.0);
    CHECK(est.upper_bound == 1.0);
    CHECK_FALSE(est.bound_violated);
    for (const auto& rec : est.per_R) {
        CHECK(rec.mean == 1.0);
        CHECK(rec.err == 0.0);
        for (double v : rec.per_replica) CHECK(v == 1.0);
    }
}

TEST_CASE("eta estimate respects the closed-form upper bound and stays positive") {
    SimParams prm = plane_params();
    EtaEstimate est = estimate_eta(0.2, prm, {25.0, 50.0}, 20, 2024);
    double bound = eta_upper_bound(0.2, 0.0, 2);
    CHECK(est.upper_bound == doctest::Approx(bound).epsilon(1e-15));
    CHECK(est.eta_hat > 0.0);
    CHECK(est.eta_hat <= bound + 3.0 * est.eta_err);
    // common random numbers across scales: the finite-size decay is paired
    CHECK(est.per_R[1].mean < est.per_R[0].mean);
    CHECK(est.fit_b > 0.0);
    CHECK_FALSE(est.bound_violated);
    // ratios are scale-invariant bounded quantities
    for (const auto& rec : est.per_R)
        for (double v : rec.per_replica) {
            CHECK(v > 0.0);
            CHECK(v <= 1.0 + 1e-12);
        }
    REQUIRE(est.tail_prob.size() == 2);
    for (double p : est.tail_prob) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
}

TEST_CASE("eta with xi > 0 lands between xi and the mixed bound") {
    SimParams prm = plane_params(0.5);
    EtaEstimate est = estimate_eta(0.15, prm, {12.0}, 8, 7, 1, 10.0, 8);
    double bound = eta_upper_bound(0.15, 0.5, 2);
    CHECK(est.eta_hat >= 0.5 - 1e-12); // paths pay at least xi per unit length
    CHECK(est.eta_hat <= bound + 3.0 * est.eta_err);
}

TEST_CASE("eta estimation rejects bad inputs") {
    SimParams prm = plane_params();
    CHECK_THROWS_AS(estimate_eta(0.4, prm, {10.0}, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(estimate_eta(-0.1, prm, {10.0}, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(estimate_eta(0.1, prm, {}, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(estimate_eta(0.1, prm, {20.0, 10.0}, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(estimate_eta(0.1, prm, {10.0}, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(estimate_eta(0.1, prm, {10.0}, 4, 0, 1, -1.0), std::invalid_argument);
}

TEST_CASE("volume fraction at u = 0 is exactly one") {
    EstimateRecord rec = estimate_volume_fraction(0.0, plane_params(), 10.0, 4, 500, 3);
    CHECK(rec.mean == 1.0);
    CHECK(rec.err == 0.0);
    CHECK(rec.extras.at("target") == 1.0);
}

TEST_CASE("volume fraction matches the vacant law within three standard errors") {
    // Independent target: P(vacant) = exp(-u * pi) for unit discs in d = 2.
    double u = 0.2;
    EstimateRecord rec =
        estimate_volume_fraction(u, plane_params(), 30.0, 24, 20000, 515);
    double target = std::exp(-u * std::numbers::pi);
    CHECK(rec.extras.at("target") == doctest::Approx(target).epsilon(1e-14));
    CHECK(std::abs(rec.mean - target) <= 3.0 * rec.err);
    CHECK(rec.err > 0.0);
    CHECK(rec.err < 0.02);
}

TEST_CASE("weighted volume fraction with xi > 0 matches sigma^d") {
    double u = 0.3, xi = 0.5;
    EstimateRecord rec =
        estimate_volume_fraction(u, plane_params(xi), 30.0, 24, 20000, 99);
    double target = std::pow(sigma(u, xi, 2), 2);
    CHECK(rec.extras.at("target") == doctest::Approx(target).epsilon(1e-13));
    CHECK(std::abs(rec.mean - target) <= 3.0 * rec.err);
}

TEST_CASE("volume fraction input validation") {
    SimParams prm = plane_params();
    CHECK_THROWS_AS(estimate_volume_fraction(0.1, prm, 0.0, 4, 100, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(estimate_volume_fraction(0.1, prm, 10.0, 0, 100, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(estimate_volume_fraction(0.1, prm, 10.0, 4, 0, 0),
                    std::invalid_argument);
}

TEST_CASE("polyline deviation: straight polylines give zero, a detour its height") {
    std::vector<double> a{0.0, 0.0}, b{10.0, 0.0};
    std::vector<double> straight{0.0, 0.0, 4.0, 0.0, 10.0, 0.0};
    CHECK(polyline_segment_deviation(straight, 2, a, b, 0.25) == 0.0);

    std::vector<double> detour{0.0, 0.0, 5.0, 3.0, 10.0, 0.0};
    // apex (5, 3) is a polyline vertex, so the sup hits it exactly
    CHECK(polyline_segment_deviation(detour, 2, a, b, 0.1) ==
          doctest::Approx(3.0).epsilon(1e-12));

    CHECK_THROWS_AS(polyline_segment_deviation(straight, 2, a, b, 0.0),
                    std::invalid_argument);
    std::vector<double> ragged{0.0, 0.0, 1.0};
    CHECK_THROWS_AS(polyline_segment_deviation(ragged, 2, a, b, 0.5),
                    std::invalid_argument);
}

TEST_CASE("a single ball centered on the segment does not bend the geodesic") {
    PointConfiguration cfg;
    cfg.dim = 2;
    cfg.radius = 1.0;
    cfg.xs = {5.0, 0.0};
    ClusterSet cs = find_clusters(cfg);
    std::vector<double> x{0.0, 0.0}, y{10.0, 0.0};
    DistanceResult res = distance_xi0(cfg, cs, x, y, true);
    CHECK(res.value == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(polyline_segment_deviation(res.polyline, 2, x, y, 0.25) <= 1e-12);
}

TEST_CASE("geodesic deviation at u = 0 is exactly zero") {
    auto recs = geodesic_deviation(0.0, plane_params(), {10.0, 20.0}, 4, 11);
    REQUIRE(recs.size() == 2);
    for (const auto& rec : recs) {
        CHECK(rec.mean == 0.0);
        CHECK(rec.err == 0.0);
    }
}

TEST_CASE("geodesic deviation is nonnegative and bounded by the box margin") {
    double u = 0.2, mf = 10.0;
    auto recs = geodesic_deviation(u, plane_params(), {20.0, 40.0}, 12, 31, 1, mf);
    REQUIRE(recs.size() == 2);
    for (std::size_t t = 0; t < recs.size(); ++t) {
        double L = recs[t].extras.at("L");
        double margin = mf * std::log1p(L);
        for (double v : recs[t].per_replica) {
            CHECK(v >= 0.0);
            // geodesics stay inside the sampling box by construction
            CHECK(v <= (margin + 1.0) / L);
        }
    }
    CHECK_THROWS_AS(geodesic_deviation(0.1, plane_params(0.5), {10.0}, 4, 0),
                    std::invalid_argument);
}

TEST_CASE("cluster tail: no clusters means no fit") {
    CHECK_THROWS_AS(cluster_tail(0.0, plane_params(), 20.0, 2, 5),
                    InsufficientData);
    // a couple of points give survival levels above the band
    CHECK_THROWS_AS(cluster_tail(0.02, plane_params(), 10.0, 1, 5),
                    InsufficientData);
}

TEST_CASE("cluster tail: subcritical diameters decay exponentially") {
    TailEstimate est = cluster_tail(0.15, plane_params(), 60.0, 12, 88);
    CHECK(est.clusters > 500);
    // every cluster holds at least one ball, so diameters start at 2r
    CHECK(est.diameters.front() >= 2.0);
    // singletons exist, so survival past 2r is strictly below one
    std::size_t above = 0;
    for (double t : est.diameters)
        if (t > 2.0) ++above;
    CHECK(above < est.diameters.size());
    CHECK(est.slope < 0.0);
    CHECK(est.r2 >= 0.8);
    REQUIRE(est.band_t.size() >= 3);
    for (double s : est.band_log_s) {
        CHECK(s <= std::log(1e-1) + 1e-12);
        CHECK(s >= std::log(1e-3) - 1e-12);
    }
}

TEST_CASE("threshold scan: tiny intensity never crosses, high intensity always") {
    SimParams prm = plane_params();
    prm.allow_supercritical = true;
    ThresholdScan scan = threshold_scan({1e-9, 0.1, 0.6}, prm, {60.0}, 500, 321);
    REQUIRE(scan.crossing_prob.size() == 1);
    REQUIRE(scan.crossing_prob[0].size() == 3);
    CHECK(scan.crossing_prob[0][0] == 0.0);
    CHECK(scan.crossing_prob[0][1] < 0.05);
    CHECK(scan.crossing_prob[0][2] > 0.95);
    // marked coupling makes the empirical curve monotone pathwise
    CHECK(scan.crossing_prob[0][0] <= scan.crossing_prob[0][1]);
    CHECK(scan.crossing_prob[0][1] <= scan.crossing_prob[0][2]);
    REQUIRE(scan.u_star.size() == 1);
    CHECK(scan.u_star[0] > 0.1);
    CHECK(scan.u_star[0] < 0.6);
}

TEST_CASE("threshold scan input validation") {
    SimParams prm = plane_params();
    prm.allow_supercritical = true;
    CHECK_THROWS_AS(threshold_scan({}, prm, {20.0}, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(threshold_scan({0.2, 0.1}, prm, {20.0}, 4, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(threshold_scan({0.0}, prm, {20.0}, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(threshold_scan({0.1}, prm, {}, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(threshold_scan({0.1}, prm, {20.0}, 0, 0), std::invalid_argument);
}

TEST_CASE("coupled distances: equal levels coincide, zero level is the diameter") {
    SimParams prm = plane_params();
    CoupledResult same = coupled_monotonicity(0.15, 0.15, prm, 30.0, 8, 5);
    REQUIRE(same.low.per_replica.size() == same.high.per_replica.size());
    for (std::size_t r = 0; r < same.low.per_replica.size(); ++r)
        CHECK(same.low.per_replica[r] == same.high.per_replica[r]); // bitwise

    CoupledResult zero = coupled_monotonicity(0.0, 0.2, prm, 30.0, 8, 5);
    for (double v : zero.low.per_replica) CHECK(v == 30.0);
    for (double v : zero.high.per_replica) {
        CHECK(v <= 30.0 + 1e-12);
        CHECK(v > 0.0);
    }
    CHECK(zero.high.mean < zero.low.mean);
}

TEST_CASE("coupled distances are monotone pathwise across many replicas") {
    SimParams prm = plane_params();
    CoupledResult res = coupled_monotonicity(0.1, 0.2, prm, 40.0, 30, 777);
    CHECK(res.replicas == 30);
    for (std::size_t r = 0; r < res.low.per_replica.size(); ++r)
        CHECK(res.high.per_replica[r] <= res.low.per_replica[r] + 1e-9);
    CHECK(res.high.mean < res.low.mean);
    CHECK_THROWS_AS(coupled_monotonicity(0.3, 0.1, prm, 20.0, 4, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(coupled_monotonicity(0.1, 0.5, prm, 20.0, 4, 0),
                    std::invalid_argument);
}

TEST_CASE("reproducibility: job count never changes the numbers") {
    SimParams prm = plane_params();
    auto v1 = estimate_volume_fraction(0.25, prm, 20.0, 10, 2000, 246, 1);
    auto v3 = estimate_volume_fraction(0.25, prm, 20.0, 10, 2000, 246, 3);
    REQUIRE(v1.per_replica.size() == v3.per_replica.size());
    for (std::size_t i = 0; i < v1.per_replica.size(); ++i)
        CHECK(v1.per_replica[i] == v3.per_replica[i]);
    CHECK(v1.mean == v3.mean);
    CHECK(v1.err == v3.err);
    CHECK(v1.to_json() == v3.to_json());

    auto e1 = estimate_eta(0.15, prm, {15.0, 30.0}, 6, 135, 1);
    auto e2 = estimate_eta(0.15, prm, {15.0, 30.0}, 6, 135, 2);
    CHECK(e1.eta_hat == e2.eta_hat);
    for (std::size_t t = 0; t < e1.per_R.size(); ++t)
        for (std::size_t i = 0; i < e1.per_R[t].per_replica.size(); ++i)
            CHECK(e1.per_R[t].per_replica[i] == e2.per_R[t].per_replica[i]);

    SimParams sp = plane_params();
    sp.allow_supercritical = true;
    auto s1 = threshold_scan({0.2, 0.4}, sp, {25.0}, 12, 9, 1);
    auto s4 = threshold_scan({0.2, 0.4}, sp, {25.0}, 12, 9, 4);
    CHECK(s1.crossing_prob == s4.crossing_prob);
}

TEST_CASE("distortion: constant intensity on a box stays bounded and reproducible") {
    SimParams prm = plane_params();
    IntensityField field = IntensityField::constant(0.15);
    Box bb;
    bb.lo = {0.0, 0.0};
    bb.hi = {10.0, 10.0};
    Domain domain = Domain::make_box(bb);
    // Honest conformal target: tabulate eta with the estimator itself, so the
    // comparison is against the empirical coefficient, not an invented one.
    EtaTable table;
    table.d = 2;
    table.xi = 0.0;
    table.R = 40.0;
    table.replicas = 12;
    table.entries.push_back({0.0, 1.0, 0.0});
    for (double u : {0.05, 0.10, 0.15}) {
        EtaEstimate e = estimate_eta(u, prm, {40.0}, 12, 1234, 2);
        table.entries.push_back({u, e.eta_hat, e.eta_err});
    }
    table.validate();

    auto recs = distortion_experiment(field, domain, prm, {5.0, 10.0}, 5.0, table,
                                      4, 9090, 1, 10000, 0.5);
    REQUIRE(recs.size() == 2);
    for (const auto& rec : recs) {
        CHECK(rec.extras.at("net_points") == 9.0);
        CHECK(rec.extras.at("pairs") == 36.0);
        for (double v : rec.per_replica) {
            CHECK(v >= 0.0);
            // both sides are metrics on a diameter-14 box with coefficients
            // below one, and the finite-R drift is well under the diameter
            CHECK(v < 3.0);
        }
    }
    auto again = distortion_experiment(field, domain, prm, {5.0, 10.0}, 5.0, table,
                                       4, 9090, 3, 10000, 0.5);
    for (std::size_t t = 0; t < recs.size(); ++t)
        for (std::size_t i = 0; i < recs[t].per_replica.size(); ++i)
            CHECK(recs[t].per_replica[i] == again[t].per_replica[i]);
}

TEST_CASE("distortion: non-convex domains go through the intrinsic route") {
    SimParams prm = plane_params();
    IntensityField field = IntensityField::constant(0.1);
    Box a, b;
    a.lo = {0.0, 0.0};
    a.hi = {10.0, 4.0};
    b.lo = {0.0, 0.0};
    b.hi = {4.0, 10.0};
    Domain domain = Domain::make_box_union({a, b});
    CHECK_FALSE(domain.convex());
    // realistic coefficient scale for u ~ 0.1 (the route under test is the
    // intrinsic-distance fallback, not the coefficient's accuracy)
    EtaTable table;
    table.d = 2;
    table.xi = 0.0;
    table.entries = {{0.0, 1.0, 0.0}, {0.05, 0.56, 0.02}, {0.1, 0.32, 0.02}};

    auto recs = distortion_experiment(field, domain, prm, {4.0}, 4.0, table, 2,
                                      40, 1, 10000, 0.5);
    REQUIRE(recs.size() == 1);
    for (double v : recs[0].per_replica) {
        CHECK(v >= 0.0);
        CHECK(std::isfinite(v));
    }
}

TEST_CASE("distortion input validation") {
    SimParams prm = plane_params();
    IntensityField field = IntensityField::constant(0.3);
    Box bb;
    bb.lo = {0.0, 0.0};
    bb.hi = {10.0, 10.0};
    Domain domain = Domain::make_box(bb);
    EtaTable table;
    table.d = 2;
    table.xi = 0.0;
    table.entries = {{0.0, 1.0, 0.0}, {0.2, 0.45, 0.01}};
    // field exceeds the table's range
    CHECK_THROWS_AS(distortion_experiment(field, domain, prm, {5.0}, 5.0, table,
                                          2, 0),
                    std::invalid_argument);
    IntensityField ok = IntensityField::constant(0.1);
    EtaTable wrong_xi = table;
    wrong_xi.xi = 0.5;
    CHECK_THROWS_AS(distortion_experiment(ok, domain, prm, {5.0}, 5.0, wrong_xi,
                                          2, 0),
                    std::invalid_argument);
    // pair cap exceeded
    CHECK_THROWS_AS(distortion_experiment(ok, domain, prm, {5.0}, 1.0, table, 2,
                                          0, 1, 10),
                    std::invalid_argument);
    // net too coarse
    CHECK_THROWS_AS(distortion_experiment(ok, domain, prm, {5.0}, 50.0, table, 2,
                                          0),
                    std::invalid_argument);
}

TEST_CASE("measure gaps: constant intensity, trivial and linear test functions") {
    SimParams prm = plane_params();
    IntensityField field = IntensityField::constant(0.2);
    Box bb;
    bb.lo = {0.0, 0.0};
    bb.hi = {8.0, 8.0};
    Domain domain = Domain::make_box(bb);
    std::vector<TestFunction> fs;
    fs.push_back({"one", [](std::span<const double>) { return 1.0; }});
    fs.push_back({"x0", [](std::span<const double> p) { return p[0] / 8.0; }});

    auto recs = measure_experiment(field, domain, prm, {4.0, 8.0}, fs, 6, 4000,
                                   5150, 1, 128);
    REQUIRE(recs.size() == 4); // R-major, f within R
    // constant field: the quadrature target for f = 1 is vol * sigma^d exactly
    double target = 64.0 * std::pow(sigma(0.2, 0.0, 2), 2);
    CHECK(recs[0].extras.at("quadrature_target") ==
          doctest::Approx(target).epsilon(1e-12));
    CHECK(recs[0].name == "measure.one");
    CHECK(recs[1].name == "measure.x0");
    for (const auto& rec : recs) {
        CHECK(rec.mean >= 0.0);
        CHECK(rec.mean < 10.0);
        for (double v : rec.per_replica) CHECK(v >= 0.0);
    }
}

TEST_CASE("measure gap shrinks from tiny scales to moderate ones") {
    // At R far below 1 the rescaled defects are macroscopic and the weighted
    // volume is badly off; by R ~ 10 the gap should be near the MC noise floor.
    SimParams prm = plane_params();
    IntensityField field = IntensityField::constant(0.25);
    Box bb;
    bb.lo = {0.0, 0.0};
    bb.hi = {6.0, 6.0};
    Domain domain = Domain::make_box(bb);
    std::vector<TestFunction> fs;
    fs.push_back({"one", [](std::span<const double>) { return 1.0; }});
    auto recs = measure_experiment(field, domain, prm, {0.2, 12.0}, fs, 12, 4000,
                                   77, 1, 128);
    REQUIRE(recs.size() == 2);
    CHECK(recs[1].mean < recs[0].mean);
}

TEST_CASE("measure input validation") {
    SimParams prm = plane_params();
    IntensityField field = IntensityField::constant(0.2);
    Box bb;
    bb.lo = {0.0, 0.0};
    bb.hi = {4.0, 4.0};
    Domain box_dom = Domain::make_box(bb);
    std::vector<TestFunction> fs;
    fs.push_back({"one", [](std::span<const double>) { return 1.0; }});

    Domain poly = Domain::make_polytope({{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0},
                                         {0.0, -1.0}},
                                        {4.0, 0.0, 4.0, 0.0}, bb);
    CHECK_THROWS_AS(measure_experiment(field, poly, prm, {4.0}, fs, 2, 100, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(measure_experiment(field, box_dom, prm, {4.0}, {}, 2, 100, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(measure_experiment(field, box_dom, prm, {4.0}, fs, 2, 0, 0),
                    std::invalid_argument);
}

TEST_CASE("surjectivity: vacant domains give zero, coverage is depth-bounded") {
    SimParams prm = plane_params();
    Box bb;
    bb.lo = {0.0, 0.0};
    bb.hi = {10.0, 10.0};
    Domain domain = Domain::make_box(bb);

    auto zero = surjectivity_experiment(domain, IntensityField::constant(0.0), prm,
                                        {5.0}, 2.5, 3, 60);
    REQUIRE(zero.size() == 1);
    CHECK(zero[0].mean == 0.0);

    auto recs = surjectivity_experiment(domain, IntensityField::constant(0.2), prm,
                                        {5.0, 10.0}, 2.5, 6, 61);
    REQUIRE(recs.size() == 2);
    for (const auto& rec : recs) {
        double R = rec.extras.at("R");
        for (double v : rec.per_replica) {
            CHECK(v >= 0.0);
            // a covered probe lies within r of some ball surface
            CHECK(v <= prm.radius / R + 1e-12);
        }
    }
    CHECK_THROWS_AS(surjectivity_experiment(domain, IntensityField::constant(0.2),
                                            plane_params(0.5), {5.0}, 2.5, 2, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(surjectivity_experiment(domain, IntensityField::constant(0.2),
                                            prm, {5.0}, 0.0, 2, 0),
                    std::invalid_argument);
}

TEST_CASE("scaled-domain fields stretch the profile onto the scaled region") {
    Box bb;
    bb.lo = {0.0, 0.0};
    bb.hi = {10.0, 10.0};
    IntensityField ramp = IntensityField::linear_on_box(bb, 0, 0.1, 0.3);
    IntensityField big = ramp.scaled_domain(4.0);
    std::vector<double> p{2.0, 5.0};
    std::vector<double> q{8.0, 20.0};
    CHECK(big.value(q) == doctest::Approx(ramp.value(p)).epsilon(1e-14));
    CHECK(big.sup_value() == ramp.sup_value());
    IntensityField c = IntensityField::constant(0.2).scaled_domain(3.0);
    std::vector<double> any{1.0, -4.0};
    CHECK(c.value(any) == 0.2);
    CHECK_THROWS_AS(ramp.scaled_domain(0.0), std::invalid_argument);
}

} // TEST_SUITE
