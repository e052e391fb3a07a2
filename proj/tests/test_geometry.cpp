#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "defect_fpp/geometry.hpp"

using namespace dfpp;

TEST_SUITE("geometry") {

TEST_CASE("unit ball volumes") {
    CHECK(kappa(1) == doctest::Approx(2.0).epsilon(1e-13));
    CHECK(kappa(2) == doctest::Approx(M_PI).epsilon(1e-13));
    CHECK(kappa(3) == doctest::Approx(4.0 * M_PI / 3.0).epsilon(1e-13));
    CHECK(kappa(4) == doctest::Approx(M_PI * M_PI / 2.0).epsilon(1e-13));
    CHECK_THROWS_AS((void)kappa(0), std::invalid_argument);
}

TEST_CASE("box basics") {
    Box b{{0.0, -1.0}, {2.0, 3.0}};
    CHECK(b.dim() == 2);
    CHECK(b.volume() == doctest::Approx(8.0));
    CHECK(b.diameter() == doctest::Approx(std::sqrt(4.0 + 16.0)));
    CHECK(b.contains(std::vector<double>{0.0, 3.0}));
    CHECK_FALSE(b.contains(std::vector<double>{2.1, 0.0}));
    Box infl = b.inflated(1.0);
    CHECK(infl.lo[0] == -1.0);
    CHECK(infl.hi[1] == 4.0);
    Box sc = b.scaled(2.0);
    CHECK(sc.hi[0] == 4.0);
    CHECK(sc.lo[1] == -2.0);
}

TEST_CASE("domain membership is exact for all three kinds") {
    Domain box = Domain::make_box(Box{{0.0, 0.0}, {1.0, 1.0}});
    CHECK(box.contains(std::vector<double>{1.0, 1.0})); // closed boundary
    CHECK_FALSE(box.contains(std::vector<double>{1.0 + 1e-15, 0.5}));

    // Diamond |x| + |y| <= 2.
    Domain dia = Domain::make_polytope(
        {{1.0, 1.0}, {1.0, -1.0}, {-1.0, 1.0}, {-1.0, -1.0}},
        {2.0, 2.0, 2.0, 2.0}, Box{{-2.0, -2.0}, {2.0, 2.0}});
    CHECK(dia.contains(std::vector<double>{2.0, 0.0}));
    CHECK(dia.contains(std::vector<double>{0.9, 0.9}));
    CHECK_FALSE(dia.contains(std::vector<double>{1.5, 0.9}));
    CHECK(dia.convex());

    Domain ell = Domain::make_box_union(
        {Box{{0.0, 0.0}, {4.0, 1.0}}, Box{{3.0, 1.0}, {4.0, 4.0}}});
    CHECK(ell.contains(std::vector<double>{0.5, 0.5}));
    CHECK(ell.contains(std::vector<double>{3.5, 3.0}));
    CHECK_FALSE(ell.contains(std::vector<double>{1.0, 2.0}));
    CHECK_FALSE(ell.convex());
}

TEST_CASE("box union volume handles overlaps") {
    Domain u = Domain::make_box_union(
        {Box{{0.0, 0.0}, {2.0, 2.0}}, Box{{1.0, 1.0}, {3.0, 3.0}}});
    CHECK(u.volume() == doctest::Approx(7.0).epsilon(1e-12));
    Domain v = Domain::make_box_union({Box{{0.0, 0.0}, {1.0, 1.0}},
                                       Box{{0.0, 0.0}, {1.0, 1.0}},
                                       Box{{5.0, 5.0}, {6.0, 6.0}}});
    CHECK(v.volume() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("interior depth") {
    Domain box = Domain::make_box(Box{{0.0, 0.0}, {10.0, 4.0}});
    CHECK(box.interior_depth(std::vector<double>{5.0, 2.0}) == doctest::Approx(2.0));
    CHECK(box.interior_depth(std::vector<double>{1.0, 2.0}) == doctest::Approx(1.0));
    CHECK(box.interior_depth(std::vector<double>{-1.0, 2.0}) == 0.0);
}

TEST_CASE("segment containment in a box union is exact") {
    Domain ell = Domain::make_box_union(
        {Box{{0.0, 0.0}, {4.0, 1.0}}, Box{{3.0, 1.0}, {4.0, 4.0}}});
    std::vector<double> a{0.5, 0.5}, b{3.5, 0.5}, c{3.5, 3.5}, d{0.5, 0.9};
    CHECK(ell.contains_segment(a, b));
    CHECK(ell.contains_segment(b, c));   // crosses the shared face x in [3,4]
    CHECK_FALSE(ell.contains_segment(a, c)); // cuts the notch
    CHECK(ell.contains_segment(a, d));

    // Two boxes that touch only at a corner: a segment through the exact
    // corner point stays covered, one that misses the corner does not.
    Domain corner = Domain::make_box_union(
        {Box{{0.0, 0.0}, {1.0, 1.0}}, Box{{1.0, 1.0}, {2.0, 2.0}}});
    CHECK(corner.contains_segment(std::vector<double>{0.5, 0.9},
                                  std::vector<double>{1.5, 1.1}));
    CHECK_FALSE(corner.contains_segment(std::vector<double>{0.5, 0.9},
                                        std::vector<double>{1.5, 1.2}));
    CHECK(corner.contains_segment(std::vector<double>{0.5, 0.5},
                                  std::vector<double>{1.0, 1.0}));
}

TEST_CASE("domain scaling") {
    Domain dia = Domain::make_polytope({{1.0, 1.0}, {-1.0, -1.0}}, {2.0, 2.0},
                                       Box{{-2.0, -2.0}, {2.0, 2.0}});
    Domain big = dia.scaled(3.0);
    CHECK(big.contains(std::vector<double>{3.0, 2.9}));
    CHECK_FALSE(big.contains(std::vector<double>{3.1, 3.1}));
    Domain u = Domain::make_box_union({Box{{0.0, 0.0}, {1.0, 1.0}}}).scaled(2.0);
    CHECK(u.bounding_box().hi[0] == 2.0);
}

TEST_CASE("simulation parameter validation") {
    SimParams p;
    CHECK_NOTHROW(p.validate());
    p.xi = 1.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p.xi = 0.0;
    p.R = 0.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p.R = 1.0;
    p.u_star = 0.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p.u_star = 0.35;
    p.d = 1;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("subcritical defaults") {
    CHECK(default_u_star(2) == doctest::Approx(0.35));
    CHECK(default_u_star(3) == doctest::Approx(0.08));
    // No default above d = 3: the sentinel 0 must fail validation, forcing an
    // explicit choice.
    CHECK(default_u_star(4) == 0.0);
    SimParams p;
    p.d = 4;
    p.u_star = default_u_star(4);
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("point to segment distance") {
    std::vector<double> a{0.0, 0.0}, b{4.0, 0.0};
    CHECK(point_segment_distance(std::vector<double>{2.0, 3.0}, a, b) ==
          doctest::Approx(3.0));
    CHECK(point_segment_distance(std::vector<double>{-3.0, 4.0}, a, b) ==
          doctest::Approx(5.0));
    CHECK(point_segment_distance(std::vector<double>{6.0, 0.0}, a, b) ==
          doctest::Approx(2.0));
}

} // TEST_SUITE
