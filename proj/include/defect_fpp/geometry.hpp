#pragma once

// Basic geometric types: points, boxes, domains, simulation parameters.
//
// All defect configurations live in "rescaled" coordinates where every defect
// is a closed ball of radius `radius` (1.0 by default). The scale parameter R
// in SimParams relates a macroscopic domain D to the rescaled picture: the
// process on D at scale R is simulated as radius-1 balls on R*D, and lengths
// transfer as dist_R(x, y) = dist(R x, R y) / R.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dfpp {

using Point = std::vector<double>;

// Volume of the unit ball in R^d: pi^(d/2) / Gamma(d/2 + 1).
double kappa(int d);

struct Box {
    std::vector<double> lo, hi;

    int dim() const { return static_cast<int>(lo.size()); }
    bool contains(std::span<const double> p) const;
    double volume() const;
    double diameter() const; // diagonal length
    Box inflated(double margin) const;
    Box scaled(double factor) const;
};

// A sampling/experiment domain: an axis-aligned box, a convex polytope given
// by half-spaces a.x <= b, or a finite union of axis-aligned boxes (possibly
// non-convex). Membership tests are exact in all three cases.
class Domain {
public:
    enum class Kind { Box, Polytope, BoxUnion };

    static Domain make_box(Box b);
    // rows of `normals` are the outward normals a_i, offsets are b_i; bbox is
    // a caller-supplied bounding box (vertex enumeration is not attempted).
    static Domain make_polytope(std::vector<std::vector<double>> normals,
                                std::vector<double> offsets, Box bbox);
    static Domain make_box_union(std::vector<Box> boxes);

    Kind kind() const { return kind_; }
    int dim() const { return bbox_.dim(); }
    bool contains(std::span<const double> p) const;
    const Box& bounding_box() const { return bbox_; }
    double diameter() const { return diameter_; }
    bool convex() const { return kind_ != Kind::BoxUnion || boxes_.size() == 1; }

    // Exact for Box and BoxUnion; throws for Polytope (not needed there).
    double volume() const;

    // Distance from an interior point to the boundary (0 if outside). Used to
    // flag clusters whose balls straddle the boundary.
    double interior_depth(std::span<const double> p) const;

    // True if the whole segment [a, b] lies in the domain. Trivial for convex
    // kinds; for box unions the covered parameter intervals are intersected
    // exactly.
    bool contains_segment(std::span<const double> a, std::span<const double> b) const;

    Domain scaled(double factor) const;

    const std::vector<Box>& boxes() const { return boxes_; }
    const std::vector<std::vector<double>>& normals() const { return normals_; }
    const std::vector<double>& offsets() const { return offsets_; }

private:
    Domain() = default;
    Kind kind_ = Kind::Box;
    std::vector<Box> boxes_;                    // Box: size 1; BoxUnion: all parts
    std::vector<std::vector<double>> normals_;  // Polytope only
    std::vector<double> offsets_;
    Box bbox_;
    double diameter_ = 0.0;
};

// Global model parameters. xi is the defect crossing cost factor: a path pays
// full Euclidean length outside defects and fraction xi of its length inside.
// u_star is the assumed subcritical bound on intensities; fields whose sup
// exceeds it are rejected during config validation unless explicitly allowed.
struct SimParams {
    int d = 2;
    double xi = 0.0;
    double R = 1.0;
    double radius = 1.0;
    double u_star = 0.35;
    bool allow_supercritical = false;

    void validate() const;
};

// Conservative subcritical defaults per dimension (d=2: 0.35 against the known
// threshold ~0.359 for unit-radius discs; d=3: 0.08 against ~0.0817). Other
// dimensions have no default and require an explicit u_star.
double default_u_star(int d);

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        double t = a[k] - b[k];
        s += t * t;
    }
    return s;
}

inline double euclid(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(sq_dist(a, b));
}

// Distance from p to the segment [a, b].
double point_segment_distance(std::span<const double> p, std::span<const double> a,
                              std::span<const double> b);

} // namespace dfpp
