#pragma once

// Poisson sampling of defect configurations.
//
// All samplers are exact two-step schemes: draw the total count from the exact
// Poisson law of the region, then place that many i.i.d. points (uniformly for
// the homogeneous case; by thinning against sup u for fields). Marked sampling
// realizes the standard coupling: points are drawn at rate u_max with an
// independent uniform mark in [0, u_max), and restricting to marks <= level
// yields a Poisson process of that level, nested across levels pathwise.

#include <cstdint>
#include <span>
#include <vector>

#include "defect_fpp/geometry.hpp"
#include "defect_fpp/intensity.hpp"
#include "defect_fpp/rng.hpp"

namespace dfpp {

struct PointConfiguration {
    int dim = 2;
    double radius = 1.0;
    std::vector<double> xs; // flat coordinates, point i at xs[i*dim .. i*dim+dim)

    std::size_t size() const { return dim ? xs.size() / dim : 0; }
    std::span<const double> center(std::size_t i) const {
        return {xs.data() + i * static_cast<std::size_t>(dim),
                static_cast<std::size_t>(dim)};
    }
    void push(std::span<const double> p) { xs.insert(xs.end(), p.begin(), p.end()); }

    // True if p lies in some closed ball of the configuration. Linear scan;
    // use clusters::CellGrid-based queries for bulk probing.
    bool covers(std::span<const double> p) const;
};

struct MarkedConfiguration {
    PointConfiguration points;
    std::vector<double> marks; // marks[i] in [0, u_max)
    double u_max = 0.0;

    // Keep points with mark <= level (constant intensity level <= u_max).
    PointConfiguration restrict_level(double level) const;
    // Keep points with mark <= field(x). Field values must stay <= u_max.
    PointConfiguration restrict_field(const IntensityField& field) const;
};

// Homogeneous Poisson sample of constant intensity u on `box`.
PointConfiguration sample_poisson_box(RngStream& rng, double u, const Box& box,
                                      double radius = 1.0);

// Inhomogeneous sample via thinning at sup_value. Exact for any field.
PointConfiguration sample_poisson_field(RngStream& rng, const IntensityField& field,
                                        const Box& box, double radius = 1.0);

// Marked sample for monotone couplings across intensity levels up to u_max.
MarkedConfiguration sample_marked_box(RngStream& rng, double u_max, const Box& box,
                                      double radius = 1.0);

} // namespace dfpp
