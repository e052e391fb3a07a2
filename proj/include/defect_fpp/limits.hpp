#pragma once

// Closed-form limit coefficients and the conformal comparison metric.
//
// sigma(u) and eta_upper_bound(u) are exact formula evaluations. eta itself
// has no closed form; it is estimated elsewhere and carried around as an
// EtaTable (JSON-persisted, monotone interpolation). ConformalGrid
// approximates the intrinsic distance induced by a conformal factor rho(x) on
// a domain: Dijkstra over a lattice with a primitive-vector stencil, edge
// weight = Euclidean step length times the mean of the endpoint rho values.
// The induced lattice norm overestimates the Euclidean norm by at most
// anisotropy_bound(), computed exactly from the stencil geometry, plus an
// O(h * Lip(rho)) discretization term.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "defect_fpp/geometry.hpp"

namespace dfpp {

// Volume coefficient of the rescaled defect metric:
// (e^{-u kappa_d} + xi^d (1 - e^{-u kappa_d}))^{1/d}.
double sigma(double u, double xi, int d);

// Upper bound for the length coefficient eta:
// e^{-u kappa_d} + xi (1 - e^{-u kappa_d}). Strictly above eta, and strictly
// below sigma for u > 0, xi < 1 (power-mean inequality).
double eta_upper_bound(double u, double xi, int d);

// Empirical table of the length coefficient eta(u) on [0, u_star), estimated
// by Monte Carlo elsewhere. Entries are sorted by u; the u = 0 entry with
// eta = 1 is mandatory. Lookup is piecewise-linear between nodes, which
// preserves monotonicity of the stored values and never leaves [min, 1].
struct EtaTable {
    struct Entry {
        double u = 0.0;
        double eta = 1.0;
        double err = 0.0; // standard error of the estimate, 0 for exact
    };

    int d = 2;
    double xi = 0.0;
    double R = 0.0;          // scale the estimates were run at (0 = exact/unknown)
    std::int64_t replicas = 0;
    std::vector<Entry> entries;

    // Invariants: entries sorted strictly by u, u in [0, inf), first entry
    // (0, 1), eta in (0, 1], nonincreasing within 2 * err slack.
    void validate() const;

    double u_max() const { return entries.empty() ? 0.0 : entries.back().u; }

    // Piecewise-linear interpolation; throws std::out_of_range outside
    // [0, u_max()].
    double lookup(double u) const;

    std::string to_json() const;
    static EtaTable from_json(const std::string& text);
};

// Lattice approximation of the intrinsic distance induced by the Riemannian
// metric rho(x)^2 * (euclidean) on `domain`, i.e. path length weighted
// pointwise by rho. Nodes are lattice points of pitch `spacing` inside the
// domain; neighbors are all primitive integer moves with Chebyshev norm
// <= stencil_order (order 0 picks a per-dimension default wide enough for
// sub-percent anisotropy). On non-convex domains edges whose segment leaves
// the domain are removed, so paths cannot cut corners.
class ConformalGrid {
public:
    ConformalGrid(Domain domain, double spacing,
                  const std::function<double(std::span<const double>)>& rho,
                  int stencil_order = 0);
    ~ConformalGrid();
    ConformalGrid(ConformalGrid&&) noexcept;
    ConformalGrid& operator=(ConformalGrid&&) noexcept;

    int dim() const;
    double spacing() const;
    int stencil_order() const;
    std::size_t node_count() const;

    // Exact worst-direction relative overestimate of the stencil's induced
    // norm against the Euclidean norm (0.0049 means 0.49%). Computed from the
    // stencil's dual polytope; independent of rho and spacing.
    double anisotropy_bound() const;

    // Distance between two points of the domain. Endpoints snap to the
    // nearest lattice node (adding rho-weighted snap segments, an O(spacing)
    // perturbation). Throws std::invalid_argument if an endpoint lies outside
    // the domain. Thread-safe: scratch is per call.
    double distance(std::span<const double> x, std::span<const double> y) const;

    // One Dijkstra pass from x serving many targets.
    std::vector<double> distances(std::span<const double> x,
                                  const std::vector<Point>& ys) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Operation-style spelling of ConformalGrid::distance.
double conformal_distance(const ConformalGrid& grid, std::span<const double> x,
                          std::span<const double> y);

} // namespace dfpp
