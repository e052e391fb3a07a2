#pragma once

// The defect-adjusted path metric.
//
// For crossing cost xi = 0 a path pays Euclidean length outside the defect set
// S (union of closed balls) and nothing inside, so the distance between x and
// y is the infimum of sum |x_{i+1} - y_i| over chains that hop between defect
// clusters. That infimum is realized on a finite graph whose nodes are the
// clusters plus the two terminals, with edge weight equal to the Euclidean gap
// between the ball unions. GapGraph implements an exact sparsification of this
// complete gap graph (see the proof sketch in metric.cpp) with a single-source
// Dijkstra engine sized for configurations with millions of balls.
//
// For xi in (0, 1) no finite graph is exact. distance_graph_xi computes the
// standard refinable upper bound: polyline paths through K marked points per
// ball boundary, with exact per-segment crossing costs; nesting the node sets
// (K -> 2K) makes the bound monotone in K.

#include <cstdint>
#include <span>
#include <vector>

#include "defect_fpp/clusters.hpp"
#include "defect_fpp/geometry.hpp"
#include "defect_fpp/sampler.hpp"

namespace dfpp {

struct DistanceResult {
    double value = 0.0;
    bool exact = true;
    int refinement = 0;         // K of the boundary-point graph (xi > 0), else 0
    int boundary_clusters = 0;  // clusters straddling the domain boundary (intrinsic)
    std::vector<double> polyline;            // flat, dim-strided; empty if not requested
    std::vector<std::int32_t> clusters_visited;
};

// Exact xi = 0 distance engine over one configuration. Instances hold scratch
// buffers, so they are cheap to query repeatedly but not thread-safe; use one
// instance per thread. If `domain` is given it must be convex; only clusters
// whose member centers all lie inside participate (intrinsic distance).
class GapGraph {
public:
    GapGraph(const PointConfiguration& cfg, const ClusterSet& cs,
             const CellGrid* grid = nullptr, const Domain* domain = nullptr);
    ~GapGraph();
    GapGraph(const GapGraph&) = delete;
    GapGraph& operator=(const GapGraph&) = delete;

    double distance(std::span<const double> x, std::span<const double> y) const;

    // Distance plus realizing polyline and visited cluster ids.
    DistanceResult geodesic(std::span<const double> x, std::span<const double> y) const;

    // Single-source distances to many targets (flat, dim-strided coordinates).
    std::vector<double> sweep(std::span<const double> source,
                              std::span<const double> targets_flat) const;

    // Exact distance from x to the hyperplane {p : p[axis] = level}
    // (unrestricted configurations only).
    double distance_to_hyperplane(std::span<const double> x, int axis,
                                  double level) const;

    std::int32_t node_count() const;
    std::int64_t arc_count() const;
    std::int32_t boundary_cluster_count() const { return boundary_clusters_; }
    bool cluster_included(std::int32_t k) const;

private:
    struct Impl;
    Impl* impl_;
    std::int32_t boundary_clusters_ = 0;
};

// Exact xi = 0 distance (free-standing convenience; builds a GapGraph).
DistanceResult distance_xi0(const PointConfiguration& cfg, const ClusterSet& cs,
                            std::span<const double> x, std::span<const double> y,
                            bool with_path = true);

// Cost of the straight segment [a, b]: Euclidean length outside defects plus
// xi times the length inside. Exact (interval union of ball chords).
double segment_cost(const PointConfiguration& cfg, const CellGrid& grid, double xi,
                    std::span<const double> a, std::span<const double> b);

// Refinable upper bound for xi in (0, 1): Dijkstra over x, y and K boundary
// points per ball with segment_cost edge weights. Monotone nonincreasing in K
// along the nested sequence K, 2K, 4K, ...
DistanceResult distance_graph_xi(const PointConfiguration& cfg, const ClusterSet& cs,
                                 double xi, std::span<const double> x,
                                 std::span<const double> y, int K);

// Distance intrinsic to a domain: paths must stay inside D. Exact for xi = 0
// on convex domains; exact for defect-free non-convex box unions (shortest
// polygonal path via reflex corners); an upper bound otherwise, with
// exact=false. Clusters whose balls straddle the boundary are counted in
// boundary_clusters (and excluded when their centers leave D).
DistanceResult distance_intrinsic(const PointConfiguration& cfg, const ClusterSet& cs,
                                  const Domain& domain, std::span<const double> x,
                                  std::span<const double> y, double xi = 0.0,
                                  int K = 16);

// Exact xi = 0 distance from x to a hyperplane.
double distance_to_hyperplane(const PointConfiguration& cfg, const ClusterSet& cs,
                              std::span<const double> x, int axis, double level);

// Boundary points used by the xi > 0 graph: K per ball for d = 2 (equally
// spaced angles, nested under doubling); the next octahedral subdivision level
// with at least K vertices for d = 3.
std::vector<double> ball_boundary_points(std::span<const double> center, double radius,
                                         int dim, int K);

} // namespace dfpp
