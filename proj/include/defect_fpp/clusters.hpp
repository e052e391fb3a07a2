#pragma once

// Connected components of the defect set (union of closed balls) and the
// spatial index used by every geometric bulk query.
//
// Two balls belong to the same cluster when their centers are at most 2r
// apart (closed overlap). find_clusters unions overlapping pairs through a
// dense cell grid in O(n) expected time; cluster ids are assigned in first
// point order, so they are deterministic for a fixed configuration.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "defect_fpp/geometry.hpp"
#include "defect_fpp/sampler.hpp"

namespace dfpp {

// Dense cell grid over the bounding box of a configuration (d = 2 or 3).
// Cells are cubes of side `cell`; points are stored CSR-style per cell.
class CellGrid {
public:
    CellGrid() = default;
    CellGrid(const PointConfiguration& cfg, double cell);

    int dim() const { return dim_; }
    double cell_size() const { return cell_; }
    bool empty() const { return order_.empty(); }

    // Grid coordinate of a point along axis k, clamped to the grid.
    int coord(double x, int k) const;
    std::int64_t cell_index(std::span<const double> p) const;
    std::int64_t cell_index_coords(const int* c) const;
    int extent(int k) const { return n_[k]; }
    double origin(int k) const { return lo_[k]; }

    std::span<const std::int32_t> points_in_cell(std::int64_t ci) const {
        return {order_.data() + offsets_[ci],
                static_cast<std::size_t>(offsets_[ci + 1] - offsets_[ci])};
    }

    // Points in the run of `len` cells starting at coordinates c and advancing
    // along the last axis; such cells are index-contiguous. Bounds must be
    // pre-clamped so the whole run lies inside the grid.
    std::span<const std::int32_t> points_in_cells(const int* c, int len) const {
        std::int64_t ci = cell_index_coords(c);
        return {order_.data() + offsets_[ci],
                static_cast<std::size_t>(offsets_[ci + len] - offsets_[ci])};
    }

    // Visit points in all cells within Chebyshev distance `ring` (in cells) of
    // the cell containing p. ring=1 visits the 3^d block.
    template <class Fn>
    void for_each_near(std::span<const double> p, int ring, Fn&& fn) const {
        int c0[3] = {0, 0, 0};
        for (int k = 0; k < dim_; ++k) c0[k] = coord(p[k], k);
        int lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
        for (int k = 0; k < dim_; ++k) {
            lo[k] = std::max(0, c0[k] - ring);
            hi[k] = std::min(n_[k] - 1, c0[k] + ring);
        }
        int c[3] = {lo[0], lo[1], lo[2]};
        for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0])
            for (c[1] = lo[1]; c[1] <= hi[1]; ++c[1]) {
                if (dim_ == 2) {
                    for (std::int32_t i : points_in_cell(cell_index_coords(c))) fn(i);
                } else {
                    for (c[2] = lo[2]; c[2] <= hi[2]; ++c[2])
                        for (std::int32_t i : points_in_cell(cell_index_coords(c))) fn(i);
                }
            }
    }

    // Visit each cell index of the annulus at exactly Chebyshev distance
    // `ring` (in cells) around cell coordinates c0. ring=0 is the cell itself.
    template <class Fn>
    void for_each_cell_in_ring(const int* c0, int ring, Fn&& fn) const {
        if (order_.empty()) return;
        auto inside = [&](const int* c) {
            for (int k = 0; k < dim_; ++k)
                if (c[k] < 0 || c[k] >= n_[k]) return false;
            return true;
        };
        if (ring == 0) {
            if (inside(c0)) fn(cell_index_coords(c0));
            return;
        }
        int c[3] = {0, 0, 0};
        if (dim_ == 2) {
            for (int x = c0[0] - ring; x <= c0[0] + ring; ++x) {
                bool edge_x = (x == c0[0] - ring || x == c0[0] + ring);
                for (int y = c0[1] - ring; y <= c0[1] + ring; ++y) {
                    if (!edge_x && y != c0[1] - ring && y != c0[1] + ring) continue;
                    c[0] = x; c[1] = y;
                    if (inside(c)) fn(cell_index_coords(c));
                }
            }
        } else {
            for (int x = c0[0] - ring; x <= c0[0] + ring; ++x) {
                bool ex = (x == c0[0] - ring || x == c0[0] + ring);
                for (int y = c0[1] - ring; y <= c0[1] + ring; ++y) {
                    bool ey = (y == c0[1] - ring || y == c0[1] + ring);
                    for (int z = c0[2] - ring; z <= c0[2] + ring; ++z) {
                        if (!ex && !ey && z != c0[2] - ring && z != c0[2] + ring)
                            continue;
                        c[0] = x; c[1] = y; c[2] = z;
                        if (inside(c)) fn(cell_index_coords(c));
                    }
                }
            }
        }
    }

    // Squared distance from p to the closest possible position in cell ci
    // (0 when p lies inside the cell). Used for certified ring lower bounds.
    double cell_sq_lower_bound(std::span<const double> p, std::int64_t ci) const;

private:
    int dim_ = 0;
    double cell_ = 1.0;
    double lo_[3] = {0, 0, 0};
    int n_[3] = {1, 1, 1};
    std::vector<std::int32_t> offsets_;
    std::vector<std::int32_t> order_;
};

// Partition of a configuration into overlap clusters.
struct ClusterSet {
    std::int32_t count = 0;
    std::vector<std::int32_t> cluster_of_point;
    std::vector<std::int32_t> member_offsets; // CSR by cluster id
    std::vector<std::int32_t> members;
    std::vector<double> bbox_lo, bbox_hi; // per cluster, centers only, dim-strided

    std::span<const std::int32_t> cluster_members(std::int32_t k) const {
        return {members.data() + member_offsets[k],
                static_cast<std::size_t>(member_offsets[k + 1] - member_offsets[k])};
    }
    std::int32_t cluster_size(std::int32_t k) const {
        return member_offsets[k + 1] - member_offsets[k];
    }
};

// Components of the ball-overlap graph. If `grid` is null, a grid of cell
// size 2r is built internally (d <= 3); for d >= 4 a quadratic scan is used.
ClusterSet find_clusters(const PointConfiguration& cfg, const CellGrid* grid = nullptr);

// Diameter of the cluster's ball union: max center distance + 2r.
double cluster_diameter(const PointConfiguration& cfg, const ClusterSet& cs,
                        std::int32_t k);

// Euclidean gap between two clusters' ball unions (0 if they touch; they
// cannot overlap, or they would be one cluster).
double cluster_set_distance(const PointConfiguration& cfg, const ClusterSet& cs,
                            std::int32_t a, std::int32_t b);

// Euclidean distance from p to the cluster's ball union (0 if inside).
double point_cluster_distance(const PointConfiguration& cfg, const ClusterSet& cs,
                              std::span<const double> p, std::int32_t k);

// Cluster containing p, or -1 if p is uncovered. Grid-accelerated when given.
std::int32_t covering_cluster(const PointConfiguration& cfg, const ClusterSet& cs,
                              std::span<const double> p, const CellGrid* grid = nullptr);

} // namespace dfpp
