#include "defect_fpp/clusters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dfpp {

namespace {

struct UnionFind {
    std::vector<std::int32_t> parent, size;
    explicit UnionFind(std::size_t n) : parent(n), size(n, 1) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    std::int32_t root(std::int32_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]]; // path halving
            i = parent[i];
        }
        return i;
    }
    void unite(std::int32_t a, std::int32_t b) {
        a = root(a);
        b = root(b);
        if (a == b) return;
        if (size[a] < size[b]) std::swap(a, b);
        parent[b] = a;
        size[a] += size[b];
    }
};

} // namespace

CellGrid::CellGrid(const PointConfiguration& cfg, double cell) {
    dim_ = cfg.dim;
    if (dim_ < 2 || dim_ > 3)
        throw std::invalid_argument("CellGrid: only d=2 and d=3 are supported");
    if (!(cell > 0.0)) throw std::invalid_argument("CellGrid: cell size must be positive");
    cell_ = cell;
    const std::size_t n = cfg.size();
    double hi[3] = {0, 0, 0};
    for (int k = 0; k < dim_; ++k) {
        lo_[k] = std::numeric_limits<double>::infinity();
        hi[k] = -std::numeric_limits<double>::infinity();
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto p = cfg.center(i);
        for (int k = 0; k < dim_; ++k) {
            lo_[k] = std::min(lo_[k], p[k]);
            hi[k] = std::max(hi[k], p[k]);
        }
    }
    if (n == 0) {
        for (int k = 0; k < dim_; ++k) { lo_[k] = 0.0; n_[k] = 1; }
        offsets_.assign(2, 0);
        return;
    }
    // Grow the cell size if the dense grid would be too large (memory guard).
    for (;;) {
        std::int64_t total = 1;
        bool ok = true;
        for (int k = 0; k < dim_; ++k) {
            std::int64_t m = static_cast<std::int64_t>((hi[k] - lo_[k]) / cell_) + 1;
            n_[k] = static_cast<int>(m);
            total *= m;
            if (total > (std::int64_t(1) << 24)) { ok = false; break; }
        }
        if (ok) break;
        cell_ *= 2.0;
    }
    std::int64_t total = 1;
    for (int k = 0; k < dim_; ++k) total *= n_[k];

    std::vector<std::int32_t> counts(total + 1, 0);
    std::vector<std::int64_t> ci(n);
    for (std::size_t i = 0; i < n; ++i) {
        ci[i] = cell_index(cfg.center(i));
        ++counts[ci[i] + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    offsets_ = std::move(counts);
    order_.resize(n);
    std::vector<std::int32_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t i = 0; i < n; ++i)
        order_[cursor[ci[i]]++] = static_cast<std::int32_t>(i);
}

int CellGrid::coord(double x, int k) const {
    int c = static_cast<int>(std::floor((x - lo_[k]) / cell_));
    return std::clamp(c, 0, n_[k] - 1);
}

std::int64_t CellGrid::cell_index(std::span<const double> p) const {
    std::int64_t idx = 0;
    for (int k = 0; k < dim_; ++k) idx = idx * n_[k] + coord(p[k], k);
    return idx;
}

std::int64_t CellGrid::cell_index_coords(const int* c) const {
    std::int64_t idx = 0;
    for (int k = 0; k < dim_; ++k) idx = idx * n_[k] + c[k];
    return idx;
}

double CellGrid::cell_sq_lower_bound(std::span<const double> p, std::int64_t ci) const {
    // Decompose the linear index back to coordinates.
    int c[3] = {0, 0, 0};
    for (int k = dim_ - 1; k >= 0; --k) {
        c[k] = static_cast<int>(ci % n_[k]);
        ci /= n_[k];
    }
    double s = 0.0;
    for (int k = 0; k < dim_; ++k) {
        double a = lo_[k] + c[k] * cell_;
        double b = a + cell_;
        double d = (p[k] < a) ? a - p[k] : (p[k] > b ? p[k] - b : 0.0);
        s += d * d;
    }
    return s;
}

ClusterSet find_clusters(const PointConfiguration& cfg, const CellGrid* grid) {
    const std::size_t n = cfg.size();
    UnionFind uf(n);
    const double link2 = 4.0 * cfg.radius * cfg.radius;

    if (n > 0 && cfg.dim <= 3) {
        CellGrid local;
        if (!grid) {
            local = CellGrid(cfg, 2.0 * cfg.radius);
            grid = &local;
        }
        // Ring needed so that every pair within 2r shares a visited cell pair.
        const int ring =
            static_cast<int>(std::ceil(2.0 * cfg.radius / grid->cell_size()));
        for (std::size_t i = 0; i < n; ++i) {
            auto pi = cfg.center(i);
            grid->for_each_near(pi, ring, [&](std::int32_t j) {
                if (static_cast<std::size_t>(j) <= i) return;
                if (sq_dist(pi, cfg.center(j)) <= link2)
                    uf.unite(static_cast<std::int32_t>(i), j);
            });
        }
    } else if (n > 0) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (sq_dist(cfg.center(i), cfg.center(j)) <= link2)
                    uf.unite(static_cast<std::int32_t>(i), static_cast<std::int32_t>(j));
    }

    ClusterSet cs;
    cs.cluster_of_point.assign(n, -1);
    std::vector<std::int32_t> label(n, -1);
    std::int32_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::int32_t r = uf.root(static_cast<std::int32_t>(i));
        if (label[r] < 0) label[r] = next++;
        cs.cluster_of_point[i] = label[r];
    }
    cs.count = next;

    cs.member_offsets.assign(next + 1, 0);
    for (std::size_t i = 0; i < n; ++i) ++cs.member_offsets[cs.cluster_of_point[i] + 1];
    std::partial_sum(cs.member_offsets.begin(), cs.member_offsets.end(),
                     cs.member_offsets.begin());
    cs.members.resize(n);
    std::vector<std::int32_t> cursor(cs.member_offsets.begin(), cs.member_offsets.end() - 1);
    for (std::size_t i = 0; i < n; ++i)
        cs.members[cursor[cs.cluster_of_point[i]]++] = static_cast<std::int32_t>(i);

    const int d = cfg.dim;
    cs.bbox_lo.assign(static_cast<std::size_t>(next) * d,
                      std::numeric_limits<double>::infinity());
    cs.bbox_hi.assign(static_cast<std::size_t>(next) * d,
                      -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        auto p = cfg.center(i);
        std::size_t base = static_cast<std::size_t>(cs.cluster_of_point[i]) * d;
        for (int k = 0; k < d; ++k) {
            cs.bbox_lo[base + k] = std::min(cs.bbox_lo[base + k], p[k]);
            cs.bbox_hi[base + k] = std::max(cs.bbox_hi[base + k], p[k]);
        }
    }
    return cs;
}

double cluster_diameter(const PointConfiguration& cfg, const ClusterSet& cs,
                        std::int32_t k) {
    auto mem = cs.cluster_members(k);
    double best = 0.0;
    for (std::size_t a = 0; a < mem.size(); ++a)
        for (std::size_t b = a + 1; b < mem.size(); ++b)
            best = std::max(best, sq_dist(cfg.center(mem[a]), cfg.center(mem[b])));
    return std::sqrt(best) + 2.0 * cfg.radius;
}

double cluster_set_distance(const PointConfiguration& cfg, const ClusterSet& cs,
                            std::int32_t a, std::int32_t b) {
    if (a == b) return 0.0;
    auto ma = cs.cluster_members(a);
    auto mb = cs.cluster_members(b);
    double best = std::numeric_limits<double>::infinity();
    for (std::int32_t i : ma)
        for (std::int32_t j : mb)
            best = std::min(best, sq_dist(cfg.center(i), cfg.center(j)));
    return std::max(0.0, std::sqrt(best) - 2.0 * cfg.radius);
}

double point_cluster_distance(const PointConfiguration& cfg, const ClusterSet& cs,
                              std::span<const double> p, std::int32_t k) {
    auto mem = cs.cluster_members(k);
    double best = std::numeric_limits<double>::infinity();
    for (std::int32_t i : mem) best = std::min(best, sq_dist(p, cfg.center(i)));
    return std::max(0.0, std::sqrt(best) - cfg.radius);
}

std::int32_t covering_cluster(const PointConfiguration& cfg, const ClusterSet& cs,
                              std::span<const double> p, const CellGrid* grid) {
    const double r2 = cfg.radius * cfg.radius;
    std::int32_t hit = -1;
    if (grid && !grid->empty()) {
        const int ring =
            static_cast<int>(std::ceil(cfg.radius / grid->cell_size()));
        grid->for_each_near(p, ring, [&](std::int32_t i) {
            if (hit < 0 && sq_dist(p, cfg.center(i)) <= r2)
                hit = cs.cluster_of_point[i];
        });
        return hit;
    }
    for (std::size_t i = 0; i < cfg.size(); ++i)
        if (sq_dist(p, cfg.center(i)) <= r2) return cs.cluster_of_point[i];
    return -1;
}

} // namespace dfpp
