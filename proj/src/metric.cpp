#include "defect_fpp/metric.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>
#include <utility>

// Exact sparsification of the complete gap graph
// ----------------------------------------------
//
// The xi = 0 distance is realized by a chain of straight hops between cluster
// surfaces, so it equals the shortest path in the complete graph on clusters
// (plus the two terminals) with edge weight = Euclidean gap. Complete graphs
// on 10^4..10^6 clusters are far too dense, so we drop edges that are never
// needed:
//
//   A hop between ball centers p, q with ell = |pq| is droppable if some
//   third participating center c satisfies |c - m| <= t_lim, where m is the
//   midpoint, rho^2 = r*ell + r^2, and t_lim = min(rho, ell/2). The two
//   halves of the min cover the two ways c can substitute:
//
//   - If c overlaps neither endpoint's cluster path for free, the detour
//     p -> c -> q pays |pc| + |cq| <= 2*sqrt((ell/2)^2 + t^2) <= ell + 2r
//     in center distance exactly when t <= rho (worst case c perpendicular),
//     while gaining 2r of extra ball-crossing discount: chain cost does not
//     increase. The same margin works when one or both endpoints are
//     terminals (each terminal end discounts r instead of 2r on both sides).
//   - If c lies within 2r of an endpoint (same cluster), the single hop
//     c -> q replaces the original: |cq| <= t + ell/2 <= ell needs t <=
//     ell/2. Terminal variants clamp at zero and telescope the same way;
//     a blocker of a terminal hop with weight 0 is itself within 2r of the
//     ball endpoint, so connectivity at zero cost is preserved.
//
//   Every substitute hop is strictly shorter than ell (the t = ell/2
//   equality cases degenerate to an excluded endpoint), so rewriting an
//   optimal chain over the finite pair set terminates: shortest paths over
//   kept edges are exact. The test radius is shrunk by 1e-9 relative so a
//   drop decided in floating point implies a genuine blocker.
//
//   L0 := 2(1 + sqrt(2)) r is the length where rho(ell) = ell/2. Beyond it
//   the endpoints themselves are farther than rho from the midpoint, so any
//   center inside the rho-ball is a valid third ball, and the max-hole
//   machinery below can certify whole length brackets as droppable.
//
// To avoid enumerating all pairs we certify, per ball, a radius beyond which
// every hop is droppable. A max-hole pyramid over the cell grid stores an
// upper bound H0[cell] on the distance from anywhere in the cell to the
// nearest participating center; coarser levels take maxes of 2^d children.
// For a ladder of lengths L_j = L0 * 1.5^j, the bracket (L_j, L_{j+1}] is
// certified droppable from point p when
//
//     max-hole within distance L_{j+1}/2 of p  <=  sqrt(r * L_j + r^2),
//
// because every midpoint of such a hop lies in that neighborhood and the
// center realizing the hole is farther than rho from neither endpoint filter
// (endpoint distances ell/2 > rho(L_j) once ell > L_j >= L0). The candidate
// radius of p is the lowest rung with all brackets above it certified; the
// global top rung comes from the global max hole. Midpoints of hops from an
// off-grid terminal overhang the grid by at most half the terminal's distance
// to the point bounding box, which is added to the hole bound.
//
// A pair (a, b) is emitted by endpoint a when a < b; this keeps exactly one
// copy of every kept edge. Arcs remember the realizing ball pair so geodesic
// polylines can be reconstructed. Queries run a bucket-queue Dijkstra
// (monotone keys, lazy deletion, buckets sorted on first pop) with early exit
// once the popped key reaches the best terminal-to-terminal incumbent.

namespace dfpp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

inline void push_point(std::vector<double>& poly, std::span<const double> p) {
    // Skip exact consecutive duplicates (covered terminals produce them).
    const std::size_t d = p.size();
    if (poly.size() >= d &&
        std::equal(p.begin(), p.end(), poly.end() - static_cast<std::ptrdiff_t>(d)))
        return;
    poly.insert(poly.end(), p.begin(), p.end());
}

double domain_distance_lb(const Domain& D, std::span<const double> p);

// Cluster inclusion for a domain restriction: a cluster participates when all
// member centers lie inside. Returns the number of boundary clusters: some
// center strictly inside and some outside, or fully inside but shallower than
// r, or fully outside with a ball still reaching in.
std::int32_t scan_domain_clusters(const PointConfiguration& cfg, const ClusterSet& cs,
                                  const Domain& D, std::vector<std::uint8_t>& ok) {
    const double r = cfg.radius;
    ok.assign(cs.count, 1);
    std::int32_t boundary = 0;
    for (std::int32_t k = 0; k < cs.count; ++k) {
        auto members = cs.cluster_members(k);
        std::int32_t inside = 0;
        double min_depth = kInf;
        bool outside_near = false;
        for (std::int32_t b : members) {
            auto c = cfg.center(b);
            if (D.contains(c)) {
                ++inside;
                min_depth = std::min(min_depth, D.interior_depth(c));
            } else if (domain_distance_lb(D, c) < r) {
                outside_near = true;
            }
        }
        const bool all_in = inside == static_cast<std::int32_t>(members.size());
        ok[k] = all_in ? 1 : 0;
        if ((inside > 0 && !all_in) || (all_in && min_depth < r) ||
            (inside == 0 && outside_near))
            ++boundary;
    }
    return boundary;
}

// Lower bound on the Euclidean distance from p to the domain (0 inside).
// Exact for boxes and box unions; face margins for polytopes.
double domain_distance_lb(const Domain& D, std::span<const double> p) {
    if (D.contains(p)) return 0.0;
    if (D.kind() == Domain::Kind::Polytope) {
        double worst = 0.0;
        const auto& normals = D.normals();
        const auto& offsets = D.offsets();
        for (std::size_t i = 0; i < normals.size(); ++i) {
            double dot = 0.0, nn = 0.0;
            for (std::size_t k = 0; k < normals[i].size(); ++k) {
                dot += normals[i][k] * p[k];
                nn += normals[i][k] * normals[i][k];
            }
            if (nn <= 0.0) continue;
            worst = std::max(worst, (dot - offsets[i]) / std::sqrt(nn));
        }
        const Box& bb = D.bounding_box();
        double s = 0.0;
        for (int k = 0; k < bb.dim(); ++k) {
            double t = std::max({0.0, bb.lo[k] - p[k], p[k] - bb.hi[k]});
            s += t * t;
        }
        return std::max(worst, std::sqrt(s));
    }
    double best = kInf;
    for (const Box& b : D.boxes()) {
        double s = 0.0;
        for (int k = 0; k < b.dim(); ++k) {
            double t = std::max({0.0, b.lo[k] - p[k], p[k] - b.hi[k]});
            s += t * t;
        }
        best = std::min(best, s);
    }
    return std::sqrt(best);
}

// Shortest center path between two member balls of one cluster (BFS over the
// overlap graph restricted to the cluster), appended center by center.
void append_cluster_centers(const PointConfiguration& cfg, const ClusterSet& cs,
                            std::int32_t cluster, std::int32_t entry_ball,
                            std::int32_t exit_ball, std::vector<double>& poly) {
    auto members = cs.cluster_members(cluster);
    if (entry_ball == exit_ball) {
        push_point(poly, cfg.center(entry_ball));
        return;
    }
    const double touch2 = 4.0 * cfg.radius * cfg.radius * (1.0 + 1e-12);
    std::map<std::int32_t, std::int32_t> prev; // member ball -> predecessor
    std::vector<std::int32_t> frontier{entry_ball};
    prev[entry_ball] = entry_ball;
    bool found = false;
    while (!frontier.empty() && !found) {
        std::vector<std::int32_t> next;
        for (std::int32_t a : frontier) {
            for (std::int32_t b : members) {
                if (prev.count(b)) continue;
                if (sq_dist(cfg.center(a), cfg.center(b)) <= touch2) {
                    prev[b] = a;
                    if (b == exit_ball) { found = true; break; }
                    next.push_back(b);
                }
            }
            if (found) break;
        }
        frontier = std::move(next);
    }
    std::vector<std::int32_t> chain;
    if (found) {
        for (std::int32_t v = exit_ball; ; v = prev[v]) {
            chain.push_back(v);
            if (v == entry_ball) break;
        }
        std::reverse(chain.begin(), chain.end());
    } else {
        // Cannot happen for a genuine cluster; degrade to the two centers.
        chain = {entry_ball, exit_ball};
    }
    for (std::int32_t v : chain) push_point(poly, cfg.center(v));
}

// Surface point of the ball at `c` in the direction of `toward` (or `toward`
// itself if it lies inside the ball).
Point surface_point(std::span<const double> c, double r, std::span<const double> toward) {
    double len = euclid(c, toward);
    Point out(c.begin(), c.end());
    if (len <= r) {
        out.assign(toward.begin(), toward.end());
        return out;
    }
    for (std::size_t k = 0; k < c.size(); ++k)
        out[k] = c[k] + r * (toward[k] - c[k]) / len;
    return out;
}

struct KeyedEntry {
    double key;
    std::int32_t v;
};

// Monotone bucket priority queue. Keys never decrease below the last popped
// key (Dijkstra with nonnegative weights guarantees this), buckets are sorted
// on first pop, and pushes into the active bucket insert in order, so pops
// come out globally sorted; that makes incumbent-based early exit valid.
class BucketQueue {
public:
    void reset(double max_key) {
        for (std::int32_t b : touched_) buckets_[b].clear();
        touched_.clear();
        inv_delta_ = static_cast<double>(buckets_.size() - 1) /
                     std::max(max_key, 1e-300);
        cur_ = 0;
        cursor_ = 0;
        sorted_ = false;
        remaining_ = 0;
    }

    void push(double key, std::int32_t v) {
        std::size_t i = static_cast<std::size_t>(key * inv_delta_);
        i = std::min(i, buckets_.size() - 1);
        if (i < cur_) i = cur_; // rounding safety; key >= last popped
        auto& B = buckets_[i];
        if (B.empty()) touched_.push_back(static_cast<std::int32_t>(i));
        if (i == cur_ && sorted_) {
            auto it = std::lower_bound(
                B.begin() + static_cast<std::ptrdiff_t>(cursor_), B.end(), key,
                [](const KeyedEntry& e, double k) { return e.key < k; });
            B.insert(it, {key, v});
        } else {
            B.push_back({key, v});
        }
        ++remaining_;
    }

    bool pop(double& key, std::int32_t& v) {
        while (remaining_ > 0) {
            auto& B = buckets_[cur_];
            if (!sorted_) {
                std::sort(B.begin(), B.end(), [](const KeyedEntry& a, const KeyedEntry& b) {
                    return a.key < b.key || (a.key == b.key && a.v < b.v);
                });
                sorted_ = true;
                cursor_ = 0;
            }
            if (cursor_ < B.size()) {
                key = B[cursor_].key;
                v = B[cursor_].v;
                ++cursor_;
                --remaining_;
                return true;
            }
            if (++cur_ >= buckets_.size()) { remaining_ = 0; break; }
            sorted_ = false;
            cursor_ = 0;
        }
        return false;
    }

private:
    std::vector<std::vector<KeyedEntry>> buckets_{std::size_t(1) << 16};
    std::vector<std::int32_t> touched_;
    double inv_delta_ = 0.0;
    std::size_t cur_ = 0, cursor_ = 0, remaining_ = 0;
    bool sorted_ = false;
};

struct TerminalArc {
    std::int32_t node;
    std::int32_t ball;
    double w;
};

struct RawArc {
    std::int32_t src, dst;
    std::int32_t ball_from, ball_to;
    double w;
};

} // namespace

struct GapGraph::Impl {
    const PointConfiguration& cfg;
    const ClusterSet& cs;
    const Domain* domain = nullptr;
    CellGrid grid_storage;
    const CellGrid* grid = nullptr;
    int d = 2;
    double r = 1.0;
    double keep_len = 0.0; // L0 = 2(1+sqrt(2)) r: rho(L0) = L0/2, ladder floor

    std::vector<std::uint8_t> ball_ok;
    std::vector<std::uint8_t> cluster_ok;
    std::int32_t n_nodes = 0;
    std::int32_t boundary_clusters = 0;
    std::vector<std::int32_t> node_of_cluster;
    std::vector<std::int32_t> cluster_of_node;

    bool any_ball = false;
    std::vector<std::vector<float>> hole;          // pyramid, level 0 = cells
    std::vector<std::array<int, 3>> hole_dims;
    double hole_glob = 0.0;
    // Two nearest participating centers as seen from each cell's center:
    // distances (rounded down) and realizing balls (-1 when absent), packed
    // so one cache line answers most blocker tests without a ring scan.
    struct CellNear {
        float d1, d2;
        std::int32_t b1, b2;
    };
    std::vector<CellNear> near;
    std::vector<std::int32_t> node_of_ball; // -1 for non-participating balls

    std::vector<std::int64_t> arc_head;
    std::vector<std::int32_t> arc_dst;
    std::vector<std::int32_t> arc_ball_from, arc_ball_to;
    std::vector<double> arc_w;

    // Query scratch, version-stamped so no per-query clearing is needed.
    // Key, label stamp and settled stamp share a 16-byte record so each
    // relaxation touches one cache line.
    struct NodeState {
        double key;
        std::int32_t stamp;
        std::int32_t settled;
    };
    mutable std::vector<NodeState> state;
    mutable std::vector<std::int64_t> parent; // arc id, or -2 - ball for source arcs
    mutable std::int32_t version = 0;
    mutable BucketQueue bq;

    Impl(const PointConfiguration& c, const ClusterSet& s, const CellGrid* g,
         const Domain* dom)
        : cfg(c), cs(s), domain(dom) {
        d = cfg.dim;
        r = cfg.radius;
        keep_len = 2.0 * (1.0 + std::sqrt(2.0)) * r;
        if (dom) {
            if (!dom->convex())
                throw std::invalid_argument(
                    "GapGraph: restriction domain must be convex");
            if (dom->dim() != d)
                throw std::invalid_argument("GapGraph: domain dimension mismatch");
        }
        if (g) {
            grid = g;
        } else {
            grid_storage = CellGrid(cfg, 2.0 * r);
            grid = &grid_storage;
        }
        classify_clusters();
        build_hole_pyramid();
        if (any_ball) {
            build_arcs();
        } else {
            arc_head.assign(static_cast<std::size_t>(n_nodes) + 1, 0);
        }
        state.assign(static_cast<std::size_t>(n_nodes), NodeState{0.0, 0, 0});
        parent.assign(n_nodes, -1);
    }

    void classify_clusters() {
        const std::size_t n = cfg.size();
        ball_ok.assign(n, 1);
        cluster_ok.assign(cs.count, 1);
        node_of_cluster.assign(cs.count, -1);
        if (domain) {
            boundary_clusters = scan_domain_clusters(cfg, cs, *domain, cluster_ok);
            for (std::size_t b = 0; b < n; ++b)
                ball_ok[b] = cluster_ok[cs.cluster_of_point[b]];
        }
        // Spatial relabeling: nodes ordered by grid cell of the cluster's
        // center-bbox midpoint, so Dijkstra's touched arrays stay local.
        std::vector<std::pair<std::int64_t, std::int32_t>> order;
        order.reserve(cs.count);
        double mid[3] = {0, 0, 0};
        for (std::int32_t k = 0; k < cs.count; ++k) {
            if (!cluster_ok[k]) continue;
            for (int a = 0; a < d; ++a)
                mid[a] = 0.5 * (cs.bbox_lo[static_cast<std::size_t>(k) * d + a] +
                                cs.bbox_hi[static_cast<std::size_t>(k) * d + a]);
            order.emplace_back(grid->cell_index({mid, static_cast<std::size_t>(d)}), k);
        }
        std::sort(order.begin(), order.end());
        n_nodes = static_cast<std::int32_t>(order.size());
        cluster_of_node.resize(n_nodes);
        for (std::int32_t i = 0; i < n_nodes; ++i) {
            node_of_cluster[order[i].second] = i;
            cluster_of_node[i] = order[i].second;
        }
        any_ball = false;
        node_of_ball.assign(n, -1);
        for (std::size_t b = 0; b < n; ++b) {
            if (!ball_ok[b]) continue;
            any_ball = true;
            node_of_ball[b] = node_of_cluster[cs.cluster_of_point[b]];
        }
    }

    void build_hole_pyramid() {
        hole.clear();
        hole_dims.clear();
        near.clear();
        hole_glob = 0.0;
        if (!any_ball) return;
        const CellGrid& g = *grid;
        const double s = g.cell_size();
        const double half_diag = 0.5 * s * std::sqrt(static_cast<double>(d));
        std::array<int, 3> dims = {1, 1, 1};
        std::int64_t total = 1;
        for (int k = 0; k < d; ++k) {
            dims[k] = g.extent(k);
            total *= dims[k];
        }
        std::vector<float> H0(static_cast<std::size_t>(total));
        near.assign(static_cast<std::size_t>(total), CellNear{0.0f, 0.0f, -1, -1});
        int rmax = 0;
        for (int k = 0; k < d; ++k) rmax = std::max(rmax, dims[k]);
        double ctr[3] = {0, 0, 0};
        int cc[3] = {0, 0, 0};
        std::int64_t ci = 0;
        // Iterate cells in index order (last axis fastest, matching
        // cell_index_coords).
        std::fill(cc, cc + 3, 0);
        for (ci = 0; ci < total; ++ci) {
            for (int k = 0; k < d; ++k)
                ctr[k] = g.origin(k) + (cc[k] + 0.5) * s;
            std::span<const double> ctr_span(ctr, static_cast<std::size_t>(d));
            double best2 = kInf, second2 = kInf;
            std::int32_t b1 = -1, b2 = -1;
            for (int ring = 0; ring <= rmax + 1; ++ring) {
                double lb = (ring - 1) * s;
                if (ring > 0 && second2 < kInf && lb > 0.0 && lb * lb >= second2)
                    break;
                g.for_each_cell_in_ring(cc, ring, [&](std::int64_t cell) {
                    for (std::int32_t b : g.points_in_cell(cell)) {
                        if (!ball_ok[b]) continue;
                        const double q2 = sq_dist(ctr_span, cfg.center(b));
                        if (q2 < best2) {
                            second2 = best2;
                            b2 = b1;
                            best2 = q2;
                            b1 = b;
                        } else if (q2 < second2) {
                            second2 = q2;
                            b2 = b;
                        }
                    }
                });
            }
            double nearest = std::sqrt(best2);
            double h = nearest + half_diag;
            H0[ci] = static_cast<float>(h * (1.0 + 1e-6)); // round up
            auto& cn = near[static_cast<std::size_t>(ci)];
            // Round distances down so "d - e > t_lim" accepts stay valid.
            cn.d1 = static_cast<float>(nearest * (1.0 - 1e-6));
            cn.d2 = second2 < kInf
                        ? static_cast<float>(std::sqrt(second2) * (1.0 - 1e-6))
                        : std::numeric_limits<float>::max();
            cn.b1 = b1;
            cn.b2 = b2;
            hole_glob = std::max(hole_glob, static_cast<double>(H0[ci]));
            for (int k = d - 1; k >= 0; --k) {
                if (++cc[k] < dims[k]) break;
                cc[k] = 0;
            }
        }
        hole.push_back(std::move(H0));
        hole_dims.push_back(dims);
        while (hole_dims.back()[0] > 1 || hole_dims.back()[1] > 1 ||
               hole_dims.back()[2] > 1) {
            const auto& prev = hole.back();
            const auto pd = hole_dims.back();
            std::array<int, 3> nd = {1, 1, 1};
            for (int k = 0; k < d; ++k) nd[k] = (pd[k] + 1) / 2;
            std::int64_t ntotal = 1;
            for (int k = 0; k < d; ++k) ntotal *= nd[k];
            std::vector<float> up(static_cast<std::size_t>(ntotal), 0.0f);
            int pc[3] = {0, 0, 0};
            for (std::int64_t pi = 0; pi < static_cast<std::int64_t>(prev.size()); ++pi) {
                std::int64_t qi = 0;
                for (int k = 0; k < d; ++k) qi = qi * nd[k] + pc[k] / 2;
                up[qi] = std::max(up[qi], prev[pi]);
                for (int k = d - 1; k >= 0; --k) {
                    if (++pc[k] < pd[k]) break;
                    pc[k] = 0;
                }
            }
            hole.push_back(std::move(up));
            hole_dims.push_back(nd);
            if (hole.size() > 40) break;
        }
    }

    // Upper bound on the hole (distance to nearest participating center) at
    // any hop midpoint within distance q of p. `overhang` bounds how far such
    // midpoints can stray outside the gridded bounding box.
    double hole_max_near(std::span<const double> p, double q, double overhang) const {
        const CellGrid& g = *grid;
        const double s = g.cell_size();
        int lev = 0;
        double tile = s;
        const int top = static_cast<int>(hole.size()) - 1;
        while (lev < top && 2.0 * tile <= 0.5 * q) {
            tile *= 2.0;
            ++lev;
        }
        const auto& H = hole[lev];
        const auto& dims = hole_dims[lev];
        int lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
        double cube_ov2 = 0.0;
        for (int k = 0; k < d; ++k) {
            double a = p[k] - q, b = p[k] + q;
            double glo = g.origin(k);
            double ghi = g.origin(k) + g.extent(k) * s;
            double ov = std::max({0.0, glo - a, b - ghi});
            cube_ov2 += ov * ov;
            lo[k] = std::clamp(static_cast<int>(std::floor((a - glo) / tile)), 0,
                               dims[k] - 1);
            hi[k] = std::clamp(static_cast<int>(std::floor((b - glo) / tile)), 0,
                               dims[k] - 1);
        }
        float m = 0.0f;
        int c[3] = {lo[0], lo[1], lo[2]};
        for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0])
            for (c[1] = lo[1]; c[1] <= hi[1]; ++c[1]) {
                if (d == 2) {
                    std::int64_t qi = static_cast<std::int64_t>(c[0]) * dims[1] + c[1];
                    m = std::max(m, H[qi]);
                } else {
                    for (c[2] = lo[2]; c[2] <= hi[2]; ++c[2]) {
                        std::int64_t qi =
                            (static_cast<std::int64_t>(c[0]) * dims[1] + c[1]) * dims[2] +
                            c[2];
                        m = std::max(m, H[qi]);
                    }
                }
            }
        return static_cast<double>(m) + std::min(std::sqrt(cube_ov2), overhang);
    }

    // Distance from p to the gridded bounding box (midpoint overhang is half).
    double grid_overhang(std::span<const double> p) const {
        const CellGrid& g = *grid;
        const double s = g.cell_size();
        double acc = 0.0;
        for (int k = 0; k < d; ++k) {
            double glo = g.origin(k);
            double ghi = glo + g.extent(k) * s;
            double t = std::max({0.0, glo - p[k], p[k] - ghi});
            acc += t * t;
        }
        return 0.5 * std::sqrt(acc);
    }

    // Smallest certified hop length: every hop from p longer than the result
    // is droppable. See the ladder argument in the header comment.
    double candidate_radius_for(std::span<const double> p) const {
        const double ov = grid_overhang(p);
        const double top_hole = hole_glob + ov;
        const double need = (top_hole * top_hole - r * r) / r;
        std::array<double, 96> ladder;
        ladder[0] = keep_len;
        int top = 0;
        while (ladder[top] < need && top + 1 < static_cast<int>(ladder.size())) {
            ladder[top + 1] = ladder[top] * 1.5;
            ++top;
        }
        double result = ladder[top];
        for (int j = top - 1; j >= 0; --j) {
            double f = hole_max_near(p, 0.5 * ladder[j + 1], ov);
            if (f * f <= r * ladder[j] + r * r)
                result = ladder[j];
            else
                break;
        }
        return result;
    }

    // Visit participating balls within distance L of p: fn(ball, sq_dist).
    template <class Fn>
    void for_balls_within(std::span<const double> p, double L, Fn&& fn) const {
        const CellGrid& g = *grid;
        if (g.empty()) return;
        const double s = g.cell_size();
        const double L2 = L * L;
        int c0[3] = {0, 0, 0};
        for (int k = 0; k < d; ++k) c0[k] = g.coord(p[k], k);
        int rmax = 0;
        for (int k = 0; k < d; ++k) rmax = std::max(rmax, g.extent(k));
        for (int ring = 0; ring <= rmax + 1; ++ring) {
            if (ring > 0 && (ring - 1) * s > L) break;
            g.for_each_cell_in_ring(c0, ring, [&](std::int64_t cell) {
                for (std::int32_t b : g.points_in_cell(cell)) {
                    if (!ball_ok[b]) continue;
                    double q2 = sq_dist(p, cfg.center(b));
                    if (q2 <= L2) fn(b, q2);
                }
            });
        }
    }

    // True if a participating center other than skip_a/skip_b lies within
    // distance rho of m. Rings around m's (clamped) cell give certified
    // lower bounds, so the scan is exact.
    bool third_ball_within(std::span<const double> m, double rho,
                           std::int32_t skip_a, std::int32_t skip_b) const {
        const CellGrid& g = *grid;
        if (g.empty()) return false;
        const double s = g.cell_size();
        const double rho2 = rho * rho;
        int c0[3] = {0, 0, 0};
        for (int k = 0; k < d; ++k) c0[k] = g.coord(m[k], k);
        int rmax = 0;
        for (int k = 0; k < d; ++k) rmax = std::max(rmax, g.extent(k));
        for (int ring = 0; ring <= rmax + 1; ++ring) {
            if (ring > 0 && (ring - 1) * s > rho) break;
            bool hit = false;
            g.for_each_cell_in_ring(c0, ring, [&](std::int64_t cell) {
                if (hit) return;
                for (std::int32_t b : g.points_in_cell(cell)) {
                    if (!ball_ok[b] || b == skip_a || b == skip_b) continue;
                    if (sq_dist(m, cfg.center(b)) <= rho2) { hit = true; return; }
                }
            });
            if (hit) return true;
        }
        return false;
    }

    double drop_radius(double ell) const {
        return std::min(std::sqrt(r * ell + r * r), 0.5 * ell) * (1.0 - 1e-9);
    }

    bool hop_kept(std::span<const double> pa, std::span<const double> pb, double ell,
                  std::int32_t skip_a, std::int32_t skip_b) const {
        double mid[3] = {0, 0, 0};
        for (int k = 0; k < d; ++k) mid[k] = 0.5 * (pa[k] + pb[k]);
        return !third_ball_within({mid, static_cast<std::size_t>(d)},
                                  drop_radius(ell), skip_a, skip_b);
    }

    std::int64_t tile_index(int lev, const int* c) const {
        const auto& dims = hole_dims[static_cast<std::size_t>(lev)];
        std::int64_t idx = 0;
        for (int k = 0; k < d; ++k) idx = idx * dims[k] + c[k];
        return idx;
    }

    // Pairs shorter than keep_len come from a disc scan trimmed row by row;
    // longer pairs are reached by descending the hole pyramid, which visits
    // only tiles whose max-hole bound still permits a surviving midpoint
    // (tiles in dense regions drop out at a coarse level). Every candidate
    // pair then faces the same blocker test at radius drop_radius(ell): the
    // per-cell bounds decide bulk cases (hole_low certifies emptiness, H0
    // certifies a blocker; both bracket the hole at the midpoint with slack
    // that dwarfs rounding) and the ring scan settles the rest exactly.
    // Pairs are deduplicated by emitting from the smaller index; among
    // pyramid leaves, the one owning the midpoint cell claims the pair.
    void build_arcs() {
        const std::size_t n = cfg.size();
        const CellGrid& g = *grid;
        const double s = g.cell_size();
        const double kl2 = keep_len * keep_len;
        const double len_cap =
            hole_glob > r ? (hole_glob * hole_glob - r * r) / r : 0.0;
        const int top = static_cast<int>(hole.size()) - 1;
        std::vector<RawArc> raw;

        struct TileRef {
            int lev;
            int c[3];
        };
        std::vector<TileRef> stack;
        double mid[3] = {0, 0, 0};

        for (std::size_t a = 0; a < n; ++a) {
            if (!ball_ok[a]) continue;
            const auto pa = cfg.center(a);
            const std::int32_t ia = static_cast<std::int32_t>(a);
            const std::int32_t ca = cs.cluster_of_point[a];
            const std::int32_t na = node_of_cluster[ca];

            auto consider = [&](std::int32_t b, bool long_pass) {
                if (b <= ia || !ball_ok[b]) return;
                const std::int32_t cb = cs.cluster_of_point[b];
                if (cb == ca) return;
                const auto pb = cfg.center(b);
                const double q2 = sq_dist(pa, pb);
                if (long_pass ? q2 <= kl2 : q2 > kl2) return;
                const double ell = std::sqrt(q2);
                // Beyond len_cap the global max hole guarantees a blocker
                // (only valid in the rho regime, hence long pass only).
                if (long_pass && ell > len_cap) return;
                const double t_lim = drop_radius(ell);
                for (int k = 0; k < d; ++k) mid[k] = 0.5 * (pa[k] + pb[k]);
                std::span<const double> ms{mid, static_cast<std::size_t>(d)};
                const std::int64_t ci = g.cell_index(ms);
                if (static_cast<double>(hole_low[ci]) < t_lim) {
                    if (static_cast<double>(hole[0][ci]) < t_lim) return;
                    if (third_ball_within(ms, t_lim, ia, b)) return;
                }
                const double w = std::max(0.0, ell - 2.0 * r);
                const std::int32_t nb = node_of_cluster[cb];
                raw.push_back({na, nb, ia, b, w});
                raw.push_back({nb, na, b, ia, w});
            };

            // Short pass: rows of cells, each trimmed to the keep_len disc
            // and consumed as one contiguous span. The pad keeps boundary
            // pairs (q2 == kl2 up to rounding) inside the scanned window.
            {
                const double pad = 1e-6 * s;
                const double kl2s = kl2 * (1.0 + 1e-9);
                int c[3] = {0, 0, 0};
                const int c0lo = g.coord(pa[0] - keep_len - pad, 0);
                const int c0hi = g.coord(pa[0] + keep_len + pad, 0);
                for (c[0] = c0lo; c[0] <= c0hi; ++c[0]) {
                    const double b0lo = g.origin(0) + c[0] * s;
                    const double e0 = pa[0] < b0lo
                                          ? b0lo - pa[0]
                                          : std::max(0.0, pa[0] - (b0lo + s));
                    const double rem0 = kl2s - e0 * e0;
                    if (rem0 < 0.0) continue;
                    if (d == 2) {
                        const double reach = std::sqrt(rem0) + pad;
                        c[1] = g.coord(pa[1] - reach, 1);
                        const int len = g.coord(pa[1] + reach, 1) - c[1] + 1;
                        for (std::int32_t b : g.points_in_cells(c, len))
                            consider(b, false);
                        continue;
                    }
                    const double reach1 = std::sqrt(rem0) + pad;
                    const int c1lo = g.coord(pa[1] - reach1, 1);
                    const int c1hi = g.coord(pa[1] + reach1, 1);
                    for (c[1] = c1lo; c[1] <= c1hi; ++c[1]) {
                        const double b1lo = g.origin(1) + c[1] * s;
                        const double e1 = pa[1] < b1lo
                                              ? b1lo - pa[1]
                                              : std::max(0.0, pa[1] - (b1lo + s));
                        const double rem1 = rem0 - e1 * e1;
                        if (rem1 < 0.0) continue;
                        const double reach = std::sqrt(rem1) + pad;
                        c[2] = g.coord(pa[2] - reach, 2);
                        const int len = g.coord(pa[2] + reach, 2) - c[2] + 1;
                        for (std::int32_t b : g.points_in_cells(c, len))
                            consider(b, false);
                    }
                }
            }

            if (len_cap <= keep_len) continue;

            // Long pass: descend the pyramid toward deep tiles only.
            stack.clear();
            {
                TileRef root{top, {0, 0, 0}};
                const auto& td = hole_dims[static_cast<std::size_t>(top)];
                int c[3] = {0, 0, 0};
                for (c[0] = 0; c[0] < td[0]; ++c[0])
                    for (c[1] = 0; c[1] < td[1]; ++c[1])
                        for (c[2] = 0; c[2] < td[2]; ++c[2]) {
                            root.c[0] = c[0];
                            root.c[1] = c[1];
                            root.c[2] = c[2];
                            stack.push_back(root);
                        }
            }
            while (!stack.empty()) {
                TileRef t = stack.back();
                stack.pop_back();
                const double tile = std::ldexp(s, t.lev);
                double tlo[3] = {0, 0, 0}, thi[3] = {0, 0, 0};
                double dmin2 = 0.0;
                for (int k = 0; k < d; ++k) {
                    tlo[k] = g.origin(k) + t.c[k] * tile;
                    thi[k] = tlo[k] + tile;
                    double e = 0.0;
                    if (pa[k] < tlo[k]) e = tlo[k] - pa[k];
                    else if (pa[k] > thi[k]) e = pa[k] - thi[k];
                    dmin2 += e * e;
                }
                const double lmin = std::max(2.0 * std::sqrt(dmin2), keep_len);
                if (lmin > len_cap) continue;
                const double rho_min2 = r * lmin + r * r;
                const double H =
                    static_cast<double>(hole[static_cast<std::size_t>(t.lev)]
                                            [tile_index(t.lev, t.c)]);
                if (H * H < rho_min2) continue;
                if (t.lev > 0) {
                    const auto& cd = hole_dims[static_cast<std::size_t>(t.lev - 1)];
                    TileRef child{t.lev - 1, {0, 0, 0}};
                    for (int dx = 0; dx < 2; ++dx) {
                        child.c[0] = 2 * t.c[0] + dx;
                        if (child.c[0] >= cd[0]) continue;
                        for (int dy = 0; dy < 2; ++dy) {
                            child.c[1] = 2 * t.c[1] + dy;
                            if (child.c[1] >= cd[1]) continue;
                            if (d == 2) {
                                child.c[2] = 0;
                                stack.push_back(child);
                            } else {
                                for (int dz = 0; dz < 2; ++dz) {
                                    child.c[2] = 2 * t.c[2] + dz;
                                    if (child.c[2] < cd[2]) stack.push_back(child);
                                }
                            }
                        }
                    }
                    continue;
                }
                // Leaf: balls whose midpoint with `a` lands in this cell
                // live in the point-reflected box 2*tile - pa. One extra
                // cell of slack absorbs rounding at cell boundaries.
                int blo[3] = {0, 0, 0}, bhi[3] = {0, 0, 0};
                for (int k = 0; k < d; ++k) {
                    blo[k] = std::max(0, g.coord(2.0 * tlo[k] - pa[k], k) - 1);
                    bhi[k] = std::min(g.extent(k) - 1,
                                      g.coord(2.0 * thi[k] - pa[k], k) + 1);
                }
                // Ownership uses the same clamped coords as cell_index so a
                // midpoint on the outer grid boundary is claimed exactly once.
                auto owns = [&](std::int32_t b) {
                    const auto pb = cfg.center(b);
                    for (int k = 0; k < d; ++k) {
                        double mk = 0.5 * (pa[k] + pb[k]);
                        if (g.coord(mk, k) != t.c[k]) return false;
                    }
                    return true;
                };
                int c[3] = {blo[0], blo[1], blo[2]};
                if (d == 2) {
                    const int len = bhi[1] - blo[1] + 1;
                    for (c[0] = blo[0]; c[0] <= bhi[0]; ++c[0]) {
                        c[1] = blo[1];
                        for (std::int32_t b : g.points_in_cells(c, len)) {
                            if (b <= ia || !ball_ok[b]) continue;
                            if (owns(b)) consider(b, true);
                        }
                    }
                } else {
                    const int len = bhi[2] - blo[2] + 1;
                    for (c[0] = blo[0]; c[0] <= bhi[0]; ++c[0])
                        for (c[1] = blo[1]; c[1] <= bhi[1]; ++c[1]) {
                            c[2] = blo[2];
                            for (std::int32_t b : g.points_in_cells(c, len)) {
                                if (b <= ia || !ball_ok[b]) continue;
                                if (owns(b)) consider(b, true);
                            }
                        }
                }
            }
        }
        arc_head.assign(static_cast<std::size_t>(n_nodes) + 1, 0);
        for (const RawArc& e : raw) ++arc_head[static_cast<std::size_t>(e.src) + 1];
        for (std::size_t i = 1; i < arc_head.size(); ++i) arc_head[i] += arc_head[i - 1];
        arc_dst.resize(raw.size());
        arc_ball_from.resize(raw.size());
        arc_ball_to.resize(raw.size());
        arc_w.resize(raw.size());
        std::vector<std::int64_t> cursor(arc_head.begin(), arc_head.end() - 1);
        for (const RawArc& e : raw) {
            std::int64_t i = cursor[e.src]++;
            arc_dst[i] = e.dst;
            arc_ball_from[i] = e.ball_from;
            arc_ball_to[i] = e.ball_to;
            arc_w[i] = e.w;
        }
    }

    std::vector<TerminalArc> attach(std::span<const double> p) const {
        std::vector<TerminalArc> out;
        if (!any_ball) return out;
        const double L = candidate_radius_for(p);
        for_balls_within(p, L, [&](std::int32_t b, double q2) {
            const double ell = std::sqrt(q2);
            if (!hop_kept(p, cfg.center(b), ell, -1, b)) return;
            out.push_back({node_of_cluster[cs.cluster_of_point[b]], b,
                           std::max(0.0, ell - r)});
        });
        return out;
    }

    double read_dist(std::int32_t v) const {
        return dist_stamp[v] == version ? dist[v] : kInf;
    }

    void improve(std::int32_t v, double key, std::int64_t par) const {
        if (key < read_dist(v)) {
            dist[v] = key;
            dist_stamp[v] = version;
            parent[v] = par;
            bq.push(key, v);
        }
    }

    struct PairResult {
        double value = 0.0;
        bool via_graph = false;
        std::int32_t last_node = -1;
        std::int32_t dst_ball = -1; // ball realizing the target attachment
    };

    PairResult shortest_pair(std::span<const double> x,
                             std::span<const double> y) const {
        PairResult res;
        res.value = euclid(x, y);
        if (!any_ball || res.value == 0.0) return res;

        auto src = attach(x);
        auto dst = attach(y);
        if (src.empty() || dst.empty()) return res;

        // Smallest attachment per node on the target side, keeping the ball.
        std::sort(dst.begin(), dst.end(), [](const TerminalArc& a, const TerminalArc& b) {
            return a.node < b.node || (a.node == b.node && a.w < b.w);
        });
        dst.erase(std::unique(dst.begin(), dst.end(),
                              [](const TerminalArc& a, const TerminalArc& b) {
                                  return a.node == b.node;
                              }),
                  dst.end());

        double incumbent = res.value;
        ++version;
        bq.reset(incumbent);
        for (const TerminalArc& ta : src) {
            if (ta.w >= incumbent) continue;
            improve(ta.node, ta.w, -2 - static_cast<std::int64_t>(ta.ball));
        }
        double key;
        std::int32_t v;
        while (bq.pop(key, v)) {
            if (key >= incumbent) break;
            if (key > read_dist(v)) continue; // stale entry
            if (settle_stamp[v] == version) continue;
            settle_stamp[v] = version;
            auto it = std::lower_bound(dst.begin(), dst.end(), v,
                                       [](const TerminalArc& a, std::int32_t node) {
                                           return a.node < node;
                                       });
            if (it != dst.end() && it->node == v) {
                double cand = key + it->w;
                if (cand < incumbent) {
                    incumbent = cand;
                    res.via_graph = true;
                    res.last_node = v;
                    res.dst_ball = it->ball;
                }
            }
            for (std::int64_t a = arc_head[v]; a < arc_head[v + 1]; ++a) {
                double nk = key + arc_w[a];
                if (nk >= incumbent) continue;
                improve(arc_dst[a], nk, a);
            }
        }
        res.value = incumbent;
        return res;
    }

    DistanceResult build_geodesic(std::span<const double> x,
                                  std::span<const double> y) const {
        PairResult pr = shortest_pair(x, y);
        DistanceResult out;
        out.value = pr.value;
        out.exact = true;
        out.boundary_clusters = boundary_clusters;
        if (!pr.via_graph) {
            push_point(out.polyline, x);
            push_point(out.polyline, y);
            return out;
        }
        // Backtrack; each parent arc stores the realizing ball pair, and the
        // source attachment stores its ball in the parent code.
        std::vector<std::int64_t> hop_arcs; // arc entering cluster i+1
        std::int32_t first_ball = -1;
        for (std::int32_t v = pr.last_node;;) {
            std::int64_t par = parent[v];
            if (par <= -2) {
                first_ball = static_cast<std::int32_t>(-2 - par);
                break;
            }
            hop_arcs.push_back(par);
            v = node_of_cluster[cs.cluster_of_point[arc_ball_from[par]]];
        }
        std::reverse(hop_arcs.begin(), hop_arcs.end());

        const std::size_t k = hop_arcs.size() + 1;
        std::vector<std::int32_t> entry_ball(k), exit_ball(k);
        entry_ball[0] = first_ball;
        for (std::size_t i = 0; i < hop_arcs.size(); ++i) {
            exit_ball[i] = arc_ball_from[hop_arcs[i]];
            entry_ball[i + 1] = arc_ball_to[hop_arcs[i]];
        }
        exit_ball[k - 1] = pr.dst_ball;

        out.clusters_visited.reserve(k);
        for (std::size_t i = 0; i < k; ++i)
            out.clusters_visited.push_back(cs.cluster_of_point[entry_ball[i]]);

        push_point(out.polyline, x);
        // Hop into the first cluster.
        Point ep = surface_point(cfg.center(entry_ball[0]), r, x);
        push_point(out.polyline, ep);
        for (std::size_t i = 0; i < k; ++i) {
            append_cluster_centers(cfg, cs, out.clusters_visited[i], entry_ball[i],
                                   exit_ball[i], out.polyline);
            if (i + 1 < k) {
                auto pa = cfg.center(exit_ball[i]);
                auto pb = cfg.center(entry_ball[i + 1]);
                push_point(out.polyline, surface_point(pa, r, pb));
                push_point(out.polyline, surface_point(pb, r, pa));
            }
        }
        push_point(out.polyline, surface_point(cfg.center(exit_ball[k - 1]), r, y));
        push_point(out.polyline, y);
        return out;
    }

    std::vector<double> run_sweep(std::span<const double> source,
                                  std::span<const double> targets) const {
        const std::size_t m = targets.size() / static_cast<std::size_t>(d);
        std::vector<double> best(m);
        for (std::size_t j = 0; j < m; ++j)
            best[j] = euclid(source, targets.subspan(j * d, d));
        if (!any_ball || m == 0) return best;

        struct TargetRef {
            std::int32_t node;
            double w;
            std::int32_t idx;
        };
        std::vector<TargetRef> refs;
        for (std::size_t j = 0; j < m; ++j) {
            auto arcs = attach(targets.subspan(j * d, d));
            for (const TerminalArc& ta : arcs)
                refs.push_back({ta.node, ta.w, static_cast<std::int32_t>(j)});
        }
        std::sort(refs.begin(), refs.end(), [](const TargetRef& a, const TargetRef& b) {
            return a.node < b.node || (a.node == b.node && a.idx < b.idx);
        });
        auto bound = [&]() {
            double mx = 0.0;
            for (double v : best) mx = std::max(mx, v);
            return mx;
        };
        double cutoff = bound();
        if (cutoff == 0.0) return best;

        ++version;
        bq.reset(cutoff);
        for (const TerminalArc& ta : attach(source)) {
            if (ta.w >= cutoff) continue;
            improve(ta.node, ta.w, -2 - static_cast<std::int64_t>(ta.ball));
        }
        double key;
        std::int32_t v;
        while (bq.pop(key, v)) {
            if (key >= cutoff) {
                cutoff = bound();
                if (key >= cutoff) break;
            }
            if (key > read_dist(v)) continue;
            if (settle_stamp[v] == version) continue;
            settle_stamp[v] = version;
            auto it = std::lower_bound(refs.begin(), refs.end(), v,
                                       [](const TargetRef& a, std::int32_t node) {
                                           return a.node < node;
                                       });
            for (; it != refs.end() && it->node == v; ++it)
                best[it->idx] = std::min(best[it->idx], key + it->w);
            for (std::int64_t a = arc_head[v]; a < arc_head[v + 1]; ++a) {
                double nk = key + arc_w[a];
                if (nk >= cutoff) continue;
                improve(arc_dst[a], nk, a);
            }
        }
        return best;
    }

    double hyperplane_distance(std::span<const double> x, int axis, double level) const {
        double incumbent = std::abs(x[axis] - level);
        if (!any_ball || incumbent == 0.0) return incumbent;
        ++version;
        bq.reset(incumbent);
        for (const TerminalArc& ta : attach(x)) {
            if (ta.w >= incumbent) continue;
            improve(ta.node, ta.w, -2 - static_cast<std::int64_t>(ta.ball));
        }
        double key;
        std::int32_t v;
        while (bq.pop(key, v)) {
            if (key >= incumbent) break;
            if (key > read_dist(v)) continue;
            if (settle_stamp[v] == version) continue;
            settle_stamp[v] = version;
            double leg = kInf;
            for (std::int32_t b : cs.cluster_members(cluster_of_node[v])) {
                double t = std::abs(cfg.center(b)[axis] - level) - r;
                leg = std::min(leg, std::max(0.0, t));
            }
            incumbent = std::min(incumbent, key + leg);
            for (std::int64_t a = arc_head[v]; a < arc_head[v + 1]; ++a) {
                double nk = key + arc_w[a];
                if (nk >= incumbent) continue;
                improve(arc_dst[a], nk, a);
            }
        }
        return incumbent;
    }

    void check_query_point(std::span<const double> p) const {
        if (p.size() != static_cast<std::size_t>(d))
            throw std::invalid_argument("GapGraph: query point dimension mismatch");
        if (domain && !domain->contains(p))
            throw std::invalid_argument("GapGraph: query point outside the domain");
    }
};

GapGraph::GapGraph(const PointConfiguration& cfg, const ClusterSet& cs,
                   const CellGrid* grid, const Domain* domain)
    : impl_(new Impl(cfg, cs, grid, domain)) {
    boundary_clusters_ = impl_->boundary_clusters;
}

GapGraph::~GapGraph() { delete impl_; }

double GapGraph::distance(std::span<const double> x, std::span<const double> y) const {
    impl_->check_query_point(x);
    impl_->check_query_point(y);
    return impl_->shortest_pair(x, y).value;
}

DistanceResult GapGraph::geodesic(std::span<const double> x,
                                  std::span<const double> y) const {
    impl_->check_query_point(x);
    impl_->check_query_point(y);
    return impl_->build_geodesic(x, y);
}

std::vector<double> GapGraph::sweep(std::span<const double> source,
                                    std::span<const double> targets_flat) const {
    impl_->check_query_point(source);
    if (targets_flat.size() % static_cast<std::size_t>(impl_->d) != 0)
        throw std::invalid_argument("GapGraph::sweep: ragged target array");
    for (std::size_t j = 0; j * impl_->d < targets_flat.size(); ++j)
        impl_->check_query_point(targets_flat.subspan(j * impl_->d, impl_->d));
    return impl_->run_sweep(source, targets_flat);
}

double GapGraph::distance_to_hyperplane(std::span<const double> x, int axis,
                                        double level) const {
    impl_->check_query_point(x);
    if (impl_->domain)
        throw std::logic_error(
            "GapGraph::distance_to_hyperplane: not defined with a domain restriction");
    if (axis < 0 || axis >= impl_->d)
        throw std::invalid_argument("GapGraph::distance_to_hyperplane: bad axis");
    return impl_->hyperplane_distance(x, axis, level);
}

std::int32_t GapGraph::node_count() const { return impl_->n_nodes; }

std::int64_t GapGraph::arc_count() const {
    return static_cast<std::int64_t>(impl_->arc_dst.size());
}

bool GapGraph::cluster_included(std::int32_t k) const {
    if (k < 0 || k >= impl_->cs.count)
        throw std::out_of_range("GapGraph::cluster_included: bad cluster id");
    return impl_->cluster_ok[k] != 0;
}

DistanceResult distance_xi0(const PointConfiguration& cfg, const ClusterSet& cs,
                            std::span<const double> x, std::span<const double> y,
                            bool with_path) {
    GapGraph g(cfg, cs);
    if (with_path) return g.geodesic(x, y);
    DistanceResult out;
    out.value = g.distance(x, y);
    return out;
}

double distance_to_hyperplane(const PointConfiguration& cfg, const ClusterSet& cs,
                              std::span<const double> x, int axis, double level) {
    GapGraph g(cfg, cs);
    return g.distance_to_hyperplane(x, axis, level);
}

double segment_cost(const PointConfiguration& cfg, const CellGrid& grid, double xi,
                    std::span<const double> a, std::span<const double> b) {
    const int d = cfg.dim;
    const double r = cfg.radius;
    const double len = euclid(a, b);
    if (len == 0.0) return 0.0;
    if (cfg.size() == 0 || grid.empty()) return len;

    // Collect balls whose center is within r of the segment by probing the
    // grid at points spaced half a cell apart along the segment.
    const double s = grid.cell_size();
    const double step = 0.5 * s;
    const int nprobe = static_cast<int>(std::ceil(len / step));
    const int ring = static_cast<int>(std::ceil((r + 0.5 * step) / s)) + 1;
    std::vector<std::int32_t> cand;
    double probe[3] = {0, 0, 0};
    for (int i = 0; i <= nprobe; ++i) {
        double t = std::min(1.0, static_cast<double>(i) / nprobe);
        for (int k = 0; k < d; ++k) probe[k] = a[k] + t * (b[k] - a[k]);
        grid.for_each_near({probe, static_cast<std::size_t>(d)}, ring,
                           [&](std::int32_t idx) { cand.push_back(idx); });
    }
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

    // Chord of each ball on the segment, as a parameter interval.
    std::vector<std::pair<double, double>> iv;
    for (std::int32_t idx : cand) {
        auto c = cfg.center(idx);
        double vv = 0.0, vp = 0.0, pp = 0.0;
        for (int k = 0; k < d; ++k) {
            double v = b[k] - a[k];
            double p = a[k] - c[k];
            vv += v * v;
            vp += v * p;
            pp += p * p;
        }
        double disc = vp * vp - vv * (pp - r * r);
        if (disc <= 0.0) continue;
        double sq = std::sqrt(disc);
        double t0 = (-vp - sq) / vv;
        double t1 = (-vp + sq) / vv;
        t0 = std::max(t0, 0.0);
        t1 = std::min(t1, 1.0);
        if (t0 < t1) iv.emplace_back(t0, t1);
    }
    std::sort(iv.begin(), iv.end());
    double covered = 0.0, cur_lo = 0.0, cur_hi = -1.0;
    for (const auto& [lo, hi] : iv) {
        if (lo > cur_hi) {
            if (cur_hi > cur_lo) covered += cur_hi - cur_lo;
            cur_lo = lo;
            cur_hi = hi;
        } else {
            cur_hi = std::max(cur_hi, hi);
        }
    }
    if (cur_hi > cur_lo) covered += cur_hi - cur_lo;
    return len - (1.0 - xi) * covered * len;
}

std::vector<double> ball_boundary_points(std::span<const double> center, double radius,
                                         int dim, int K) {
    if (K < 1) throw std::invalid_argument("ball_boundary_points: K must be positive");
    std::vector<double> out;
    if (dim == 2) {
        out.reserve(static_cast<std::size_t>(K) * 2);
        for (int j = 0; j < K; ++j) {
            double th = 2.0 * M_PI * j / K;
            out.push_back(center[0] + radius * std::cos(th));
            out.push_back(center[1] + radius * std::sin(th));
        }
        return out;
    }
    if (dim != 3)
        throw std::invalid_argument("ball_boundary_points: only d=2 and d=3");
    // Octahedron refined by edge midpoints: vertex counts 6, 18, 66, 258, ...
    // Old vertices keep their index, so levels are nested.
    std::vector<std::array<double, 3>> verts = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                                {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
    std::vector<std::array<int, 3>> tris = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
                                            {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
    while (static_cast<int>(verts.size()) < K) {
        std::map<std::pair<int, int>, int> mid;
        auto midpoint = [&](int i, int j) {
            auto key = std::minmax(i, j);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            std::array<double, 3> m;
            double nrm = 0.0;
            for (int k = 0; k < 3; ++k) {
                m[k] = verts[i][k] + verts[j][k];
                nrm += m[k] * m[k];
            }
            nrm = std::sqrt(nrm);
            for (int k = 0; k < 3; ++k) m[k] /= nrm;
            int id = static_cast<int>(verts.size());
            verts.push_back(m);
            mid.emplace(key, id);
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(tris.size() * 4);
        for (const auto& t : tris) {
            int ab = midpoint(t[0], t[1]);
            int bc = midpoint(t[1], t[2]);
            int ca = midpoint(t[2], t[0]);
            next.push_back({t[0], ab, ca});
            next.push_back({t[1], bc, ab});
            next.push_back({t[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        tris = std::move(next);
        if (verts.size() > 100000) break;
    }
    out.reserve(verts.size() * 3);
    for (const auto& v : verts)
        for (int k = 0; k < 3; ++k) out.push_back(center[k] + radius * v[k]);
    return out;
}

DistanceResult distance_graph_xi(const PointConfiguration& cfg, const ClusterSet& cs,
                                 double xi, std::span<const double> x,
                                 std::span<const double> y, int K) {
    (void)cs;
    if (!(xi > 0.0 && xi < 1.0))
        throw std::invalid_argument("distance_graph_xi: xi must lie in (0, 1)");
    if (K < 2) throw std::invalid_argument("distance_graph_xi: K must be at least 2");
    const int d = cfg.dim;
    CellGrid grid(cfg, 2.0 * cfg.radius);

    // Node 0 = x, node 1 = y, then K (or the next subdivision level) points
    // per ball in ball order.
    std::vector<double> pts;
    pts.insert(pts.end(), x.begin(), x.end());
    pts.insert(pts.end(), y.begin(), y.end());
    int per_ball = K;
    for (std::size_t b = 0; b < cfg.size(); ++b) {
        auto bp = ball_boundary_points(cfg.center(b), cfg.radius, d, K);
        per_ball = static_cast<int>(bp.size()) / d;
        pts.insert(pts.end(), bp.begin(), bp.end());
    }
    const std::size_t n = pts.size() / static_cast<std::size_t>(d);
    auto at = [&](std::size_t i) {
        return std::span<const double>(pts.data() + i * d, static_cast<std::size_t>(d));
    };

    std::vector<double> g(n, kInf);
    std::vector<std::uint8_t> done(n, 0);
    using QE = std::pair<double, std::size_t>;
    std::priority_queue<QE, std::vector<QE>, std::greater<>> pq;
    g[0] = 0.0;
    pq.emplace(0.0, 0);
    double direct = segment_cost(cfg, grid, xi, x, y);
    g[1] = direct;
    pq.emplace(direct, 1);

    while (!pq.empty()) {
        auto [key, v] = pq.top();
        pq.pop();
        if (done[v] || key > g[v]) continue;
        if (v == 1) break;
        done[v] = 1;
        auto pv = at(v);
        const double to_y = xi * euclid(pv, y);
        if (key + to_y >= g[1]) continue; // cannot improve the target
        for (std::size_t j = 0; j < n; ++j) {
            if (done[j] || j == v) continue;
            auto pj = at(j);
            double lb = xi * euclid(pv, pj);
            if (key + lb >= g[j]) continue;
            if (key + lb + xi * euclid(pj, y) >= g[1]) continue;
            double w = segment_cost(cfg, grid, xi, pv, pj);
            double nk = key + w;
            if (nk < g[j]) {
                g[j] = nk;
                pq.emplace(nk, j);
            }
        }
    }
    DistanceResult out;
    out.value = g[1];
    out.exact = false;
    out.refinement = per_ball;
    return out;
}

namespace {

// Shortest path inside a (possibly non-convex) box union with defects, over
// the visibility graph of {x, y, box vertices on the boundary, included
// clusters}. Exact for a defect-free 2-D union (reflex vertices suffice);
// an upper bound otherwise.
DistanceResult intrinsic_box_union(const PointConfiguration& cfg, const ClusterSet& cs,
                                   const Domain& D, std::span<const double> x,
                                   std::span<const double> y) {
    const int d = cfg.dim;
    const double r = cfg.radius;

    // Cluster inclusion and boundary bookkeeping, matching GapGraph.
    std::vector<std::uint8_t> cluster_ok;
    const std::int32_t boundary = scan_domain_clusters(cfg, cs, D, cluster_ok);

    // Corner nodes: vertices of the parts that lie in the domain. In 2-D keep
    // only reflex vertices (exactly 3 of 4 quadrant probes inside).
    std::vector<Point> corners;
    {
        std::vector<Point> raw;
        for (const Box& b : D.boxes()) {
            const int nv = 1 << d;
            for (int mask = 0; mask < nv; ++mask) {
                Point v(static_cast<std::size_t>(d));
                for (int k = 0; k < d; ++k)
                    v[k] = (mask >> k & 1) ? b.hi[k] : b.lo[k];
                raw.push_back(std::move(v));
            }
        }
        std::sort(raw.begin(), raw.end());
        raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
        const double eps = 1e-7 * (1.0 + D.diameter());
        for (const Point& v : raw) {
            if (!D.contains(v)) continue;
            if (d == 2) {
                int in = 0;
                for (int sx = -1; sx <= 1; sx += 2)
                    for (int sy = -1; sy <= 1; sy += 2) {
                        Point p{v[0] + sx * eps, v[1] + sy * eps};
                        if (D.contains(p)) ++in;
                    }
                if (in == 3) corners.push_back(v);
            } else {
                corners.push_back(v);
            }
        }
    }

    std::vector<std::int32_t> cluster_nodes;
    for (std::int32_t k = 0; k < cs.count; ++k)
        if (cluster_ok[k]) cluster_nodes.push_back(k);

    // Node layout: 0 = x, 1 = y, then corners, then clusters.
    const std::size_t nc = corners.size();
    const std::size_t n = 2 + nc + cluster_nodes.size();
    auto node_point = [&](std::size_t i) -> std::span<const double> {
        if (i == 0) return x;
        if (i == 1) return y;
        return {corners[i - 2].data(), static_cast<std::size_t>(d)};
    };
    auto is_cluster = [&](std::size_t i) { return i >= 2 + nc; };
    auto cluster_id = [&](std::size_t i) { return cluster_nodes[i - 2 - nc]; };

    struct EdgeInfo {
        double w = kInf;
        std::int32_t ball_from = -1, ball_to = -1; // realizing members
    };
    // Point node -> cluster attachment (smallest feasible member).
    auto point_to_cluster = [&](std::span<const double> p, std::int32_t k) {
        EdgeInfo e;
        for (std::int32_t b : cs.cluster_members(k)) {
            auto c = cfg.center(b);
            double w = std::max(0.0, euclid(p, c) - r);
            if (w >= e.w) continue;
            Point sp = surface_point(c, r, p);
            if (D.contains_segment(p, sp)) {
                e.w = w;
                e.ball_to = b;
            }
        }
        return e;
    };
    auto cluster_to_cluster = [&](std::int32_t ka, std::int32_t kb) {
        EdgeInfo e;
        for (std::int32_t a : cs.cluster_members(ka))
            for (std::int32_t b : cs.cluster_members(kb)) {
                auto pa = cfg.center(a);
                auto pb = cfg.center(b);
                double w = std::max(0.0, euclid(pa, pb) - 2.0 * r);
                if (w >= e.w) continue;
                Point sa = surface_point(pa, r, pb);
                Point sb = surface_point(pb, r, pa);
                if (D.contains_segment(sa, sb)) {
                    e.w = w;
                    e.ball_from = a;
                    e.ball_to = b;
                }
            }
        return e;
    };

    std::vector<double> g(n, kInf);
    std::vector<std::int32_t> par(n, -1);
    std::vector<EdgeInfo> par_edge(n);
    std::vector<std::uint8_t> done(n, 0);
    using QE = std::pair<double, std::size_t>;
    std::priority_queue<QE, std::vector<QE>, std::greater<>> pq;
    g[0] = 0.0;
    pq.emplace(0.0, 0);
    while (!pq.empty()) {
        auto [key, v] = pq.top();
        pq.pop();
        if (done[v] || key > g[v]) continue;
        done[v] = 1;
        if (v == 1) break;
        for (std::size_t j = 0; j < n; ++j) {
            if (done[j] || j == v) continue;
            EdgeInfo e;
            if (!is_cluster(v) && !is_cluster(j)) {
                auto pv = node_point(v);
                auto pj = node_point(j);
                if (D.contains_segment(pv, pj)) e.w = euclid(pv, pj);
            } else if (!is_cluster(v) && is_cluster(j)) {
                e = point_to_cluster(node_point(v), cluster_id(j));
            } else if (is_cluster(v) && !is_cluster(j)) {
                e = point_to_cluster(node_point(j), cluster_id(v));
                std::swap(e.ball_from, e.ball_to); // member sits on v's side
            } else {
                e = cluster_to_cluster(cluster_id(v), cluster_id(j));
            }
            if (!(e.w < kInf)) continue;
            double nk = key + e.w;
            if (nk < g[j]) {
                g[j] = nk;
                par[j] = static_cast<std::int32_t>(v);
                par_edge[j] = e;
                pq.emplace(nk, j);
            }
        }
    }

    DistanceResult out;
    out.value = g[1];
    out.boundary_clusters = boundary;
    out.exact = (d == 2 && cluster_nodes.empty() && boundary == 0);
    if (!(g[1] < kInf)) {
        out.value = kInf;
        return out;
    }
    // Reconstruct the polyline through corners and clusters. A cluster's exit
    // member lives on the edge that leaves it, so the chain is walked with the
    // entering edge of each node and the cluster interior is emitted when the
    // following edge reveals the exit member.
    std::vector<std::size_t> chain;
    for (std::size_t v = 1; ; v = static_cast<std::size_t>(par[v])) {
        chain.push_back(v);
        if (v == 0) break;
    }
    std::reverse(chain.begin(), chain.end());
    push_point(out.polyline, x);
    std::int32_t pending_entry = -1; // entry member of the cluster being crossed
    for (std::size_t i = 1; i < chain.size(); ++i) {
        std::size_t v = chain[i];
        std::size_t u = chain[i - 1];
        const EdgeInfo& e = par_edge[v];
        if (is_cluster(u)) {
            // Close out cluster u: interior path entry -> exit, then leave.
            append_cluster_centers(cfg, cs, cluster_id(u), pending_entry, e.ball_from,
                                   out.polyline);
            auto pa = cfg.center(e.ball_from);
            if (is_cluster(v))
                push_point(out.polyline, surface_point(pa, r, cfg.center(e.ball_to)));
            else
                push_point(out.polyline, surface_point(pa, r, node_point(v)));
        }
        if (is_cluster(v)) {
            auto pb = cfg.center(e.ball_to);
            if (is_cluster(u))
                push_point(out.polyline, surface_point(pb, r, cfg.center(e.ball_from)));
            else
                push_point(out.polyline, surface_point(pb, r, node_point(u)));
            pending_entry = e.ball_to;
            out.clusters_visited.push_back(cluster_id(v));
        } else {
            push_point(out.polyline, node_point(v));
        }
    }
    return out;
}

// xi > 0 restricted upper bound: boundary-point graph with containment checks.
DistanceResult intrinsic_xi_graph(const PointConfiguration& cfg, const Domain& D,
                                  double xi, std::span<const double> x,
                                  std::span<const double> y, int K) {
    const int d = cfg.dim;
    CellGrid grid(cfg, 2.0 * cfg.radius);
    std::vector<double> pts;
    pts.insert(pts.end(), x.begin(), x.end());
    pts.insert(pts.end(), y.begin(), y.end());
    int per_ball = K;
    for (std::size_t b = 0; b < cfg.size(); ++b) {
        auto bp = ball_boundary_points(cfg.center(b), cfg.radius, d, K);
        per_ball = static_cast<int>(bp.size()) / d;
        for (std::size_t j = 0; j * d < bp.size(); ++j) {
            std::span<const double> p(bp.data() + j * d, static_cast<std::size_t>(d));
            if (D.contains(p)) pts.insert(pts.end(), p.begin(), p.end());
        }
    }
    const std::size_t n = pts.size() / static_cast<std::size_t>(d);
    auto at = [&](std::size_t i) {
        return std::span<const double>(pts.data() + i * d, static_cast<std::size_t>(d));
    };
    std::vector<double> g(n, kInf);
    std::vector<std::uint8_t> done(n, 0);
    using QE = std::pair<double, std::size_t>;
    std::priority_queue<QE, std::vector<QE>, std::greater<>> pq;
    g[0] = 0.0;
    pq.emplace(0.0, 0);
    if (D.contains_segment(x, y)) {
        g[1] = segment_cost(cfg, grid, xi, x, y);
        pq.emplace(g[1], 1);
    }
    while (!pq.empty()) {
        auto [key, v] = pq.top();
        pq.pop();
        if (done[v] || key > g[v]) continue;
        if (v == 1) break;
        done[v] = 1;
        auto pv = at(v);
        for (std::size_t j = 0; j < n; ++j) {
            if (done[j] || j == v) continue;
            auto pj = at(j);
            double lb = xi * euclid(pv, pj);
            if (key + lb >= g[j]) continue;
            if (key + lb + xi * euclid(pj, y) >= g[1]) continue;
            if (!D.contains_segment(pv, pj)) continue;
            double nk = key + segment_cost(cfg, grid, xi, pv, pj);
            if (nk < g[j]) {
                g[j] = nk;
                pq.emplace(nk, j);
            }
        }
    }
    DistanceResult out;
    out.value = g[1];
    out.exact = false;
    out.refinement = per_ball;
    return out;
}

} // namespace

DistanceResult distance_intrinsic(const PointConfiguration& cfg, const ClusterSet& cs,
                                  const Domain& domain, std::span<const double> x,
                                  std::span<const double> y, double xi, int K) {
    if (!domain.contains(x) || !domain.contains(y))
        throw std::invalid_argument("distance_intrinsic: query point outside the domain");
    if (xi == 0.0) {
        if (domain.convex()) {
            GapGraph g(cfg, cs, nullptr, &domain);
            DistanceResult out = g.geodesic(x, y);
            out.boundary_clusters = g.boundary_cluster_count();
            out.exact = out.boundary_clusters == 0;
            return out;
        }
        return intrinsic_box_union(cfg, cs, domain, x, y);
    }
    if (!(xi > 0.0 && xi < 1.0))
        throw std::invalid_argument("distance_intrinsic: xi must lie in [0, 1)");
    DistanceResult out = intrinsic_xi_graph(cfg, domain, xi, x, y, K);
    std::vector<std::uint8_t> ok;
    out.boundary_clusters = scan_domain_clusters(cfg, cs, domain, ok);
    return out;
}

} // namespace dfpp
