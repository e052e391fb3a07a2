#include "defect_fpp/limits.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace dfpp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_coeff_args(double u, double xi, int d) {
    if (!(u >= 0.0))
        throw std::invalid_argument("limit coefficient: u must be nonnegative");
    if (!(xi >= 0.0 && xi < 1.0))
        throw std::invalid_argument("limit coefficient: xi must lie in [0, 1)");
    if (d < 2)
        throw std::invalid_argument("limit coefficient: d must be >= 2");
}

} // namespace

double sigma(double u, double xi, int d) {
    check_coeff_args(u, xi, d);
    const double vac = std::exp(-u * kappa(d)); // vacant volume fraction
    return std::pow(vac + std::pow(xi, d) * (1.0 - vac), 1.0 / d);
}

double eta_upper_bound(double u, double xi, int d) {
    check_coeff_args(u, xi, d);
    const double vac = std::exp(-u * kappa(d));
    return vac + xi * (1.0 - vac);
}

// ---------------------------------------------------------------------------
// EtaTable

void EtaTable::validate() const {
    if (d < 2) throw std::invalid_argument("eta table: d must be >= 2");
    if (!(xi >= 0.0 && xi < 1.0))
        throw std::invalid_argument("eta table: xi must lie in [0, 1)");
    if (R < 0.0) throw std::invalid_argument("eta table: R must be nonnegative");
    if (replicas < 0) throw std::invalid_argument("eta table: negative replicas");
    if (entries.empty())
        throw std::invalid_argument("eta table: needs at least the u = 0 entry");
    if (entries.front().u != 0.0 || entries.front().eta != 1.0)
        throw std::invalid_argument("eta table: first entry must be (u=0, eta=1)");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Entry& e = entries[i];
        if (!std::isfinite(e.u) || !std::isfinite(e.eta) || !std::isfinite(e.err))
            throw std::invalid_argument("eta table: non-finite entry");
        if (!(e.eta > 0.0 && e.eta <= 1.0))
            throw std::invalid_argument("eta table: eta values must lie in (0, 1]");
        if (e.err < 0.0)
            throw std::invalid_argument("eta table: negative stderr");
        if (i > 0) {
            if (!(entries[i - 1].u < e.u))
                throw std::invalid_argument("eta table: u grid must be strictly increasing");
            const double slack = 2.0 * (entries[i - 1].err + e.err);
            if (e.eta > entries[i - 1].eta + slack)
                throw std::invalid_argument(
                    "eta table: values must be nonincreasing within 2 stderr");
        }
    }
}

double EtaTable::lookup(double u) const {
    if (entries.empty()) throw std::out_of_range("eta table: empty");
    if (!(u >= 0.0) || u > entries.back().u)
        throw std::out_of_range("eta table: u outside the tabulated range");
    auto it = std::lower_bound(
        entries.begin(), entries.end(), u,
        [](const Entry& e, double v) { return e.u < v; });
    if (it != entries.end() && it->u == u) return it->eta;
    const Entry& hi = *it;
    const Entry& lo = *(it - 1);
    const double t = (u - lo.u) / (hi.u - lo.u);
    return lo.eta + t * (hi.eta - lo.eta);
}

std::string EtaTable::to_json() const {
    nlohmann::ordered_json j;
    j["d"] = d;
    j["xi"] = xi;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const Entry& e : entries) {
        nlohmann::ordered_json je;
        je["u"] = e.u;
        je["eta"] = e.eta;
        je["stderr"] = e.err;
        arr.push_back(std::move(je));
    }
    j["entries"] = std::move(arr);
    j["R"] = R;
    j["replicas"] = replicas;
    return j.dump(2) + "\n";
}

EtaTable EtaTable::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("eta table: bad JSON: ") + e.what());
    }
    EtaTable t;
    try {
        t.d = j.at("d").get<int>();
        t.xi = j.at("xi").get<double>();
        t.R = j.value("R", 0.0);
        t.replicas = j.value("replicas", std::int64_t{0});
        for (const auto& je : j.at("entries")) {
            Entry e;
            e.u = je.at("u").get<double>();
            e.eta = je.at("eta").get<double>();
            e.err = je.value("stderr", 0.0);
            t.entries.push_back(e);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("eta table: bad schema: ") + e.what());
    }
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// ConformalGrid

namespace {

// Primitive integer moves with Chebyshev norm <= order, both orientations.
std::vector<std::array<int, 3>> make_stencil(int d, int order) {
    std::vector<std::array<int, 3>> moves;
    int v[3] = {0, 0, 0};
    const int zlo = (d == 3) ? -order : 0;
    const int zhi = (d == 3) ? order : 0;
    for (v[0] = -order; v[0] <= order; ++v[0])
        for (v[1] = -order; v[1] <= order; ++v[1])
            for (v[2] = zlo; v[2] <= zhi; ++v[2]) {
                int g = std::gcd(std::gcd(std::abs(v[0]), std::abs(v[1])),
                                 std::abs(v[2]));
                if (g != 1) continue; // skips the origin (g = 0) and multiples
                moves.push_back({v[0], v[1], v[2]});
            }
    return moves;
}

// Worst-direction relative overestimate of the stencil's induced norm. The
// induced norm is the support function of the dual polytope
// P = { y : y . s <= |s| for every move s }, so the overestimate equals
// max { |y| : y vertex of P } - 1. In 2d vertices pair adjacent directions
// and the maximum is sec(gap/2); in 3d vertices are enumerated as feasible
// intersections of three constraint planes.
double stencil_anisotropy(int d, const std::vector<std::array<int, 3>>& moves) {
    std::vector<std::array<double, 3>> dirs;
    dirs.reserve(moves.size());
    for (const auto& m : moves) {
        double len = std::sqrt(double(m[0]) * m[0] + double(m[1]) * m[1] +
                               double(m[2]) * m[2]);
        dirs.push_back({m[0] / len, m[1] / len, m[2] / len});
    }
    if (d == 2) {
        std::vector<double> ang;
        ang.reserve(dirs.size());
        for (const auto& s : dirs) ang.push_back(std::atan2(s[1], s[0]));
        std::sort(ang.begin(), ang.end());
        double worst = ang.front() + 2.0 * std::numbers::pi - ang.back();
        for (std::size_t i = 1; i < ang.size(); ++i)
            worst = std::max(worst, ang[i] - ang[i - 1]);
        return 1.0 / std::cos(0.5 * worst) - 1.0;
    }
    // d == 3: Cramer solve y . s = 1 for each direction triple, keep feasible
    // vertices. P contains the unit ball, so the bound starts at |y| = 1.
    double best_sq = 1.0;
    const std::size_t n = dirs.size();
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b)
            for (std::size_t c = b + 1; c < n; ++c) {
                const auto& A = dirs[a];
                const auto& B = dirs[b];
                const auto& C = dirs[c];
                double det = A[0] * (B[1] * C[2] - B[2] * C[1]) -
                             A[1] * (B[0] * C[2] - B[2] * C[0]) +
                             A[2] * (B[0] * C[1] - B[1] * C[0]);
                if (std::abs(det) < 1e-9) continue;
                // Gaussian elimination with partial pivoting on the 3x3 system
                // [A; B; C] y = (1, 1, 1).
                double G[3][4] = {{A[0], A[1], A[2], 1.0},
                                  {B[0], B[1], B[2], 1.0},
                                  {C[0], C[1], C[2], 1.0}};
                bool singular = false;
                for (int col = 0; col < 3 && !singular; ++col) {
                    int pr = col;
                    for (int r = col + 1; r < 3; ++r)
                        if (std::abs(G[r][col]) > std::abs(G[pr][col])) pr = r;
                    if (std::abs(G[pr][col]) < 1e-12) { singular = true; break; }
                    if (pr != col)
                        for (int q = col; q < 4; ++q) std::swap(G[pr][q], G[col][q]);
                    for (int r = col + 1; r < 3; ++r) {
                        double f = G[r][col] / G[col][col];
                        for (int q = col; q < 4; ++q) G[r][q] -= f * G[col][q];
                    }
                }
                if (singular) continue;
                double y[3];
                for (int r = 2; r >= 0; --r) {
                    double s = G[r][3];
                    for (int q = r + 1; q < 3; ++q) s -= G[r][q] * y[q];
                    y[r] = s / G[r][r];
                }
                double nsq = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
                if (nsq <= best_sq) continue;
                bool feasible = true;
                for (const auto& s : dirs) {
                    if (y[0] * s[0] + y[1] * s[1] + y[2] * s[2] > 1.0 + 1e-9) {
                        feasible = false;
                        break;
                    }
                }
                if (feasible) best_sq = nsq;
            }
    return std::sqrt(best_sq) - 1.0;
}

} // namespace

struct ConformalGrid::Impl {
    explicit Impl(Domain dom) : domain(std::move(dom)) {}

    Domain domain;
    double h = 0.0;
    int d = 2;
    int order = 0;
    double lo[3] = {0, 0, 0};
    std::int64_t n[3] = {1, 1, 1};
    std::int64_t total = 0;
    std::vector<double> rho;  // -1 marks nodes outside the domain
    std::vector<std::array<int, 3>> moves;
    std::vector<double> move_len; // Euclidean length of each move, times h
    std::vector<std::uint64_t> edge_ok; // bitmap, only for non-convex domains
    double aniso = 0.0;
    std::size_t included = 0;

    bool use_edge_mask() const { return !edge_ok.empty(); }

    std::int64_t flat(const std::int64_t* c) const {
        std::int64_t idx = c[0];
        for (int k = 1; k < d; ++k) idx = idx * n[k] + c[k];
        return idx;
    }
    void coords(std::int64_t idx, std::int64_t* c) const {
        for (int k = d - 1; k >= 1; --k) {
            c[k] = idx % n[k];
            idx /= n[k];
        }
        c[0] = idx;
    }
    void node_point(const std::int64_t* c, double* p) const {
        for (int k = 0; k < d; ++k) p[k] = lo[k] + h * static_cast<double>(c[k]);
    }

    bool edge_bit(std::int64_t node, std::size_t m) const {
        std::size_t bit = static_cast<std::size_t>(node) * moves.size() + m;
        return (edge_ok[bit >> 6] >> (bit & 63)) & 1u;
    }
    void set_edge_bit(std::int64_t node, std::size_t m) {
        std::size_t bit = static_cast<std::size_t>(node) * moves.size() + m;
        edge_ok[bit >> 6] |= std::uint64_t{1} << (bit & 63);
    }

    // Nearest included node to p; returns node id, fills snap cost.
    std::int64_t snap(std::span<const double> p, double& cost) const {
        std::int64_t c0[3] = {0, 0, 0};
        for (int k = 0; k < d; ++k) {
            auto i = static_cast<std::int64_t>(std::llround((p[k] - lo[k]) / h));
            c0[k] = std::clamp(i, std::int64_t{0}, n[k] - 1);
        }
        double pt[3];
        for (int ring = 0; ring <= 8; ++ring) {
            std::int64_t best = -1;
            double best_sq = kInf;
            std::int64_t clo[3] = {0, 0, 0}, chi[3] = {0, 0, 0}, c[3] = {0, 0, 0};
            for (int k = 0; k < d; ++k) {
                clo[k] = std::max<std::int64_t>(0, c0[k] - ring);
                chi[k] = std::min(n[k] - 1, c0[k] + ring);
            }
            for (c[0] = clo[0]; c[0] <= chi[0]; ++c[0])
                for (c[1] = clo[1]; c[1] <= chi[1]; ++c[1]) {
                    const std::int64_t z0 = (d == 3) ? clo[2] : 0;
                    const std::int64_t z1 = (d == 3) ? chi[2] : 0;
                    for (c[2] = z0; c[2] <= z1; ++c[2]) {
                        std::int64_t idx = flat(c);
                        if (rho[static_cast<std::size_t>(idx)] < 0.0) continue;
                        node_point(c, pt);
                        double sq = 0.0;
                        for (int k = 0; k < d; ++k) {
                            double t = pt[k] - p[k];
                            sq += t * t;
                        }
                        if (sq < best_sq) {
                            best_sq = sq;
                            best = idx;
                        }
                    }
                }
            if (best >= 0) {
                cost = rho[static_cast<std::size_t>(best)] * std::sqrt(best_sq);
                return best;
            }
        }
        throw std::runtime_error("conformal grid: spacing too coarse near a query point");
    }

    // Dijkstra from src until every node in `stops` (sorted, unique) settles.
    // Returns the full tentative-distance array.
    std::vector<double> run(std::int64_t src, const std::vector<std::int64_t>& stops) const {
        std::vector<double> dist(static_cast<std::size_t>(total), kInf);
        using Item = std::pair<double, std::int64_t>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        dist[static_cast<std::size_t>(src)] = 0.0;
        pq.emplace(0.0, src);
        std::size_t open = stops.size();
        std::vector<char> stop_hit(stops.size(), 0);
        std::int64_t c[3] = {0, 0, 0}, b[3] = {0, 0, 0};
        while (!pq.empty() && open > 0) {
            auto [key, node] = pq.top();
            pq.pop();
            if (key > dist[static_cast<std::size_t>(node)]) continue;
            auto it = std::lower_bound(stops.begin(), stops.end(), node);
            if (it != stops.end() && *it == node) {
                std::size_t si = static_cast<std::size_t>(it - stops.begin());
                if (!stop_hit[si]) {
                    stop_hit[si] = 1;
                    --open;
                }
            }
            coords(node, c);
            const double ra = rho[static_cast<std::size_t>(node)];
            for (std::size_t m = 0; m < moves.size(); ++m) {
                bool ok = true;
                for (int k = 0; k < d; ++k) {
                    b[k] = c[k] + moves[m][k];
                    if (b[k] < 0 || b[k] >= n[k]) {
                        ok = false;
                        break;
                    }
                }
                if (!ok) continue;
                std::int64_t nb = flat(b);
                const double rb = rho[static_cast<std::size_t>(nb)];
                if (rb < 0.0) continue;
                if (use_edge_mask() && !edge_bit(node, m)) continue;
                double nk = key + move_len[m] * 0.5 * (ra + rb);
                if (nk < dist[static_cast<std::size_t>(nb)]) {
                    dist[static_cast<std::size_t>(nb)] = nk;
                    pq.emplace(nk, nb);
                }
            }
        }
        return dist;
    }
};

ConformalGrid::ConformalGrid(Domain domain, double spacing,
                             const std::function<double(std::span<const double>)>& rho,
                             int stencil_order)
    : impl_(std::make_unique<Impl>(std::move(domain))) {
    Impl& im = *impl_;
    im.d = im.domain.dim();
    if (im.d != 2 && im.d != 3)
        throw std::invalid_argument("conformal grid: d must be 2 or 3");
    if (!(spacing > 0.0))
        throw std::invalid_argument("conformal grid: spacing must be positive");
    if (stencil_order < 0 || stencil_order > 8)
        throw std::invalid_argument("conformal grid: stencil order must lie in [0, 8]");
    im.h = spacing;
    im.order = stencil_order ? stencil_order : (im.d == 2 ? 5 : 2);

    const Box& bb = im.domain.bounding_box();
    im.total = 1;
    for (int k = 0; k < im.d; ++k) {
        im.lo[k] = bb.lo[k];
        im.n[k] = static_cast<std::int64_t>(
                      std::floor((bb.hi[k] - bb.lo[k]) / im.h + 1e-9)) +
                  1;
        im.total *= im.n[k];
    }
    if (im.total > (std::int64_t{1} << 27))
        throw std::invalid_argument("conformal grid: too many nodes at this spacing");

    im.rho.assign(static_cast<std::size_t>(im.total), -1.0);
    std::vector<double> p(im.d);
    std::int64_t c[3] = {0, 0, 0};
    for (std::int64_t idx = 0; idx < im.total; ++idx) {
        im.coords(idx, c);
        im.node_point(c, p.data());
        if (!im.domain.contains(p)) continue;
        double v = rho(p);
        if (!std::isfinite(v) || !(v > 0.0))
            throw std::invalid_argument(
                "conformal grid: rho must be finite and positive on the domain");
        im.rho[static_cast<std::size_t>(idx)] = v;
        ++im.included;
    }
    if (im.included == 0)
        throw std::invalid_argument("conformal grid: no lattice node inside the domain");

    im.moves = make_stencil(im.d, im.order);
    im.move_len.reserve(im.moves.size());
    for (const auto& m : im.moves)
        im.move_len.push_back(im.h * std::sqrt(double(m[0]) * m[0] +
                                               double(m[1]) * m[1] +
                                               double(m[2]) * m[2]));
    im.aniso = stencil_anisotropy(im.d, im.moves);

    if (!im.domain.convex()) {
        // Long moves can tunnel through notches; mask every edge whose segment
        // leaves the domain.
        std::size_t bits = static_cast<std::size_t>(im.total) * im.moves.size();
        im.edge_ok.assign((bits + 63) / 64, 0);
        std::vector<double> pa(im.d), pb(im.d);
        std::int64_t b[3] = {0, 0, 0};
        for (std::int64_t idx = 0; idx < im.total; ++idx) {
            if (im.rho[static_cast<std::size_t>(idx)] < 0.0) continue;
            im.coords(idx, c);
            im.node_point(c, pa.data());
            for (std::size_t m = 0; m < im.moves.size(); ++m) {
                bool in = true;
                for (int k = 0; k < im.d; ++k) {
                    b[k] = c[k] + im.moves[m][k];
                    if (b[k] < 0 || b[k] >= im.n[k]) {
                        in = false;
                        break;
                    }
                }
                if (!in) continue;
                std::int64_t nb = im.flat(b);
                if (im.rho[static_cast<std::size_t>(nb)] < 0.0) continue;
                im.node_point(b, pb.data());
                if (im.domain.contains_segment(pa, pb)) im.set_edge_bit(idx, m);
            }
        }
    }
}

ConformalGrid::~ConformalGrid() = default;
ConformalGrid::ConformalGrid(ConformalGrid&&) noexcept = default;
ConformalGrid& ConformalGrid::operator=(ConformalGrid&&) noexcept = default;

int ConformalGrid::dim() const { return impl_->d; }
double ConformalGrid::spacing() const { return impl_->h; }
int ConformalGrid::stencil_order() const { return impl_->order; }
std::size_t ConformalGrid::node_count() const { return impl_->included; }
double ConformalGrid::anisotropy_bound() const { return impl_->aniso; }

double ConformalGrid::distance(std::span<const double> x,
                               std::span<const double> y) const {
    const Impl& im = *impl_;
    if (static_cast<int>(x.size()) != im.d || static_cast<int>(y.size()) != im.d)
        throw std::invalid_argument("conformal grid: query dimension mismatch");
    if (!im.domain.contains(x) || !im.domain.contains(y))
        throw std::invalid_argument("conformal grid: query point outside the domain");
    double sx = 0.0, sy = 0.0;
    std::int64_t a = im.snap(x, sx);
    std::int64_t b = im.snap(y, sy);
    // Same-node queries shortcut to the local metric, so distance(x, x) is
    // exactly zero and the triangle inequality stays exact.
    if (a == b) return im.rho[static_cast<std::size_t>(a)] * euclid(x, y);
    std::vector<std::int64_t> stops{b};
    std::vector<double> dist = im.run(a, stops);
    return dist[static_cast<std::size_t>(b)] + sx + sy;
}

std::vector<double> ConformalGrid::distances(std::span<const double> x,
                                             const std::vector<Point>& ys) const {
    const Impl& im = *impl_;
    if (static_cast<int>(x.size()) != im.d)
        throw std::invalid_argument("conformal grid: query dimension mismatch");
    if (!im.domain.contains(x))
        throw std::invalid_argument("conformal grid: query point outside the domain");
    double sx = 0.0;
    std::int64_t a = im.snap(x, sx);
    std::vector<std::int64_t> nodes(ys.size());
    std::vector<double> snap_cost(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) {
        if (static_cast<int>(ys[i].size()) != im.d)
            throw std::invalid_argument("conformal grid: query dimension mismatch");
        if (!im.domain.contains(ys[i]))
            throw std::invalid_argument("conformal grid: query point outside the domain");
        nodes[i] = im.snap(ys[i], snap_cost[i]);
    }
    std::vector<std::int64_t> stops = nodes;
    std::sort(stops.begin(), stops.end());
    stops.erase(std::unique(stops.begin(), stops.end()), stops.end());
    std::vector<double> dist = im.run(a, stops);
    std::vector<double> out(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) {
        if (nodes[i] == a) {
            out[i] = im.rho[static_cast<std::size_t>(a)] * euclid(x, ys[i]);
        } else {
            out[i] = dist[static_cast<std::size_t>(nodes[i])] + sx + snap_cost[i];
        }
    }
    return out;
}

double conformal_distance(const ConformalGrid& grid, std::span<const double> x,
                          std::span<const double> y) {
    return grid.distance(x, y);
}

} // namespace dfpp
