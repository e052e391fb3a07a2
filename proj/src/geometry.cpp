#include "defect_fpp/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace dfpp {

double kappa(int d) {
    if (d < 1)
        throw std::invalid_argument("kappa: dimension must be >= 1");
    const double pi = std::numbers::pi;
    return std::pow(pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

double default_u_star(int d) {
    if (d == 2) return 0.35;
    if (d == 3) return 0.08;
    return 0.0; // caller must supply one; validate() rejects 0
}

void SimParams::validate() const {
    if (d < 2) throw std::invalid_argument("params.d: dimension must be >= 2");
    if (!(xi >= 0.0 && xi < 1.0))
        throw std::invalid_argument("params.xi: must lie in [0, 1)");
    if (!(R > 0.0)) throw std::invalid_argument("params.R: must be positive");
    if (!(radius > 0.0))
        throw std::invalid_argument("params.radius: must be positive");
    if (!(u_star > 0.0))
        throw std::invalid_argument(
            "params.u_star: no default for this dimension, supply a positive value");
}

bool Box::contains(std::span<const double> p) const {
    for (std::size_t k = 0; k < lo.size(); ++k)
        if (p[k] < lo[k] || p[k] > hi[k]) return false;
    return true;
}

double Box::volume() const {
    double v = 1.0;
    for (std::size_t k = 0; k < lo.size(); ++k) v *= (hi[k] - lo[k]);
    return v;
}

double Box::diameter() const {
    double s = 0.0;
    for (std::size_t k = 0; k < lo.size(); ++k) {
        double t = hi[k] - lo[k];
        s += t * t;
    }
    return std::sqrt(s);
}

Box Box::inflated(double margin) const {
    Box b = *this;
    for (std::size_t k = 0; k < lo.size(); ++k) {
        b.lo[k] -= margin;
        b.hi[k] += margin;
    }
    return b;
}

Box Box::scaled(double factor) const {
    Box b = *this;
    for (std::size_t k = 0; k < lo.size(); ++k) {
        b.lo[k] *= factor;
        b.hi[k] *= factor;
    }
    return b;
}

Domain Domain::make_box(Box b) {
    if (b.lo.empty() || b.lo.size() != b.hi.size())
        throw std::invalid_argument("domain.box: malformed bounds");
    for (std::size_t k = 0; k < b.lo.size(); ++k)
        if (!(b.lo[k] < b.hi[k]))
            throw std::invalid_argument("domain.box: lo must be < hi on every axis");
    Domain d;
    d.kind_ = Kind::Box;
    d.bbox_ = b;
    d.diameter_ = b.diameter();
    d.boxes_ = {std::move(b)};
    return d;
}

Domain Domain::make_polytope(std::vector<std::vector<double>> normals,
                             std::vector<double> offsets, Box bbox) {
    if (normals.size() != offsets.size() || normals.empty())
        throw std::invalid_argument("domain.polytope: normals/offsets size mismatch");
    for (const auto& n : normals)
        if (n.size() != bbox.lo.size())
            throw std::invalid_argument("domain.polytope: normal dimension mismatch");
    Domain d;
    d.kind_ = Kind::Polytope;
    d.normals_ = std::move(normals);
    d.offsets_ = std::move(offsets);
    d.diameter_ = bbox.diameter();
    d.bbox_ = std::move(bbox);
    return d;
}

Domain Domain::make_box_union(std::vector<Box> boxes) {
    if (boxes.empty())
        throw std::invalid_argument("domain.boxes: need at least one box");
    Domain d;
    d.kind_ = Kind::BoxUnion;
    Box bb = boxes.front();
    for (const auto& b : boxes) {
        if (b.lo.size() != bb.lo.size())
            throw std::invalid_argument("domain.boxes: mixed dimensions");
        for (std::size_t k = 0; k < bb.lo.size(); ++k) {
            bb.lo[k] = std::min(bb.lo[k], b.lo[k]);
            bb.hi[k] = std::max(bb.hi[k], b.hi[k]);
        }
    }
    d.bbox_ = bb;
    d.diameter_ = bb.diameter();
    d.boxes_ = std::move(boxes);
    return d;
}

bool Domain::contains(std::span<const double> p) const {
    switch (kind_) {
    case Kind::Box:
        return bbox_.contains(p);
    case Kind::Polytope: {
        if (!bbox_.contains(p)) return false;
        for (std::size_t i = 0; i < normals_.size(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < p.size(); ++k) s += normals_[i][k] * p[k];
            if (s > offsets_[i]) return false;
        }
        return true;
    }
    case Kind::BoxUnion:
        for (const auto& b : boxes_)
            if (b.contains(p)) return true;
        return false;
    }
    return false;
}

double Domain::volume() const {
    if (kind_ == Kind::Box) return boxes_.front().volume();
    if (kind_ == Kind::Polytope)
        throw std::runtime_error("domain.polytope: exact volume not supported");
    // Inclusion-exclusion over pairwise overlaps is avoided: most experiment
    // unions are disjoint or nearly so. Use a subdivision sweep instead: the
    // union volume equals the sum over boxes minus overlaps, computed here by
    // coordinate sweeping on the (small) box list.
    // For the box counts used in configs (a handful), the O(3^n) splitting
    // below is fine: recursively split the first box against the rest.
    struct Rec {
        static double unionVol(std::vector<Box> bs) {
            if (bs.empty()) return 0.0;
            Box first = bs.front();
            bs.erase(bs.begin());
            double v = first.volume() + unionVol(bs);
            // subtract the part of `first` covered by the rest
            std::vector<Box> clipped;
            for (const auto& b : bs) {
                Box c = b;
                bool empty = false;
                for (std::size_t k = 0; k < c.lo.size(); ++k) {
                    c.lo[k] = std::max(c.lo[k], first.lo[k]);
                    c.hi[k] = std::min(c.hi[k], first.hi[k]);
                    if (!(c.lo[k] < c.hi[k])) { empty = true; break; }
                }
                if (!empty) clipped.push_back(c);
            }
            v -= unionVol(clipped);
            return v;
        }
    };
    return Rec::unionVol(boxes_);
}

double Domain::interior_depth(std::span<const double> p) const {
    if (!contains(p)) return 0.0;
    switch (kind_) {
    case Kind::Box: {
        const Box& b = bbox_;
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < p.size(); ++k)
            m = std::min({m, p[k] - b.lo[k], b.hi[k] - p[k]});
        return m;
    }
    case Kind::Polytope: {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < normals_.size(); ++i) {
            double s = 0.0, nn = 0.0;
            for (std::size_t k = 0; k < p.size(); ++k) {
                s += normals_[i][k] * p[k];
                nn += normals_[i][k] * normals_[i][k];
            }
            m = std::min(m, (offsets_[i] - s) / std::sqrt(nn));
        }
        // also clip against the declared bounding box
        for (std::size_t k = 0; k < p.size(); ++k)
            m = std::min({m, p[k] - bbox_.lo[k], bbox_.hi[k] - p[k]});
        return std::max(m, 0.0);
    }
    case Kind::BoxUnion: {
        // Depth in a union is at least the best single-box depth. That lower
        // bound is what the boundary-crossing flags need (conservative: may
        // under-report depth across interior seams, never over-reports).
        double m = 0.0;
        for (const auto& b : boxes_) {
            if (!b.contains(p)) continue;
            double s = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < p.size(); ++k)
                s = std::min({s, p[k] - b.lo[k], b.hi[k] - p[k]});
            m = std::max(m, s);
        }
        return m;
    }
    }
    return 0.0;
}

bool Domain::contains_segment(std::span<const double> a, std::span<const double> b) const {
    if (!contains(a) || !contains(b)) return false;
    if (convex() || kind_ != Kind::BoxUnion) return true;
    // Box union: compute, for each box, the parameter interval of [a,b] inside
    // it, then check the intervals cover [0,1].
    std::vector<std::pair<double, double>> iv;
    const std::size_t d = a.size();
    for (const auto& box : boxes_) {
        double t0 = 0.0, t1 = 1.0;
        bool empty = false;
        for (std::size_t k = 0; k < d; ++k) {
            double da = a[k], db = b[k] - a[k];
            if (std::fabs(db) < 1e-300) {
                if (da < box.lo[k] || da > box.hi[k]) { empty = true; break; }
            } else {
                double u0 = (box.lo[k] - da) / db;
                double u1 = (box.hi[k] - da) / db;
                if (u0 > u1) std::swap(u0, u1);
                t0 = std::max(t0, u0);
                t1 = std::min(t1, u1);
                if (t0 > t1) { empty = true; break; }
            }
        }
        if (!empty) iv.emplace_back(t0, t1);
    }
    std::sort(iv.begin(), iv.end());
    double covered = 0.0;
    const double eps = 1e-12;
    for (const auto& [t0, t1] : iv) {
        if (t0 > covered + eps) return false;
        covered = std::max(covered, t1);
        if (covered >= 1.0 - eps) return true;
    }
    return covered >= 1.0 - eps;
}

Domain Domain::scaled(double factor) const {
    Domain d = *this;
    d.bbox_ = bbox_.scaled(factor);
    d.diameter_ = diameter_ * factor;
    for (auto& b : d.boxes_) b = b.scaled(factor);
    for (auto& off : d.offsets_) off *= factor; // a.(fx) <= f b
    return d;
}

double point_segment_distance(std::span<const double> p, std::span<const double> a,
                              std::span<const double> b) {
    double ab2 = sq_dist(a, b);
    if (ab2 == 0.0) return euclid(p, a);
    double t = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k)
        t += (p[k] - a[k]) * (b[k] - a[k]);
    t = std::clamp(t / ab2, 0.0, 1.0);
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        double q = a[k] + t * (b[k] - a[k]) - p[k];
        s += q * q;
    }
    return std::sqrt(s);
}

} // namespace dfpp
