#include "defect_fpp/sampler.hpp"

#include <stdexcept>

namespace dfpp {

namespace {

void check_region(const Box& box, double radius) {
    if (box.dim() < 1 || box.lo.size() != box.hi.size())
        throw std::invalid_argument("sample: malformed box");
    for (std::size_t k = 0; k < box.lo.size(); ++k)
        if (!(box.lo[k] < box.hi[k]))
            throw std::invalid_argument("sample: box needs lo < hi on every axis");
    if (!(radius > 0.0))
        throw std::invalid_argument("sample: radius must be positive");
}

} // namespace

bool PointConfiguration::covers(std::span<const double> p) const {
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < size(); ++i)
        if (sq_dist(p, center(i)) <= r2) return true;
    return false;
}

PointConfiguration MarkedConfiguration::restrict_level(double level) const {
    if (level < 0.0 || level > u_max)
        throw std::invalid_argument("restrict_level: level must lie in [0, u_max]");
    PointConfiguration out;
    out.dim = points.dim;
    out.radius = points.radius;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (marks[i] <= level) out.push(points.center(i));
    return out;
}

PointConfiguration MarkedConfiguration::restrict_field(const IntensityField& field) const {
    PointConfiguration out;
    out.dim = points.dim;
    out.radius = points.radius;
    for (std::size_t i = 0; i < points.size(); ++i) {
        double lvl = field.value(points.center(i));
        if (lvl > u_max + 1e-12)
            throw std::invalid_argument("restrict_field: field exceeds u_max of the coupling");
        if (marks[i] <= lvl) out.push(points.center(i));
    }
    return out;
}

PointConfiguration sample_poisson_box(RngStream& rng, double u, const Box& box,
                                      double radius) {
    if (!(u >= 0.0)) throw std::invalid_argument("sample: intensity must be nonnegative");
    check_region(box, radius);
    PointConfiguration cfg;
    cfg.dim = box.dim();
    cfg.radius = radius;
    const double mean = u * box.volume();
    const std::uint64_t n = rng.poisson(mean);
    cfg.xs.resize(n * static_cast<std::size_t>(cfg.dim));
    for (std::uint64_t i = 0; i < n; ++i)
        rng.uniform_in_box(box.lo, box.hi,
                           {cfg.xs.data() + i * cfg.dim, static_cast<std::size_t>(cfg.dim)});
    return cfg;
}

PointConfiguration sample_poisson_field(RngStream& rng, const IntensityField& field,
                                        const Box& box, double radius) {
    check_region(box, radius);
    const double sup = field.sup_value();
    PointConfiguration cfg;
    cfg.dim = box.dim();
    cfg.radius = radius;
    if (sup == 0.0) return cfg;
    const std::uint64_t n = rng.poisson(sup * box.volume());
    std::vector<double> p(cfg.dim);
    cfg.xs.reserve(n * cfg.dim);
    for (std::uint64_t i = 0; i < n; ++i) {
        rng.uniform_in_box(box.lo, box.hi, p);
        // Thinning: accept with probability u(x)/sup. The acceptance draw is
        // made for every candidate so the draw count, and hence the stream
        // state, depends only on n (reproducible merges).
        double accept = rng.uniform01();
        if (accept * sup < field.value(p)) cfg.push(p);
    }
    return cfg;
}

MarkedConfiguration sample_marked_box(RngStream& rng, double u_max, const Box& box,
                                      double radius) {
    if (!(u_max >= 0.0))
        throw std::invalid_argument("sample_marked: u_max must be nonnegative");
    check_region(box, radius);
    MarkedConfiguration mc;
    mc.u_max = u_max;
    mc.points.dim = box.dim();
    mc.points.radius = radius;
    const std::uint64_t n = rng.poisson(u_max * box.volume());
    std::vector<double> p(mc.points.dim);
    for (std::uint64_t i = 0; i < n; ++i) {
        rng.uniform_in_box(box.lo, box.hi, p);
        mc.points.push(p);
        mc.marks.push_back(rng.uniform01() * u_max);
    }
    return mc;
}

} // namespace dfpp
