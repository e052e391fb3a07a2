#include "defect_fpp/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dfpp {

IntensityField IntensityField::constant(double value) {
    if (!(value >= 0.0))
        throw std::invalid_argument("intensity.constant: must be nonnegative");
    IntensityField f;
    f.constant_ = value;
    f.sup_ = value;
    return f;
}

IntensityField IntensityField::grid(std::vector<double> origin, double spacing,
                                    std::vector<int> dims,
                                    std::vector<double> values) {
    if (origin.size() != dims.size() || dims.empty() || dims.size() > 8)
        throw std::invalid_argument("intensity.grid: origin/dims size mismatch (1..8 axes)");
    if (!(spacing > 0.0))
        throw std::invalid_argument("intensity.grid.spacing: must be positive");
    std::size_t n = 1;
    for (int m : dims) {
        if (m < 2) throw std::invalid_argument("intensity.grid.dims: need >= 2 nodes per axis");
        n *= static_cast<std::size_t>(m);
    }
    if (values.size() != n)
        throw std::invalid_argument("intensity.grid.values: wrong length for dims");
    double sup = 0.0;
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument("intensity.grid.values: must be finite and nonnegative");
        sup = std::max(sup, v);
    }
    IntensityField f;
    f.origin_ = std::move(origin);
    f.spacing_ = spacing;
    f.dims_ = std::move(dims);
    f.values_ = std::move(values);
    f.sup_ = sup; // multilinear interpolation attains its max at a node
    return f;
}

IntensityField IntensityField::linear_on_box(const Box& box, int axis,
                                             double value_lo, double value_hi) {
    const int d = box.dim();
    if (axis < 0 || axis >= d)
        throw std::invalid_argument("intensity.linear.axis: out of range");
    // One cell whose extent along `axis` is exactly the box side, so the two
    // node layers carry value_lo and value_hi verbatim. Axes longer than the
    // spacing are handled by the evaluation clamp; values are constant along
    // them, so clamping changes nothing.
    double spacing = box.hi[axis] - box.lo[axis];
    std::vector<int> dims(d, 2);
    std::size_t n = std::size_t(1) << d;
    std::vector<double> values(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        // bit (d-1-k) of idx = node index along axis k (row-major, last axis fastest)
        bool high = (idx >> (d - 1 - axis)) & 1u;
        values[idx] = high ? value_hi : value_lo;
    }
    return grid(box.lo, spacing, std::move(dims), std::move(values));
}

IntensityField IntensityField::scaled_domain(double factor) const {
    if (!(factor > 0.0))
        throw std::invalid_argument("intensity.scaled_domain: factor must be positive");
    IntensityField f = *this;
    if (f.is_constant()) return f;
    for (double& o : f.origin_) o *= factor;
    f.spacing_ *= factor;
    return f;
}

double IntensityField::value(std::span<const double> p) const {
    if (is_constant()) return constant_;
    const int d = static_cast<int>(dims_.size());
    // local cell coordinates, clamped to the grid
    double frac[8];
    int base[8];
    for (int k = 0; k < d; ++k) {
        double t = (p[k] - origin_[k]) / spacing_;
        t = std::clamp(t, 0.0, static_cast<double>(dims_[k] - 1));
        int i = static_cast<int>(t);
        i = std::min(i, dims_[k] - 2);
        base[k] = i;
        frac[k] = t - i;
    }
    // multilinear blend over the 2^d cell corners
    double acc = 0.0;
    const int corners = 1 << d;
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        std::size_t idx = 0;
        for (int k = 0; k < d; ++k) {
            bool high = (c >> k) & 1;
            w *= high ? frac[k] : (1.0 - frac[k]);
            idx = idx * static_cast<std::size_t>(dims_[k]) +
                  static_cast<std::size_t>(base[k] + (high ? 1 : 0));
        }
        acc += w * values_[idx];
    }
    return acc;
}

} // namespace dfpp
