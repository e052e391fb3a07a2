#pragma once

// Intensity fields u(x) for the defect point process. Either a constant or a
// multilinear interpolation over a regular grid of node values. Grid fields
// evaluate by clamping the query to the grid's bounding box (constant
// extrapolation beyond the edge), which keeps sampling with margins total.

#include <span>
#include <vector>

#include "defect_fpp/geometry.hpp"

namespace dfpp {

class IntensityField {
public:
    static IntensityField constant(double value);

    // dims[k] node counts per axis (>= 2), values in row-major order with the
    // last axis fastest: index = ((i0 * n1 + i1) * n2 + i2) ...
    static IntensityField grid(std::vector<double> origin, double spacing,
                               std::vector<int> dims, std::vector<double> values);

    // Convenience: the affine field value_lo + (value_hi - value_lo) * t along
    // `axis` across [lo, hi] of a box, constant on other axes. Implemented as
    // a 2-node-per-axis grid (multilinear interpolation is exact for affine).
    static IntensityField linear_on_box(const Box& box, int axis, double value_lo,
                                        double value_hi);

    bool is_constant() const { return dims_.empty(); }
    int dim() const { return is_constant() ? 0 : static_cast<int>(dims_.size()); }
    double sup_value() const { return sup_; }

    double value(std::span<const double> p) const;

    // The field x -> value(x / factor): the same profile stretched onto a
    // factor-times-larger domain. Exact for grid fields (origin and spacing
    // scale); the constant field is unchanged.
    IntensityField scaled_domain(double factor) const;

private:
    IntensityField() = default;

    double constant_ = 0.0;
    std::vector<double> origin_;
    double spacing_ = 1.0;
    std::vector<int> dims_;
    std::vector<double> values_;
    double sup_ = 0.0;
};

} // namespace dfpp
