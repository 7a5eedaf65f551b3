#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "diffcl/common.hpp"
#include "diffcl/rng.hpp"

namespace diffcl {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major double tensor. All training math runs in double so the
// finite-difference and oracle tolerances in the test suite hold with margin.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(const Shape& s) { return Tensor(s); }
    static Tensor full(const Shape& s, double v) { return Tensor(s, v); }
    static Tensor randn(const Shape& s, Rng& rng, double scale = 1.0);

    std::size_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool all_finite() const;
    double min_value() const;
    double max_value() const;
    double sum() const;
};

// 3D integer grid for label fields.
struct LabelGrid {
    Shape shape;  // {H, L, D}
    std::vector<std::int32_t> data;

    LabelGrid() = default;
    explicit LabelGrid(Shape s, std::int32_t fill = 0)
        : shape(std::move(s)), data(shape_numel(shape), fill) {}

    std::size_t numel() const { return data.size(); }
    std::int32_t& operator[](std::size_t i) { return data[i]; }
    std::int32_t operator[](std::size_t i) const { return data[i]; }
};

inline std::size_t flat3(const Shape& s, int a, int b, int c) {
    return (static_cast<std::size_t>(a) * s[1] + b) * s[2] + c;
}

void require_shape(const Shape& got, const Shape& want, const char* what);

}  // namespace diffcl
