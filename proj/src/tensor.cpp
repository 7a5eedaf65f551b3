#include "diffcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace diffcl {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape)) {
        throw ShapeError("tensor data size does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::randn(const Shape& s, Rng& rng, double scale) {
    Tensor t(s);
    for (auto& v : t.data) v = rng.normal() * scale;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::min_value() const {
    return data.empty() ? 0.0 : *std::min_element(data.begin(), data.end());
}

double Tensor::max_value() const {
    return data.empty() ? 0.0 : *std::max_element(data.begin(), data.end());
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data) s += v;
    return s;
}

void require_shape(const Shape& got, const Shape& want, const char* what) {
    if (!same_shape(got, want)) {
        throw ShapeError(std::string(what) + ": expected " + shape_str(want) + ", got " +
                         shape_str(got));
    }
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace diffcl
