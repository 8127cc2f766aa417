#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "powergan/autograd.hpp"
#include "powergan/rng.hpp"

namespace powergan::testing {

using ad::Shape;
using ad::Tensor;
using ad::Var;

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(shape);
    for (auto& v : t.data) v = rng.normal() * scale;
    return t;
}

// Central finite difference of a scalar function of one tensor.
inline Tensor<double> numeric_grad(const std::function<double(const Tensor<double>&)>& f,
                                   Tensor<double> x, double step = 1e-5) {
    Tensor<double> g(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double orig = x.data[i];
        x.data[i] = orig + step;
        const double up = f(x);
        x.data[i] = orig - step;
        const double down = f(x);
        x.data[i] = orig;
        g.data[i] = (up - down) / (2 * step);
    }
    return g;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l2(const std::vector<double>& a) {
    double s = 0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

}  // namespace powergan::testing
