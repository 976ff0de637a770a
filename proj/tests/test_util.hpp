#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dsadapt/autodiff.hpp"

namespace dsadapt::testutil {

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, scale);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

// Central finite differences against the analytic gradient for a scalar
// function rebuilt from the given leaves. Per-entry relative error with an
// absolute floor so near-zero gradients compare on absolute terms.
inline double gradcheck(const std::function<Var()>& build, const std::vector<Var>& leaves,
                        double h = 1e-5) {
    Var root = build();
    for (const auto& leaf : leaves) leaf->zero_grad();
    backward(root);

    double worst = 0.0;
    for (const auto& leaf : leaves) {
        leaf->ensure_grad();
        for (std::size_t i = 0; i < leaf->value.numel(); ++i) {
            double saved = leaf->value[i];
            leaf->value[i] = saved + h;
            double up = build()->value[0];
            leaf->value[i] = saved - h;
            double down = build()->value[0];
            leaf->value[i] = saved;
            double fd = (up - down) / (2.0 * h);
            double an = leaf->grad[i];
            double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace dsadapt::testutil
