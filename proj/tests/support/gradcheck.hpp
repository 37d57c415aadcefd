// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference oracle for reverse-mode gradients. Test-only;
// it touches nothing but forward values.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "autograd.hpp"

namespace podar::testing {

using ScalarFn = std::function<ad::VarD(const std::vector<ad::VarD>&)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

/// Relative error with a small floor so that gradients that are exactly
/// zero compare in absolute terms.
inline double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-5});
}

inline GradCheckResult gradcheck(const ScalarFn& f, const std::vector<TensorD>& inputs, double h = 1e-5) {
    std::vector<ad::VarD> params;
    for (const auto& t : inputs) params.push_back(ad::parameter(t));
    auto loss = f(params);
    ad::backward(loss);

    GradCheckResult r;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        for (std::size_t i = 0; i < inputs[p].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<ad::VarD> shifted;
                for (std::size_t q = 0; q < inputs.size(); ++q) {
                    TensorD t = inputs[q];
                    if (q == p) t[i] += delta;
                    shifted.push_back(ad::constant(std::move(t)));
                }
                return f(shifted).item();
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            const double analytic = params[p].grad().empty() ? 0.0 : params[p].grad()[i];
            r.max_rel_err = std::max(r.max_rel_err, rel_err(analytic, numeric));
            r.max_abs_err = std::max(r.max_abs_err, std::abs(analytic - numeric));
        }
    }
    return r;
}

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    TensorD t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

/// Values with |v| in [lo, hi] and random sign; keeps inputs off kinks and poles.
inline TensorD random_away_from_zero(Shape shape, std::mt19937_64& rng, double lo = 0.2, double hi = 1.5) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::bernoulli_distribution sign(0.5);
    TensorD t(std::move(shape));
    for (auto& v : t.values()) v = sign(rng) ? u(rng) : -u(rng);
    return t;
}

/// A registered op under test: builds inputs from an rng and maps them to a
/// non-scalar output which is then contracted against a fixed random weight.
struct OpCase {
    std::string name;
    std::function<std::vector<TensorD>(std::mt19937_64&)> inputs;
    std::function<ad::VarD(const std::vector<ad::VarD>&)> op;
};

/// Reduces op output to a scalar through a random projection so that every
/// output element carries a distinct weight.
inline GradCheckResult check_op(const OpCase& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto inputs = c.inputs(rng);
    // Probe output shape once to size the projection.
    std::vector<ad::VarD> probe;
    for (const auto& t : inputs) probe.push_back(ad::constant(t));
    const Shape out_shape = c.op(probe).shape();
    auto weights = ad::constant(random_tensor(out_shape, rng, 0.5, 1.5));
    ScalarFn f = [&](const std::vector<ad::VarD>& xs) { return ad::sum(ad::mul(c.op(xs), weights)); };
    return gradcheck(f, inputs);
}

}  // namespace podar::testing
