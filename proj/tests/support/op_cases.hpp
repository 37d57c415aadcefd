// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dsp.hpp"
#include "gradcheck.hpp"

namespace podar::testing {

/// Every differentiable op the models use, each with an input generator.
inline std::vector<OpCase> registered_op_cases() {
    using V = std::vector<ad::VarD>;
    using T = std::vector<TensorD>;
    using R = std::mt19937_64;
    std::vector<OpCase> cases;
    auto unary = [&](const char* name, auto op, bool positive = false) {
        cases.push_back({name,
                         [positive](R& r) {
                             return positive ? T{random_tensor({5}, r, 0.2, 2.0)} : T{random_away_from_zero({5}, r)};
                         },
                         [op](const V& x) { return op(x[0]); }});
    };

    cases.push_back({"add", [](R& r) { return T{random_tensor({5}, r), random_tensor({5}, r)}; },
                     [](const V& x) { return ad::add(x[0], x[1]); }});
    cases.push_back({"add_broadcast", [](R& r) { return T{random_tensor({2, 3}, r), random_tensor({3}, r)}; },
                     [](const V& x) { return ad::add(x[0], x[1]); }});
    cases.push_back({"sub", [](R& r) { return T{random_tensor({2, 3}, r), random_tensor({2, 1}, r)}; },
                     [](const V& x) { return ad::sub(x[0], x[1]); }});
    cases.push_back({"mul", [](R& r) { return T{random_tensor({5}, r), random_tensor({5}, r)}; },
                     [](const V& x) { return ad::mul(x[0], x[1]); }});
    cases.push_back({"mul_broadcast", [](R& r) { return T{random_tensor({2, 3, 2}, r), random_tensor({1, 3, 1}, r)}; },
                     [](const V& x) { return ad::mul(x[0], x[1]); }});
    cases.push_back({"div", [](R& r) { return T{random_tensor({5}, r), random_away_from_zero({5}, r, 0.5, 1.5)}; },
                     [](const V& x) { return ad::div(x[0], x[1]); }});
    cases.push_back({"div_broadcast",
                     [](R& r) { return T{random_tensor({2, 3}, r), random_away_from_zero({2, 1}, r, 0.5, 1.5)}; },
                     [](const V& x) { return ad::div(x[0], x[1]); }});
    unary("scale", [](const ad::VarD& a) { return ad::scale(a, -2.5); });
    unary("add_scalar", [](const ad::VarD& a) { return ad::add_scalar(a, 0.75); });
    unary("tanh", [](const ad::VarD& a) { return ad::tanh(a); });
    unary("elu", [](const ad::VarD& a) { return ad::elu(a); });
    unary("exp", [](const ad::VarD& a) { return ad::exp(a); });
    unary("log", [](const ad::VarD& a) { return ad::log(a); }, true);
    unary("sqrt", [](const ad::VarD& a) { return ad::sqrt(a); }, true);
    unary("abs", [](const ad::VarD& a) { return ad::abs(a); });
    unary("square", [](const ad::VarD& a) { return ad::square(a); });
    unary("pow10", [](const ad::VarD& a) { return ad::pow10(a); });
    unary("sum", [](const ad::VarD& a) { return ad::sum(a); });
    unary("mean", [](const ad::VarD& a) { return ad::mean(a); });
    cases.push_back({"sum_axis", [](R& r) { return T{random_tensor({2, 3, 2}, r)}; },
                     [](const V& x) { return ad::sum_axis(x[0], 1); }});
    cases.push_back({"mean_axis", [](R& r) { return T{random_tensor({2, 3, 2}, r)}; },
                     [](const V& x) { return ad::mean_axis(x[0], 2); }});
    cases.push_back({"matmul", [](R& r) { return T{random_tensor({2, 3}, r), random_tensor({3, 2}, r)}; },
                     [](const V& x) { return ad::matmul(x[0], x[1]); }});
    cases.push_back({"matmul_batched",
                     [](R& r) { return T{random_tensor({2, 2, 3}, r), random_tensor({2, 3, 2}, r)}; },
                     [](const V& x) { return ad::matmul(x[0], x[1]); }});
    cases.push_back({"matmul_shared_rhs",
                     [](R& r) { return T{random_tensor({2, 2, 3}, r), random_tensor({3, 2}, r)}; },
                     [](const V& x) { return ad::matmul(x[0], x[1]); }});
    cases.push_back({"reshape", [](R& r) { return T{random_tensor({2, 3}, r)}; },
                     [](const V& x) { return ad::reshape(x[0], {3, 2}); }});
    cases.push_back({"permute", [](R& r) { return T{random_tensor({2, 3, 2}, r)}; },
                     [](const V& x) { return ad::permute(x[0], {2, 0, 1}); }});
    cases.push_back({"slice", [](R& r) { return T{random_tensor({2, 5, 2}, r)}; },
                     [](const V& x) { return ad::slice(x[0], 1, 1, 4); }});
    cases.push_back({"concat",
                     [](R& r) { return T{random_tensor({2, 2, 3}, r), random_tensor({2, 1, 3}, r)}; },
                     [](const V& x) { return ad::concat<double>({x[0], x[1]}, 1); }});
    cases.push_back({"gather_rows", [](R& r) { return T{random_tensor({4, 3}, r)}; },
                     [](const V& x) { return ad::gather_rows(x[0], {2, 0, 2, 3}); }});
    cases.push_back({"softmax", [](R& r) { return T{random_tensor({2, 5}, r, -2.0, 2.0)}; },
                     [](const V& x) { return ad::softmax(x[0]); }});
    cases.push_back({"layer_norm", [](R& r) { return T{random_tensor({2, 5}, r)}; },
                     [](const V& x) { return ad::layer_norm(x[0], 1e-5); }});
    cases.push_back({"conv1d",
                     [](R& r) {
                         return T{random_tensor({2, 2, 7}, r), random_tensor({3, 2, 3}, r), random_tensor({3}, r)};
                     },
                     [](const V& x) { return ad::conv1d(x[0], x[1], x[2], 2, 1); }});
    cases.push_back({"conv_transpose1d",
                     [](R& r) {
                         return T{random_tensor({2, 2, 4}, r), random_tensor({2, 3, 4}, r), random_tensor({3}, r)};
                     },
                     [](const V& x) { return ad::conv_transpose1d(x[0], x[1], x[2], 2, 1); }});
    cases.push_back({"stft_magnitude", [](R& r) { return T{random_tensor({2, 40}, r)}; },
                     [](const V& x) { return dsp::stft_magnitude(x[0], 16, 8); }});
    return cases;
}

}  // namespace podar::testing
