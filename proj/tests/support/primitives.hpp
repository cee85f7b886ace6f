#pragma once

// Every differentiable primitive as a small scalar-valued case for gradient
// checking.

#include <functional>
#include <random>
#include <vector>

#include "comfe/tensor.hpp"

namespace comfe::testkit {

inline Tensor<double> uniform(const Shape &shape, std::mt19937_64 &rng, double lo = -2, double hi = 2) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(shape);
    for (auto &x : t.data()) x = u(rng);
    return t;
}

// Contracts an arbitrary-shaped output against fixed random weights so every
// output entry contributes to the scalar.
inline Var<double> project(const Var<double> &y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(mul(y, y.tape().constant(uniform(y.shape(), rng))));
}

struct Case {
    const char *name;
    std::vector<Shape> shapes;
    std::function<Var<double>(const std::vector<Var<double>> &)> op;
    double lo = -2, hi = 2;
};

inline std::vector<Case> primitive_cases() {
    return {
        {"matmul", {{3, 4}, {4, 2}}, [](auto &v) { return matmul(v[0], v[1]); }},
        {"matmul_nt", {{3, 4}, {5, 4}}, [](auto &v) { return matmul_nt(v[0], v[1]); }},
        {"transpose", {{3, 4}}, [](auto &v) { return transpose(v[0]); }},
        {"add", {{3, 4}, {3, 4}}, [](auto &v) { return add(v[0], v[1]); }},
        {"add_row", {{3, 4}, {1, 4}}, [](auto &v) { return add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 4}}, [](auto &v) { return sub(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](auto &v) { return mul(v[0], v[1]); }},
        {"mul_row", {{3, 4}, {1, 4}}, [](auto &v) { return mul(v[0], v[1]); }},
        {"affine", {{3, 4}}, [](auto &v) { return affine(v[0], -1.7, 0.3); }},
        {"exp", {{3, 4}}, [](auto &v) { return exp(v[0]); }},
        {"log", {{3, 4}}, [](auto &v) { return log(v[0]); }, 0.2, 2},
        {"gelu", {{3, 4}}, [](auto &v) { return gelu(v[0]); }},
        {"clamp", {{3, 4}}, [](auto &v) { return clamp(v[0], -5.0, 5.0); }},
        {"sum", {{3, 4}}, [](auto &v) { return affine(sum(v[0]), 0.7); }},
        {"mean", {{3, 4}}, [](auto &v) { return affine(mean(v[0]), 1.3); }},
        {"sum_along_rows", {{3, 4}}, [](auto &v) { return sum_along(v[0], 1); }},
        {"sum_along_cols", {{3, 4}}, [](auto &v) { return sum_along(v[0], 0); }},
        {"max_along", {{5, 3}}, [](auto &v) { return max_along(v[0], 0).values; }},
        {"log_sum_exp", {{3, 4}}, [](auto &v) { return log_sum_exp(v[0], 1, 0.3); }},
        {"softmax_rows", {{3, 4}}, [](auto &v) { return softmax(v[0], 1, 0.5); }},
        {"softmax_cols", {{3, 4}}, [](auto &v) { return softmax(v[0], 0, 2.0); }},
        {"log_softmax", {{3, 4}}, [](auto &v) { return log_softmax(v[0], 1, 0.4); }},
        {"l2_normalize_rows", {{4, 8}}, [](auto &v) { return l2_normalize_rows(v[0]); }},
        {"layer_norm", {{3, 6}, {1, 6}, {1, 6}}, [](auto &v) { return layer_norm(v[0], v[1], v[2]); }},
        {"slice_cols", {{3, 6}}, [](auto &v) { return slice_cols(v[0], 2, 3); }},
        {"slice_rows", {{5, 3}}, [](auto &v) { return slice_rows(v[0], 1, 3); }},
        {"concat_cols", {{3, 2}, {3, 4}}, [](auto &v) { return concat_cols(std::vector{v[0], v[1]}); }},
        {"dropout",
         {{3, 4}},
         [](auto &v) {
             std::mt19937_64 rng(9);
             return dropout(v[0], 0.5, rng);
         }},
    };
}

}  // namespace comfe::testkit
