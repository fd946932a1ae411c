#pragma once

#include <cstddef>

#include "latentfair/autograd.hpp"

// Differentiable primitives over NCHW / NxF tensors. Every op is per-sample
// independent along the leading batch axis; nothing mixes batch entries except
// the explicit reductions (sum, mean).
namespace latentfair::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// s * a + shift, elementwise
Var affine(const Var& a, double s, double shift);

Var sum(const Var& a);
Var mean(const Var& a);
// Weighted sum of scalar Vars; weights of exactly zero drop the term from the graph.
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);

Var reshape(const Var& a, Shape shape);
// [N, ...] -> [N, prod(...)]
Var flatten(const Var& a);

Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var silu(const Var& a);
Var sigmoid(const Var& a);

// x: [N, in], weight: [out, in], bias: [out]
Var linear(const Var& x, const Var& weight, const Var& bias);

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
};

// x: [N, C, H, W], weight: [Cout, C / groups, K, K], bias: [Cout] (may be undefined)
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt = {});

// Nearest-neighbour 2x spatial upsampling.
Var upsample2x(const Var& x);

// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);

// x: [N, C, H, W] scaled per (n, c) by gate: [N, C]
Var channel_gate(const Var& x, const Var& gate);

}  // namespace latentfair::ops
