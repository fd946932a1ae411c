#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "latentfair/ops.hpp"

using namespace latentfair;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

// Straight from the definition, no im2col.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad,
                      std::size_t groups) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t co = w.dim(0), cig = w.dim(1), k = w.dim(2);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    const std::size_t cog = co / groups;
    (void)c;
    Tensor out({n, co, oh, ow});
    for (std::size_t b0 = 0; b0 < n; ++b0)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    double acc = b.empty() ? 0.0 : b[o];
                    const std::size_t g = o / cog;
                    for (std::size_t ci = 0; ci < cig; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long iy = long(y * stride + ky) - long(pad);
                                const long ix = long(xx * stride + kx) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                                const std::size_t cin = g * cig + ci;
                                acc += w[((o * cig + ci) * k + ky) * k + kx] *
                                       x[((b0 * x.dim(1) + cin) * h + iy) * wd + ix];
                            }
                    out[((b0 * co + o) * oh + y) * ow + xx] = acc;
                }
    return out;
}

Var weighted_total(const Var& v, const Tensor& probe) {
    // random projection so every output element matters to the gradient
    return ops::sum(ops::mul(v, Var(probe)));
}

}  // namespace

TEST_CASE("conv2d matches the direct definition") {
    Rng rng(11);
    struct Case { std::size_t c, co, k, stride, pad, groups; };
    for (Case cs : {Case{3, 4, 3, 1, 1, 1}, Case{3, 5, 3, 2, 1, 1}, Case{4, 4, 3, 1, 1, 4}, Case{4, 6, 1, 1, 0, 2},
                    Case{2, 3, 4, 2, 1, 1}}) {
        Tensor x = random_tensor({2, cs.c, 7, 6}, rng);
        Tensor w = random_tensor({cs.co, cs.c / cs.groups, cs.k, cs.k}, rng);
        Tensor b = random_tensor({cs.co}, rng);
        Var y = ops::conv2d(Var(x), Var(w), Var(b), {cs.stride, cs.pad, cs.groups});
        Tensor ref = conv_reference(x, w, b, cs.stride, cs.pad, cs.groups);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv2d rejects inconsistent shapes") {
    Var x(Tensor({1, 3, 5, 5}));
    CHECK_THROWS_AS(ops::conv2d(x, Var(Tensor({4, 2, 3, 3})), Var()), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(x, Var(Tensor({4, 1, 3, 3})), Var(), {1, 0, 3}), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(Var(Tensor({3, 5, 5})), Var(Tensor({4, 3, 3, 3})), Var()), ShapeError);
}

TEST_CASE("conv2d gradients, dense and grouped") {
    Rng rng(5);
    for (std::size_t groups : {1u, 3u}) {
        Tensor x = random_tensor({2, 3, 5, 5}, rng);
        Tensor w = random_tensor({3, 3 / groups, 3, 3}, rng);
        Tensor b = random_tensor({3}, rng);
        Tensor probe = random_tensor({2, 3, 3, 3}, rng);
        auto f = [&](const std::vector<Var>& v) {
            return weighted_total(ops::conv2d(v[0], v[1], v[2], {2, 1, groups}), probe);
        };
        CHECK(grad_check(f, {x, w, b}) < 1e-6);
    }
}

TEST_CASE("linear matches a hand product and has correct gradients") {
    Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor w({2, 3}, std::vector<double>{1, 0, -1, 0.5, 0.5, 0.5});
    Tensor b({2}, std::vector<double>{0.1, -0.1});
    Var y = ops::linear(Var(x), Var(w), Var(b));
    CHECK(y.value().values() == std::vector<double>{-1.9, 2.9, -1.9, 7.4});
    Rng rng(2);
    Tensor probe = random_tensor({2, 2}, rng);
    auto f = [&](const std::vector<Var>& v) { return weighted_total(ops::linear(v[0], v[1], v[2]), probe); };
    CHECK(grad_check(f, {x, w, b}) < 1e-6);
    CHECK_THROWS_AS(ops::linear(Var(Tensor({2, 4})), Var(w), Var(b)), ShapeError);
}

TEST_CASE("elementwise and pooling gradients") {
    Rng rng(8);
    const Shape s{2, 3, 4, 4};
    Tensor x = random_tensor(s, rng);
    Tensor probe = random_tensor(s, rng);
    Tensor probe_up = random_tensor({2, 3, 8, 8}, rng);
    Tensor probe_pool = random_tensor({2, 3}, rng);
    Tensor gate = random_tensor({2, 3}, rng);

    CHECK(grad_check([&](auto& v) { return weighted_total(ops::silu(v[0]), probe); }, {x}) < 1e-6);
    CHECK(grad_check([&](auto& v) { return weighted_total(ops::sigmoid(v[0]), probe); }, {x}) < 1e-6);
    CHECK(grad_check([&](auto& v) { return weighted_total(ops::leaky_relu(v[0], 0.2), probe); }, {x}) < 1e-6);
    CHECK(grad_check([&](auto& v) { return weighted_total(ops::upsample2x(v[0]), probe_up); }, {x}) < 1e-6);
    CHECK(grad_check([&](auto& v) { return weighted_total(ops::global_avg_pool(v[0]), probe_pool); }, {x}) < 1e-6);
    CHECK(grad_check([&](auto& v) { return weighted_total(ops::channel_gate(v[0], v[1]), probe); }, {x, gate}) <
          1e-6);
    CHECK(grad_check([&](auto& v) { return ops::mean(ops::mul(v[0], v[0])); }, {x}) < 1e-6);
    CHECK(grad_check([&](auto& v) { return weighted_total(ops::affine(v[0], 2.5, -1.0), probe); }, {x}) < 1e-6);
}

TEST_CASE("weighted_sum drops zero-weight terms") {
    Var a(Tensor::scalar(2.0), true), b(Tensor::scalar(3.0), true);
    Var y = ops::weighted_sum({{0.5, a}, {0.0, b}});
    CHECK(y.value().item() == 1.0);
    backward(y);
    CHECK(a.grad().item() == 0.5);
    CHECK(b.grad().item() == 0.0);
    CHECK_THROWS_AS(ops::weighted_sum({{1.0, Var(Tensor({2}))}}), ShapeError);
}

TEST_CASE("ops never mix batch entries") {
    Rng rng(3);
    Tensor x = random_tensor({3, 2, 4, 4}, rng);
    Tensor w = random_tensor({2, 2, 3, 3}, rng);
    Var full = ops::global_avg_pool(ops::silu(ops::conv2d(Var(x), Var(w), Var(), {1, 1, 1})));
    Tensor x1({1, 2, 4, 4}, std::vector<double>(x.values().begin() + 32, x.values().begin() + 64));
    Var single = ops::global_avg_pool(ops::silu(ops::conv2d(Var(x1), Var(w), Var(), {1, 1, 1})));
    for (std::size_t i = 0; i < 2; ++i) CHECK(full.value()[2 + i] == doctest::Approx(single.value()[i]).epsilon(1e-12));
}
