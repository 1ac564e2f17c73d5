#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "handgen/autograd.hpp"
#include "handgen/nn.hpp"
#include "handgen/rng.hpp"

using namespace handgen;

namespace {

// Central-difference gradient oracle: perturb every element of the leaf and
// compare against the analytic gradient from backward(). Returns max relative
// error over elements (relative to the gradient vector norm).
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x0, double eps = 1e-6) {
    Var x(x0, /*requires_grad=*/true);
    Var y = f(x);
    REQUIRE(y.numel() == 1);
    backward(y);
    Tensor analytic = x.grad();

    Tensor numeric(x0.shape);
    for (int64_t i = 0; i < x0.numel(); ++i) {
        Tensor xp = x0, xm = x0;
        xp[i] += eps;
        xm[i] -= eps;
        double fp = f(Var(xp)).val()[0];
        double fm = f(Var(xm)).val()[0];
        numeric[i] = (fp - fm) / (2 * eps);
    }
    double num = 0, den = 0;
    for (int64_t i = 0; i < x0.numel(); ++i) {
        double d = analytic[i] - numeric[i];
        num += d * d;
        den += numeric[i] * numeric[i];
    }
    return std::sqrt(num) / std::max(1e-12, std::sqrt(den));
}

Tensor randn(std::vector<int> shape, uint64_t seed) {
    RandomStream rng(seed);
    return rng.randn(std::move(shape));
}

// squash any tensor to a scalar with fixed random weights so gradients reach
// every element
Var to_scalar(const Var& v, uint64_t seed = 99) {
    Tensor w = randn(v.shape(), seed);
    Var out = mul(v, Var(w));
    return sum_all(out);
}

} // namespace

TEST_CASE("random stream is deterministic and fork-independent") {
    RandomStream a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    RandomStream c(123);
    auto f1 = c.fork("noise", 0);
    auto f2 = c.fork("noise", 1);
    REQUIRE(f1.next_u64() != f2.next_u64());

    // normal moments sanity
    RandomStream g(7);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = g.normal();
        sum += x;
        sq += x * x;
    }
    REQUIRE(std::abs(sum / n) < 0.05);
    REQUIRE(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("elementwise op gradients match finite differences") {
    Tensor x = randn({3, 4}, 1);
    Tensor other = randn({3, 4}, 2);

    REQUIRE(grad_check([&](const Var& v) { return to_scalar(add(v, Var(other))); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(sub(Var(other), v)); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(mul(v, Var(other))); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(affine(v, 2.5, -1.0)); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(silu(v)); }, x) < 1e-5);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(sigmoid(v)); }, x) < 1e-5);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(reshape(v, {4, 3})); }, x) < 1e-6);
}

TEST_CASE("matmul family gradients") {
    Tensor a = randn({3, 5}, 3);
    Tensor b = randn({5, 4}, 4);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(matmul(v, Var(b))); }, a) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(matmul(Var(a), v)); }, b) < 1e-6);

    Tensor ba = randn({2, 3, 4}, 5);
    Tensor bb = randn({2, 4, 5}, 6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(bmm(v, Var(bb))); }, ba) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(bmm(Var(ba), v)); }, bb) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(transpose_last2(v)); }, ba) < 1e-6);

    Tensor x = randn({2, 3, 6}, 7);
    Tensor w = randn({4, 6}, 8);
    Tensor bias = randn({4}, 9);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(linear(v, Var(w), Var(bias))); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(linear(Var(x), v, Var(bias))); }, w) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(linear(Var(x), Var(w), v)); }, bias) < 1e-6);
}

TEST_CASE("conv2d gradients (input, weight, bias; strides and 1x1)") {
    Tensor x = randn({2, 3, 5, 5}, 10);
    Tensor w = randn({4, 3, 3, 3}, 11);
    Tensor b = randn({4}, 12);

    for (int stride : {1, 2}) {
        REQUIRE(grad_check([&](const Var& v) { return to_scalar(conv2d(v, Var(w), Var(b), stride, 1)); }, x) < 1e-6);
        REQUIRE(grad_check([&](const Var& v) { return to_scalar(conv2d(Var(x), v, Var(b), stride, 1)); }, w) < 1e-6);
        REQUIRE(grad_check([&](const Var& v) { return to_scalar(conv2d(Var(x), Var(w), v, stride, 1)); }, b) < 1e-6);
    }

    Tensor w1 = randn({2, 3, 1, 1}, 13);
    Tensor b1 = randn({2}, 14);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(conv2d(v, Var(w1), Var(b1), 1, 0)); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(conv2d(Var(x), v, Var(b1), 1, 0)); }, w1) < 1e-6);
}

TEST_CASE("group_norm gradients") {
    Tensor x = randn({2, 6, 3, 3}, 20);
    Tensor gamma = randn({6}, 21);
    Tensor beta = randn({6}, 22);
    REQUIRE(grad_check([&](const Var& v) {
                return to_scalar(group_norm(v, 3, Var(gamma), Var(beta)));
            }, x, 1e-5) < 1e-4);
    REQUIRE(grad_check([&](const Var& v) {
                return to_scalar(group_norm(Var(x), 3, v, Var(beta)));
            }, gamma) < 1e-5);
    REQUIRE(grad_check([&](const Var& v) {
                return to_scalar(group_norm(Var(x), 3, Var(gamma), v));
            }, beta) < 1e-5);
}

TEST_CASE("shape/selection op gradients") {
    Tensor x = randn({2, 4, 3, 3}, 30);
    Tensor v2 = randn({2, 4}, 31);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(add_channel_bias(v, Var(v2))); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(add_channel_bias(Var(x), v)); }, v2) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(upsample_nearest2x(v)); }, x) < 1e-6);

    Tensor a = randn({2, 2, 3, 3}, 32);
    Tensor b = randn({2, 3, 3, 3}, 33);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(concat_channels(v, Var(b))); }, a) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(concat_channels(Var(a), v)); }, b) < 1e-6);

    Tensor t3 = randn({3, 4, 5}, 34);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(select_batch(v, 1)); }, t3) < 1e-6);

    Tensor m = randn({6, 5}, 35);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(gather_cols(v, {0, 2, 2, 4})); }, m) < 1e-6);
}

TEST_CASE("softmax gradients and row sums") {
    Tensor x = randn({4, 6}, 40);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(softmax_lastdim(v)); }, x) < 1e-5);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(softmax_cols(v)); }, x) < 1e-5);

    Var y = softmax_lastdim(Var(x));
    for (int r = 0; r < 4; ++r) {
        double s = 0;
        for (int c = 0; c < 6; ++c) s += y.val().at2(r, c);
        REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
    Var yc = softmax_cols(Var(x));
    for (int c = 0; c < 6; ++c) {
        double s = 0;
        for (int r = 0; r < 4; ++r) s += yc.val().at2(r, c);
        REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("fixed blur: gradient, mass conservation, delta kernel") {
    Tensor kernel({3, 3});
    // normalized gaussian sigma=0.5
    double z = 0;
    for (int u = -1; u <= 1; ++u)
        for (int v = -1; v <= 1; ++v) {
            double k = std::exp(-(u * u + v * v) / (2 * 0.25));
            kernel.at2(u + 1, v + 1) = k;
            z += k;
        }
    for (auto& k : kernel.v) k /= z;

    Tensor x = randn({4 * 4, 3}, 50);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(blur_cols_fixed(v, 4, 4, kernel)); }, x) < 1e-6);

    // symmetric-reflect padding with a symmetric normalized kernel preserves
    // each column's total mass exactly
    Var y = blur_cols_fixed(Var(x), 4, 4, kernel);
    for (int k = 0; k < 3; ++k) {
        double sin = 0, sout = 0;
        for (int i = 0; i < 16; ++i) {
            sin += x.at2(i, k);
            sout += y.val().at2(i, k);
        }
        REQUIRE_THAT(sout, Catch::Matchers::WithinAbs(sin, 1e-12));
    }

    // delta kernel = identity
    Tensor delta({3, 3});
    delta.at2(1, 1) = 1.0;
    Var yd = blur_cols_fixed(Var(x), 4, 4, delta);
    for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(yd.val()[i] == x[i]);
}

TEST_CASE("max/mean/mse gradients") {
    Tensor x = randn({5, 3}, 60);
    REQUIRE(grad_check([&](const Var& v) { return to_scalar(max_cols(v), 61); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return max_all(v); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return mean_all(v); }, x) < 1e-6);
    REQUIRE(grad_check([&](const Var& v) { return sum_all(v); }, x) < 1e-6);

    Tensor target = randn({5, 3}, 62);
    REQUIRE(grad_check([&](const Var& v) { return mse(v, target); }, x) < 1e-6);
}

TEST_CASE("no-grad mode builds no graph") {
    Tensor x = randn({2, 2}, 70);
    Var vx(x, true);
    NoGradGuard ng;
    Var y = mul(vx, vx);
    REQUIRE_FALSE(y.requires_grad());
}

TEST_CASE("gradients accumulate across two backward calls") {
    Tensor x = randn({3}, 80);
    Var vx(x, true);
    Var y1 = sum_all(vx);
    backward(y1);
    Var y2 = sum_all(vx);
    backward(y2);
    for (int i = 0; i < 3; ++i) REQUIRE_THAT(vx.grad()[i], Catch::Matchers::WithinAbs(2.0, 1e-14));
}

TEST_CASE("adam decreases a quadratic") {
    RandomStream rng(90);
    Var w = make_param(rng.randn({8}));
    ParamMap pm{{"w", w}};
    Adam opt(pm, 0.05);
    Tensor target = rng.randn({8});
    double first = 0, last = 0;
    for (int it = 0; it < 200; ++it) {
        opt.zero_grad();
        Var loss = mse(w, target);
        if (it == 0) first = loss.val()[0];
        last = loss.val()[0];
        backward(loss);
        opt.step();
    }
    REQUIRE(last < 0.01 * first);
}

TEST_CASE("frozen parameters receive no gradient but pass gradients through") {
    RandomStream rng(91);
    Var w = make_param(rng.randn({4, 4}));
    set_requires_grad(w, false);
    Var x(rng.randn({4, 4}), true);
    Var y = sum_all(matmul(w, x));
    backward(y);
    REQUIRE(w.grad().v.empty());
    REQUIRE_FALSE(x.grad().v.empty());
    double gn = 0;
    for (auto g : x.grad().v) gn += std::abs(g);
    REQUIRE(gn > 0);
}
