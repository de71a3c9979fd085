#include <cmath>
#include <vector>

#include "doctest.h"
#include "sliceterp/conv.hpp"
#include "sliceterp/tensor.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sliceterp;
using testsupport::max_grad_rel_error;

namespace {

Tensor64 rand_tensor(std::vector<int> shape, Rng& rng, bool rg = true) {
    auto t = Tensor64::zeros(std::move(shape), rg);
    for (auto& v : t.values_mut()) v = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv2d ones kernel center value") {
    auto in = Tensor::filled({1, 1, 3, 3}, 1.0f);
    auto w = Tensor::filled({1, 1, 3, 3}, 1.0f);
    auto b = Tensor::zeros({1});
    auto out = conv2d(in, w, b, 1, 1);
    CHECK(out.shape() == std::vector<int>{1, 1, 3, 3});
    CHECK(out.values()[4] == doctest::Approx(9.0f));  // center: all nine ones
    CHECK(out.values()[0] == doctest::Approx(4.0f));  // corner: 2x2 overlap
}

TEST_CASE("conv2d 1x1 unit kernel is identity") {
    Rng rng(11);
    auto in = Tensor::zeros({2, 1, 4, 5});
    for (auto& v : in.values_mut()) v = static_cast<float>(rng.uniform(-2, 2));
    auto w = Tensor::filled({1, 1, 1, 1}, 1.0f);
    auto b = Tensor::zeros({1});
    auto out = conv2d(in, w, b, 1, 0);
    CHECK(out.values() == in.values());
}

TEST_CASE("conv2d matches naive loop oracle") {
    Rng rng(42);
    auto in = rand_tensor({1, 2, 5, 5}, rng, false);
    auto w = rand_tensor({3, 2, 3, 3}, rng, false);
    auto b = rand_tensor({3}, rng, false);
    for (int stride : {1, 2})
        for (int padding : {0, 1}) {
            auto out = conv2d(in, w, b, stride, padding);
            auto expect = testsupport::conv2d_oracle(in.values(), 1, 2, 5, 5, w.values(), 3, 3,
                                                     3, b.values(), stride, padding);
            REQUIRE(out.values().size() == expect.size());
            for (size_t i = 0; i < expect.size(); ++i)
                CHECK(out.values()[i] == doctest::Approx(expect[i]).epsilon(1e-5));
        }
}

TEST_CASE("conv2d rejects bad arguments") {
    auto in = Tensor::zeros({1, 2, 5, 5});
    auto w = Tensor::zeros({3, 3, 3, 3});  // channel mismatch
    auto b = Tensor::zeros({3});
    CHECK_THROWS_AS(conv2d(in, w, b, 1, 1), ShapeError);
    auto w2 = Tensor::zeros({3, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(in, w2, b, 0, 1), std::invalid_argument);
    auto big = Tensor::zeros({1, 2, 2, 2});
    CHECK_THROWS_AS(conv2d(big, w2, b, 1, 0), ShapeError);
}

TEST_CASE("conv_transpose2d disjoint tiling of ones") {
    auto in = Tensor::filled({1, 1, 2, 2}, 1.0f);
    auto w = Tensor::filled({1, 1, 2, 2}, 1.0f);
    auto b = Tensor::zeros({1});
    auto out = conv_transpose2d(in, w, b, 2);
    CHECK(out.shape() == std::vector<int>{1, 1, 4, 4});
    for (float v : out.values()) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("conv_transpose2d matches scatter oracle") {
    Rng rng(7);
    auto in = rand_tensor({2, 3, 4, 4}, rng, false);
    auto w = rand_tensor({3, 2, 2, 2}, rng, false);
    auto b = rand_tensor({2}, rng, false);
    auto out = conv_transpose2d(in, w, b, 2);
    auto expect = testsupport::conv_transpose2d_oracle(in.values(), 2, 3, 4, 4, w.values(), 2, 2,
                                                       2, b.values(), 2);
    REQUIRE(out.values().size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i)
        CHECK(out.values()[i] == doctest::Approx(expect[i]).epsilon(1e-5));
}

TEST_CASE("conv_transpose2d input gradient equals conv2d of upstream gradient") {
    Rng rng(13);
    auto in = rand_tensor({1, 2, 3, 3}, rng, true);
    auto w = rand_tensor({2, 3, 2, 2}, rng, false);
    auto b = Tensor64::zeros({3});
    auto out = conv_transpose2d(in, w, b, 2);
    auto s = sum(out);
    backward(s);
    // upstream gradient is all ones; conv2d(ones, w) with matching layout
    auto ones = Tensor64::filled(out.shape(), 1.0);
    // conv2d wants weight [Cout=2(in ch), Cin=3, kh, kw]; same array reinterpreted
    auto w_conv = Tensor64::from_values({2, 3, 2, 2}, w.values());
    auto ref = conv2d(ones, w_conv, Tensor64::zeros({2}), 2, 0);
    REQUIRE(in.grad().size() == ref.values().size());
    for (size_t i = 0; i < ref.values().size(); ++i)
        CHECK(in.grad()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-9));
}

TEST_CASE("conv_transpose2d is the exact adjoint of conv2d") {
    // <conv(x), y> == <x, convT(y)> with a shared kernel
    Rng rng(99);
    for (int seed = 0; seed < 5; ++seed) {
        Rng r2(seed * 31 + 5);
        auto x = rand_tensor({1, 3, 6, 6}, r2, false);
        auto kern = rand_tensor({4, 3, 2, 2}, r2, false);  // conv layout [Cout,Cin,kh,kw]
        auto zero4 = Tensor64::zeros({4});
        auto zero3 = Tensor64::zeros({3});
        int stride = 2;
        auto cx = conv2d(x, kern, zero4, stride, 0);
        auto y = rand_tensor(cx.shape(), r2, false);
        // same array viewed in convT layout [Cin=4, Cout=3, kh, kw]
        auto kern_t = Tensor64::from_values({4, 3, 2, 2}, kern.values());
        auto cty = conv_transpose2d(y, kern_t, zero3, stride);
        double lhs = 0.0, rhs = 0.0;
        for (size_t i = 0; i < cx.values().size(); ++i) lhs += cx.values()[i] * y.values()[i];
        for (size_t i = 0; i < x.values().size(); ++i) rhs += x.values()[i] * cty.values()[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
    }
}

TEST_CASE("maxpool2d basics") {
    auto in = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
    auto out = maxpool2d(in);
    CHECK(out.values()[0] == doctest::Approx(4.0f));

    auto odd = Tensor::zeros({1, 1, 3, 4});
    CHECK_THROWS_AS(maxpool2d(odd), std::invalid_argument);
}

TEST_CASE("maxpool2d tie-break routes gradient to first cell") {
    auto in = Tensor::filled({1, 1, 4, 4}, 0.5f, true);
    auto out = maxpool2d(in);
    for (float v : out.values()) CHECK(v == doctest::Approx(0.5f));
    backward(sum(out));
    const auto& g = in.grad();
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            float expect = (y % 2 == 0 && x % 2 == 0) ? 1.0f : 0.0f;
            CHECK(g[static_cast<size_t>(y) * 4 + x] == doctest::Approx(expect));
        }
}

TEST_CASE("maxpool2d matches window-scan oracle") {
    Rng rng(3);
    auto in = rand_tensor({1, 2, 8, 8}, rng, false);
    auto out = maxpool2d(in);
    auto expect = testsupport::maxpool2d_oracle(in.values(), 1, 2, 8, 8);
    for (size_t i = 0; i < expect.size(); ++i)
        CHECK(out.values()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("activations") {
    auto x = Tensor::from_values({4}, {-1.0f, 2.0f, 0.0f, -3.0f});
    auto r = relu(x);
    CHECK(r.values()[0] == 0.0f);
    CHECK(r.values()[1] == 2.0f);
    auto l = leaky_relu(x, 0.2);
    CHECK(l.values()[0] == doctest::Approx(-0.2f));
    CHECK(l.values()[1] == doctest::Approx(2.0f));
    auto s = sigmoid(Tensor::from_values({1}, {0.0f}));
    CHECK(s.values()[0] == doctest::Approx(0.5f));
}

TEST_CASE("batchnorm2d standardizes in train mode") {
    // one channel, batch values with mean 5 and variance 4
    auto x = Tensor::from_values({1, 1, 2, 2}, {3.0f, 7.0f, 3.0f, 7.0f}, false);
    auto gamma = Tensor::filled({1}, 1.0f);
    auto beta = Tensor::zeros({1});
    std::vector<float> rm(1, 0.0f), rv(1, 1.0f);
    auto y = batchnorm2d(x, gamma, beta, rm, rv, BnMode::Train, 0.1, 0.0);
    double m = 0, v = 0;
    for (float a : y.values()) m += a;
    m /= 4;
    for (float a : y.values()) v += (a - m) * (a - m);
    v /= 4;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-5));
    // running stats moved toward batch stats
    CHECK(rm[0] == doctest::Approx(0.9f * 0.0f + 0.1f * 5.0f));
    CHECK(rv[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 4.0f));
}

TEST_CASE("batchnorm2d affine transform") {
    auto x = Tensor::from_values({1, 1, 2, 2}, {-1.0f, 1.0f, -1.0f, 1.0f});
    auto gamma = Tensor::filled({1}, 2.0f);
    auto beta = Tensor::filled({1}, 3.0f);
    std::vector<float> rm(1, 0.0f), rv(1, 1.0f);
    auto y = batchnorm2d(x, gamma, beta, rm, rv, BnMode::Train, 0.1, 0.0);
    double m = 0;
    for (float a : y.values()) m += a;
    m /= 4;
    double sd = 0;
    for (float a : y.values()) sd += (a - m) * (a - m);
    sd = std::sqrt(sd / 4);
    CHECK(m == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(sd == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("batchnorm2d rejects channel mismatch and zero batch") {
    auto x = Tensor::zeros({1, 2, 2, 2});
    auto gamma = Tensor::filled({3}, 1.0f);
    auto beta = Tensor::zeros({3});
    std::vector<float> rm(3, 0.0f), rv(3, 1.0f);
    CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, rm, rv, BnMode::Train), ShapeError);
}

TEST_CASE("batchnorm2d gradient vs finite differences") {
    Rng rng(17);
    auto x = rand_tensor({2, 2, 3, 3}, rng, true);
    auto gamma = rand_tensor({2}, rng, true);
    auto beta = rand_tensor({2}, rng, true);
    for (auto mode : {BnMode::Train, BnMode::Eval}) {
        auto build = [&]() {
            std::vector<double> rm(2, 0.1), rv(2, 0.8);
            auto y = batchnorm2d(x, gamma, beta, rm, rv, mode, 0.1, 1e-5);
            return mse_loss(y, Tensor64::filled(y.shape(), 0.3));
        };
        CHECK(max_grad_rel_error(build, {x, gamma, beta}, rng) < 1e-3);
    }
}

TEST_CASE("channel_concat stacks a then b and splits gradient") {
    Rng rng(5);
    auto a = rand_tensor({1, 2, 3, 3}, rng, true);
    auto b = rand_tensor({1, 3, 3, 3}, rng, true);
    auto c = channel_concat(a, b);
    CHECK(c.shape() == std::vector<int>{1, 5, 3, 3});
    for (int i = 0; i < 18; ++i) CHECK(c.values()[static_cast<size_t>(i)] == a.values()[static_cast<size_t>(i)]);
    for (int i = 0; i < 27; ++i) CHECK(c.values()[static_cast<size_t>(18 + i)] == b.values()[static_cast<size_t>(i)]);

    auto big = Tensor64::zeros({1, 64, 8, 8});
    auto big2 = Tensor64::zeros({1, 64, 8, 8});
    CHECK(channel_concat(big, big2).shape() == std::vector<int>{1, 128, 8, 8});

    auto bad = Tensor64::zeros({1, 2, 4, 4});
    CHECK_THROWS_AS(channel_concat(a, bad), ShapeError);

    backward(sum(mul(c, c)));
    for (size_t i = 0; i < a.values().size(); ++i)
        CHECK(a.grad()[i] == doctest::Approx(2.0 * a.values()[i]));
    for (size_t i = 0; i < b.values().size(); ++i)
        CHECK(b.grad()[i] == doctest::Approx(2.0 * b.values()[i]));
}

TEST_CASE("attention with zero gate is the identity") {
    Rng rng(23);
    int C = 8;
    auto x = rand_tensor({1, C, 4, 4}, rng, false);
    auto wq = rand_tensor({1, C, 1, 1}, rng, false);
    auto bq = rand_tensor({1}, rng, false);
    auto wk = rand_tensor({1, C, 1, 1}, rng, false);
    auto bk = rand_tensor({1}, rng, false);
    auto wv = rand_tensor({C, C, 1, 1}, rng, false);
    auto bv = rand_tensor({C}, rng, false);
    auto gamma = Tensor64::zeros({1});
    auto y = softmax_matmul_attention(x, wq, bq, wk, bk, wv, bv, gamma, 8);
    CHECK(y.values() == x.values());
}

TEST_CASE("attention weights per query sum to one") {
    Rng rng(29);
    auto e = rand_tensor({2, 6, 6}, rng, false);
    auto a = softmax_lastdim(e);
    for (int r = 0; r < 12; ++r) {
        double s = 0;
        for (int j = 0; j < 6; ++j) s += a.values()[static_cast<size_t>(r) * 6 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("attention matches dense matrix oracle") {
    Rng rng(31);
    int C = 8, H = 4, W = 4, Cr = 1;
    auto x = rand_tensor({1, C, H, W}, rng, false);
    auto wq = rand_tensor({Cr, C, 1, 1}, rng, false);
    auto bq = rand_tensor({Cr}, rng, false);
    auto wk = rand_tensor({Cr, C, 1, 1}, rng, false);
    auto bk = rand_tensor({Cr}, rng, false);
    auto wv = rand_tensor({C, C, 1, 1}, rng, false);
    auto bv = rand_tensor({C}, rng, false);
    auto gamma = Tensor64::from_values({1}, {0.7});
    auto y = softmax_matmul_attention(x, wq, bq, wk, bk, wv, bv, gamma, 8);
    auto expect = testsupport::attention_oracle(x.values(), 1, C, H, W, wq.values(), bq.values(),
                                                wk.values(), bk.values(), wv.values(),
                                                bv.values(), Cr, 0.7);
    for (size_t i = 0; i < expect.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-5));
}

TEST_CASE("attention rejects channels not divisible by reduction") {
    auto x = Tensor64::zeros({1, 6, 4, 4});
    auto w = Tensor64::zeros({1, 6, 1, 1});
    auto b = Tensor64::zeros({1});
    auto wv = Tensor64::zeros({6, 6, 1, 1});
    auto bv = Tensor64::zeros({6});
    auto g = Tensor64::zeros({1});
    CHECK_THROWS_AS(softmax_matmul_attention(x, w, b, w, b, wv, bv, g, 8), ShapeError);
}

TEST_CASE("losses analytic values") {
    Rng rng(37);
    auto x = rand_tensor({3, 5}, rng, false);
    CHECK(l1_loss(x, x).item() == doctest::Approx(0.0));

    auto logits = Tensor::zeros({1});
    auto labels = Tensor::filled({1}, 1.0f);
    CHECK(bce_with_logits(logits, labels).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    auto a = Tensor::filled({2, 8}, 0.5f);
    auto b = Tensor::filled({2, 8}, 0.6f);
    CHECK(mse_loss(a, b).item() == doctest::Approx(0.01f).epsilon(1e-6));

    auto bad = Tensor::zeros({2, 7});
    CHECK_THROWS_AS(mse_loss(a, bad), ShapeError);
}

TEST_CASE("backward populates gradients") {
    auto x = Tensor::from_values({4}, {1, 2, 3, 4}, true);
    backward(sum(x));
    for (float g : x.grad()) CHECK(g == doctest::Approx(1.0f));
}

TEST_CASE("backward analytic gradient of scalar mse") {
    // loss = (w*x - y)^2 => dL/dw = 2*x*(w*x - y)
    auto w = Tensor::from_values({1}, {0.7f}, true);
    auto x = Tensor::from_values({1}, {2.0f});
    auto y = Tensor::from_values({1}, {3.0f});
    auto loss = mse_loss(mul(w, x), y);
    backward(loss);
    float expect = 2.0f * 2.0f * (0.7f * 2.0f - 3.0f);
    CHECK(w.grad()[0] == doctest::Approx(expect));
}

TEST_CASE("backward twice without reset is an error") {
    auto x = Tensor::from_values({2}, {1, 2}, true);
    auto loss = sum(x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::invalid_argument);
}

TEST_CASE("backward on detached graph warns and is a no-op") {
    auto x = Tensor::from_values({1}, {5.0f});  // requires_grad = false
    auto loss = sum(x);
    CHECK_NOTHROW(backward(loss));
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("backward rejects non-scalar loss") {
    auto x = Tensor::from_values({2}, {1, 2}, true);
    auto y = mul(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("gradient accumulates across separate backward calls until reset") {
    auto x = Tensor::from_values({2}, {1, 2}, true);
    backward(sum(x));
    backward(sum(x));
    for (float g : x.grad()) CHECK(g == doctest::Approx(2.0f));
    x.zero_grad();
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("forward passes are pure") {
    Rng rng(41);
    auto x = rand_tensor({1, 4, 6, 6}, rng, false);
    auto w = rand_tensor({4, 4, 3, 3}, rng, false);
    auto b = rand_tensor({4}, rng, false);
    auto y1 = relu(conv2d(x, w, b, 1, 1));
    auto y2 = relu(conv2d(x, w, b, 1, 1));
    CHECK(y1.values() == y2.values());
}

TEST_CASE("finite-difference gradient check across all ops, 20 seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        // conv2d
        {
            auto x = rand_tensor({1, 2, 5, 5}, rng);
            auto w = rand_tensor({3, 2, 3, 3}, rng);
            auto b = rand_tensor({3}, rng);
            auto t = rand_tensor({1, 3, 5, 5}, rng, false);
            auto build = [&]() { return mse_loss(conv2d(x, w, b, 1, 1), t); };
            CHECK(max_grad_rel_error(build, {x, w, b}, rng) < 1e-3);
        }
        // conv_transpose2d
        {
            auto x = rand_tensor({1, 3, 3, 3}, rng);
            auto w = rand_tensor({3, 2, 2, 2}, rng);
            auto b = rand_tensor({2}, rng);
            auto t = rand_tensor({1, 2, 6, 6}, rng, false);
            auto build = [&]() { return mse_loss(conv_transpose2d(x, w, b, 2), t); };
            CHECK(max_grad_rel_error(build, {x, w, b}, rng) < 1e-3);
        }
        // maxpool + relu + leaky + sigmoid chain
        {
            auto x = rand_tensor({1, 2, 4, 4}, rng);
            auto build = [&]() {
                auto y = maxpool2d(x);
                return mean(sigmoid(leaky_relu(relu(y), 0.2)));
            };
            CHECK(max_grad_rel_error(build, {x}, rng) < 1e-3);
        }
        // concat + mul + l1
        {
            auto a = rand_tensor({1, 2, 3, 3}, rng);
            auto b = rand_tensor({1, 2, 3, 3}, rng);
            auto t = rand_tensor({1, 4, 3, 3}, rng, false);
            auto build = [&]() { return l1_loss(channel_concat(a, b), t); };
            CHECK(max_grad_rel_error(build, {a, b}, rng) < 1e-3);
        }
        // attention
        {
            int C = 8;
            auto x = rand_tensor({1, C, 3, 3}, rng);
            auto wq = rand_tensor({1, C, 1, 1}, rng);
            auto bq = rand_tensor({1}, rng);
            auto wk = rand_tensor({1, C, 1, 1}, rng);
            auto bk = rand_tensor({1}, rng);
            auto wv = rand_tensor({C, C, 1, 1}, rng);
            auto bv = rand_tensor({C}, rng);
            auto gamma = rand_tensor({1}, rng);
            auto t = rand_tensor({1, C, 3, 3}, rng, false);
            auto build = [&]() {
                return mse_loss(softmax_matmul_attention(x, wq, bq, wk, bk, wv, bv, gamma, 8), t);
            };
            CHECK(max_grad_rel_error(build, {x, wq, bq, wk, bk, wv, bv, gamma}, rng, 6) < 1e-3);
        }
        // linear + bce
        {
            auto x = rand_tensor({4, 6}, rng);
            auto w = rand_tensor({3, 6}, rng);
            auto b = rand_tensor({3}, rng);
            auto labels = Tensor64::filled({4, 3}, 1.0);
            auto build = [&]() { return bce_with_logits(linear(x, w, b), labels); };
            CHECK(max_grad_rel_error(build, {x, w, b}, rng) < 1e-3);
        }
        // add_channel_bias + scale_gate + softmax + bmm + transpose
        {
            auto x = rand_tensor({2, 3, 4, 4}, rng);
            auto bias = rand_tensor({2, 3}, rng);
            auto gate = rand_tensor({1}, rng);
            auto t = rand_tensor({2, 3, 4, 4}, rng, false);
            auto build = [&]() {
                auto y = add_channel_bias(x, bias);
                auto m = reshape(y, {2, 3, 16});
                auto att = softmax_lastdim(bmm(transpose_last2(m), m));  // [2,16,16]
                auto z = reshape(bmm(m, att), {2, 3, 4, 4});
                return l1_loss(scale_gate(z, gate), t);
            };
            CHECK(max_grad_rel_error(build, {x, bias, gate}, rng, 8) < 1e-3);
        }
    }
}

TEST_SUITE_END();
