#include <gtest/gtest.h>

#include <cmath>

#include "graphdet/gradcheck.hpp"
#include "graphdet/tensor.hpp"

using namespace graphdet;

namespace {

TensorD random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    TensorD t = TensorD::zeros(r, c);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// values with pairwise gaps well above the FD step, so max/argmax stays put
TensorD separated_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    TensorD t = TensorD::zeros(r, c);
    std::vector<int> order = rng.permutation(static_cast<int>(r * c));
    for (std::size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = 0.05 * order[i] + rng.uniform(-0.01, 0.01);
    return t;
}

}  // namespace

TEST(TensorOps, SoftmaxUniformRow) {
    TensorD x = TensorD::row({0.0, 0.0, 0.0});
    TensorD y = softmax_rows(x);
    for (double v : y.data) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(TensorOps, SoftmaxRowsSumToOneAndPositive) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TensorD x = random_tensor(5, 7, seed, -30.0, 30.0);
        TensorD y = softmax_rows(x);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double s = 0;
            for (std::size_t j = 0; j < y.cols(); ++j) {
                EXPECT_GT(y.at(i, j), 0.0);
                s += y.at(i, j);
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(TensorOps, MatmulIdentity) {
    TensorD eye = TensorD::zeros(3, 3);
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    TensorD a = random_tensor(3, 5, 42);
    TensorD out = matmul(eye, a);
    EXPECT_EQ(out.data, a.data);
}

TEST(TensorOps, SmoothL1Scalar) {
    TensorD x = TensorD::scalar(2.0);
    TensorD t = TensorD::scalar(0.0);
    EXPECT_DOUBLE_EQ(smooth_l1(x, t, 1.0).item(), 1.5);
    // quadratic regime
    EXPECT_DOUBLE_EQ(smooth_l1(TensorD::scalar(0.5), t, 1.0).item(), 0.125);
}

TEST(TensorOps, ShapeMismatchNamesOp) {
    TensorD a = TensorD::zeros(2, 3);
    TensorD b = TensorD::zeros(3, 3);
    try {
        add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[3,3]"), std::string::npos);
    }
    EXPECT_THROW(matmul(a, TensorD::zeros(4, 2)), ShapeError);
}

TEST(TensorOps, BroadcastRowColScalar) {
    TensorD a({2, 3}, {1, 2, 3, 4, 5, 6});
    TensorD row = TensorD::row({10, 20, 30});
    TensorD col({2, 1}, {100, 200});
    TensorD s = TensorD::scalar(2.0);
    EXPECT_EQ(add(a, row).data, (std::vector<double>{11, 22, 33, 14, 25, 36}));
    EXPECT_EQ(add(a, col).data, (std::vector<double>{101, 102, 103, 204, 205, 206}));
    EXPECT_EQ(mul(a, s).data, (std::vector<double>{2, 4, 6, 8, 10, 12}));
}

TEST(Backward, SumGivesOnes) {
    Tape<double> tape;
    TensorD x = tape.leaf(random_tensor(3, 4, 1));
    TensorD loss = sum(x);
    Gradients<double> g = tape.backward(loss);
    for (double v : g.grad(x).data) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Backward, HalfNormSquaredGivesX) {
    Tape<double> tape;
    TensorD x0 = random_tensor(2, 5, 7);
    TensorD x = tape.leaf(x0);
    TensorD loss = scale(sum(square(x)), 0.5);
    Gradients<double> g = tape.backward(loss);
    TensorD gx = g.grad(x);
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(gx.data[i], x0.data[i], 1e-12);
}

TEST(Backward, NonScalarLossThrows) {
    Tape<double> tape;
    TensorD x = tape.leaf(random_tensor(2, 2, 3));
    TensorD y = square(x);
    EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, DeterministicBitIdentical) {
    auto run = [] {
        Tape<double> tape;
        TensorD x = tape.leaf(random_tensor(4, 6, 99));
        TensorD w = tape.leaf(random_tensor(6, 3, 100));
        TensorD h = relu(matmul(x, w));
        TensorD loss = mean(square(h));
        Gradients<double> g = tape.backward(loss);
        return std::make_pair(g.grad(x).data, g.grad(w).data);
    };
    auto [gx1, gw1] = run();
    auto [gx2, gw2] = run();
    EXPECT_EQ(gx1, gx2);
    EXPECT_EQ(gw1, gw2);
}

TEST(GradCheck, SumIsExact) {
    TensorD x = random_tensor(3, 3, 5);
    // central differences are exact for a linear map; a larger step keeps
    // the subtraction out of rounding noise
    double err = grad_check([](Tape<double>& t, const TensorD& v) { (void)t; return sum(v); }, x, 0.25);
    EXPECT_LE(err, 1e-12);
}

TEST(GradCheck, EveryDifferentiableOp) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TensorD x = random_tensor(4, 5, seed * 31 + 1, -2.0, 2.0);
        TensorD sep = separated_tensor(4, 6, seed * 31 + 2);
        TensorD target = random_tensor(4, 5, seed * 31 + 3, -2.0, 2.0);
        TensorD w = random_tensor(5, 3, seed * 31 + 4);

        struct Case {
            const char* name;
            GradCheckFn fn;
            const TensorD* input;
        };
        const TensorD* xs = &x;
        const TensorD* ss = &sep;
        std::vector<Case> cases = {
            {"add", [&](Tape<double>&, const TensorD& v) { return sum(add(v, target)); }, xs},
            {"sub", [&](Tape<double>&, const TensorD& v) { return sum(square(sub(v, target))); }, xs},
            {"mul", [&](Tape<double>&, const TensorD& v) { return sum(mul(v, target)); }, xs},
            {"matmul", [&](Tape<double>&, const TensorD& v) { return sum(square(matmul(v, w))); }, xs},
            {"exp", [&](Tape<double>&, const TensorD& v) { return sum(exp(scale(v, 0.5))); }, xs},
            {"log", [&](Tape<double>&, const TensorD& v) { return sum(log(affine(v, 0.25, 2.0))); }, xs},
            {"sigmoid", [&](Tape<double>&, const TensorD& v) { return sum(square(sigmoid(v))); }, xs},
            {"softmax", [&](Tape<double>&, const TensorD& v) { return sum(square(softmax_rows(v))); }, xs},
            {"smooth_l1", [&](Tape<double>&, const TensorD& v) { return sum(smooth_l1(v, target)); }, xs},
            {"mean", [&](Tape<double>&, const TensorD& v) { return mean(square(v)); }, xs},
            {"norm2", [&](Tape<double>&, const TensorD& v) { return norm2(v); }, xs},
            {"pow", [&](Tape<double>&, const TensorD& v) { return sum(pow_const(square(v), 1.5)); }, xs},
            {"concat", [&](Tape<double>&, const TensorD& v) { return sum(square(concat(1, std::vector<TensorD>{v, square(v)}))); }, xs},
            {"transpose", [&](Tape<double>&, const TensorD& v) { return sum(square(matmul(transpose(v), v))); }, xs},
            {"gather", [&](Tape<double>&, const TensorD& v) { return sum(square(gather_rows(v, {0, 2, 2, 1}))); }, xs},
            {"ce", [&](Tape<double>&, const TensorD& v) { return sum(cross_entropy_rows(v, {0, 3, 1, 4})); }, xs},
            {"max_reduce", [&](Tape<double>&, const TensorD& v) { return sum(square(max_reduce(v))); }, ss},
            {"max_groups", [&](Tape<double>&, const TensorD& v) { return sum(square(max_groups(v, 2))); }, ss},
            {"sum_groups", [&](Tape<double>&, const TensorD& v) { return sum(square(sum_groups(v, 2))); }, xs},
        };
        for (auto& c : cases) {
            double err = grad_check(c.fn, *c.input);
            EXPECT_LE(err, 1e-4) << c.name << " seed " << seed;
        }
    }
}

// relu at random points (kink at 0 is measure-zero but keep inputs away from it)
TEST(GradCheck, Relu) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TensorD x = random_tensor(4, 4, seed + 77);
        for (auto& v : x.data)
            if (std::abs(v) < 1e-3) v += 0.01;
        double err = grad_check([](Tape<double>&, const TensorD& v) { return sum(square(relu(v))); }, x);
        EXPECT_LE(err, 1e-4) << "seed " << seed;
    }
}

TEST(TensorOps, MaxTiesPickLowestIndex) {
    // two equal maxima: gradient must flow to the first
    TensorD x({4, 1}, {1.0, 3.0, 3.0, 2.0});
    Tape<double> tape;
    TensorD xl = tape.leaf(x);
    TensorD loss = sum(max_reduce(xl));
    Gradients<double> g = tape.backward(loss);
    EXPECT_EQ(g.grad(xl).data, (std::vector<double>{0, 1, 0, 0}));
}

TEST(TensorOps, CrossEntropyMatchesManual) {
    TensorD logits({1, 3}, {1.0, 2.0, 0.5});
    double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
    TensorD ce = cross_entropy_rows(logits, {1});
    EXPECT_NEAR(ce.item(), lse - 2.0, 1e-12);
}

TEST(TensorOps, GroupOps) {
    TensorD x({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    EXPECT_EQ(sum_groups(x, 2).data, (std::vector<double>{4, 6, 12, 14}));
    EXPECT_EQ(max_groups(x, 2).data, (std::vector<double>{3, 4, 7, 8}));
    EXPECT_EQ(max_reduce(x).data, (std::vector<double>{7, 8}));
    EXPECT_THROW(sum_groups(x, 3), ShapeError);
}

TEST(TensorOps, ClampGradientGatesBoundary) {
    TensorD x({1, 3}, {-2.0, 0.5, 2.0});
    Tape<double> tape;
    TensorD xl = tape.leaf(x);
    TensorD loss = sum(clamp(xl, 0.0, 1.0));
    Gradients<double> g = tape.backward(loss);
    EXPECT_EQ(g.grad(xl).data, (std::vector<double>{0, 1, 0}));
}
