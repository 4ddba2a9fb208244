#include <gtest/gtest.h>

#include <tamiseg/distill.hpp>
#include <tamiseg/optim.hpp>

#include "grad_check.hpp"

using namespace tamiseg;
using test::check_gradients;
using test::random_tensor;
using Levels = std::vector<Tensor<double>>;

namespace {

Tensor<double> random_image(int size, std::uint64_t seed) {
    Rng rng(seed);
    return random_tensor({1, 3, size, size}, rng, 0.0, 1.0);
}

double token_norm(const Tensor<double>& t, int n, int y, int x) {
    double s = 0;
    for (int d = 0; d < t.shape().c; ++d) s += t.at(n, d, y, x) * t.at(n, d, y, x);
    return std::sqrt(s);
}

}  // namespace

TEST(HashTeacher, UnitNormTokensAtEveryStride) {
    HashTeacher<double> teacher(3, 16);
    const auto pyr = teacher.features(random_image(64, 1));
    for (int l = 0; l < 4; ++l) {
        const Shape s = pyr[l].shape();
        EXPECT_EQ(s, (Shape{1, 16, 64 / kLevelStrides[l], 64 / kLevelStrides[l]}));
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) EXPECT_NEAR(token_norm(pyr[l], 0, y, x), 1.0, 1e-6);
    }
}

TEST(HashTeacher, FrozenAndDeterministic) {
    HashTeacher<double> a(5), b(5), c(6);
    const auto img = random_image(32, 2);
    const auto pa = a.features(img), pb = b.features(img), pc = c.features(img);
    for (int l = 0; l < 4; ++l) {
        EXPECT_EQ(pa[l], pb[l]);
        EXPECT_FALSE(pa[l] == pc[l]);
    }
    EXPECT_EQ(a.identity(), "hash:5");
}

TEST(HashTeacher, LocalityOfOnePatchChange) {
    HashTeacher<double> teacher(7);
    auto img = random_image(64, 3);
    const auto before = teacher.features(img);
    const int py = 37, px = 21;
    img.at(0, 1, py, px) = 1.0 - img.at(0, 1, py, px);
    const auto after = teacher.features(img);
    for (int l = 0; l < 4; ++l) {
        const int s = kLevelStrides[l];
        for (int y = 0; y < 64 / s; ++y)
            for (int x = 0; x < 64 / s; ++x) {
                bool same = true;
                for (int d = 0; d < teacher.dim(); ++d) same &= before[l].at(0, d, y, x) == after[l].at(0, d, y, x);
                EXPECT_EQ(same, !(y == py / s && x == px / s)) << "level " << l << " token " << y << "," << x;
            }
    }
}

TEST(HashTeacher, RejectsBadSizes) {
    HashTeacher<double> teacher(1);
    EXPECT_THROW(teacher.features(Tensor<double>({1, 3, 40, 64})), ShapeError);
    EXPECT_THROW(make_teacher<double>("dino:1", 8), ConfigError);
    EXPECT_EQ(make_teacher<double>("hash:9", 8)->identity(), "hash:9");
}

TEST(Projection, ZeroWeightsGiveZeroTokens) {
    ParamStore<double> store;
    Rng rng(1);
    Projection<double> phi(store, "phi", 8, 4, rng);
    for (auto [_, v] : store.items()) v.mutable_value().fill(0);
    const auto out = phi(Var<double>::constant(random_tensor({1, 8, 4, 4}, rng)));
    EXPECT_EQ(out.shape(), (Shape{1, 4, 4, 4}));
    for (double v : out.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Projection, IdentitySetup) {
    ParamStore<double> store;
    Rng rng(2);
    Projection<double> phi(store, "phi", 3, 3, rng);
    Tensor<double> eye(Shape{3, 3, 1, 1});
    for (int i = 0; i < 3; ++i) eye.at(i, i, 0, 0) = 1;
    phi.first.weight.mutable_value() = eye;
    phi.second.weight.mutable_value() = eye;
    const auto x = Var<double>::constant(random_tensor({1, 3, 2, 2}, rng, 0.0, 1.0));
    EXPECT_EQ(phi(x).value(), x.value());
}

TEST(Projection, ChannelMismatch) {
    ParamStore<double> store;
    Rng rng(3);
    Projection<double> phi(store, "phi", 8, 4, rng);
    EXPECT_THROW(phi(Var<double>::constant(Tensor<double>({1, 6, 2, 2}))), ShapeError);
}

TEST(Projection, Gradient) {
    ParamStore<double> store;
    Rng rng(4);
    Projection<double> phi(store, "phi", 8, 4, rng);
    auto x = Var<double>::parameter(random_tensor({1, 8, 4, 4}, rng));
    const auto target = random_tensor({1, 4, 4, 4}, rng);
    auto loss = [&] { return distill_loss<double>({phi(x)}, std::vector<Tensor<double>>{target}); };
    const auto r = check_gradients(loss, {x, phi.first.weight, phi.first.bias, phi.second.weight, phi.second.bias});
    EXPECT_LT(r.rel_error, 1e-4);
}

TEST(DistillLoss, AlignedOrthogonalOpposite) {
    Rng rng(5);
    const auto t = random_tensor({1, 4, 2, 2}, rng);
    auto neg = t;
    for (auto& v : neg.values()) v = -v;
    EXPECT_NEAR(distill_loss<double>({Var<double>::constant(t)}, Levels{t}).item(), -1.0, 1e-7);
    EXPECT_NEAR(distill_loss<double>({Var<double>::constant(neg)}, Levels{t}).item(), 1.0, 1e-7);
    // Orthogonal: teacher along channel 0, projection along channel 1.
    Tensor<double> a(Shape{1, 2, 1, 3}), b(Shape{1, 2, 1, 3});
    for (int x = 0; x < 3; ++x) {
        a.at(0, 0, 0, x) = 1;
        b.at(0, 1, 0, x) = 2;
    }
    EXPECT_NEAR(distill_loss<double>({Var<double>::constant(b)}, Levels{a}).item(), 0.0, 1e-12);
}

TEST(DistillLoss, ScaleInvariantAndBounded) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor<double>> t{random_tensor({2, 5, 2, 2}, rng), random_tensor({2, 5, 1, 1}, rng)};
        std::vector<Tensor<double>> p{random_tensor({2, 5, 2, 2}, rng), random_tensor({2, 5, 1, 1}, rng)};
        auto scaled = p;
        for (auto& level : scaled)
            for (auto& v : level.values()) v *= 3.7;
        auto vars = [](const std::vector<Tensor<double>>& ts) {
            std::vector<Var<double>> out;
            for (const auto& x : ts) out.push_back(Var<double>::constant(x));
            return out;
        };
        const double l = distill_loss(vars(p), t).item();
        EXPECT_NEAR(distill_loss(vars(scaled), t).item(), l, 1e-7);
        EXPECT_GE(l, -1.0);
        EXPECT_LE(l, 1.0);
    }
}

TEST(DistillLoss, ZeroTokensContributeNothing) {
    Tensor<double> t(Shape{1, 2, 1, 2}, std::vector<double>{1, 1, 0, 0});
    Tensor<double> p(Shape{1, 2, 1, 2}, std::vector<double>{2, 0, 0, 0});
    // Token 0 aligned (cos 1), token 1 projected to zero (cos 0): loss = -1/2.
    auto v = Var<double>::parameter(p);
    const auto loss = distill_loss<double>({v}, Levels{t});
    EXPECT_NEAR(loss.item(), -0.5, 1e-7);
    backward(loss);
    EXPECT_TRUE(v.grad().all_finite());
}

TEST(DistillLoss, GradientTwoLevels) {
    Rng rng(7);
    auto p1 = Var<double>::parameter(random_tensor({1, 4, 2, 2}, rng));
    auto p2 = Var<double>::parameter(random_tensor({1, 4, 1, 1}, rng));
    const std::vector<Tensor<double>> t{random_tensor({1, 4, 2, 2}, rng), random_tensor({1, 4, 1, 1}, rng)};
    const auto r = check_gradients([&] { return distill_loss<double>({p1, p2}, t); }, {p1, p2});
    EXPECT_LT(r.rel_error, 1e-4);
}

TEST(DistillLoss, MismatchedGrids) {
    EXPECT_THROW(distill_loss<double>({Var<double>::constant(Tensor<double>({1, 4, 2, 2}))},
                                      Levels{Tensor<double>({1, 4, 1, 2})}),
                 ShapeError);
}
