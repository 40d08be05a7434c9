#include <gtest/gtest.h>

#include <cmath>

#include "graphdet/completion.hpp"
#include "graphdet/gradcheck.hpp"

using namespace graphdet;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double extent = 1.5) {
    Rng rng(seed);
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i)
        c.points.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent)});
    return c;
}

CompletionConfig tiny_config() {
    CompletionConfig cfg;
    cfg.m1 = 4;
    cfg.m2 = 8;
    cfg.m = 16;
    cfg.encoder_points = 16;
    cfg.min_points = 8;
    cfg.k = 4;
    cfg.f_width = 12;
    cfg.latent = 16;
    cfg.fc1 = 16;
    cfg.fc2 = 12;
    cfg.fc3 = 8;
    cfg.edge_hidden = 8;
    return cfg;
}

void zero_params(ParamStore<double>& store) {
    for (const auto& n : store.names()) {
        auto& t = store.get(n);
        std::fill(t.data.begin(), t.data.end(), 0.0);
    }
}

}  // namespace

TEST(Chamfer, IdenticalSetsGiveZero) {
    TensorD a = random_cloud(20, 1).coords_tensor<double>();
    EXPECT_DOUBLE_EQ(chamfer(a, a).item(), 0.0);
}

TEST(Chamfer, HandComputedPairs) {
    TensorD a({1, 3}, {0, 0, 0});
    TensorD b({1, 3}, {3, 4, 0});
    // 25 + 25, by hand
    EXPECT_DOUBLE_EQ(chamfer(a, b).item(), 50.0);

    TensorD c({2, 3}, {0, 0, 0, 1, 0, 0});
    TensorD d({1, 3}, {0, 0, 0});
    // exhaustive table: (0+1)/2 + 0/1
    EXPECT_DOUBLE_EQ(chamfer(c, d).item(), 0.5);
}

TEST(Chamfer, EmptySetThrows) {
    TensorD a({1, 3}, {0, 0, 0});
    TensorD empty = TensorD::zeros(0, 3);
    EXPECT_THROW(chamfer(a, empty), DataError);
    EXPECT_THROW(chamfer(empty, a), DataError);
}

TEST(Chamfer, GradMatchesFiniteDifferences) {
    TensorD target = random_cloud(12, 3).coords_tensor<double>();
    TensorD x = random_cloud(9, 4).coords_tensor<double>();
    double err = grad_check(
        [&](Tape<double>&, const TensorD& v) { return chamfer(v, target); }, x);
    EXPECT_LE(err, 1e-5);
    // and through the second argument
    double err2 = grad_check(
        [&](Tape<double>&, const TensorD& v) { return chamfer(target, v); }, x);
    EXPECT_LE(err2, 1e-5);
}

TEST(CompletionLossEq, WeightsExactlyAsStated) {
    CompletionConfig cfg = tiny_config();
    PointCloud full = random_cloud(40, 5);
    PointCloud missing = random_cloud(20, 6);
    CompletionSample s = make_completion_sample(random_cloud(24, 7), full, missing, cfg, 0);

    // perfect prediction -> 0
    PpdOutput<double> perfect{s.target_coarse.coords_tensor<double>(), s.target_middle.coords_tensor<double>(),
                              s.target_fine.coords_tensor<double>()};
    EXPECT_DOUBLE_EQ(completion_loss(perfect, s, 0.5).item(), 0.0);

    // only the coarse level wrong: single-point pair at distance 1 makes
    // cd1 = 1 + 1 = 2; with alpha = 0.5 the loss is exactly 1.0
    CompletionSample tiny = s;
    PointCloud one;
    one.points = {{0, 0, 0}};
    tiny.target_coarse = one;
    PointCloud pred_pt;
    pred_pt.points = {{1, 0, 0}};
    PpdOutput<double> out{pred_pt.coords_tensor<double>(), s.target_middle.coords_tensor<double>(),
                          s.target_fine.coords_tensor<double>()};
    EXPECT_DOUBLE_EQ(completion_loss(out, tiny, 0.5).item(), 1.0);

    // alpha = 0 -> only the fine term
    PpdOutput<double> fine_only{pred_pt.coords_tensor<double>(), pred_pt.coords_tensor<double>(),
                                s.target_fine.coords_tensor<double>()};
    EXPECT_DOUBLE_EQ(completion_loss(fine_only, s, 0.0).item(), 0.0);
}

TEST(TotalLoss, WeightedSum) {
    TensorD lc = TensorD::scalar(2.0);
    TensorD lg = TensorD::scalar(5.0);
    EXPECT_DOUBLE_EQ(total_loss(lc, lg, 1.0, 0.01).item(), 2.05);
    EXPECT_DOUBLE_EQ(total_loss(lc, lg, 1.0, 0.0).item(), 2.0);
    EXPECT_DOUBLE_EQ(total_loss(lc, lg, 0.0, 1.0).item(), 5.0);
    EXPECT_THROW(total_loss(lc, lg, -1.0, 0.0), ConfigError);
}

TEST(Mrge, DuplicatePointsStayFinite) {
    CompletionConfig cfg = tiny_config();
    PointCloud c;
    for (int i = 0; i < 20; ++i) c.points.push_back({1.0, 2.0, 3.0});
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 3, 0, {}};
    MrgeResult<double> r = mrge_encode(ctx, "pc.mrge", c, cfg);
    for (double v : r.latent.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Mrge, PermutationInvariantLatent) {
    CompletionConfig cfg = tiny_config();
    PointCloud c = random_cloud(30, 9);
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 4, 0, {}};
    MrgeResult<double> r1 = mrge_encode(ctx, "pc.mrge", c, cfg);

    Rng rng(17);
    std::vector<int> perm = rng.permutation(30);
    ModelCtx<double> ctx2{&store, nullptr, 4, 0, {}};
    MrgeResult<double> r2 = mrge_encode(ctx2, "pc.mrge", c.subset(perm), cfg);
    for (std::size_t i = 0; i < r1.latent.size(); ++i)
        EXPECT_NEAR(r1.latent.data[i], r2.latent.data[i], 1e-5);
}

TEST(Mrge, PaddingFlaggedForTinyInput) {
    CompletionConfig cfg = tiny_config();
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 5, 0, {}};
    MrgeResult<double> r = mrge_encode(ctx, "pc.mrge", random_cloud(5, 10), cfg);
    EXPECT_TRUE(r.padded);
    MrgeResult<double> r2 = mrge_encode(ctx, "pc.mrge", random_cloud(12, 10), cfg);
    EXPECT_FALSE(r2.padded);
}

// Brute-force edge enumeration of the whole encoder on a fixed toy cloud.
// View membership comes from farthest_point_sample (checked in test_geom);
// everything downstream is recomputed with plain scalar loops.
TEST(Mrge, MatchesBruteForceEdgeOracle) {
    CompletionConfig cfg = tiny_config();
    cfg.encoder_points = 8;
    cfg.min_points = 4;
    cfg.k = 3;
    PointCloud c = random_cloud(8, 21);

    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 6, 0, {}};
    MrgeResult<double> got = mrge_encode(ctx, "pc.mrge", c, cfg);

    auto matvec_relu = [](const TensorD& w, const TensorD& b, const std::vector<double>& x, bool act) {
        std::vector<double> y(w.cols());
        for (std::size_t j = 0; j < w.cols(); ++j) {
            y[j] = b.data[j];
            for (std::size_t i = 0; i < w.rows(); ++i) y[j] += x[i] * w.at(i, j);
            if (act) y[j] = std::max(0.0, y[j]);
        }
        return y;
    };

    std::vector<double> concat_latent;
    const std::size_t sizes[3] = {8, 4, 2};
    for (std::size_t vi = 0; vi < 3; ++vi) {
        PointCloud view = c.subset(farthest_point_sample(c, sizes[vi], mix_seed(0, vi)));
        const std::size_t n = view.size();
        const std::size_t k = std::min(cfg.k, n - 1);
        const std::string p = "pc.mrge.view" + std::to_string(vi) + ".edge";
        const TensorD& w0 = store.get(p + ".w0");
        const TensorD& b0 = store.get(p + ".b0");
        const TensorD& w1 = store.get(p + ".w1");
        const TensorD& b1 = store.get(p + ".b1");

        std::vector<double> point_feat(n * cfg.f_width, -1e300);
        for (std::size_t i = 0; i < n; ++i) {
            // exhaustive k-NN for this vertex
            std::vector<std::pair<double, int>> d;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) d.push_back({(view.points[j] - view.points[i]).norm2(), static_cast<int>(j)});
            std::sort(d.begin(), d.end());
            for (std::size_t e = 0; e < k; ++e) {
                const Vec3 pi = view.points[i];
                const Vec3 pj = view.points[static_cast<std::size_t>(d[e].second)];
                std::vector<double> in{pi.x, pi.y, pi.z, pj.x - pi.x, pj.y - pi.y, pj.z - pi.z};
                std::vector<double> h = matvec_relu(w0, b0, in, true);
                std::vector<double> o = matvec_relu(w1, b1, h, true);
                for (std::size_t f = 0; f < cfg.f_width; ++f)
                    point_feat[i * cfg.f_width + f] = std::max(point_feat[i * cfg.f_width + f], o[f]);
            }
        }
        for (std::size_t f = 0; f < cfg.f_width; ++f) {
            double mx = -1e300;
            for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, point_feat[i * cfg.f_width + f]);
            concat_latent.push_back(mx);
        }
    }
    std::vector<double> expected =
        matvec_relu(store.get("pc.mrge.fuse.w0"), store.get("pc.mrge.fuse.b0"), concat_latent, true);
    ASSERT_EQ(expected.size(), got.latent.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(got.latent.data[i], expected[i], 1e-10);
}

TEST(Ppd, ZeroOffsetsCollapseToParents) {
    CompletionConfig cfg = tiny_config();
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 7, 0, {}};
    TensorD v = init_uniform<double>(1, cfg.latent, cfg.latent, 99);
    ppd_decode(ctx, "pc.ppd", v, cfg);  // define

    // zero only the offset heads
    for (const auto& name : {"pc.ppd.middle.w0", "pc.ppd.middle.b0", "pc.ppd.fine.w0", "pc.ppd.fine.b0"}) {
        auto& t = store.get(name);
        std::fill(t.data.begin(), t.data.end(), 0.0);
    }
    PpdOutput<double> out = ppd_decode(ctx, "pc.ppd", v, cfg);
    const std::size_t per_mid = cfg.m2 / cfg.m1;
    for (std::size_t i = 0; i < cfg.m2; ++i)
        for (std::size_t col = 0; col < 3; ++col)
            EXPECT_DOUBLE_EQ(out.middle.at(i, col), out.coarse.at(i / per_mid, col));
    const std::size_t per_fine = cfg.m / cfg.m2;
    for (std::size_t i = 0; i < cfg.m; ++i)
        for (std::size_t col = 0; col < 3; ++col)
            EXPECT_DOUBLE_EQ(out.fine.at(i, col), out.middle.at(i / per_fine, col));
}

TEST(Ppd, ParentArityAndZeroInit) {
    CompletionConfig cfg;
    cfg.m1 = 64;
    cfg.m2 = 256;
    cfg.m = 1024;
    EXPECT_EQ(cfg.m2 / cfg.m1, 4u);  // 4 children per coarse point

    CompletionConfig bad = tiny_config();
    bad.m2 = 7;
    EXPECT_THROW(bad.validate(), ConfigError);

    CompletionConfig tiny = tiny_config();
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 8, 0, {}};
    TensorD v = init_uniform<double>(1, tiny.latent, tiny.latent, 100);
    ppd_decode(ctx, "pc.ppd", v, tiny);
    zero_params(store);
    PpdOutput<double> out = ppd_decode(ctx, "pc.ppd", v, tiny);
    for (double x : out.fine.data) EXPECT_DOUBLE_EQ(x, 0.0);
    for (double x : out.coarse.data) EXPECT_DOUBLE_EQ(x, 0.0);
}

TEST(Ppd, Eq3GradientThroughDecoderParams) {
    CompletionConfig cfg = tiny_config();
    PointCloud full = random_cloud(40, 30);
    PointCloud missing = random_cloud(20, 31);
    CompletionSample s = make_completion_sample(random_cloud(24, 32), full, missing, cfg, 3);

    ParamStore<double> store;
    ModelCtx<double> define{&store, nullptr, 12, 0, {}};
    TensorD v = init_uniform<double>(1, cfg.latent, cfg.latent, 55);
    ppd_decode(define, "pc.ppd", v, cfg);

    for (const auto& name : {"pc.ppd.coarse.w0", "pc.ppd.middle.w0", "pc.ppd.fine.w0", "pc.ppd.fc2.w0"}) {
        TensorD w0 = store.get(name);
        double err = grad_check(
            [&](Tape<double>& tape, const TensorD& w) {
                ParamStore<double> tmp = store;
                TensorD raw = w;
                raw.tape = nullptr;
                raw.node = -1;
                tmp.set(name, raw);
                ModelCtx<double> ctx{&tmp, &tape, 12, 0, {}};
                if (w.taped()) ctx.param_nodes[name] = w.node;
                PpdOutput<double> out = ppd_decode(ctx, "pc.ppd", v, cfg);
                return completion_loss(out, s, 0.5);
            },
            w0);
        EXPECT_LE(err, 1e-4) << name;
    }
}

TEST(Discriminator, RangeSymmetryAndZeroPoint) {
    CompletionConfig cfg = tiny_config();
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 14, 0, {}};
    PointCloud c = random_cloud(18, 40);
    TensorD score = discriminate(ctx, "disc", c.coords_tensor<double>(), cfg);
    EXPECT_GT(score.item(), 0.0);
    EXPECT_LT(score.item(), 1.0);

    Rng rng(3);
    std::vector<int> perm = rng.permutation(18);
    ModelCtx<double> ctx2{&store, nullptr, 14, 0, {}};
    TensorD score2 = discriminate(ctx2, "disc", c.subset(perm).coords_tensor<double>(), cfg);
    EXPECT_NEAR(score.item(), score2.item(), 1e-6);

    zero_params(store);
    ModelCtx<double> ctx3{&store, nullptr, 14, 0, {}};
    EXPECT_DOUBLE_EQ(discriminate(ctx3, "disc", c.coords_tensor<double>(), cfg).item(), 0.5);
}

TEST(Adversarial, HalfScoresGiveTwoLogTwo) {
    std::vector<TensorD> real{TensorD::scalar(0.5), TensorD::scalar(0.5)};
    std::vector<TensorD> fake{TensorD::scalar(0.5), TensorD::scalar(0.5)};
    EXPECT_NEAR(discriminator_loss(real, fake).item(), 2.0 * std::log(2.0), 1e-12);
}

TEST(Adversarial, PerfectDiscriminatorApproachesZero) {
    std::vector<TensorD> real{TensorD::scalar(1.0 - 1e-9)};
    std::vector<TensorD> fake{TensorD::scalar(1e-9)};
    EXPECT_NEAR(discriminator_loss(real, fake).item(), 0.0, 1e-5);
}

TEST(Adversarial, GeneratorLossMonotoneInFakeScore) {
    double prev = 1e18;
    for (double s : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        double g = generator_adversarial_loss(std::vector<TensorD>{TensorD::scalar(s)}).item();
        EXPECT_LT(g, prev);
        prev = g;
    }
}

TEST(Adversarial, GradThroughDiscriminator) {
    CompletionConfig cfg = tiny_config();
    ParamStore<double> store;
    ModelCtx<double> define{&store, nullptr, 15, 0, {}};
    PointCloud real_pc = random_cloud(10, 50);
    PointCloud fake_pc = random_cloud(10, 51);
    discriminate(define, "disc", real_pc.coords_tensor<double>(), cfg);

    // gradient w.r.t. the fake cloud coordinates through both loss terms
    TensorD fake0 = fake_pc.coords_tensor<double>();
    double err = grad_check(
        [&](Tape<double>& tape, const TensorD& fake) {
            ModelCtx<double> ctx{&store, &tape, 15, 0, {}};
            std::vector<TensorD> real_scores{discriminate(ctx, "disc", ctx.constant(real_pc.coords_tensor<double>()), cfg)};
            std::vector<TensorD> fake_scores{discriminate(ctx, "disc", fake, cfg)};
            return discriminator_loss(real_scores, fake_scores);
        },
        fake0);
    EXPECT_LE(err, 1e-4);
}

TEST(CompleteProposal, PreservesInputAndArity) {
    CompletionConfig cfg = tiny_config();
    Box3D box{5, -3, 0.5, 1.5, 1.7, 4.2, 0.4};
    PointCloud x = random_cloud(30, 60);
    for (auto& p : x.points) p = from_box_frame(p, box);  // place near the box

    ParamStore<double> store;
    ModelCtx<double> define{&store, nullptr, 16, 0, {}};
    mrge_encode(define, "pc.mrge", to_box_frame(x, box), cfg);
    ppd_decode(define, "pc.ppd", TensorD::zeros(1, cfg.latent), cfg);

    PointCloud out = complete_proposal(store, x, box, cfg);
    ASSERT_EQ(out.size(), x.size() + cfg.m);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(out.points[i], x.points[i]);  // bitwise
        EXPECT_EQ(out.flags[i], 0);
    }
    for (std::size_t i = x.size(); i < out.size(); ++i) EXPECT_EQ(out.flags[i], 1);

    // pc_o replaces the input
    CompletionConfig pco = cfg;
    pco.variant = "pc_o";
    PointCloud repl = complete_proposal(store, x, box, pco);
    EXPECT_EQ(repl.size(), pco.m);
}

TEST(CompleteProposal, TranslationEquivariantExactlyOnGridData) {
    CompletionConfig cfg = tiny_config();
    // grid-quantized coordinates plus a power-of-two translation keep all
    // frame arithmetic exact in double precision
    Rng rng(70);
    PointCloud x;
    for (int i = 0; i < 24; ++i)
        x.points.push_back({std::round(rng.uniform(-2, 2) * 1024) / 1024,
                            std::round(rng.uniform(-2, 2) * 1024) / 1024,
                            std::round(rng.uniform(-1, 1) * 1024) / 1024});
    Box3D box{0.5, -0.25, 0.125, 1.5, 1.75, 4.25, 0.0};

    ParamStore<double> store;
    ModelCtx<double> define{&store, nullptr, 17, 0, {}};
    mrge_encode(define, "pc.mrge", to_box_frame(x, box), cfg);
    ppd_decode(define, "pc.ppd", TensorD::zeros(1, cfg.latent), cfg);

    const Vec3 t{64.0, -32.0, 8.0};
    PointCloud xt = x;
    for (auto& p : xt.points) p = p + t;
    Box3D boxt = box;
    boxt.x += t.x;
    boxt.y += t.y;
    boxt.z += t.z;

    // the canonical-frame inputs are bit-identical, so the prediction is too
    PointCloud base = predict_missing_box_frame(store, to_box_frame(x, box), cfg);
    PointCloud moved = predict_missing_box_frame(store, to_box_frame(xt, boxt), cfg);
    ASSERT_EQ(base.size(), moved.size());
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(base.points[i], moved.points[i]);

    // world-frame outputs: originals translate bitwise (copied verbatim),
    // generated points agree to the final-addition rounding
    PointCloud a = complete_proposal(store, x, box, cfg);
    PointCloud b = complete_proposal(store, xt, boxt, cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(b.points[i].x, a.points[i].x + t.x);
        EXPECT_EQ(b.points[i].y, a.points[i].y + t.y);
        EXPECT_EQ(b.points[i].z, a.points[i].z + t.z);
    }
    for (std::size_t i = x.size(); i < a.size(); ++i)
        EXPECT_NEAR((b.points[i] - (a.points[i] + t)).norm(), 0.0, 1e-9);
}
