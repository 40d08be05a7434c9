#include <gtest/gtest.h>

#include <cmath>

#include "graphdet/detect.hpp"
#include "graphdet/gradcheck.hpp"

using namespace graphdet;

namespace {

DetectConfig tiny_config() {
    DetectConfig cfg;
    cfg.min_scene_points = 32;
    cfg.l1_points = 24;
    cfg.l2_points = 12;
    cfg.c0 = 8;
    cfg.c1 = 16;
    cfg.c2 = 24;
    cfg.head_hidden = 16;
    cfg.gnn_points = 24;
    cfg.gnn.scales = {2, 3};
    cfg.gnn.state_width = 8;
    cfg.gnn.mlp2_hidden = 8;
    cfg.gnn.mlp3_hidden = 4;
    cfg.gnn.flag_embed = 4;
    cfg.gnn.num_layers = 1;
    cfg.pc.m1 = 4;
    cfg.pc.m2 = 8;
    cfg.pc.m = 16;
    cfg.pc.encoder_points = 16;
    cfg.pc.min_points = 8;
    cfg.pc.k = 4;
    cfg.pc.f_width = 12;
    cfg.pc.latent = 16;
    cfg.pc.fc1 = 16;
    cfg.pc.fc2 = 12;
    cfg.pc.fc3 = 8;
    cfg.pc.edge_hidden = 8;
    return cfg;
}

PointCloud random_scene(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i)
        c.points.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0, 2)});
    return c;
}

template <typename T>
void init_stage2_params(ParamStore<T>& det, ParamStore<T>& pc, const DetectConfig& cfg,
                        const Proposal& prop, const PointCloud& scene) {
    ModelCtx<T> pc_ctx{&pc, nullptr, 1, 0, {}};
    PointCloud dummy = random_scene(20, 5);
    mrge_encode(pc_ctx, "pc.mrge", dummy, cfg.pc);
    ppd_decode(pc_ctx, "pc.ppd", Tensor<T>::zeros(1, cfg.pc.latent), cfg.pc);
    ModelCtx<T> det_ctx{&det, nullptr, 2, 0, {}};
    stage2_forward(det_ctx, pc, prop, scene, cfg);
}

}  // namespace

TEST(FocalLoss, PerfectPredictionGoesToZero) {
    EXPECT_NEAR(focal_loss_value(1.0 - 1e-9, true, 0.25, 2.0), 0.0, 1e-12);
    EXPECT_NEAR(focal_loss_value(1e-9, false, 0.25, 2.0), 0.0, 1e-12);
}

TEST(FocalLoss, PaperOperatingPoint) {
    // alpha_t * (1-p_t)^2 * ln 2 with alpha_t=0.25, p_t=0.5
    EXPECT_NEAR(focal_loss_value(0.5, true, 0.25, 2.0), 0.25 * 0.25 * std::log(2.0), 1e-9);
    EXPECT_NEAR(focal_loss_value(0.5, true, 0.25, 2.0), 0.043322, 1e-6);
}

TEST(FocalLoss, GammaZeroAlphaOneIsCrossEntropy) {
    for (double p : {0.1, 0.4, 0.9}) {
        EXPECT_NEAR(focal_loss_value(p, true, 1.0, 0.0), -std::log(p), 1e-9);
        EXPECT_NEAR(focal_loss_value(p, false, 0.0, 0.0), -std::log(1.0 - p), 1e-9);
    }
}

TEST(FocalLoss, NonNegativeAndMonotone) {
    double prev = 1e18;
    for (double p = 0.05; p < 1.0; p += 0.05) {
        const double v = focal_loss_value(p, true, 0.25, 2.0);
        EXPECT_GE(v, 0.0);
        EXPECT_LT(v, prev);  // decreasing in p_t
        prev = v;
    }
}

TEST(FocalLoss, GradMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed + 400);
        TensorD p = TensorD::zeros(6, 1);
        std::vector<bool> fg;
        for (std::size_t i = 0; i < 6; ++i) {
            p.data[i] = rng.uniform(0.05, 0.95);
            fg.push_back(rng.uniform() < 0.5);
        }
        double err = grad_check(
            [&](Tape<double>&, const TensorD& v) { return mean(focal_loss(v, fg, 0.25, 2.0)); }, p);
        EXPECT_LE(err, 1e-4) << "seed " << seed;
    }
}

TEST(BinEncoding, CenteredDeltaLandsInMiddleBin) {
    BinEncoding enc{3.0, 0.5, 12};
    Box3D gt{10.0, 5.0, 1.0, 1.5, 1.6, 3.9, 0.4};
    // delta x = 0 -> floor(3/0.5) = bin 6 of 12
    BoxTargets t = encode_box_targets(gt, Vec3{10.0, 5.0, 0.5}, enc, MeanSize{});
    EXPECT_EQ(t.x_bin, 6);
    EXPECT_EQ(t.y_bin, 6);
    EXPECT_EQ(enc.n_xy_bins(), 12u);

    // exactly at a bin center -> zero residual
    BoxTargets c = encode_box_targets(gt, Vec3{10.0 - 0.25, 5.0 - 0.25, 0.5}, enc, MeanSize{});
    EXPECT_NEAR(c.x_res, 0.0, 1e-12);
    EXPECT_NEAR(c.y_res, 0.0, 1e-12);
}

TEST(BinEncoding, EncodeDecodeRoundTrip) {
    BinEncoding enc{3.0, 0.5, 12};
    MeanSize mean;
    Rng rng(31);
    for (int it = 0; it < 100; ++it) {
        Box3D gt{rng.uniform(-2.9, 2.9), rng.uniform(-2.9, 2.9), rng.uniform(-1, 1),
                 rng.uniform(1.2, 1.9), rng.uniform(1.4, 2.0), rng.uniform(3, 5),
                 rng.uniform(-kPi, kPi)};
        Vec3 anchor{0, 0, 0};
        BoxTargets t = encode_box_targets(gt, anchor, enc, mean);
        ASSERT_TRUE(t.in_range);
        Box3D back = decode_box(t, anchor, enc, mean);
        EXPECT_NEAR(back.x, gt.x, enc.bin_size / 1e6);
        EXPECT_NEAR(back.y, gt.y, enc.bin_size / 1e6);
        EXPECT_NEAR(back.z, gt.z, 1e-9);
        EXPECT_NEAR(back.h, gt.h, 1e-9);
        EXPECT_NEAR(back.w, gt.w, 1e-9);
        EXPECT_NEAR(back.l, gt.l, 1e-9);
        EXPECT_NEAR(normalize_angle(back.yaw - gt.yaw), 0.0, 1e-9);
    }
}

TEST(BinEncoding, OutOfRangeFlagged) {
    BinEncoding enc{3.0, 0.5, 12};
    Box3D gt{10.0, 0.0, 0, 1.5, 1.6, 3.9, 0};
    BoxTargets t = encode_box_targets(gt, Vec3{0, 0, 0}, enc, MeanSize{});
    EXPECT_FALSE(t.in_range);
    EXPECT_THROW((BinEncoding{3.0, 0.7, 12}).validate(), ConfigError);
}

TEST(Stage2Encoding, RoundTripThroughProposalFrame) {
    BinEncoding enc{1.5, 0.25, 12};
    Rng rng(77);
    for (int it = 0; it < 50; ++it) {
        Box3D prop{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-1, 1),
                   rng.uniform(1.3, 1.8), rng.uniform(1.5, 1.9), rng.uniform(3.4, 4.6),
                   rng.uniform(-kPi, kPi)};
        Box3D gt = prop;
        gt.x += rng.uniform(-0.8, 0.8);
        gt.y += rng.uniform(-0.8, 0.8);
        gt.z += rng.uniform(-0.3, 0.3);
        gt.h += rng.uniform(-0.2, 0.2);
        gt.yaw = normalize_angle(gt.yaw + rng.uniform(-0.4, 0.4));
        BoxTargets t = encode_stage2_targets(gt, prop, enc);
        ASSERT_TRUE(t.in_range);
        Box3D back = decode_stage2_box(t, prop, enc);
        EXPECT_NEAR(back.x, gt.x, 1e-6);
        EXPECT_NEAR(back.y, gt.y, 1e-6);
        EXPECT_NEAR(back.z, gt.z, 1e-9);
        EXPECT_NEAR(normalize_angle(back.yaw - gt.yaw), 0.0, 1e-9);
    }
}

TEST(BinBoxLoss, GradMatchesFiniteDifferences) {
    BinEncoding enc{1.0, 0.5, 4};
    Rng rng(91);
    const std::size_t n = 5, nb = enc.n_xy_bins(), nt = enc.n_theta_bins;
    std::vector<BoxTargets> targets(2);
    targets[0].x_bin = 1; targets[0].x_res = 0.2; targets[0].y_bin = 2; targets[0].theta_bin = 3;
    targets[1].x_bin = 0; targets[1].y_res = -0.4; targets[1].theta_res = 0.25; targets[1].h_res = 0.3;
    std::vector<int> rows{1, 3};

    // pack one big parameter tensor and slice it into the head outputs so a
    // single grad_check covers every branch of the loss
    const std::size_t cols = nb * 4 + nt * 2 + 4;
    TensorD flat = TensorD::zeros(n, cols);
    for (auto& v : flat.data) v = rng.uniform(-1, 1);
    double err = grad_check(
        [&](Tape<double>&, const TensorD& v) {
            BoxHeadOut<double> head;
            std::vector<int> all(n);
            for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<int>(i);
            auto slice = [&](std::size_t offset, std::size_t width) {
                std::vector<TensorD> cols_list;
                TensorD sel = TensorD::zeros(cols, width);
                for (std::size_t j = 0; j < width; ++j) sel.at(offset + j, j) = 1.0;
                return matmul(v, sel);
            };
            head.x_logits = slice(0, nb);
            head.x_res = slice(nb, nb);
            head.y_logits = slice(2 * nb, nb);
            head.y_res = slice(3 * nb, nb);
            head.t_logits = slice(4 * nb, nt);
            head.t_res = slice(4 * nb + nt, nt);
            head.zhwl = slice(4 * nb + 2 * nt, 4);
            return bin_box_loss(head, rows, targets);
        },
        flat);
    EXPECT_LE(err, 1e-4);
}

TEST(Stage1, SceneTooSmallThrows) {
    DetectConfig cfg = tiny_config();
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 0, 0, {}};
    EXPECT_THROW(stage1_forward(ctx, random_scene(10, 1), cfg), DataError);
}

TEST(Stage1, NoForegroundMeansNoProposals) {
    DetectConfig cfg = tiny_config();
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 3, 0, {}};
    PointCloud scene = random_scene(64, 2);
    stage1_forward(ctx, scene, cfg);  // define params
    // push the segmentation head to certain-background
    auto& bias = store.get("det.s1.seg.b1");
    std::fill(bias.data.begin(), bias.data.end(), -50.0);
    ModelCtx<double> ctx2{&store, nullptr, 3, 0, {}};
    Stage1Output<double> out = stage1_forward(ctx2, scene, cfg);
    for (double p : out.fg_probs.data) EXPECT_LE(p, cfg.tau_fg);
    EXPECT_TRUE(out.proposals.empty());
}

TEST(Stage1, ProposalCountBoundedByConfidentPoints) {
    DetectConfig cfg = tiny_config();
    ParamStore<double> store;
    ModelCtx<double> ctx{&store, nullptr, 5, 0, {}};
    PointCloud scene = random_scene(64, 4);
    Stage1Output<double> out = stage1_forward(ctx, scene, cfg);
    std::size_t confident = 0;
    for (double p : out.fg_probs.data) confident += p > cfg.tau_fg;
    EXPECT_LE(out.proposals.size(), confident);
    for (const auto& p : out.proposals) {
        EXPECT_GT(p.score, cfg.tau_fg);
        EXPECT_GT(p.box.h, 0.0);
    }
}

TEST(Stage2, DeterministicAndScoreInRange) {
    DetectConfig cfg = tiny_config();
    PointCloud scene = random_scene(64, 8);
    Proposal prop;
    prop.box = {scene.points[0].x, scene.points[0].y, 1.0, 2.0, 4.0, 8.0, 0.3};

    ParamStore<double> det, pc;
    init_stage2_params(det, pc, cfg, prop, scene);

    auto [s1, b1] = stage2_refine(det, pc, prop, scene, cfg);
    auto [s2, b2] = stage2_refine(det, pc, prop, scene, cfg);
    EXPECT_EQ(s1, s2);
    EXPECT_EQ(b1.x, b2.x);
    EXPECT_EQ(b1.yaw, b2.yaw);
    EXPECT_GT(s1, 0.0);
    EXPECT_LT(s1, 1.0);
}

TEST(Stage2, TinyCropSkipsCompletionButStillScores) {
    DetectConfig cfg = tiny_config();
    PointCloud scene = random_scene(64, 9);
    // a far-away box containing few points
    Proposal prop;
    prop.box = {100, 100, 1.0, 2.0, 2.0, 2.0, 0};
    scene.points[0] = {100, 100, 1.0};
    scene.points[1] = {100.2, 100.1, 1.1};

    ParamStore<double> det, pc;
    Proposal big;
    big.box = {scene.points[5].x, scene.points[5].y, 1.0, 3.0, 6.0, 12.0, 0};
    init_stage2_params(det, pc, cfg, big, scene);

    ModelCtx<double> ctx{&det, nullptr, 2, 0, {}};
    Stage2Output<double> out = stage2_forward(ctx, pc, prop, scene, cfg);
    EXPECT_TRUE(out.featurized);
    EXPECT_FALSE(out.completed);  // below min_refine_points
    EXPECT_EQ(out.crop_points, 2u);

    // empty crop yields no featurization and the refine keeps the box
    Proposal empty_prop;
    empty_prop.box = {-200, -200, 0, 1, 1, 1, 0};
    auto [score, box] = stage2_refine(det, pc, empty_prop, scene, cfg);
    EXPECT_EQ(score, 0.0);
    EXPECT_EQ(box.x, empty_prop.box.x);
}

TEST(Pipeline, PermutationChangesNoBoxBeyondTolerance) {
    DetectConfig cfg = tiny_config();
    cfg.score_thresh = 0.0;  // keep everything; compare raw geometry
    PointCloud scene = random_scene(96, 10);

    ParamStore<float> det, pc;
    Proposal seedp;
    seedp.box = {scene.points[0].x, scene.points[0].y, 1.0, 2.5, 5.0, 10.0, 0.2};
    init_stage2_params(det, pc, cfg, seedp, scene);

    std::vector<Detection> base = detect_scene(det, pc, scene, cfg);

    Rng rng(44);
    std::vector<int> perm = rng.permutation(96);
    PointCloud shuffled = scene.subset(perm);
    std::vector<Detection> moved = detect_scene(det, pc, shuffled, cfg);

    ASSERT_EQ(base.size(), moved.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        EXPECT_NEAR(base[i].box.x, moved[i].box.x, 1e-4);
        EXPECT_NEAR(base[i].box.y, moved[i].box.y, 1e-4);
        EXPECT_NEAR(base[i].box.z, moved[i].box.z, 1e-4);
        EXPECT_NEAR(base[i].box.yaw, moved[i].box.yaw, 1e-4);
        EXPECT_NEAR(base[i].score, moved[i].score, 1e-4);
    }
}
