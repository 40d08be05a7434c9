#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "graphdet/completion.hpp"
#include "graphdet/geom.hpp"
#include "graphdet/graphnet.hpp"
#include "graphdet/nn.hpp"

namespace graphdet {

// ---------------------------------------------------------------------------
// focal loss

// -alpha_t (1 - p_t)^gamma log(p_t), p_t = p for foreground else 1-p.
// p is clamped to [1e-7, 1-1e-7] before the log.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& p, const std::vector<bool>& is_fg, T alpha_fg, T gamma) {
    if (p.cols() != 1 || p.rows() != is_fg.size())
        throw ShapeError("focal_loss: probabilities " + shape_str(p) + " for " + std::to_string(is_fg.size()) + " labels");
    const std::size_t n = is_fg.size();
    Tensor<T> mask = Tensor<T>::zeros(n, 1);
    Tensor<T> alpha_t = Tensor<T>::zeros(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        mask.data[i] = is_fg[i] ? T(1) : T(0);
        alpha_t.data[i] = is_fg[i] ? alpha_fg : T(1) - alpha_fg;
    }
    const T eps = static_cast<T>(1e-7);
    Tensor<T> pc = clamp(p, eps, T(1) - eps);
    // p_t = p*m + (1-p)*(1-m)
    Tensor<T> p_t = add(mul(pc, mask), mul(affine(pc, T(-1), T(1)), affine(mask, T(-1), T(1))));
    Tensor<T> focal = pow_const(affine(p_t, T(-1), T(1)), gamma);
    Tensor<T> nll = scale(log(p_t), T(-1));
    return mul(mul(alpha_t, focal), nll);
}

inline double focal_loss_value(double p, bool is_fg, double alpha_fg, double gamma) {
    TensorD pt = TensorD::scalar(p);
    return focal_loss(pt, {is_fg}, alpha_fg, gamma).item();
}

// ---------------------------------------------------------------------------
// bin-based box encoding

struct BinEncoding {
    double search_range = 3.0;  // S, symmetric around the anchor
    double bin_size = 0.5;      // delta
    std::size_t n_theta_bins = 12;

    void validate() const {
        if (search_range <= 0 || bin_size <= 0)
            throw ConfigError("BinEncoding: search_range and bin_size must be positive");
        const double ratio = search_range / bin_size;
        if (std::abs(ratio - std::round(ratio)) > 1e-9)
            throw ConfigError("BinEncoding: search_range/bin_size must be an integer");
        if (n_theta_bins < 2) throw ConfigError("BinEncoding: need at least 2 theta bins");
    }

    std::size_t n_xy_bins() const { return static_cast<std::size_t>(std::round(2.0 * search_range / bin_size)); }
    double theta_bin_width() const { return 2.0 * kPi / static_cast<double>(n_theta_bins); }
};

struct MeanSize {
    double h = 1.53, w = 1.63, l = 3.88;
};

struct BoxTargets {
    int x_bin = 0, y_bin = 0, theta_bin = 0;
    double x_res = 0, y_res = 0, theta_res = 0;  // normalized by bin width
    double z_res = 0, h_res = 0, w_res = 0, l_res = 0;
    bool in_range = true;  // out-of-range targets are excluded from the loss
};

namespace detail {

inline std::pair<int, double> encode_linear_bin(double delta, double search, double bin) {
    const double shifted = delta + search;
    int b = static_cast<int>(std::floor(shifted / bin));
    const int n = static_cast<int>(std::round(2.0 * search / bin));
    if (b < 0 || b >= n) return {-1, 0.0};
    const double res = (shifted - (static_cast<double>(b) + 0.5) * bin) / bin;
    return {b, res};
}

}  // namespace detail

inline BoxTargets encode_box_targets(const Box3D& gt, const Vec3& anchor, const BinEncoding& enc,
                                     const MeanSize& mean) {
    enc.validate();
    BoxTargets t;
    auto [xb, xr] = detail::encode_linear_bin(gt.x - anchor.x, enc.search_range, enc.bin_size);
    auto [yb, yr] = detail::encode_linear_bin(gt.y - anchor.y, enc.search_range, enc.bin_size);
    if (xb < 0 || yb < 0) {
        t.in_range = false;
        return t;
    }
    t.x_bin = xb;
    t.x_res = xr;
    t.y_bin = yb;
    t.y_res = yr;

    const double bw = enc.theta_bin_width();
    const double a = normalize_angle(gt.yaw) + kPi;  // [0, 2pi)
    int tb = static_cast<int>(std::floor(a / bw));
    tb = std::min(tb, static_cast<int>(enc.n_theta_bins) - 1);
    t.theta_bin = tb;
    t.theta_res = (a - (static_cast<double>(tb) + 0.5) * bw) / bw;

    t.z_res = gt.z - anchor.z;
    t.h_res = gt.h - mean.h;
    t.w_res = gt.w - mean.w;
    t.l_res = gt.l - mean.l;
    return t;
}

inline Box3D decode_box(const BoxTargets& t, const Vec3& anchor, const BinEncoding& enc, const MeanSize& mean) {
    enc.validate();
    Box3D b;
    b.x = anchor.x + (static_cast<double>(t.x_bin) + 0.5) * enc.bin_size + t.x_res * enc.bin_size - enc.search_range;
    b.y = anchor.y + (static_cast<double>(t.y_bin) + 0.5) * enc.bin_size + t.y_res * enc.bin_size - enc.search_range;
    b.z = anchor.z + t.z_res;
    b.h = mean.h + t.h_res;
    b.w = mean.w + t.w_res;
    b.l = mean.l + t.l_res;
    const double bw = enc.theta_bin_width();
    b.yaw = normalize_angle((static_cast<double>(t.theta_bin) + 0.5) * bw + t.theta_res * bw - kPi);
    return b;
}

// ---------------------------------------------------------------------------
// configuration

struct DetectConfig {
    BinEncoding enc_s1{3.0, 0.5, 12};
    BinEncoding enc_s2{1.5, 0.25, 12};
    MeanSize mean_size;

    double tau_fg = 0.3;
    std::size_t top_k = 64;
    double nms_s1 = 0.8;
    double final_nms = 0.1;
    double score_thresh = 0.3;
    double crop_margin = 0.5;
    std::size_t min_refine_points = 8;
    std::size_t min_scene_points = 256;
    std::size_t gnn_points = 128;  // stage-2 clouds are FPS-capped to this

    // stage-1 backbone sizes
    std::size_t l1_points = 1024, l2_points = 256;
    std::size_t backbone_k = 8;
    std::size_t c0 = 16, c1 = 64, c2 = 128;
    std::size_t head_hidden = 64;

    bool use_pc = true;
    bool use_ams_gnn = true;
    double iou_pos_thresh = 0.55;  // stage-2 classification target

    GnnConfig gnn;
    CompletionConfig pc;
};

struct Proposal {
    Box3D box;
    double score = 0;
    std::vector<int> point_indices;  // into the scene cloud
};

struct Detection {
    Box3D box;
    double score = 0;
};

// per-row box regression head outputs
template <typename T>
struct BoxHeadOut {
    Tensor<T> x_logits, x_res;
    Tensor<T> y_logits, y_res;
    Tensor<T> t_logits, t_res;
    Tensor<T> zhwl;
};

template <typename T>
struct Stage1Output {
    Tensor<T> fg_probs;  // [n, 1]
    BoxHeadOut<T> box;
    std::vector<Proposal> proposals;  // thresholded, NMS'd, sorted by score
};

namespace detail {

// edge convolution from source points onto center points via k-NN
template <typename T>
Tensor<T> edge_conv_cross(ModelCtx<T>& ctx, const std::string& prefix, const Tensor<T>& src_states,
                          const PointCloud& src_cloud, const PointCloud& centers, std::size_t k,
                          std::size_t out_width) {
    const std::size_t n = centers.size();
    const std::size_t kk = std::min(k, src_cloud.size());
    const std::vector<int> nbr = knn_cross(centers, src_cloud, kk, false);
    std::vector<int> center_idx(n * kk);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < kk; ++j) center_idx[i * kk + j] = static_cast<int>(i);

    Tensor<T> cpos = ctx.constant(centers.template coords_tensor<T>());
    Tensor<T> spos = ctx.constant(src_cloud.template coords_tensor<T>());
    Tensor<T> p_j = gather_rows(spos, nbr);
    Tensor<T> c_i = gather_rows(cpos, center_idx);
    Tensor<T> s_j = gather_rows(src_states, nbr);
    Tensor<T> edge_in = concat(1, std::vector<Tensor<T>>{s_j, sub(p_j, c_i)});
    Tensor<T> e = mlp(ctx, prefix, MlpSpec({src_states.cols() + 3, out_width}, {Activation::relu}), edge_in);
    return max_groups(e, kk);
}

// inverse-distance-weighted 3-NN feature interpolation (weights constant)
template <typename T>
Tensor<T> interpolate_features(const Tensor<T>& src_feats, const PointCloud& src_cloud,
                               const PointCloud& targets) {
    const std::size_t k = std::min<std::size_t>(3, src_cloud.size());
    const std::vector<int> nbr = knn_cross(targets, src_cloud, k, false);
    const std::size_t n = targets.size();
    Tensor<T> out;
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<int> idx(n);
        Tensor<T> w = Tensor<T>::zeros(n, 1);
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = nbr[i * k + j];
            double denom = 0;
            const double dj = (src_cloud.points[static_cast<std::size_t>(nbr[i * k + j])] - targets.points[i]).norm2() + 1e-8;
            for (std::size_t jj = 0; jj < k; ++jj) {
                const double d = (src_cloud.points[static_cast<std::size_t>(nbr[i * k + jj])] - targets.points[i]).norm2() + 1e-8;
                denom += 1.0 / d;
            }
            w.data[i] = static_cast<T>((1.0 / dj) / denom);
        }
        Tensor<T> term = mul(gather_rows(src_feats, idx), w);
        out = j == 0 ? term : add(out, term);
    }
    return out;
}

template <typename T>
BoxHeadOut<T> box_heads(ModelCtx<T>& ctx, const std::string& prefix, const Tensor<T>& trunk,
                        const BinEncoding& enc, std::size_t hidden) {
    const std::size_t nb = enc.n_xy_bins();
    const std::size_t nt = enc.n_theta_bins;
    Tensor<T> h = mlp(ctx, prefix + ".trunk", MlpSpec({trunk.cols(), hidden}, {Activation::relu}), trunk);
    BoxHeadOut<T> out;
    out.x_logits = mlp(ctx, prefix + ".x_bin", MlpSpec({hidden, nb}, {Activation::none}), h);
    out.x_res = mlp(ctx, prefix + ".x_res", MlpSpec({hidden, nb}, {Activation::none}), h);
    out.y_logits = mlp(ctx, prefix + ".y_bin", MlpSpec({hidden, nb}, {Activation::none}), h);
    out.y_res = mlp(ctx, prefix + ".y_res", MlpSpec({hidden, nb}, {Activation::none}), h);
    out.t_logits = mlp(ctx, prefix + ".t_bin", MlpSpec({hidden, nt}, {Activation::none}), h);
    out.t_res = mlp(ctx, prefix + ".t_res", MlpSpec({hidden, nt}, {Activation::none}), h);
    out.zhwl = mlp(ctx, prefix + ".zhwl", MlpSpec({hidden, 4}, {Activation::none}), h);
    return out;
}

// read one row of the head outputs into targets (argmax bins)
template <typename T>
BoxTargets decode_head_row(const BoxHeadOut<T>& head, std::size_t row) {
    auto argmax = [&](const Tensor<T>& logits) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits.at(row, j) > logits.at(row, best)) best = j;
        return static_cast<int>(best);
    };
    BoxTargets t;
    t.x_bin = argmax(head.x_logits);
    t.y_bin = argmax(head.y_logits);
    t.theta_bin = argmax(head.t_logits);
    t.x_res = static_cast<double>(head.x_res.at(row, static_cast<std::size_t>(t.x_bin)));
    t.y_res = static_cast<double>(head.y_res.at(row, static_cast<std::size_t>(t.y_bin)));
    t.theta_res = static_cast<double>(head.t_res.at(row, static_cast<std::size_t>(t.theta_bin)));
    t.z_res = static_cast<double>(head.zhwl.at(row, 0));
    t.h_res = static_cast<double>(head.zhwl.at(row, 1));
    t.w_res = static_cast<double>(head.zhwl.at(row, 2));
    t.l_res = static_cast<double>(head.zhwl.at(row, 3));
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// stage 1

// Foreground segmentation plus per-point box regression over a down-up point
// backbone; proposals are decoded only from points above tau_fg, then NMS'd.
template <typename T>
Stage1Output<T> stage1_forward(ModelCtx<T>& ctx, const PointCloud& scene, const DetectConfig& cfg) {
    const std::size_t n = scene.size();
    if (n < cfg.min_scene_points)
        throw DataError("stage1_forward: scene has " + std::to_string(n) + " points, need >= " +
                        std::to_string(cfg.min_scene_points));

    // level-0 state: height above ground feeds the first embedding
    Tensor<T> z0 = Tensor<T>::zeros(n, 1);
    for (std::size_t i = 0; i < n; ++i) z0.data[i] = static_cast<T>(scene.points[i].z);
    Tensor<T> s0 = mlp(ctx, "det.s1.embed", MlpSpec({1, cfg.c0}, {Activation::relu}), ctx.constant(z0));

    // down path
    const std::size_t n1 = std::min(cfg.l1_points, n);
    PointCloud l1 = scene.subset(farthest_point_sample(scene, n1, mix_seed(ctx.fps_seed, 1)));
    Tensor<T> f1 = detail::edge_conv_cross(ctx, "det.s1.sa1", s0, scene, l1, cfg.backbone_k, cfg.c1);

    const std::size_t n2 = std::min(cfg.l2_points, n1);
    PointCloud l2 = l1.subset(farthest_point_sample(l1, n2, mix_seed(ctx.fps_seed, 2)));
    Tensor<T> f2 = detail::edge_conv_cross(ctx, "det.s1.sa2", f1, l1, l2, cfg.backbone_k, cfg.c2);

    // up path
    Tensor<T> up1 = detail::interpolate_features(f2, l2, l1);
    Tensor<T> g1 = mlp(ctx, "det.s1.fp1", MlpSpec({cfg.c2 + cfg.c1, cfg.c1}, {Activation::relu}),
                       concat(1, std::vector<Tensor<T>>{up1, f1}));
    Tensor<T> up0 = detail::interpolate_features(g1, l1, scene);
    Tensor<T> g0 = mlp(ctx, "det.s1.fp0", MlpSpec({cfg.c1 + cfg.c0, cfg.c1}, {Activation::relu}),
                       concat(1, std::vector<Tensor<T>>{up0, s0}));

    Stage1Output<T> out;
    out.fg_probs = sigmoid(mlp(ctx, "det.s1.seg", MlpSpec::relu_stack({cfg.c1, 32, 1}), g0));
    out.box = detail::box_heads(ctx, "det.s1.box", g0, cfg.enc_s1, cfg.head_hidden);

    // decode proposals from confident foreground points
    std::vector<Box3D> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = static_cast<double>(out.fg_probs.data[i]);
        if (p <= cfg.tau_fg) continue;
        BoxTargets t = detail::decode_head_row(out.box, i);
        Box3D b = decode_box(t, scene.points[i], cfg.enc_s1, cfg.mean_size);
        if (b.h <= 0.1 || b.w <= 0.1 || b.l <= 0.1) continue;  // degenerate decode
        boxes.push_back(b);
        scores.push_back(p);
    }
    for (int kept : nms_bev(boxes, scores, cfg.nms_s1)) {
        Proposal prop;
        prop.box = boxes[static_cast<std::size_t>(kept)];
        prop.score = scores[static_cast<std::size_t>(kept)];
        prop.point_indices = points_in_box(scene, prop.box);
        out.proposals.push_back(std::move(prop));
    }
    std::stable_sort(out.proposals.begin(), out.proposals.end(),
                     [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
    return out;
}

// one entry per row: out[i] = x[i, cols[i]]
template <typename T>
Tensor<T> select_per_row(const Tensor<T>& x, const std::vector<int>& cols) {
    if (cols.size() != x.rows()) throw ShapeError("select_per_row: row/index count mismatch");
    Tensor<T> onehot = Tensor<T>::zeros(x.rows(), x.cols());
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= x.cols())
            throw ShapeError("select_per_row: column index out of range");
        onehot.at(i, static_cast<std::size_t>(cols[i])) = T(1);
    }
    Tensor<T> ones = Tensor<T>::full(x.cols(), 1, T(1));
    return matmul(mul(x, onehot), ones);
}

// Bin-based regression loss over the selected head rows: cross-entropy on
// the x/y/theta bins plus smooth-L1 on the residual at the target bin and on
// the (z,h,w,l) residuals. Mean over rows.
template <typename T>
Tensor<T> bin_box_loss(const BoxHeadOut<T>& head, const std::vector<int>& rows,
                       const std::vector<BoxTargets>& targets, T beta = T(1)) {
    if (rows.size() != targets.size()) throw ShapeError("bin_box_loss: rows/targets mismatch");
    if (rows.empty()) throw DataError("bin_box_loss: no regression targets");
    const std::size_t m = rows.size();
    std::vector<int> xb(m), yb(m), tb(m);
    Tensor<T> xr = Tensor<T>::zeros(m, 1), yr = Tensor<T>::zeros(m, 1), tr = Tensor<T>::zeros(m, 1);
    Tensor<T> zhwl = Tensor<T>::zeros(m, 4);
    for (std::size_t i = 0; i < m; ++i) {
        const BoxTargets& t = targets[i];
        xb[i] = t.x_bin;
        yb[i] = t.y_bin;
        tb[i] = t.theta_bin;
        xr.data[i] = static_cast<T>(t.x_res);
        yr.data[i] = static_cast<T>(t.y_res);
        tr.data[i] = static_cast<T>(t.theta_res);
        zhwl.at(i, 0) = static_cast<T>(t.z_res);
        zhwl.at(i, 1) = static_cast<T>(t.h_res);
        zhwl.at(i, 2) = static_cast<T>(t.w_res);
        zhwl.at(i, 3) = static_cast<T>(t.l_res);
    }
    Tensor<T> loss = mean(cross_entropy_rows(gather_rows(head.x_logits, rows), xb));
    loss = add(loss, mean(cross_entropy_rows(gather_rows(head.y_logits, rows), yb)));
    loss = add(loss, mean(cross_entropy_rows(gather_rows(head.t_logits, rows), tb)));
    loss = add(loss, mean(smooth_l1(select_per_row(gather_rows(head.x_res, rows), xb), xr, beta)));
    loss = add(loss, mean(smooth_l1(select_per_row(gather_rows(head.y_res, rows), yb), yr, beta)));
    loss = add(loss, mean(smooth_l1(select_per_row(gather_rows(head.t_res, rows), tb), tr, beta)));
    loss = add(loss, mean(smooth_l1(gather_rows(head.zhwl, rows), zhwl, beta)));
    return loss;
}

// ---------------------------------------------------------------------------
// stage 2

template <typename T>
struct Stage2Output {
    Tensor<T> score;  // [1,1] sigmoid confidence
    BoxHeadOut<T> box;
    bool featurized = false;  // false when the crop was empty
    std::size_t crop_points = 0;
    bool completed = false;
};

// Build the canonical stage-2 cloud for one proposal: crop with margin,
// optionally complete, cap to cfg.gnn_points.
template <typename T>
PointCloud stage2_cloud(ParamStore<T>& pc_store, const Proposal& prop, const PointCloud& scene,
                        const DetectConfig& cfg, bool* completed = nullptr) {
    std::vector<int> idx = points_in_box(scene, prop.box, cfg.crop_margin);
    PointCloud crop = scene.subset(idx);
    crop.flags.assign(crop.size(), 0);
    PointCloud crop_box = to_box_frame(crop, prop.box);
    if (completed) *completed = false;
    if (cfg.use_pc && crop.size() >= cfg.min_refine_points) {
        PointCloud generated = predict_missing_box_frame(pc_store, crop_box, cfg.pc);
        if (completed) *completed = true;
        if (cfg.pc.variant == "pc_o") {
            crop_box = generated;
            crop_box.flags.assign(crop_box.size(), 1);
        } else {
            for (const Vec3& p : generated.points) {
                crop_box.points.push_back(p);
                crop_box.flags.push_back(1);
            }
        }
    }
    if (crop_box.size() > cfg.gnn_points)
        crop_box = crop_box.subset(farthest_point_sample(crop_box, cfg.gnn_points, 3));
    return crop_box;
}

template <typename T>
Stage2Output<T> stage2_forward(ModelCtx<T>& ctx, ParamStore<T>& pc_store, const Proposal& prop,
                               const PointCloud& scene, const DetectConfig& cfg) {
    Stage2Output<T> out;
    bool completed = false;
    PointCloud cloud = stage2_cloud(pc_store, prop, scene, cfg, &completed);
    out.completed = completed;
    out.crop_points = cloud.size();
    if (cloud.empty()) return out;

    std::size_t max_scale = 0;
    for (int k : cfg.gnn.active_scales()) max_scale = std::max(max_scale, static_cast<std::size_t>(k));

    Tensor<T> feats, global;
    if (cfg.use_ams_gnn && cloud.size() > max_scale) {
        auto fg = ams_gnn_forward(ctx, "det.s2.gnn", cloud, cfg.gnn);
        feats = fg.first;
        global = fg.second;
    } else {
        auto fg = pointnet_forward(ctx, "det.s2.pn", cloud, cfg.gnn);
        feats = fg.first;
        global = fg.second;
    }
    // concat the global feature onto every point, then max-pool
    std::vector<int> zeros(cloud.size(), 0);
    Tensor<T> fused = concat(1, std::vector<Tensor<T>>{feats, gather_rows(global, zeros)});
    Tensor<T> pooled = max_reduce(fused);  // [1, 2c]

    out.score = sigmoid(mlp(ctx, "det.s2.cls", MlpSpec::relu_stack({pooled.cols(), cfg.head_hidden, 1}), pooled));
    out.box = detail::box_heads(ctx, "det.s2.box", pooled, cfg.enc_s2, cfg.head_hidden);
    out.featurized = true;
    return out;
}

// stage-2 target encoding: the ground truth expressed in the proposal frame
inline BoxTargets encode_stage2_targets(const Box3D& gt, const Box3D& proposal, const BinEncoding& enc) {
    Vec3 center_in_prop = to_box_frame(gt.center(), proposal);
    Box3D rel;
    rel.x = center_in_prop.x;
    rel.y = center_in_prop.y;
    rel.z = center_in_prop.z;
    rel.h = gt.h;
    rel.w = gt.w;
    rel.l = gt.l;
    rel.yaw = normalize_angle(gt.yaw - proposal.yaw);
    MeanSize prop_size{proposal.h, proposal.w, proposal.l};
    return encode_box_targets(rel, Vec3{0, 0, 0}, enc, prop_size);
}

inline Box3D decode_stage2_box(const BoxTargets& t, const Box3D& proposal, const BinEncoding& enc) {
    MeanSize prop_size{proposal.h, proposal.w, proposal.l};
    Box3D rel = decode_box(t, Vec3{0, 0, 0}, enc, prop_size);
    Vec3 world = from_box_frame(rel.center(), proposal);
    Box3D out = rel;
    out.x = world.x;
    out.y = world.y;
    out.z = world.z;
    out.yaw = normalize_angle(proposal.yaw + rel.yaw);
    return out;
}

// Refine one proposal with frozen parameters.
template <typename T>
std::pair<double, Box3D> stage2_refine(ParamStore<T>& det_store, ParamStore<T>& pc_store,
                                       const Proposal& prop, const PointCloud& scene,
                                       const DetectConfig& cfg) {
    ModelCtx<T> ctx{&det_store, nullptr, 0, 0, {}};
    Stage2Output<T> out = stage2_forward(ctx, pc_store, prop, scene, cfg);
    if (!out.featurized) return {0.0, prop.box};
    BoxTargets t = detail::decode_head_row(out.box, 0);
    return {static_cast<double>(out.score.item()), decode_stage2_box(t, prop.box, cfg.enc_s2)};
}

// ---------------------------------------------------------------------------
// full pipeline

template <typename T>
std::vector<Detection> detect_scene(ParamStore<T>& det_store, ParamStore<T>& pc_store,
                                    const PointCloud& scene, const DetectConfig& cfg) {
    ModelCtx<T> ctx{&det_store, nullptr, 0, 0, {}};
    Stage1Output<T> s1 = stage1_forward(ctx, scene, cfg);
    const std::size_t n_props = std::min(cfg.top_k, s1.proposals.size());

    std::vector<Box3D> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < n_props; ++i) {
        auto [score, box] = stage2_refine(det_store, pc_store, s1.proposals[i], scene, cfg);
        boxes.push_back(box);
        scores.push_back(score);
    }
    std::vector<Detection> out;
    for (int kept : nms_bev(boxes, scores, cfg.final_nms)) {
        if (scores[static_cast<std::size_t>(kept)] < cfg.score_thresh) continue;
        out.push_back({boxes[static_cast<std::size_t>(kept)], scores[static_cast<std::size_t>(kept)]});
    }
    std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

}  // namespace graphdet
