#pragma once

#include <limits>
#include <string>
#include <vector>

#include "graphdet/geom.hpp"
#include "graphdet/graphnet.hpp"
#include "graphdet/nn.hpp"
#include "graphdet/tensor.hpp"

namespace graphdet {

// Sizing of the completion network. The three decoder resolutions must nest
// (m1 | m2 | m); encoder_points caps the cost of the multi-resolution views.
struct CompletionConfig {
    std::size_t m1 = 64;
    std::size_t m2 = 256;
    std::size_t m = 1024;
    std::size_t encoder_points = 192;  // full-res view size; halved twice
    std::size_t min_points = 64;       // inputs below this are padded
    std::size_t k = 16;
    std::size_t f_width = 640;   // per-view latent; 3 views concat to 1920
    std::size_t latent = 1024;   // fused V
    std::size_t fc1 = 1024, fc2 = 512, fc3 = 256;  // decoder feature layers
    std::size_t edge_hidden = 64;
    double alpha = 0.5;          // multi-level loss weight
    double lambda_com = 1.0;
    double lambda_adv = 0.01;
    // pc_m: predict the missing region, keep inputs (default)
    // pc_o: regenerate the whole shape, output replaces input
    // no_ge: PointNet view encoders instead of graph encoders
    // no_mr: single full-resolution view
    std::string variant = "pc_m";

    void validate() const {
        if (m1 == 0 || m2 % m1 != 0 || m % m2 != 0)
            throw ConfigError("completion: resolutions must nest, got m1=" + std::to_string(m1) +
                              " m2=" + std::to_string(m2) + " m=" + std::to_string(m));
        if (variant != "pc_m" && variant != "pc_o" && variant != "no_ge" && variant != "no_mr")
            throw ConfigError("completion: unknown variant '" + variant + "'");
    }
};

// decoder output at the three pyramid levels
template <typename T>
struct PpdOutput {
    Tensor<T> coarse;  // [m1, 3]
    Tensor<T> middle;  // [m2, 3]
    Tensor<T> fine;    // [m, 3]
};

// one training example: partial input plus missing-region targets at the
// decoder's three resolutions (coarse/middle are FPS subsets of the full
// missing region)
struct CompletionSample {
    PointCloud input;        // partial cloud, box frame
    PointCloud full;         // complete shape, box frame
    PointCloud target_fine;  // missing region (pc_m) or full shape (pc_o)
    PointCloud target_middle;
    PointCloud target_coarse;
};

inline CompletionSample make_completion_sample(const PointCloud& partial, const PointCloud& full,
                                               const PointCloud& missing, const CompletionConfig& cfg,
                                               std::uint64_t seed) {
    cfg.validate();
    CompletionSample s;
    s.input = partial;
    s.full = full;
    const PointCloud& region = cfg.variant == "pc_o" ? full : missing;
    if (region.empty()) throw DataError("make_completion_sample: empty target region");
    // resample the region to exactly m points, then FPS down for the levels
    std::vector<int> idx(cfg.m);
    if (region.size() >= cfg.m) {
        idx = farthest_point_sample(region, cfg.m, seed);
    } else {
        for (std::size_t i = 0; i < cfg.m; ++i) idx[i] = static_cast<int>(i % region.size());
    }
    s.target_fine = region.subset(idx);
    s.target_middle = s.target_fine.subset(farthest_point_sample(s.target_fine, cfg.m2, mix_seed(seed, 1)));
    s.target_coarse = s.target_middle.subset(farthest_point_sample(s.target_middle, cfg.m1, mix_seed(seed, 2)));
    return s;
}

namespace detail {

// Edge-convolution view encoder: per-edge MLP on concat(s_i, s_j - s_i),
// max over neighbors, max over points. States are the raw coordinates.
template <typename T>
Tensor<T> edgeconv_encode_view(ModelCtx<T>& ctx, const std::string& prefix, const PointCloud& view,
                               std::size_t k, std::size_t hidden, std::size_t out_width) {
    const std::size_t n = view.size();
    const std::size_t kk = std::min(k, n - 1);
    const std::vector<int> nbr = knn(view, kk);
    const std::vector<int> src = edge_source_index(n, kk);
    Tensor<T> coords = ctx.constant(view.template coords_tensor<T>());
    Tensor<T> s_i = gather_rows(coords, src);
    Tensor<T> s_j = gather_rows(coords, nbr);
    Tensor<T> edge_in = concat(1, std::vector<Tensor<T>>{s_i, sub(s_j, s_i)});
    Tensor<T> e = mlp(ctx, prefix, MlpSpec::relu_stack({6, hidden, out_width}, Activation::relu), edge_in);
    return max_reduce(max_groups(e, kk));  // [1, out_width]
}

// PointNet view encoder used by the no_ge ablation.
template <typename T>
Tensor<T> pointnet_encode_view(ModelCtx<T>& ctx, const std::string& prefix, const PointCloud& view,
                               std::size_t hidden, std::size_t out_width) {
    Tensor<T> coords = ctx.constant(view.template coords_tensor<T>());
    Tensor<T> f = mlp(ctx, prefix, MlpSpec::relu_stack({3, hidden, out_width}, Activation::relu), coords);
    return max_reduce(f);
}

}  // namespace detail

template <typename T>
struct MrgeResult {
    Tensor<T> latent;  // [1, latent]
    bool padded = false;
};

// Multi-resolution encoder: FPS the input to full/half/quarter views, encode
// each independently, concatenate, fuse to the latent V.
template <typename T>
MrgeResult<T> mrge_encode(ModelCtx<T>& ctx, const std::string& prefix, const PointCloud& input,
                          const CompletionConfig& cfg) {
    cfg.validate();
    if (input.empty()) throw DataError("mrge_encode: empty input");
    MrgeResult<T> result;
    PointCloud x = input;
    if (x.size() < cfg.min_points) {
        // pad by resampling with replacement so the view sizes stay valid
        result.padded = true;
        PointCloud padded = x;
        std::size_t i = 0;
        while (padded.size() < cfg.min_points) {
            padded.points.push_back(x.points[i % x.size()]);
            if (!x.flags.empty()) padded.flags.push_back(x.flags[i % x.size()]);
            ++i;
        }
        x = std::move(padded);
    }

    const std::size_t n0 = std::min(cfg.encoder_points, x.size());
    const bool multi_res = cfg.variant != "no_mr";
    std::vector<std::size_t> view_sizes = multi_res
        ? std::vector<std::size_t>{n0, n0 / 2, n0 / 4}
        : std::vector<std::size_t>{n0};

    std::vector<Tensor<T>> latents;
    for (std::size_t vi = 0; vi < view_sizes.size(); ++vi) {
        PointCloud view = x.subset(farthest_point_sample(x, view_sizes[vi], mix_seed(ctx.fps_seed, vi)));
        const std::string vp = prefix + ".view" + std::to_string(vi);
        if (cfg.variant == "no_ge")
            latents.push_back(detail::pointnet_encode_view(ctx, vp + ".pn", view, cfg.edge_hidden, cfg.f_width));
        else
            latents.push_back(detail::edgeconv_encode_view(ctx, vp + ".edge", view, cfg.k, cfg.edge_hidden, cfg.f_width));
    }
    Tensor<T> cat = latents.size() == 1 ? latents[0] : concat(1, latents);
    result.latent = mlp(ctx, prefix + ".fuse",
                        MlpSpec({latents.size() * cfg.f_width, cfg.latent}, {Activation::relu}), cat);
    return result;
}

// Coarse-to-fine decoder. Children are emitted as offsets from their parent
// point: m2/m1 middle points per coarse point, m/m2 fine points per middle.
template <typename T>
PpdOutput<T> ppd_decode(ModelCtx<T>& ctx, const std::string& prefix, const Tensor<T>& latent,
                        const CompletionConfig& cfg) {
    cfg.validate();
    if (latent.rows() != 1 || latent.cols() != cfg.latent)
        throw ShapeError("ppd_decode: latent " + shape_str(latent) + ", expected [1," + std::to_string(cfg.latent) + "]");

    Tensor<T> fc1 = mlp(ctx, prefix + ".fc1", MlpSpec({cfg.latent, cfg.fc1}, {Activation::relu}), latent);
    Tensor<T> fc2 = mlp(ctx, prefix + ".fc2", MlpSpec({cfg.fc1, cfg.fc2}, {Activation::relu}), fc1);
    Tensor<T> fc3 = mlp(ctx, prefix + ".fc3", MlpSpec({cfg.fc2, cfg.fc3}, {Activation::relu}), fc2);

    PpdOutput<T> out;
    out.coarse = reshape(mlp(ctx, prefix + ".coarse", MlpSpec({cfg.fc3, cfg.m1 * 3}, {Activation::none}), fc3),
                         {cfg.m1, 3});

    const std::size_t mid_per_parent = cfg.m2 / cfg.m1;
    std::vector<int> mid_parent(cfg.m2);
    for (std::size_t i = 0; i < cfg.m2; ++i) mid_parent[i] = static_cast<int>(i / mid_per_parent);
    Tensor<T> mid_off = reshape(mlp(ctx, prefix + ".middle", MlpSpec({cfg.fc2, cfg.m2 * 3}, {Activation::none}), fc2),
                                {cfg.m2, 3});
    out.middle = add(gather_rows(out.coarse, mid_parent), mid_off);

    const std::size_t fine_per_parent = cfg.m / cfg.m2;
    std::vector<int> fine_parent(cfg.m);
    for (std::size_t i = 0; i < cfg.m; ++i) fine_parent[i] = static_cast<int>(i / fine_per_parent);
    Tensor<T> fine_off = reshape(mlp(ctx, prefix + ".fine", MlpSpec({cfg.fc1, cfg.m * 3}, {Activation::none}), fc1),
                                 {cfg.m, 3});
    out.fine = add(gather_rows(out.middle, fine_parent), fine_off);
    return out;
}

// ---------------------------------------------------------------------------
// losses

// Symmetric mean squared nearest-neighbor distance. Differentiable w.r.t.
// both sets; argmin ties resolve to the lower index.
template <typename T>
Tensor<T> chamfer(const Tensor<T>& s1, const Tensor<T>& s2) {
    if (s1.cols() != 3 || s2.cols() != 3)
        throw ShapeError("chamfer: expected [n,3] sets, got " + shape_str(s1) + " and " + shape_str(s2));
    const std::size_t n1 = s1.rows(), n2 = s2.rows();
    if (n1 == 0 || n2 == 0) throw DataError("chamfer: empty point set");

    auto nearest = [](const Tensor<T>& a, const Tensor<T>& b) {
        std::vector<int> nn(a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (std::size_t j = 0; j < b.rows(); ++j) {
                double d = 0;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double diff = static_cast<double>(a.data[i * 3 + c]) - static_cast<double>(b.data[j * 3 + c]);
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    arg = static_cast<int>(j);
                }
            }
            nn[i] = arg;
        }
        return nn;
    };

    Tensor<T> d12 = sum(square(sub(s1, gather_rows(s2, nearest(s1, s2)))));
    Tensor<T> d21 = sum(square(sub(s2, gather_rows(s1, nearest(s2, s1)))));
    return add(scale(d12, T(1) / static_cast<T>(n1)), scale(d21, T(1) / static_cast<T>(n2)));
}

// alpha * cd(coarse) + 2*alpha * cd(middle) + cd(fine)
template <typename T>
Tensor<T> completion_loss(const PpdOutput<T>& out, const CompletionSample& sample, T alpha) {
    Tensor<T> cd1 = chamfer(out.coarse, sample.target_coarse.template coords_tensor<T>());
    Tensor<T> cd2 = chamfer(out.middle, sample.target_middle.template coords_tensor<T>());
    Tensor<T> cd3 = chamfer(out.fine, sample.target_fine.template coords_tensor<T>());
    return add(add(scale(cd1, alpha), scale(cd2, T(2) * alpha)), cd3);
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_com, const Tensor<T>& l_adv_g, T lambda_com, T lambda_adv) {
    if (lambda_com < 0 || lambda_adv < 0) throw ConfigError("total_loss: weights must be non-negative");
    return add(scale(l_com, lambda_com), scale(l_adv_g, lambda_adv));
}

// ---------------------------------------------------------------------------
// discriminator

// Two edge-convolution layers, pooled, then the FC stack [256,128,16,1] and
// a sigmoid. Scores in (0, 1).
template <typename T>
Tensor<T> discriminate(ModelCtx<T>& ctx, const std::string& prefix, const Tensor<T>& cloud,
                       const CompletionConfig& cfg) {
    const std::size_t n = cloud.rows();
    if (n == 0) throw DataError("discriminate: empty cloud");
    Tensor<T> h;
    if (n == 1) {
        // no neighbors to convolve over; degenerate to the point itself
        h = mlp(ctx, prefix + ".solo", MlpSpec::relu_stack({3, 64, 128}, Activation::relu), cloud);
    } else {
        const std::size_t k = std::min<std::size_t>(cfg.k, n - 1);
        PointCloud pc = PointCloud::from_tensor(cloud);
        const std::vector<int> nbr = knn(pc, k);
        const std::vector<int> src = detail::edge_source_index(n, k);

        Tensor<T> s_i = gather_rows(cloud, src);
        Tensor<T> s_j = gather_rows(cloud, nbr);
        Tensor<T> e1 = mlp(ctx, prefix + ".gcn1",
                           MlpSpec({6, 64}, {Activation::relu}),
                           concat(1, std::vector<Tensor<T>>{s_i, sub(s_j, s_i)}));
        Tensor<T> h1 = max_groups(e1, k);  // [n, 64]

        Tensor<T> h1_i = gather_rows(h1, src);
        Tensor<T> h1_j = gather_rows(h1, nbr);
        Tensor<T> e2 = mlp(ctx, prefix + ".gcn2",
                           MlpSpec({128, 128}, {Activation::relu}),
                           concat(1, std::vector<Tensor<T>>{h1_i, sub(h1_j, h1_i)}));
        h = max_groups(e2, k);  // [n, 128]
    }
    Tensor<T> pooled = max_reduce(h);  // [1, 128]
    Tensor<T> logit = mlp(ctx, prefix + ".fc",
                          MlpSpec::relu_stack({128, 256, 128, 16, 1}, Activation::none), pooled);
    return sigmoid(logit);
}

// Discriminator objective (negated for minimization) and the non-saturating
// generator surrogate, both batch-mean normalized. Scores are clamped to
// [eps, 1-eps] before the logs.
template <typename T>
Tensor<T> discriminator_loss(const std::vector<Tensor<T>>& real_scores, const std::vector<Tensor<T>>& fake_scores) {
    if (real_scores.empty() || fake_scores.empty()) throw DataError("discriminator_loss: empty batch");
    const T eps = static_cast<T>(1e-7);
    Tensor<T> real_cat = concat(0, real_scores);
    Tensor<T> fake_cat = concat(0, fake_scores);
    Tensor<T> term_real = mean(log(clamp(real_cat, eps, T(1) - eps)));
    Tensor<T> term_fake = mean(log(affine(clamp(fake_cat, eps, T(1) - eps), T(-1), T(1))));
    return scale(add(term_real, term_fake), T(-1));
}

template <typename T>
Tensor<T> generator_adversarial_loss(const std::vector<Tensor<T>>& fake_scores) {
    if (fake_scores.empty()) throw DataError("generator_adversarial_loss: empty batch");
    const T eps = static_cast<T>(1e-7);
    Tensor<T> fake_cat = concat(0, fake_scores);
    return scale(mean(log(clamp(fake_cat, eps, T(1) - eps))), T(-1));
}

// ---------------------------------------------------------------------------
// inference

// Fine-level prediction for a canonical (box-frame) cloud. This is the
// quantity that is exactly invariant to world-frame translation of the
// proposal: only canonical coordinates ever enter the network.
template <typename T>
PointCloud predict_missing_box_frame(ParamStore<T>& store, const PointCloud& x_box,
                                     const CompletionConfig& cfg) {
    cfg.validate();
    ModelCtx<T> ctx{&store, nullptr, 0, 0, {}};
    MrgeResult<T> enc = mrge_encode(ctx, "pc.mrge", x_box, cfg);
    PpdOutput<T> dec = ppd_decode(ctx, "pc.ppd", enc.latent, cfg);
    return PointCloud::from_tensor(dec.fine);
}

// Completes one proposal: canonicalize, predict the fine level, merge.
// Input points pass through bitwise untouched; generated points carry flag 1.
// Under pc_o the prediction replaces the input instead.
template <typename T>
PointCloud complete_proposal(ParamStore<T>& store, const PointCloud& x_world, const Box3D& box,
                             const CompletionConfig& cfg) {
    PointCloud generated_box = predict_missing_box_frame(store, to_box_frame(x_world, box), cfg);
    PointCloud generated = from_box_frame(generated_box, box);

    PointCloud out;
    if (cfg.variant != "pc_o") {
        out.points = x_world.points;  // bitwise preserved
        out.flags.assign(x_world.size(), 0);
    }
    for (const Vec3& p : generated.points) {
        out.points.push_back(p);
        out.flags.push_back(1);
    }
    return out;
}

}  // namespace graphdet
