#pragma once

#include <string>
#include <vector>

#include "graphdet/geom.hpp"
#include "graphdet/nn.hpp"
#include "graphdet/tensor.hpp"

namespace graphdet {

// Vertex set over a point cloud plus one directed k-NN edge list per scale.
struct Graph {
    PointCloud cloud;
    std::vector<int> scales;                       // k per scale
    std::vector<std::vector<int>> edges_per_scale; // flat [n,k] neighbor ids

    std::size_t num_vertices() const { return cloud.size(); }
};

inline Graph build_graph(const PointCloud& cloud, const std::vector<int>& scales) {
    Graph g;
    g.cloud = cloud;
    g.scales = scales;
    for (int k : scales) g.edges_per_scale.push_back(knn(cloud, static_cast<std::size_t>(k)));
    return g;
}

// Layer widths for the attention message-passing stack.
struct GnnConfig {
    std::vector<int> scales{8, 16};
    std::size_t state_width = 64;   // c, identical across the four layers
    std::size_t mlp1_hidden = 0;    // position-offset MLP (0 = single linear layer)
    std::size_t mlp2_hidden = 64;   // edge-feature MLP
    std::size_t mlp3_hidden = 32;   // edge-logit MLP
    std::size_t flag_embed = 8;
    std::size_t num_layers = 4;
    bool use_multi_scale = true;
    bool use_local_attention = true;
    bool use_global_attention = true;

    std::vector<int> active_scales() const {
        if (use_multi_scale || scales.size() <= 1) return scales;
        return {scales.back()};
    }
};

namespace detail {

inline std::vector<int> edge_source_index(std::size_t n, std::size_t k) {
    std::vector<int> idx(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) idx[i * k + j] = static_cast<int>(i);
    return idx;
}

template <typename T>
MlpSpec spec_or_linear(std::size_t in, std::size_t hidden, std::size_t out, Activation last) {
    if (hidden == 0) return MlpSpec({in, out}, {last});
    return MlpSpec({in, hidden, out}, {Activation::relu, last});
}

}  // namespace detail

// One attention message-passing layer over every scale of the graph:
//   dp_i  = MLP1(s_i)
//   e_ij  = MLP2(concat(p_j - p_i + dp_i, s_j - s_i, s_i))
//   a_ij  = softmax_j MLP3(e_ij)          (uniform when attention disabled)
//   out_i = sum_j a_ij * e_ij
// Per-scale outputs are concatenated and fused back to state_width.
template <typename T>
Tensor<T> ams_gcn_layer(ModelCtx<T>& ctx, const std::string& prefix, const Graph& graph,
                        const Tensor<T>& positions, const Tensor<T>& states, const GnnConfig& cfg,
                        std::vector<Tensor<T>>* alphas_out = nullptr) {
    const std::size_t n = graph.num_vertices();
    const std::size_t c = states.cols();
    if (states.rows() != n) throw ShapeError("ams_gcn_layer: states " + shape_str(states) + " for " + std::to_string(n) + " vertices");

    const std::vector<int> active = cfg.active_scales();
    std::vector<Tensor<T>> per_scale;
    for (std::size_t si = 0; si < active.size(); ++si) {
        const int k_signed = active[si];
        const std::size_t k = static_cast<std::size_t>(k_signed);
        // scale index into the prebuilt edge lists
        std::size_t gidx = 0;
        bool found = false;
        for (std::size_t gi = 0; gi < graph.scales.size(); ++gi)
            if (graph.scales[gi] == k_signed) {
                gidx = gi;
                found = true;
            }
        if (!found) throw ConfigError("ams_gcn_layer: scale k=" + std::to_string(k_signed) + " missing from graph");
        const std::vector<int>& nbr = graph.edges_per_scale[gidx];
        if (nbr.empty()) throw DataError("ams_gcn_layer: empty neighbor set");
        const std::vector<int> src = detail::edge_source_index(n, k);
        const std::string sp = prefix + ".scale" + std::to_string(si);

        Tensor<T> dp = mlp(ctx, sp + ".mlp1", detail::spec_or_linear<T>(c, cfg.mlp1_hidden, 3, Activation::none), states);

        Tensor<T> p_j = gather_rows(positions, nbr);
        Tensor<T> p_i = gather_rows(positions, src);
        Tensor<T> s_j = gather_rows(states, nbr);
        Tensor<T> s_i = gather_rows(states, src);
        Tensor<T> dp_i = gather_rows(dp, src);

        Tensor<T> edge_in = concat(1, std::vector<Tensor<T>>{add(sub(p_j, p_i), dp_i), sub(s_j, s_i), s_i});
        Tensor<T> e = mlp(ctx, sp + ".mlp2", detail::spec_or_linear<T>(3 + 2 * c, cfg.mlp2_hidden, c, Activation::none), edge_in);

        Tensor<T> alpha;
        if (cfg.use_local_attention) {
            Tensor<T> logits = mlp(ctx, sp + ".mlp3", detail::spec_or_linear<T>(c, cfg.mlp3_hidden, 1, Activation::none), e);
            alpha = reshape(softmax_rows(reshape(logits, {n, k})), {n * k, 1});
        } else {
            alpha = ctx.constant(Tensor<T>::full(n * k, 1, T(1) / static_cast<T>(k)));
        }
        if (alphas_out) alphas_out->push_back(reshape(alpha, {n, k}));
        per_scale.push_back(sum_groups(mul(e, alpha), k));
    }

    Tensor<T> cat = per_scale.size() == 1 ? per_scale[0] : concat(1, per_scale);
    return mlp(ctx, prefix + ".fuse", MlpSpec({per_scale.size() * c, cfg.state_width}, {Activation::relu}), cat);
}

// Attention-weighted pooling of all vertex states into one global feature.
// With attention disabled this degenerates to the arithmetic mean.
template <typename T>
Tensor<T> global_attention(ModelCtx<T>& ctx, const std::string& prefix, const Tensor<T>& states,
                           const GnnConfig& cfg) {
    const std::size_t n = states.rows();
    if (n == 0) throw ShapeError("global_attention: empty state matrix");
    Tensor<T> weights;
    if (cfg.use_global_attention) {
        Tensor<T> logits = mlp(ctx, prefix, detail::spec_or_linear<T>(states.cols(), cfg.mlp3_hidden, 1, Activation::none), states);
        weights = softmax_rows(transpose(logits));  // [1, n]
    } else {
        weights = ctx.constant(Tensor<T>::full(1, n, T(1) / static_cast<T>(n)));
    }
    return matmul(weights, states);  // [1, c]
}

// Full feature extractor: input embedding, four AMS-GCN layers over a fixed
// topology, then global attention. The cloud is expected in box frame.
// Returns per-point features [n, c] and the global feature [1, c].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> ams_gnn_forward(ModelCtx<T>& ctx, const std::string& prefix,
                                                const PointCloud& cloud, const GnnConfig& cfg) {
    const std::size_t n = cloud.size();
    for (int k : cfg.active_scales())
        if (static_cast<std::size_t>(k) >= n)
            throw DataError("ams_gnn_forward: need more than " + std::to_string(k) + " points, got " + std::to_string(n));

    Graph graph = build_graph(cloud, cfg.active_scales());
    Tensor<T> positions = ctx.constant(cloud.template coords_tensor<T>());

    // input state: box-frame coordinate plus a learned embedding of the
    // original-vs-generated flag
    Tensor<T> embed_table = ctx.param(prefix + ".flag_embed", 2, cfg.flag_embed, 2);
    std::vector<int> flag_idx(n);
    for (std::size_t i = 0; i < n; ++i) flag_idx[i] = cloud.flag(i) ? 1 : 0;
    Tensor<T> flag_feat = gather_rows(embed_table, flag_idx);
    Tensor<T> s0_in = concat(1, std::vector<Tensor<T>>{positions, flag_feat});
    Tensor<T> states = mlp(ctx, prefix + ".embed",
                           MlpSpec({3 + cfg.flag_embed, cfg.state_width}, {Activation::relu}), s0_in);

    for (std::size_t layer = 0; layer < cfg.num_layers; ++layer)
        states = ams_gcn_layer(ctx, prefix + ".layer" + std::to_string(layer), graph, positions, states, cfg);

    Tensor<T> global = global_attention(ctx, prefix + ".ga", states, cfg);
    return {states, global};
}

// PointNet-style fallback used when the graph network is ablated away:
// shared per-point MLP plus max-pool, same output contract.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> pointnet_forward(ModelCtx<T>& ctx, const std::string& prefix,
                                                 const PointCloud& cloud, const GnnConfig& cfg) {
    Tensor<T> positions = ctx.constant(cloud.template coords_tensor<T>());
    Tensor<T> embed_table = ctx.param(prefix + ".flag_embed", 2, cfg.flag_embed, 2);
    std::vector<int> flag_idx(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) flag_idx[i] = cloud.flag(i) ? 1 : 0;
    Tensor<T> s0 = concat(1, std::vector<Tensor<T>>{positions, gather_rows(embed_table, flag_idx)});
    Tensor<T> feats = mlp(ctx, prefix + ".mlp",
                          MlpSpec::relu_stack({3 + cfg.flag_embed, cfg.state_width, cfg.state_width}, Activation::relu),
                          s0);
    return {feats, max_reduce(feats)};
}

}  // namespace graphdet
