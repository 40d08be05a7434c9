#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "graphdet/common.hpp"
#include "graphdet/completion.hpp"
#include "graphdet/detect.hpp"
#include "graphdet/graphnet.hpp"

namespace graphdet {

// Every tunable of the pipeline, parsed from a flat key=value file with '#'
// comments. Unknown keys are rejected; the resolved config is echoed into
// each run's manifest. Full-scale settings from the reference protocol are
// noted next to the desk-scale defaults.
struct RunConfig {
    std::uint64_t seed = 0;
    int jobs = 1;

    // data generation
    std::size_t n_scenes = 200;
    std::size_t n_val_scenes = 50;
    std::size_t n_shapes = 64;       // completion pool (full scale: 1824 + 2000 finetune)
    std::size_t n_val_shapes = 8;
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    std::size_t points_per_shape = 2048;
    double corrupt_radius_factor = 0.25;  // fraction of the bounding radius
    bool scene_style_subsample = true;    // second pool mirrors scene sparsity
    std::size_t ground_points = 800;
    std::size_t n_clutter = 3;

    // completion network
    std::size_t pc_m1 = 64;
    std::size_t pc_m2 = 256;
    std::size_t pc_m = 1024;
    std::size_t pc_encoder_points = 192;
    std::size_t pc_k = 16;
    std::size_t pc_f_width = 640;
    std::size_t pc_latent = 1024;
    std::size_t pc_fc1 = 1024, pc_fc2 = 512, pc_fc3 = 256;
    double pc_alpha = 0.5;
    double lambda_com = 1.0;
    double lambda_adv = 0.01;
    std::string pc_variant = "pc_m";  // pc_m | pc_o | no_ge | no_mr

    // completion training (full scale: 60 epochs, Adam, lr 1e-4, batch 32)
    std::size_t pc_epochs = 40;
    double pc_lr = 1e-3;
    double disc_lr = 1e-3;
    std::size_t disc_points = 128;

    // detector (full scale: stage-1 200 epochs/batch 16, stage-2 80 epochs/batch 8, lr 0.002)
    std::size_t s1_epochs = 60;
    std::size_t s2_epochs = 30;
    double s1_lr = 0.002;
    double s2_lr = 0.002;
    double tau_fg = 0.3;
    double bin_search_range = 3.0;
    double bin_size = 0.5;
    std::size_t n_theta_bins = 12;
    std::size_t top_k = 64;
    double score_thresh = 0.3;
    double crop_margin = 0.5;
    std::size_t gnn_points = 128;
    std::size_t gnn_width = 64;
    std::string gnn_scales = "8,16";
    std::size_t gnn_layers = 4;
    std::size_t s2_proposals_per_scene = 4;
    std::size_t backbone_l1 = 1024;
    std::size_t backbone_l2 = 256;
    std::size_t min_scene_points = 256;

    // ablation switches
    bool use_pc = true;
    bool use_ams_gnn = true;
    bool use_ms = true;
    bool use_la = true;
    bool use_ga = true;

    // ablation runner
    std::size_t ablate_seeds = 3;
    std::size_t ablate_s1_epochs = 8;
    std::size_t ablate_s2_epochs = 4;
    std::size_t ablate_pc_epochs = 10;

    std::vector<int> parsed_scales() const {
        std::vector<int> out;
        std::stringstream ss(gnn_scales);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) continue;
            out.push_back(std::stoi(tok));
        }
        if (out.empty()) throw ConfigError("gnn_scales: no scales given");
        return out;
    }

    CompletionConfig completion_config() const {
        CompletionConfig c;
        c.m1 = pc_m1;
        c.m2 = pc_m2;
        c.m = pc_m;
        c.encoder_points = pc_encoder_points;
        c.k = pc_k;
        c.f_width = pc_f_width;
        c.latent = pc_latent;
        c.fc1 = pc_fc1;
        c.fc2 = pc_fc2;
        c.fc3 = pc_fc3;
        c.alpha = pc_alpha;
        c.lambda_com = lambda_com;
        c.lambda_adv = lambda_adv;
        c.variant = pc_variant;
        c.validate();
        return c;
    }

    GnnConfig gnn_config() const {
        GnnConfig g;
        g.scales = parsed_scales();
        g.state_width = gnn_width;
        g.num_layers = gnn_layers;
        g.use_multi_scale = use_ms;
        g.use_local_attention = use_la;
        g.use_global_attention = use_ga;
        return g;
    }

    DetectConfig detect_config() const {
        DetectConfig d;
        d.enc_s1 = BinEncoding{bin_search_range, bin_size, n_theta_bins};
        d.enc_s1.validate();
        d.tau_fg = tau_fg;
        d.top_k = top_k;
        d.score_thresh = score_thresh;
        d.crop_margin = crop_margin;
        d.gnn_points = gnn_points;
        d.l1_points = backbone_l1;
        d.l2_points = backbone_l2;
        d.min_scene_points = min_scene_points;
        d.use_pc = use_pc;
        d.use_ams_gnn = use_ams_gnn;
        d.gnn = gnn_config();
        d.pc = completion_config();
        return d;
    }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config: bad boolean for '" + key + "': " + v);
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
    std::istringstream is(v);
    T out;
    if (!(is >> out)) throw ConfigError("config: bad value for '" + key + "': " + v);
    std::string rest;
    if (is >> rest) throw ConfigError("config: trailing junk for '" + key + "': " + v);
    return out;
}

}  // namespace detail

// The single place keys are spelled; apply + echo share it via macro lists.
#define GRAPHDET_CONFIG_FIELDS(NUM, BOOL, STR)                              \
    NUM(seed) NUM(jobs)                                                     \
    NUM(n_scenes) NUM(n_val_scenes) NUM(n_shapes) NUM(n_val_shapes)         \
    NUM(min_objects) NUM(max_objects) NUM(points_per_shape)                 \
    NUM(corrupt_radius_factor) BOOL(scene_style_subsample)                  \
    NUM(ground_points) NUM(n_clutter)                                       \
    NUM(backbone_l1) NUM(backbone_l2) NUM(min_scene_points)                 \
    NUM(pc_m1) NUM(pc_m2) NUM(pc_m) NUM(pc_encoder_points) NUM(pc_k)        \
    NUM(pc_f_width) NUM(pc_latent) NUM(pc_fc1) NUM(pc_fc2) NUM(pc_fc3)      \
    NUM(pc_alpha) NUM(lambda_com) NUM(lambda_adv) STR(pc_variant)           \
    NUM(pc_epochs) NUM(pc_lr) NUM(disc_lr) NUM(disc_points)                 \
    NUM(s1_epochs) NUM(s2_epochs) NUM(s1_lr) NUM(s2_lr) NUM(tau_fg)         \
    NUM(bin_search_range) NUM(bin_size) NUM(n_theta_bins) NUM(top_k)        \
    NUM(score_thresh) NUM(crop_margin) NUM(gnn_points) NUM(gnn_width)       \
    STR(gnn_scales) NUM(gnn_layers) NUM(s2_proposals_per_scene)             \
    BOOL(use_pc) BOOL(use_ams_gnn) BOOL(use_ms) BOOL(use_la) BOOL(use_ga)   \
    NUM(ablate_seeds) NUM(ablate_s1_epochs) NUM(ablate_s2_epochs)           \
    NUM(ablate_pc_epochs)

inline void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
#define GD_NUM(name)                                                             \
    if (key == #name) {                                                          \
        cfg.name = detail::parse_number<decltype(cfg.name)>(value, key);          \
        return;                                                                  \
    }
#define GD_BOOL(name)                                \
    if (key == #name) {                              \
        cfg.name = detail::parse_bool(value, key);   \
        return;                                      \
    }
#define GD_STR(name)         \
    if (key == #name) {      \
        cfg.name = value;    \
        return;              \
    }
    GRAPHDET_CONFIG_FIELDS(GD_NUM, GD_BOOL, GD_STR)
#undef GD_NUM
#undef GD_BOOL
#undef GD_STR
    throw ConfigError("config: unknown key '" + key + "'");
}

inline std::map<std::string, std::string> config_to_map(const RunConfig& cfg) {
    std::map<std::string, std::string> out;
    std::ostringstream os;
    os.precision(17);
#define GD_NUM(name)        \
    os.str("");             \
    os << cfg.name;         \
    out[#name] = os.str();
#define GD_BOOL(name) out[#name] = cfg.name ? "1" : "0";
#define GD_STR(name) out[#name] = cfg.name;
    GRAPHDET_CONFIG_FIELDS(GD_NUM, GD_BOOL, GD_STR)
#undef GD_NUM
#undef GD_BOOL
#undef GD_STR
    return out;
}

// one key=value per line, '#' starts a comment
inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        std::size_t end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config '" + path + "' line " + std::to_string(line_no) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto strip = [](std::string& s) {
            const std::size_t b = s.find_first_not_of(" \t");
            const std::size_t e = s.find_last_not_of(" \t");
            s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
        };
        strip(key);
        strip(value);
        apply_config_value(cfg, key, value);
    }
}

inline void write_manifest(const std::string& path, const RunConfig& cfg, const std::string& code_version,
                           const std::string& command) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_manifest: cannot open '" + path + "'");
    // provenance lines are comments so the manifest itself parses as a config
    f << "# command: " << command << "\n";
    f << "# code_version: " << code_version << "\n";
    for (const auto& [k, v] : config_to_map(cfg)) f << k << "=" << v << "\n";
}

}  // namespace graphdet
