// Command-line driver: dataset synthesis, training, evaluation, ablation,
// completion visualization, and format export.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "graphdet/checkpoint.hpp"
#include "graphdet/config.hpp"
#include "graphdet/ply.hpp"
#include "graphdet/train.hpp"
#include "graphdet/version.hpp"

using namespace graphdet;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "runs/default";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 1;
    bool jobs_set = false;
    bool force = false;
};

RunConfig resolve_config(const GlobalOpts& g) {
    RunConfig cfg;
    if (!g.config_path.empty()) apply_config_file(cfg, g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    if (g.jobs_set) cfg.jobs = g.jobs;
    return cfg;
}

void ensure_fresh_dir(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw DataError("output '" + dir + "' exists; pass --force to overwrite");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

void emit_manifest(const std::string& dir, const RunConfig& cfg, const std::string& command) {
    fs::create_directories(dir);
    write_manifest((fs::path(dir) / "manifest.txt").string(), cfg, kCodeVersion, command);
}

std::vector<std::array<std::uint8_t, 3>> flag_colors(const PointCloud& cloud) {
    std::vector<std::array<std::uint8_t, 3>> colors;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.flag(i))
            colors.push_back({255, 0, 0});  // generated
        else
            colors.push_back({0, 0, 255});  // original
    }
    return colors;
}

Box3D parse_box(const std::string& text) {
    std::stringstream ss(text);
    std::string tok;
    std::vector<double> v;
    while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
    if (v.size() != 7) throw ConfigError("--box expects x,y,z,h,w,l,yaw");
    return Box3D{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

Box3D fit_box(const PointCloud& cloud) {
    Vec3 lo{1e18, 1e18, 1e18}, hi{-1e18, -1e18, -1e18};
    for (const Vec3& p : cloud.points) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    Box3D b;
    b.x = (lo.x + hi.x) / 2;
    b.y = (lo.y + hi.y) / 2;
    b.z = (lo.z + hi.z) / 2;
    b.l = std::max(0.5, hi.x - lo.x);
    b.w = std::max(0.5, hi.y - lo.y);
    b.h = std::max(0.5, hi.z - lo.z);
    return b;
}

PointCloud load_cloud_any(const std::string& path) {
    if (path.size() > 4 && path.substr(path.size() - 4) == ".bin") return kitti_read_velodyne(path);
    return read_ply(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic LiDAR detection pipeline: completion + graph network refinement"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--out", g.out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", g.seed, "global random seed");
    auto* jobs_opt = app.add_option("--jobs", g.jobs, "evaluation worker count");
    app.add_flag("--force", g.force, "overwrite existing outputs");
    app.fallthrough();

    // synth
    auto* synth = app.add_subcommand("synth", "generate the synthetic datasets (KITTI layout + completion pairs)");
    std::int64_t n_scenes_override = -1, n_shapes_override = -1;
    synth->add_option("--n-scenes", n_scenes_override, "override n_scenes");
    synth->add_option("--n-shapes", n_shapes_override, "override n_shapes");

    // train-pc
    auto* train_pc_cmd = app.add_subcommand("train-pc", "train the completion network");
    std::string pc_dataset;
    train_pc_cmd->add_option("--dataset", pc_dataset, "completion dataset directory")->required();

    // train-det
    auto* train_det_cmd = app.add_subcommand("train-det", "train the two-stage detector");
    std::string det_dataset, pc_ckpt;
    train_det_cmd->add_option("--dataset", det_dataset, "scene dataset directory")->required();
    train_det_cmd->add_option("--pc-checkpoint", pc_ckpt, "pretrained completion checkpoint");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a detector checkpoint");
    std::string eval_dataset, eval_ckpt, eval_pc_ckpt, eval_split = "val";
    eval_cmd->add_option("--dataset", eval_dataset, "scene dataset directory")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "detector checkpoint")->required();
    eval_cmd->add_option("--pc-checkpoint", eval_pc_ckpt, "completion checkpoint (when use_pc)");
    eval_cmd->add_option("--split", eval_split, "train or val");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "run the three ablation grids");
    std::string abl_scenes, abl_completion, abl_table = "all";
    ablate_cmd->add_option("--scenes", abl_scenes, "scene dataset directory")->required();
    ablate_cmd->add_option("--completion", abl_completion, "completion dataset directory")->required();
    ablate_cmd->add_option("--table", abl_table, "which grid: modules|gnn|pc|all");

    // complete
    auto* complete_cmd = app.add_subcommand("complete", "complete one cloud and export before/after PLY");
    std::string comp_input, comp_ckpt, comp_box_text;
    complete_cmd->add_option("--input", comp_input, "input cloud (.ply or .bin)")->required();
    complete_cmd->add_option("--checkpoint", comp_ckpt, "completion checkpoint")->required();
    complete_cmd->add_option("--box", comp_box_text, "proposal box x,y,z,h,w,l,yaw (fitted when omitted)");

    // export
    auto* export_cmd = app.add_subcommand("export", "convert velodyne .bin to .ply, or list a checkpoint");
    std::string exp_input, exp_output;
    export_cmd->add_option("--input", exp_input, ".bin cloud or .pfck checkpoint")->required();
    export_cmd->add_option("--output", exp_output, "output path (.ply) for cloud input");

    try {
        app.parse(argc, argv);
        g.seed_set = seed_opt->count() > 0;
        g.jobs_set = jobs_opt->count() > 0;
        RunConfig cfg = resolve_config(g);

        if (*synth) {
            if (n_scenes_override >= 0) {
                cfg.n_scenes = static_cast<std::size_t>(n_scenes_override);
                cfg.n_val_scenes = std::min(cfg.n_val_scenes, cfg.n_scenes / 4);
            }
            if (n_shapes_override >= 0) cfg.n_shapes = static_cast<std::size_t>(n_shapes_override);
            const std::string scene_dir = (fs::path(g.out_dir) / "scenes").string();
            const std::string comp_dir = (fs::path(g.out_dir) / "completion").string();
            ensure_fresh_dir(scene_dir, g.force);
            ensure_fresh_dir(comp_dir, g.force);
            write_scene_dataset(scene_dir, cfg);
            write_completion_dataset(comp_dir, build_completion_set(cfg));
            emit_manifest(g.out_dir, cfg, "synth");
            std::cout << "wrote " << cfg.n_scenes + cfg.n_val_scenes << " scenes to " << scene_dir << "\n";
            std::cout << "wrote " << cfg.n_shapes + cfg.n_val_shapes << " shape pairs to " << comp_dir << "\n";
        } else if (*train_pc_cmd) {
            CompletionSet data = load_completion_dataset(pc_dataset, cfg.completion_config(), cfg.seed);
            emit_manifest(g.out_dir, cfg, "train-pc");
            PcTrainResult r = train_pc(cfg, data, g.out_dir);
            std::cout << "best val cd " << r.best_val_cd << "\ncheckpoint " << r.checkpoint_path << "\n";
        } else if (*train_det_cmd) {
            ParamStore<float> pc_store;
            if (cfg.use_pc) {
                if (pc_ckpt.empty()) throw DataError("train-det: use_pc=1 requires --pc-checkpoint");
                pc_store = load_checkpoint<float>(pc_ckpt);
            }
            emit_manifest(g.out_dir, cfg, "train-det");
            DetTrainResult r = train_detector(cfg, det_dataset, g.out_dir, pc_store);
            std::cout << "checkpoint " << r.checkpoint_path << "\n";
        } else if (*eval_cmd) {
            ParamStore<float> det = load_checkpoint<float>(eval_ckpt);
            ParamStore<float> pc_store;
            if (cfg.use_pc) {
                if (eval_pc_ckpt.empty()) throw DataError("eval: use_pc=1 requires --pc-checkpoint");
                pc_store = load_checkpoint<float>(eval_pc_ckpt);
            }
            fs::create_directories(g.out_dir);
            emit_manifest(g.out_dir, cfg, "eval");
            std::vector<std::string> ids;
            std::vector<SceneEval> evals = run_detector(cfg, eval_dataset, eval_split, det, pc_store, &ids);
            EvalResult result = evaluate_scenes(evals, 0.7);
            write_metrics_csv((fs::path(g.out_dir) / "metrics.csv").string(), "eval", eval_split, result);
            write_pr_curve_csv((fs::path(g.out_dir) / "pr_curve.csv").string(), "eval", result);
            write_detections((fs::path(g.out_dir) / "detections.txt").string(), ids, evals);
            std::cout << "map3d_r40 " << result.map3d_r40 << "\n";
        } else if (*ablate_cmd) {
            CompletionSet data = load_completion_dataset(abl_completion, cfg.completion_config(), cfg.seed);
            fs::create_directories(g.out_dir);
            emit_manifest(g.out_dir, cfg, "ablate");
            std::vector<AblationRow> rows;
            for (const auto& [table, name] : ablation_grid()) {
                if (abl_table != "all" && abl_table != table) continue;
                for (std::uint64_t s = 0; s < cfg.ablate_seeds; ++s) {
                    AblationRow row = run_ablation_config(cfg, table, name, cfg.seed + s, abl_scenes,
                                                          g.out_dir, &data);
                    std::cout << table << "/" << name << " seed " << row.seed << " map3d " << row.map3d << "\n";
                    rows.push_back(row);
                }
            }
            write_ablation_csv((fs::path(g.out_dir) / "ablation.csv").string(), rows);
            write_ablation_summary((fs::path(g.out_dir) / "ablation_summary.csv").string(), rows);
        } else if (*complete_cmd) {
            PointCloud input = load_cloud_any(comp_input);
            if (input.empty()) throw DataError("complete: empty input cloud");
            const Box3D box = comp_box_text.empty() ? fit_box(input) : parse_box(comp_box_text);
            ParamStore<float> store = load_checkpoint<float>(comp_ckpt);
            fs::create_directories(g.out_dir);
            PointCloud completed = complete_proposal(store, input, box, cfg.completion_config());
            write_ply((fs::path(g.out_dir) / "before.ply").string(), input, flag_colors(input));
            write_ply((fs::path(g.out_dir) / "after.ply").string(), completed, flag_colors(completed));
            std::cout << "before " << input.size() << " points, after " << completed.size() << "\n";
        } else if (*export_cmd) {
            if (exp_input.size() > 5 && exp_input.substr(exp_input.size() - 5) == ".pfck") {
                ParamStore<float> store = load_checkpoint<float>(exp_input);
                std::size_t total = 0;
                for (const auto& name : store.names()) {
                    const auto& t = store.get(name);
                    std::cout << name << " " << shape_str(t) << "\n";
                    total += t.size();
                }
                std::cout << "# " << store.size() << " tensors, " << total << " scalars\n";
            } else {
                if (exp_output.empty()) throw ConfigError("export: --output required for cloud conversion");
                write_ply(exp_output, load_cloud_any(exp_input));
                std::cout << "wrote " << exp_output << "\n";
            }
        }
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
