#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "graphdet/checkpoint.hpp"
#include "graphdet/config.hpp"
#include "graphdet/data.hpp"
#include "graphdet/detect.hpp"
#include "graphdet/evalkit.hpp"
#include "graphdet/ply.hpp"

namespace graphdet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// completion dataset

struct CompletionSet {
    std::vector<CompletionSample> train, val;
};

namespace detail {

inline PointCloud sparsify(const PointCloud& cloud, double keep, Rng& rng, std::size_t floor_points = 10) {
    std::size_t n_keep = std::max(floor_points, static_cast<std::size_t>(std::floor(keep * static_cast<double>(cloud.size()))));
    n_keep = std::min(n_keep, cloud.size());
    std::vector<int> order = rng.permutation(static_cast<int>(cloud.size()));
    order.resize(n_keep);
    return cloud.subset(order);
}

// corrupt with escalation until the missing region is big enough to supervise
inline CorruptResult corrupt_for_training(const PointCloud& full, double radius_factor, std::uint64_t seed,
                                          std::size_t min_missing = 32) {
    const Vec3 c = full.centroid();
    double bound = 0;
    for (const Vec3& p : full.points) bound = std::max(bound, (p - c).norm());
    double radius = radius_factor * bound;
    for (int escalation = 0; escalation < 5; ++escalation) {
        for (std::uint64_t sub = 0; sub < 8; ++sub) {
            CorruptResult r = corrupt_viewpoint(full, radius, mix_seed(seed, escalation * 100 + sub));
            if (r.missing.size() >= min_missing && !r.partial.empty()) return r;
        }
        radius *= 1.25;
    }
    throw DataError("corrupt_for_training: could not produce a usable missing region");
}

}  // namespace detail

// Procedural shape pool. Every odd-index sample gets scene-style sparsity on
// the input side, mirroring the domain-gap finetuning pool.
inline CompletionSet build_completion_set(const RunConfig& cfg) {
    CompletionConfig pc = cfg.completion_config();
    CompletionSet set;
    const std::size_t total = cfg.n_shapes + cfg.n_val_shapes;
    for (std::size_t i = 0; i < total; ++i) {
        const std::uint64_t shape_seed = mix_seed(cfg.seed, 10 + i);
        SyntheticShape shape = gen_shape(shape_seed);
        PointCloud full = sample_shape(shape, cfg.points_per_shape, mix_seed(shape_seed, 1));
        CorruptResult corrupt = detail::corrupt_for_training(full, cfg.corrupt_radius_factor, mix_seed(shape_seed, 2));
        PointCloud input = corrupt.partial;
        if (cfg.scene_style_subsample && i % 2 == 1) {
            Rng rng(mix_seed(shape_seed, 3));
            const double d = rng.uniform(10.0, 35.0);
            input = detail::sparsify(input, std::min(1.0, 25.0 / (d * d)), rng, 64);
        }
        CompletionSample s = make_completion_sample(input, full, corrupt.missing, pc, mix_seed(shape_seed, 4));
        (i < cfg.n_shapes ? set.train : set.val).push_back(std::move(s));
    }
    return set;
}

// Directory layout: <id>_partial.ply + <id>_full.ply per sample, plus
// manifest_train.txt / manifest_val.txt (one sample id per line).
inline void write_completion_dataset(const std::string& dir, const CompletionSet& set) {
    fs::create_directories(dir);
    auto dump = [&](const std::vector<CompletionSample>& samples, const std::string& manifest, std::size_t base) {
        std::ofstream mf(fs::path(dir) / manifest, std::ios::trunc);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            std::ostringstream id;
            id << std::setw(6) << std::setfill('0') << base + i;
            write_ply((fs::path(dir) / (id.str() + "_partial.ply")).string(), samples[i].input);
            write_ply((fs::path(dir) / (id.str() + "_full.ply")).string(), samples[i].full);
            mf << id.str() << "\n";
        }
    };
    dump(set.train, "manifest_train.txt", 0);
    dump(set.val, "manifest_val.txt", set.train.size());
}

inline CompletionSet load_completion_dataset(const std::string& dir, const CompletionConfig& pc,
                                             std::uint64_t seed) {
    auto load_split = [&](const std::string& manifest, std::vector<CompletionSample>& out) {
        std::ifstream mf(fs::path(dir) / manifest);
        if (!mf) throw DataError("completion dataset: missing " + manifest + " in '" + dir + "'");
        std::string id;
        while (std::getline(mf, id)) {
            if (id.empty()) continue;
            PointCloud partial = read_ply((fs::path(dir) / (id + "_partial.ply")).string());
            PointCloud full = read_ply((fs::path(dir) / (id + "_full.ply")).string());
            // the missing region is the complement of the partial cloud
            PointCloud missing;
            for (const Vec3& p : full.points) {
                double best = 1e18;
                for (const Vec3& q : partial.points) best = std::min(best, (p - q).norm2());
                if (best > 1e-8) missing.push_back(p);
            }
            out.push_back(make_completion_sample(partial, full, missing, pc, mix_seed(seed, fnv1a(id))));
        }
    };
    CompletionSet set;
    load_split("manifest_train.txt", set.train);
    load_split("manifest_val.txt", set.val);
    return set;
}

// ---------------------------------------------------------------------------
// completion training

struct PcTrainResult {
    double best_val_cd = 0;
    double final_val_cd = 0;
    std::string checkpoint_path;
    std::size_t epochs_run = 0;
};

template <typename T>
double completion_val_cd(ParamStore<T>& store, const std::vector<CompletionSample>& samples,
                         const CompletionConfig& pc) {
    if (samples.empty()) return 0.0;
    double total = 0;
    for (const CompletionSample& s : samples) {
        ModelCtx<T> ctx{&store, nullptr, 0, 0, {}};
        MrgeResult<T> enc = mrge_encode(ctx, "pc.mrge", s.input, pc);
        PpdOutput<T> dec = ppd_decode(ctx, "pc.ppd", enc.latent, pc);
        total += static_cast<double>(chamfer(dec.fine, s.target_fine.template coords_tensor<T>()).item());
    }
    return total / static_cast<double>(samples.size());
}

// Alternating generator/discriminator steps, one sample per step. Logs one
// CSV row per (epoch, metric); checkpoints the best validation Chamfer.
template <typename T = float>
PcTrainResult train_pc(const RunConfig& cfg, const CompletionSet& data, const std::string& out_dir) {
    if (data.train.empty()) throw DataError("train_pc: empty training set");
    const CompletionConfig pc = cfg.completion_config();
    fs::create_directories(out_dir);
    const std::string ckpt_best = (fs::path(out_dir) / "pc_checkpoint.pfck").string();
    const std::string ckpt_last = (fs::path(out_dir) / "pc_checkpoint_last.pfck").string();
    const std::string log_path = (fs::path(out_dir) / "pc_train_log.csv").string();

    ParamStore<T> store;
    Adam<T> g_opt(cfg.pc_lr), d_opt(cfg.disc_lr);
    std::size_t start_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    const bool adversarial = cfg.lambda_adv > 0;

    if (fs::exists(ckpt_last)) {
        ParamStore<T> saved = load_checkpoint<T>(ckpt_last);
        for (const auto& name : saved.names())
            if (name.rfind("opt_", 0) != 0 && name.rfind("trainer.", 0) != 0) store.set(name, saved.get(name));
        g_opt.import_state(saved, "opt_g");
        d_opt.import_state(saved, "opt_d");
        if (saved.has("trainer.epoch")) start_epoch = static_cast<std::size_t>(saved.get("trainer.epoch").item());
        if (saved.has("trainer.best_val")) best_val = static_cast<double>(saved.get("trainer.best_val").item());
    } else {
        // define every parameter once so checkpoints are complete
        ModelCtx<T> warm{&store, nullptr, cfg.seed, 0, {}};
        MrgeResult<T> enc = mrge_encode(warm, "pc.mrge", data.train[0].input, pc);
        ppd_decode(warm, "pc.ppd", enc.latent, pc);
        if (adversarial)
            discriminate(warm, "disc", data.train[0].target_fine.template coords_tensor<T>(), pc);
    }

    std::ofstream train_log(log_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
    if (start_epoch == 0) train_log << "epoch,metric,value\n";
    train_log.precision(10);

    PcTrainResult result;
    for (std::size_t epoch = start_epoch; epoch < cfg.pc_epochs; ++epoch) {
        Rng order_rng(mix_seed(cfg.seed, 5000 + epoch));
        std::vector<int> order = order_rng.permutation(static_cast<int>(data.train.size()));
        double sum_c = 0, sum_m = 0, sum_f = 0, sum_g = 0, sum_d = 0;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const CompletionSample& sample = data.train[static_cast<std::size_t>(order[step])];
            const std::uint64_t fps_seed = mix_seed(cfg.seed, epoch * 131071 + step);

            // generator step
            Tape<T> tape;
            ModelCtx<T> gen_ctx{&store, &tape, cfg.seed, fps_seed, {}};
            MrgeResult<T> enc = mrge_encode(gen_ctx, "pc.mrge", sample.input, pc);
            PpdOutput<T> dec = ppd_decode(gen_ctx, "pc.ppd", enc.latent, pc);
            Tensor<T> cd1 = chamfer(dec.coarse, sample.target_coarse.template coords_tensor<T>());
            Tensor<T> cd2 = chamfer(dec.middle, sample.target_middle.template coords_tensor<T>());
            Tensor<T> cd3 = chamfer(dec.fine, sample.target_fine.template coords_tensor<T>());
            Tensor<T> l_com = add(add(scale(cd1, static_cast<T>(pc.alpha)), scale(cd2, static_cast<T>(2 * pc.alpha))), cd3);
            Tensor<T> loss = scale(l_com, static_cast<T>(pc.lambda_com));
            double g_adv_val = 0;
            if (adversarial) {
                ModelCtx<T> disc_ctx{&store, &tape, cfg.seed, fps_seed, {}};
                std::vector<Tensor<T>> fake_scores{discriminate(disc_ctx, "disc", dec.fine, pc)};
                Tensor<T> g_adv = generator_adversarial_loss(fake_scores);
                g_adv_val = static_cast<double>(g_adv.item());
                loss = add(loss, scale(g_adv, static_cast<T>(pc.lambda_adv)));
            }
            if (!std::isfinite(static_cast<double>(loss.item())))
                throw NumericError("train_pc: non-finite loss at epoch " + std::to_string(epoch));
            Gradients<T> grads = tape.backward(loss);
            g_opt.step(store, gradients_by_name(gen_ctx, grads, tape));

            // discriminator step on detached fake points
            if (adversarial) {
                Tape<T> d_tape;
                ModelCtx<T> d_ctx{&store, &d_tape, cfg.seed, fps_seed, {}};
                Tensor<T> fake = d_ctx.constant(dec.fine);
                std::vector<Tensor<T>> real_scores{
                    discriminate(d_ctx, "disc", d_ctx.constant(sample.target_fine.template coords_tensor<T>()), pc)};
                std::vector<Tensor<T>> fake_scores{discriminate(d_ctx, "disc", fake, pc)};
                Tensor<T> d_loss = discriminator_loss(real_scores, fake_scores);
                sum_d += static_cast<double>(d_loss.item());
                Gradients<T> d_grads = d_tape.backward(d_loss);
                d_opt.step(store, gradients_by_name(d_ctx, d_grads, d_tape));
            }

            sum_c += static_cast<double>(cd1.item());
            sum_m += static_cast<double>(cd2.item());
            sum_f += static_cast<double>(cd3.item());
            sum_g += g_adv_val;
        }
        const double inv = 1.0 / static_cast<double>(order.size());
        const double val_cd = completion_val_cd(store, data.val.empty() ? data.train : data.val, pc);
        train_log << epoch << ",cd_coarse," << sum_c * inv << "\n";
        train_log << epoch << ",cd_middle," << sum_m * inv << "\n";
        train_log << epoch << ",cd_fine," << sum_f * inv << "\n";
        train_log << epoch << ",g_adv," << sum_g * inv << "\n";
        train_log << epoch << ",d_loss," << sum_d * inv << "\n";
        train_log << epoch << ",val_cd," << val_cd << "\n";
        train_log.flush();

        if (val_cd < best_val) {
            best_val = val_cd;
            save_checkpoint(ckpt_best, store);
        }
        ParamStore<T> snapshot = store;
        g_opt.export_state(snapshot, "opt_g");
        d_opt.export_state(snapshot, "opt_d");
        snapshot.set("trainer.epoch", Tensor<T>::scalar(static_cast<T>(epoch + 1)));
        snapshot.set("trainer.best_val", Tensor<T>::scalar(static_cast<T>(best_val)));
        save_checkpoint(ckpt_last, snapshot);
        result.epochs_run = epoch + 1 - start_epoch;
    }
    if (!fs::exists(ckpt_best)) save_checkpoint(ckpt_best, store);
    result.best_val_cd = best_val;
    result.final_val_cd = completion_val_cd(store, data.val.empty() ? data.train : data.val, pc);
    result.checkpoint_path = ckpt_best;
    return result;
}

// ---------------------------------------------------------------------------
// scene dataset on disk (KITTI layout)

inline std::string scene_id(std::size_t i) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << i;
    return os.str();
}

struct SceneRecord {
    std::string id;
    PointCloud cloud;
    std::vector<KittiLabel> labels;
};

inline void write_scene_dataset(const std::string& dir, const RunConfig& cfg) {
    fs::create_directories(fs::path(dir) / "velodyne");
    fs::create_directories(fs::path(dir) / "label_2");
    fs::create_directories(fs::path(dir) / "calib");
    fs::create_directories(fs::path(dir) / "splits");
    const Calib calib = Calib::synthetic();
    std::ofstream train_split(fs::path(dir) / "splits" / "train.txt", std::ios::trunc);
    std::ofstream val_split(fs::path(dir) / "splits" / "val.txt", std::ios::trunc);
    const std::size_t total = cfg.n_scenes + cfg.n_val_scenes;
    for (std::size_t i = 0; i < total; ++i) {
        const std::uint64_t scene_seed = mix_seed(cfg.seed, 900000 + i);
        Rng rng(scene_seed);
        const std::size_t n_objects =
            cfg.min_objects + static_cast<std::size_t>(rng.uniform_index(cfg.max_objects - cfg.min_objects + 1));
        SceneSpec spec = make_scene_spec(n_objects, mix_seed(scene_seed, 1));
        spec.ground_points = cfg.ground_points;
        spec.n_clutter = cfg.n_clutter;
        spec.points_per_object = cfg.points_per_shape;
        Scene scene = gen_scene(spec, mix_seed(scene_seed, 2));

        const std::string id = scene_id(i);
        kitti_write_velodyne(scene.cloud, (fs::path(dir) / "velodyne" / (id + ".bin")).string());
        write_calib(calib, (fs::path(dir) / "calib" / (id + ".txt")).string());
        std::vector<KittiLabel> labels;
        for (const SceneLabel& lb : scene.labels) {
            KittiLabel kl;
            kl.box = lb.box;
            kl.truncation = lb.shadow_frac;
            kl.occluded = occlusion_bucket(lb.shadow_frac);
            labels.push_back(kl);
        }
        kitti_write_labels(labels, calib, (fs::path(dir) / "label_2" / (id + ".txt")).string());
        (i < cfg.n_scenes ? train_split : val_split) << id << "\n";
    }
}

inline std::vector<std::string> load_split_ids(const std::string& dir, const std::string& split) {
    std::ifstream f(fs::path(dir) / "splits" / (split + ".txt"));
    if (!f) throw DataError("scene dataset: missing splits/" + split + ".txt in '" + dir + "'");
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ids.push_back(line);
    return ids;
}

inline SceneRecord load_scene(const std::string& dir, const std::string& id) {
    SceneRecord rec;
    rec.id = id;
    rec.cloud = kitti_read_velodyne((fs::path(dir) / "velodyne" / (id + ".bin")).string());
    Calib calib = read_calib((fs::path(dir) / "calib" / (id + ".txt")).string());
    rec.labels = kitti_read_labels((fs::path(dir) / "label_2" / (id + ".txt")).string(), calib);
    return rec;
}

inline std::vector<GtMeta> scene_gt_meta(const SceneRecord& rec, const Vec3& sensor = {0, 0, 1.8}) {
    std::vector<GtMeta> out;
    for (const KittiLabel& lb : rec.labels)
        out.push_back({lb.box, (lb.box.center() - sensor).norm(), lb.truncation});
    return out;
}

// ---------------------------------------------------------------------------
// detector training

struct DetTrainResult {
    std::string checkpoint_path;
    std::size_t s1_epochs_run = 0, s2_epochs_run = 0;
};

namespace detail {

template <typename T>
void warmup_detector_params(ParamStore<T>& det, ParamStore<T>& pc_store, const DetectConfig& cfg,
                            std::uint64_t seed) {
    // fabricate a scene large enough for the backbone and both stage-2
    // feature paths so every parameter exists before training or fan-out
    Rng rng(mix_seed(seed, 0xaa));
    PointCloud scene;
    for (std::size_t i = 0; i < std::max<std::size_t>(cfg.min_scene_points, 64); ++i)
        scene.points.push_back({rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(0, 2)});
    ModelCtx<T> ctx{&det, nullptr, seed, 0, {}};
    stage1_forward(ctx, scene, cfg);

    Proposal prop;
    prop.box = {0, 0, 1.0, 2.5, 8.0, 8.0, 0.1};
    ModelCtx<T> ctx2{&det, nullptr, seed, 0, {}};
    stage2_forward(ctx2, pc_store, prop, scene, cfg);

    // the small-crop fallback path
    PointCloud tiny;
    for (int i = 0; i < 4; ++i) tiny.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1)});
    ModelCtx<T> ctx3{&det, nullptr, seed, 0, {}};
    pointnet_forward(ctx3, "det.s2.pn", tiny, cfg.gnn);
}

inline std::vector<bool> foreground_mask(const PointCloud& scene, const std::vector<KittiLabel>& labels) {
    std::vector<bool> fg(scene.size(), false);
    for (const KittiLabel& lb : labels)
        for (int idx : points_in_box(scene, lb.box)) fg[static_cast<std::size_t>(idx)] = true;
    return fg;
}

// jittered copies of the ground truth keep stage-2 supplied with positives
inline std::vector<Proposal> training_proposals(const Stage1Output<float>& s1, const SceneRecord& rec,
                                                const PointCloud& scene, const RunConfig& cfg,
                                                std::uint64_t seed) {
    std::vector<Proposal> props;
    for (std::size_t i = 0; i < std::min<std::size_t>(cfg.s2_proposals_per_scene, s1.proposals.size()); ++i)
        props.push_back(s1.proposals[i]);
    Rng rng(seed);
    for (const KittiLabel& lb : rec.labels) {
        for (int j = 0; j < 2; ++j) {
            Proposal p;
            p.box = lb.box;
            p.box.x += rng.uniform(-0.4, 0.4);
            p.box.y += rng.uniform(-0.4, 0.4);
            p.box.yaw = normalize_angle(p.box.yaw + rng.uniform(-0.15, 0.15));
            p.box.l *= rng.uniform(0.92, 1.08);
            p.box.w *= rng.uniform(0.92, 1.08);
            p.score = 1.0;
            p.point_indices = points_in_box(scene, p.box);
            props.push_back(std::move(p));
        }
    }
    return props;
}

}  // namespace detail

// Stage-1 then stage-2 training over a KITTI-layout directory. The PC module
// stays frozen during stage 2 (it is pretrained by train_pc).
template <typename T = float>
DetTrainResult train_detector(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir,
                              ParamStore<T>& pc_store) {
    const DetectConfig det_cfg = cfg.detect_config();
    fs::create_directories(out_dir);
    const std::string ckpt_best = (fs::path(out_dir) / "det_checkpoint.pfck").string();
    const std::string ckpt_last = (fs::path(out_dir) / "det_checkpoint_last.pfck").string();

    std::vector<std::string> ids = load_split_ids(dataset_dir, "train");
    if (ids.empty()) throw DataError("train_detector: empty train split");
    std::vector<SceneRecord> scenes;
    for (const auto& id : ids) scenes.push_back(load_scene(dataset_dir, id));

    ParamStore<T> det;
    Adam<T> opt1(cfg.s1_lr), opt2(cfg.s2_lr);
    std::size_t s1_start = 0, s2_start = 0;
    if (fs::exists(ckpt_last)) {
        ParamStore<T> saved = load_checkpoint<T>(ckpt_last);
        for (const auto& name : saved.names())
            if (name.rfind("opt_", 0) != 0 && name.rfind("trainer.", 0) != 0) det.set(name, saved.get(name));
        opt1.import_state(saved, "opt_s1");
        opt2.import_state(saved, "opt_s2");
        if (saved.has("trainer.s1_epoch")) s1_start = static_cast<std::size_t>(saved.get("trainer.s1_epoch").item());
        if (saved.has("trainer.s2_epoch")) s2_start = static_cast<std::size_t>(saved.get("trainer.s2_epoch").item());
    } else {
        detail::warmup_detector_params(det, pc_store, det_cfg, cfg.seed);
    }

    std::ofstream train_log((fs::path(out_dir) / "det_train_log.csv").string(),
                            (s1_start == 0 && s2_start == 0) ? std::ios::trunc : std::ios::app);
    if (s1_start == 0 && s2_start == 0) train_log << "stage,epoch,metric,value\n";
    train_log.precision(10);

    auto save_state = [&](std::size_t s1_done, std::size_t s2_done) {
        ParamStore<T> snapshot = det;
        opt1.export_state(snapshot, "opt_s1");
        opt2.export_state(snapshot, "opt_s2");
        snapshot.set("trainer.s1_epoch", Tensor<T>::scalar(static_cast<T>(s1_done)));
        snapshot.set("trainer.s2_epoch", Tensor<T>::scalar(static_cast<T>(s2_done)));
        save_checkpoint(ckpt_last, snapshot);
    };

    DetTrainResult result;
    // ---- stage 1
    for (std::size_t epoch = s1_start; epoch < cfg.s1_epochs; ++epoch) {
        Rng order_rng(mix_seed(cfg.seed, 7000 + epoch));
        std::vector<int> order = order_rng.permutation(static_cast<int>(scenes.size()));
        double sum_focal = 0, sum_bin = 0;
        std::size_t n_fg_total = 0;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const SceneRecord& rec = scenes[static_cast<std::size_t>(order[step])];
            Tape<T> tape;
            ModelCtx<T> ctx{&det, &tape, cfg.seed, mix_seed(cfg.seed, epoch * 8191 + step), {}};
            Stage1Output<T> s1 = stage1_forward(ctx, rec.cloud, det_cfg);

            std::vector<bool> fg = detail::foreground_mask(rec.cloud, rec.labels);
            Tensor<T> loss = mean(focal_loss(s1.fg_probs, fg, static_cast<T>(0.25), static_cast<T>(2)));
            sum_focal += static_cast<double>(loss.item());

            std::vector<int> rows;
            std::vector<BoxTargets> targets;
            for (std::size_t i = 0; i < rec.cloud.size(); ++i) {
                if (!fg[i]) continue;
                // nearest gt supervises this point
                const KittiLabel* best = nullptr;
                double best_d = 1e18;
                for (const KittiLabel& lb : rec.labels) {
                    const double d = (lb.box.center() - rec.cloud.points[i]).norm2();
                    if (d < best_d) {
                        best_d = d;
                        best = &lb;
                    }
                }
                BoxTargets t = encode_box_targets(best->box, rec.cloud.points[i], det_cfg.enc_s1, det_cfg.mean_size);
                if (!t.in_range) continue;
                rows.push_back(static_cast<int>(i));
                targets.push_back(t);
            }
            n_fg_total += rows.size();
            if (!rows.empty()) {
                Tensor<T> reg = bin_box_loss(s1.box, rows, targets);
                sum_bin += static_cast<double>(reg.item());
                loss = add(loss, reg);
            }
            if (!std::isfinite(static_cast<double>(loss.item())))
                throw NumericError("train_detector: non-finite stage-1 loss at epoch " + std::to_string(epoch));
            Gradients<T> grads = tape.backward(loss);
            opt1.step(det, gradients_by_name(ctx, grads, tape));
        }
        train_log << "s1," << epoch << ",focal," << sum_focal / static_cast<double>(order.size()) << "\n";
        train_log << "s1," << epoch << ",bin," << sum_bin / static_cast<double>(order.size()) << "\n";
        train_log << "s1," << epoch << ",fg_points," << n_fg_total << "\n";
        train_log.flush();
        save_state(epoch + 1, 0);
        result.s1_epochs_run = epoch + 1 - s1_start;
    }

    // ---- stage 2
    for (std::size_t epoch = s2_start; epoch < cfg.s2_epochs; ++epoch) {
        Rng order_rng(mix_seed(cfg.seed, 9000 + epoch));
        std::vector<int> order = order_rng.permutation(static_cast<int>(scenes.size()));
        double sum_cls = 0, sum_reg = 0;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const SceneRecord& rec = scenes[static_cast<std::size_t>(order[step])];
            ModelCtx<T> infer{&det, nullptr, cfg.seed, 0, {}};
            Stage1Output<T> s1 = stage1_forward(infer, rec.cloud, det_cfg);
            std::vector<Proposal> props =
                detail::training_proposals(s1, rec, rec.cloud, cfg, mix_seed(cfg.seed, epoch * 4093 + step));
            if (props.empty()) continue;

            Tape<T> tape;
            ModelCtx<T> ctx{&det, &tape, cfg.seed, mix_seed(cfg.seed, epoch * 6143 + step), {}};
            Tensor<T> loss;
            bool any = false;
            const T eps = static_cast<T>(1e-7);
            for (const Proposal& prop : props) {
                Stage2Output<T> out = stage2_forward(ctx, pc_store, prop, rec.cloud, det_cfg);
                if (!out.featurized) continue;
                // classification target from the best-IoU ground truth
                double best_iou = 0;
                const KittiLabel* best = nullptr;
                for (const KittiLabel& lb : rec.labels) {
                    const double iou = iou_3d(prop.box, lb.box);
                    if (iou > best_iou) {
                        best_iou = iou;
                        best = &lb;
                    }
                }
                const bool positive = best_iou >= det_cfg.iou_pos_thresh;
                Tensor<T> sc = clamp(out.score, eps, T(1) - eps);
                Tensor<T> cls = positive ? scale(log(sc), T(-1)) : scale(log(affine(sc, T(-1), T(1))), T(-1));
                sum_cls += static_cast<double>(cls.item());
                Tensor<T> term = cls;
                if (positive) {
                    BoxTargets t = encode_stage2_targets(best->box, prop.box, det_cfg.enc_s2);
                    if (t.in_range) {
                        Tensor<T> reg = bin_box_loss(out.box, {0}, {t});
                        sum_reg += static_cast<double>(reg.item());
                        term = add(term, reg);
                    }
                }
                loss = any ? add(loss, term) : term;
                any = true;
            }
            if (!any) continue;
            loss = scale(loss, T(1) / static_cast<T>(props.size()));
            if (!std::isfinite(static_cast<double>(loss.item())))
                throw NumericError("train_detector: non-finite stage-2 loss at epoch " + std::to_string(epoch));
            Gradients<T> grads = tape.backward(loss);
            opt2.step(det, gradients_by_name(ctx, grads, tape));
        }
        train_log << "s2," << epoch << ",cls," << sum_cls / static_cast<double>(order.size()) << "\n";
        train_log << "s2," << epoch << ",reg," << sum_reg / static_cast<double>(order.size()) << "\n";
        train_log.flush();
        save_state(cfg.s1_epochs, epoch + 1);
        result.s2_epochs_run = epoch + 1 - s2_start;
    }

    save_checkpoint(ckpt_best, det);
    result.checkpoint_path = ckpt_best;
    return result;
}

// ---------------------------------------------------------------------------
// evaluation

// Fan out over scenes with read-only parameter stores. warmup_detector_params
// must already have defined every parameter.
template <typename T = float>
std::vector<SceneEval> run_detector(const RunConfig& cfg, const std::string& dataset_dir,
                                    const std::string& split, ParamStore<T>& det, ParamStore<T>& pc_store,
                                    std::vector<std::string>* ids_out = nullptr) {
    const DetectConfig det_cfg = cfg.detect_config();
    std::vector<std::string> ids = load_split_ids(dataset_dir, split);
    if (ids_out) *ids_out = ids;
    std::vector<SceneEval> evals(ids.size());
    const int jobs = std::max(1, cfg.jobs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= ids.size()) return;
            SceneRecord rec = load_scene(dataset_dir, ids[i]);
            SceneEval ev;
            ev.gts = scene_gt_meta(rec);
            ev.dets = detect_scene(det, pc_store, rec.cloud, det_cfg);
            evals[i] = std::move(ev);
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return evals;
}

// detection export: one text row per detection
inline void write_detections(const std::string& path, const std::vector<std::string>& ids,
                             const std::vector<SceneEval>& evals) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_detections: cannot open '" + path + "'");
    f.precision(10);
    for (std::size_t i = 0; i < evals.size(); ++i)
        for (const Detection& d : evals[i].dets)
            f << ids[i] << " " << d.box.x << " " << d.box.y << " " << d.box.z << " " << d.box.h << " "
              << d.box.w << " " << d.box.l << " " << d.box.yaw << " " << d.score << "\n";
}

// ---------------------------------------------------------------------------
// ablation runner

struct AblationRow {
    std::string table;
    std::string config_name;
    std::uint64_t seed = 0;
    double map3d = 0, easy = 0, moderate = 0, hard = 0;
};

inline RunConfig ablation_config(const RunConfig& base, const std::string& name) {
    RunConfig cfg = base;
    cfg.s1_epochs = base.ablate_s1_epochs;
    cfg.s2_epochs = base.ablate_s2_epochs;
    cfg.pc_epochs = base.ablate_pc_epochs;
    cfg.use_pc = true;
    cfg.use_ams_gnn = true;
    cfg.use_ms = true;
    cfg.use_la = true;
    cfg.use_ga = true;
    cfg.pc_variant = "pc_m";
    if (name == "baseline") {
        cfg.use_pc = false;
        cfg.use_ams_gnn = false;
    } else if (name == "gnn_only") {
        cfg.use_pc = false;
    } else if (name == "pc_only") {
        cfg.use_ams_gnn = false;
    } else if (name == "full") {
        // defaults
    } else if (name == "gnn_plain") {
        cfg.use_ms = false;
        cfg.use_la = false;
        cfg.use_ga = false;
    } else if (name == "gnn_ms") {
        cfg.use_la = false;
        cfg.use_ga = false;
    } else if (name == "gnn_ms_la") {
        cfg.use_ga = false;
    } else if (name == "gnn_ms_la_ga") {
        // defaults
    } else if (name == "pc_m" || name == "pc_o" || name == "no_ge" || name == "no_mr") {
        cfg.pc_variant = name;
    } else {
        throw ConfigError("ablation_config: unknown configuration '" + name + "'");
    }
    return cfg;
}

inline const std::vector<std::pair<std::string, std::string>>& ablation_grid() {
    static const std::vector<std::pair<std::string, std::string>> grid = {
        {"modules", "baseline"},  {"modules", "gnn_only"},  {"modules", "pc_only"},  {"modules", "full"},
        {"gnn", "gnn_plain"},     {"gnn", "gnn_ms"},        {"gnn", "gnn_ms_la"},    {"gnn", "gnn_ms_la_ga"},
        {"pc", "pc_m"},           {"pc", "no_ge"},          {"pc", "no_mr"},         {"pc", "pc_o"},
    };
    return grid;
}

// One ablation run: (pretrain PC if used) -> train detector -> eval val.
template <typename T = float>
AblationRow run_ablation_config(const RunConfig& base, const std::string& table, const std::string& name,
                                std::uint64_t seed, const std::string& scene_dir, const std::string& work_dir,
                                const CompletionSet* completion_data) {
    RunConfig cfg = ablation_config(base, name);
    cfg.seed = seed;
    const std::string run_dir = (fs::path(work_dir) / (name + "_seed" + std::to_string(seed))).string();
    fs::create_directories(run_dir);

    ParamStore<T> pc_store;
    if (cfg.use_pc) {
        // share PC pretraining across runs with the same (variant, seed)
        const std::string pc_dir =
            (fs::path(work_dir) / ("pc_" + cfg.pc_variant + "_seed" + std::to_string(seed))).string();
        if (!fs::exists(fs::path(pc_dir) / "pc_checkpoint.pfck")) {
            if (!completion_data) throw DataError("run_ablation_config: completion data required");
            train_pc<T>(cfg, *completion_data, pc_dir);
        }
        pc_store = load_checkpoint<T>((fs::path(pc_dir) / "pc_checkpoint.pfck").string());
    }

    train_detector<T>(cfg, scene_dir, run_dir, pc_store);
    ParamStore<T> det = load_checkpoint<T>((fs::path(run_dir) / "det_checkpoint.pfck").string());
    std::vector<SceneEval> evals = run_detector<T>(cfg, scene_dir, "val", det, pc_store);
    EvalResult result = evaluate_scenes(evals, 0.7);

    AblationRow row;
    row.table = table;
    row.config_name = name;
    row.seed = seed;
    row.map3d = result.map3d_r40;
    row.easy = result.easy.defined ? result.easy.ap3d_r40 : 0;
    row.moderate = result.moderate.defined ? result.moderate.ap3d_r40 : 0;
    row.hard = result.hard.defined ? result.hard.ap3d_r40 : 0;
    return row;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_ablation_csv: cannot open '" + path + "'");
    f << "table,config,seed,map3d,easy,moderate,hard\n";
    f.precision(10);
    for (const AblationRow& r : rows)
        f << r.table << "," << r.config_name << "," << r.seed << "," << r.map3d << "," << r.easy << ","
          << r.moderate << "," << r.hard << "\n";
}

inline void write_ablation_summary(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_ablation_summary: cannot open '" + path + "'");
    f << "table,config,mean_map3d,min_map3d,max_map3d,n_seeds\n";
    f.precision(10);
    for (const auto& [table, name] : ablation_grid()) {
        double sum = 0, lo = 1e18, hi = -1e18;
        int n = 0;
        for (const AblationRow& r : rows) {
            if (r.config_name != name || r.table != table) continue;
            sum += r.map3d;
            lo = std::min(lo, r.map3d);
            hi = std::max(hi, r.map3d);
            ++n;
        }
        if (n) f << table << "," << name << "," << sum / n << "," << lo << "," << hi << "," << n << "\n";
    }
}

}  // namespace graphdet
