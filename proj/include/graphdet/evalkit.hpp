#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "graphdet/common.hpp"
#include "graphdet/detect.hpp"
#include "graphdet/geom.hpp"

namespace graphdet {

enum class IouMode { bev, iou3d };
enum class Interp { r11, r40 };
enum class Difficulty { easy, moderate, hard };

inline const char* difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::moderate: return "moderate";
        case Difficulty::hard: return "hard";
    }
    return "?";
}

// Synthetic analogue of the KITTI buckets (image-box height does not exist
// for LiDAR-only data): distance and occluded fraction decide the bucket.
inline Difficulty difficulty_bucket(double occlusion_frac, double distance) {
    if (distance > 40.0 || occlusion_frac > 0.5) return Difficulty::hard;
    if (distance < 20.0 && occlusion_frac < 0.1) return Difficulty::easy;
    return Difficulty::moderate;
}

// ---------------------------------------------------------------------------
// matching

struct MatchFlags {
    // per detection, in the input order: 1 = TP, 0 = FP
    std::vector<int> tp;
    // matched gt index per detection (-1 when FP)
    std::vector<int> gt_index;
};

// Greedy matching in descending score order; each ground truth is consumed
// by at most one detection; ties in score resolve to the lower index.
inline MatchFlags match_detections(const std::vector<Box3D>& det_boxes, const std::vector<double>& scores,
                                   const std::vector<Box3D>& gts, double iou_thresh, IouMode mode) {
    if (det_boxes.size() != scores.size()) throw DataError("match_detections: boxes/scores mismatch");
    MatchFlags out;
    out.tp.assign(det_boxes.size(), 0);
    out.gt_index.assign(det_boxes.size(), -1);
    std::vector<int> order(det_boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });

    std::vector<bool> used(gts.size(), false);
    for (int di : order) {
        double best = 0;
        int best_gt = -1;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (used[gi]) continue;
            const double iou = mode == IouMode::bev ? iou_bev(det_boxes[static_cast<std::size_t>(di)], gts[gi])
                                                    : iou_3d(det_boxes[static_cast<std::size_t>(di)], gts[gi]);
            if (iou > best) {
                best = iou;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0 && best >= iou_thresh) {
            used[static_cast<std::size_t>(best_gt)] = true;
            out.tp[static_cast<std::size_t>(di)] = 1;
            out.gt_index[static_cast<std::size_t>(di)] = best_gt;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// average precision / orientation similarity

struct ScoredDet {
    double score = 0;
    int flag = 0;          // 1 TP, 0 FP, -1 ignored (matched a harder gt)
    double similarity = 0; // (1 + cos dtheta) / 2 for TPs
};

namespace detail {

struct PrPoint {
    double recall, precision, similarity;
};

inline std::vector<PrPoint> pr_table(std::vector<ScoredDet> dets, std::size_t n_gt) {
    std::stable_sort(dets.begin(), dets.end(), [](const ScoredDet& a, const ScoredDet& b) { return a.score > b.score; });
    std::vector<PrPoint> table;
    std::size_t tp = 0, fp = 0;
    double sim = 0;
    for (const ScoredDet& d : dets) {
        if (d.flag < 0) continue;  // ignored: affects neither axis
        if (d.flag == 1) {
            ++tp;
            sim += d.similarity;
        } else {
            ++fp;
        }
        table.push_back({static_cast<double>(tp) / static_cast<double>(n_gt),
                         static_cast<double>(tp) / static_cast<double>(tp + fp),
                         sim / static_cast<double>(tp + fp)});
    }
    return table;
}

inline double sample_curve(const std::vector<PrPoint>& table, Interp interp, bool orientation) {
    auto value_at = [&](double r) {
        double best = 0;
        for (const PrPoint& p : table)
            if (p.recall >= r - 1e-12) best = std::max(best, orientation ? p.similarity : p.precision);
        return best;
    };
    double s = 0;
    if (interp == Interp::r11) {
        for (int i = 0; i <= 10; ++i) s += value_at(static_cast<double>(i) / 10.0);
        return 100.0 * s / 11.0;
    }
    for (int i = 1; i <= 40; ++i) s += value_at(static_cast<double>(i) / 40.0);
    return 100.0 * s / 40.0;
}

}  // namespace detail

// AP percent from scored TP/FP flags. n_gt = 0 has no defined value.
inline double average_precision(const std::vector<ScoredDet>& dets, std::size_t n_gt, Interp interp) {
    if (n_gt == 0) throw DataError("average_precision: n_gt must be positive");
    return detail::sample_curve(detail::pr_table(dets, n_gt), interp, false);
}

// AP-style average where each TP contributes (1 + cos dtheta) / 2.
inline double aos(const std::vector<ScoredDet>& dets, std::size_t n_gt, Interp interp) {
    if (n_gt == 0) throw DataError("aos: n_gt must be positive");
    return detail::sample_curve(detail::pr_table(dets, n_gt), interp, true);
}

// ---------------------------------------------------------------------------
// scene-set evaluation

struct GtMeta {
    Box3D box;
    double distance = 0;
    double occlusion_frac = 0;
};

struct SceneEval {
    std::vector<Detection> dets;
    std::vector<GtMeta> gts;
};

struct DifficultyResult {
    double ap3d_r40 = 0, ap3d_r11 = 0;
    double apbev_r40 = 0, apbev_r11 = 0;
    double aos_r40 = 0, aos_r11 = 0;
    std::size_t n_gt = 0;
    bool defined = false;  // false when the split has no gts in this bucket
    std::vector<std::pair<double, double>> pr_curve_3d;  // (recall, precision), r40 grid
};

struct EvalResult {
    DifficultyResult easy, moderate, hard;
    double map3d_r40 = 0;  // mean over defined difficulties

    const DifficultyResult& at(Difficulty d) const {
        switch (d) {
            case Difficulty::easy: return easy;
            case Difficulty::moderate: return moderate;
            case Difficulty::hard: return hard;
        }
        return hard;
    }
};

namespace detail {

// KITTI-style: bucket membership is cumulative (moderate includes easy);
// detections matching a harder, out-of-bucket gt are ignored rather than
// counted as false positives.
inline DifficultyResult eval_difficulty(const std::vector<SceneEval>& scenes, Difficulty level,
                                        double iou_thresh) {
    auto relevant = [&](const GtMeta& g) {
        Difficulty d = difficulty_bucket(g.occlusion_frac, g.distance);
        return static_cast<int>(d) <= static_cast<int>(level);
    };

    DifficultyResult out;
    std::vector<ScoredDet> pooled3d, pooledbev;
    std::size_t n_gt = 0;
    for (const SceneEval& scene : scenes) {
        std::vector<Box3D> det_boxes;
        std::vector<double> scores;
        for (const Detection& d : scene.dets) {
            det_boxes.push_back(d.box);
            scores.push_back(d.score);
        }
        std::vector<Box3D> gt_boxes;
        for (const GtMeta& g : scene.gts) gt_boxes.push_back(g.box);
        for (const GtMeta& g : scene.gts) n_gt += relevant(g);

        for (IouMode mode : {IouMode::iou3d, IouMode::bev}) {
            MatchFlags flags = match_detections(det_boxes, scores, gt_boxes, iou_thresh, mode);
            for (std::size_t i = 0; i < det_boxes.size(); ++i) {
                ScoredDet sd;
                sd.score = scores[i];
                if (flags.tp[i]) {
                    const GtMeta& g = scene.gts[static_cast<std::size_t>(flags.gt_index[i])];
                    sd.flag = relevant(g) ? 1 : -1;
                    sd.similarity = (1.0 + std::cos(normalize_angle(det_boxes[i].yaw - g.box.yaw))) / 2.0;
                } else {
                    sd.flag = 0;
                }
                (mode == IouMode::iou3d ? pooled3d : pooledbev).push_back(sd);
            }
        }
    }
    out.n_gt = n_gt;
    if (n_gt == 0) return out;  // undefined, reported as absent
    out.defined = true;
    out.ap3d_r40 = average_precision(pooled3d, n_gt, Interp::r40);
    out.ap3d_r11 = average_precision(pooled3d, n_gt, Interp::r11);
    out.apbev_r40 = average_precision(pooledbev, n_gt, Interp::r40);
    out.apbev_r11 = average_precision(pooledbev, n_gt, Interp::r11);
    out.aos_r40 = aos(pooled3d, n_gt, Interp::r40);
    out.aos_r11 = aos(pooled3d, n_gt, Interp::r11);

    auto table = pr_table(pooled3d, n_gt);
    for (int i = 1; i <= 40; ++i) {
        const double r = static_cast<double>(i) / 40.0;
        double best = 0;
        for (const PrPoint& p : table)
            if (p.recall >= r - 1e-12) best = std::max(best, p.precision);
        out.pr_curve_3d.push_back({r, best});
    }
    return out;
}

}  // namespace detail

inline EvalResult evaluate_scenes(const std::vector<SceneEval>& scenes, double iou_thresh = 0.7) {
    EvalResult r;
    r.easy = detail::eval_difficulty(scenes, Difficulty::easy, iou_thresh);
    r.moderate = detail::eval_difficulty(scenes, Difficulty::moderate, iou_thresh);
    r.hard = detail::eval_difficulty(scenes, Difficulty::hard, iou_thresh);
    double s = 0;
    int n = 0;
    for (const DifficultyResult* d : {&r.easy, &r.moderate, &r.hard}) {
        if (!d->defined) continue;
        s += d->ap3d_r40;
        ++n;
    }
    r.map3d_r40 = n ? s / n : 0.0;
    return r;
}

// metrics.csv: run_id, split, difficulty, metric, value
inline void write_metrics_csv(const std::string& path, const std::string& run_id, const std::string& split,
                              const EvalResult& result, bool append = false) {
    std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
    if (!f) throw DataError("write_metrics_csv: cannot open '" + path + "'");
    if (!append) f << "run_id,split,difficulty,metric,value\n";
    f.precision(10);
    for (Difficulty d : {Difficulty::easy, Difficulty::moderate, Difficulty::hard}) {
        const DifficultyResult& e = result.at(d);
        if (!e.defined) continue;
        const std::string base = run_id + "," + split + "," + difficulty_name(d) + ",";
        f << base << "ap3d_r40," << e.ap3d_r40 << "\n";
        f << base << "ap3d_r11," << e.ap3d_r11 << "\n";
        f << base << "apbev_r40," << e.apbev_r40 << "\n";
        f << base << "apbev_r11," << e.apbev_r11 << "\n";
        f << base << "aos_r40," << e.aos_r40 << "\n";
        f << base << "aos_r11," << e.aos_r11 << "\n";
        f << base << "n_gt," << e.n_gt << "\n";
    }
    f << run_id << "," << split << ",all,map3d_r40," << result.map3d_r40 << "\n";
}

inline void write_pr_curve_csv(const std::string& path, const std::string& run_id, const EvalResult& result) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_pr_curve_csv: cannot open '" + path + "'");
    f << "run_id,difficulty,recall,precision\n";
    f.precision(10);
    for (Difficulty d : {Difficulty::easy, Difficulty::moderate, Difficulty::hard}) {
        const DifficultyResult& e = result.at(d);
        for (const auto& [recall, precision] : e.pr_curve_3d)
            f << run_id << "," << difficulty_name(d) << "," << recall << "," << precision << "\n";
    }
}

}  // namespace graphdet
