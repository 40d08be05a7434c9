// Test-only oracles, deliberately independent of the library implementations
// they are used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracles {

struct OBox {
    double x, y, z, h, w, l, yaw;
};

// membership test written directly from the rotation definition
inline bool obox_contains(const OBox& b, double px, double py, double pz) {
    const double dx = px - b.x, dy = py - b.y;
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double lx = c * dx + s * dy;   // coordinates along box axes
    const double ly = -s * dx + c * dy;
    return std::abs(lx) <= b.l / 2 && std::abs(ly) <= b.w / 2 && std::abs(pz - b.z) <= b.h / 2;
}

// Monte-Carlo 3D IoU: sample the union's bounding volume uniformly.
inline double mc_iou3d(const OBox& a, const OBox& b, std::size_t n_samples, std::uint64_t seed) {
    const double ra = 0.5 * std::hypot(a.l, a.w);
    const double rb = 0.5 * std::hypot(b.l, b.w);
    const double lo_x = std::min(a.x - ra, b.x - rb), hi_x = std::max(a.x + ra, b.x + rb);
    const double lo_y = std::min(a.y - ra, b.y - rb), hi_y = std::max(a.y + ra, b.y + rb);
    const double lo_z = std::min(a.z - a.h / 2, b.z - b.h / 2), hi_z = std::max(a.z + a.h / 2, b.z + b.h / 2);
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) {
        return lo + (hi - lo) * (double(rng() >> 11) * 0x1.0p-53);
    };
    std::size_t in_a = 0, in_b = 0, in_both = 0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double px = uni(lo_x, hi_x), py = uni(lo_y, hi_y), pz = uni(lo_z, hi_z);
        const bool ia = obox_contains(a, px, py, pz);
        const bool ib = obox_contains(b, px, py, pz);
        in_a += ia;
        in_b += ib;
        in_both += ia && ib;
    }
    const std::size_t in_union = in_a + in_b - in_both;
    return in_union == 0 ? 0.0 : double(in_both) / double(in_union);
}

// Brute-force average precision from scored TP/FP flags: build the full PR
// table row by row, apply monotone smoothing, then sample recall positions.
struct ScoredFlag {
    double score;
    bool tp;
};

inline double brute_force_ap(std::vector<ScoredFlag> dets, std::size_t n_gt, int n_positions) {
    std::stable_sort(dets.begin(), dets.end(), [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const auto& d : dets) {
        if (d.tp) ++tp; else ++fp;
        precision.push_back(double(tp) / double(tp + fp));
        recall.push_back(double(tp) / double(n_gt));
    }
    // max precision at recall >= r
    auto p_at = [&](double r) {
        double best = 0;
        for (std::size_t i = 0; i < recall.size(); ++i)
            if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
        return best;
    };
    double s = 0;
    if (n_positions == 11) {
        for (int i = 0; i <= 10; ++i) s += p_at(i / 10.0);
        return 100.0 * s / 11.0;
    }
    for (int i = 1; i <= n_positions; ++i) s += p_at(double(i) / n_positions);
    return 100.0 * s / n_positions;
}

}  // namespace oracles
