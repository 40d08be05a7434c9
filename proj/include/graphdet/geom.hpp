#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "graphdet/common.hpp"
#include "graphdet/tensor.hpp"

namespace graphdet {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm2() const { return x * x + y * y + z * z; }
    double norm() const { return std::sqrt(norm2()); }
};

// Point set in a common frame. `features` is an optional flat N x
// feature_width block (reflectance, state vectors); `flags` marks points
// synthesized by completion (0 = original, 1 = generated).
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<double> features;
    std::size_t feature_width = 0;
    std::vector<std::uint8_t> flags;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    std::uint8_t flag(std::size_t i) const { return flags.empty() ? 0 : flags[i]; }

    void push_back(const Vec3& p, std::uint8_t fl = 0) {
        points.push_back(p);
        if (!flags.empty() || fl != 0) {
            flags.resize(points.size() - 1, 0);
            flags.push_back(fl);
        }
    }

    // coordinates as an untaped [n,3] tensor
    template <typename T>
    Tensor<T> coords_tensor() const {
        Tensor<T> t = Tensor<T>::zeros(points.size(), 3);
        for (std::size_t i = 0; i < points.size(); ++i) {
            t.data[3 * i] = static_cast<T>(points[i].x);
            t.data[3 * i + 1] = static_cast<T>(points[i].y);
            t.data[3 * i + 2] = static_cast<T>(points[i].z);
        }
        return t;
    }

    template <typename T>
    static PointCloud from_tensor(const Tensor<T>& t) {
        if (t.cols() != 3) throw ShapeError("PointCloud::from_tensor: expected [n,3], got " + shape_str(t));
        PointCloud c;
        c.points.resize(t.rows());
        for (std::size_t i = 0; i < t.rows(); ++i)
            c.points[i] = {static_cast<double>(t.data[3 * i]), static_cast<double>(t.data[3 * i + 1]),
                           static_cast<double>(t.data[3 * i + 2])};
        return c;
    }

    PointCloud subset(const std::vector<int>& idx) const {
        PointCloud out;
        out.feature_width = feature_width;
        out.points.reserve(idx.size());
        for (int i : idx) {
            out.points.push_back(points[static_cast<std::size_t>(i)]);
            if (!flags.empty()) out.flags.push_back(flags[static_cast<std::size_t>(i)]);
            for (std::size_t f = 0; f < feature_width; ++f)
                out.features.push_back(features[static_cast<std::size_t>(i) * feature_width + f]);
        }
        return out;
    }

    Vec3 centroid() const {
        Vec3 c;
        for (const Vec3& p : points) c = c + p;
        return c * (1.0 / static_cast<double>(points.size()));
    }
};

// Oriented box, LiDAR frame: center (x,y,z), size (h,w,l) = height/width/
// length, yaw about +z from bird's-eye view. l runs along the heading.
struct Box3D {
    double x = 0, y = 0, z = 0;
    double h = 1, w = 1, l = 1;
    double yaw = 0;

    Vec3 center() const { return {x, y, z}; }
    double volume() const { return h * w * l; }
};

inline double normalize_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a < 0) a += 2.0 * kPi;
    return a - kPi;
}

inline void validate_box(const Box3D& b, const char* where) {
    if (!(b.h > 0 && b.w > 0 && b.l > 0))
        throw DataError(std::string(where) + ": box sizes must be positive");
}

// ---------------------------------------------------------------------------
// sampling / neighbors

// Farthest point sampling with an explicit start index.
inline std::vector<int> farthest_point_sample_from(const PointCloud& cloud, std::size_t m, std::size_t start) {
    const std::size_t n = cloud.size();
    if (m > n) throw DataError("farthest_point_sample: m=" + std::to_string(m) + " > n=" + std::to_string(n));
    std::vector<int> picked;
    picked.reserve(m);
    if (m == 0) return picked;
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::size_t cur = start;
    for (std::size_t it = 0; it < m; ++it) {
        picked.push_back(static_cast<int>(cur));
        const Vec3 p = cloud.points[cur];
        std::size_t next = 0;
        double far = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (cloud.points[i] - p).norm2();
            if (d < best[i]) best[i] = d;
            if (best[i] > far) {
                far = best[i];
                next = i;
            }
        }
        cur = next;
    }
    return picked;
}

// The start point is picked by a seeded random direction (the extreme point
// along it), so the choice is a function of geometry rather than of point
// order, and different seeds give different multi-resolution views.
inline std::size_t fps_start_index(const PointCloud& cloud, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x9e3779b9));
    Vec3 dir{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    if (dir.norm() < 1e-12) dir = {1, 0, 0};
    std::size_t best = 0;
    double bd = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double d = cloud.points[i].dot(dir);
        const auto& p = cloud.points[i];
        const auto& q = cloud.points[best];
        const bool tie_wins = d == bd && (p.x < q.x || (p.x == q.x && (p.y < q.y || (p.y == q.y && p.z < q.z))));
        if (d > bd || tie_wins) {
            bd = d;
            best = i;
        }
    }
    return best;
}

inline std::vector<int> farthest_point_sample(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
    if (cloud.empty()) throw DataError("farthest_point_sample: empty cloud");
    return farthest_point_sample_from(cloud, m, fps_start_index(cloud, seed));
}

// k nearest neighbors of each query point among `source` points. Self-match
// is excluded only when the two clouds are the same object. Returns a flat
// row-major [n_query, k] index array; ties break to the lower index.
inline std::vector<int> knn_cross(const PointCloud& query, const PointCloud& source, std::size_t k,
                                  bool exclude_self) {
    const std::size_t nq = query.size(), ns = source.size();
    const std::size_t candidates = exclude_self ? ns - 1 : ns;
    if (k > candidates || k == 0)
        throw DataError("knn: k=" + std::to_string(k) + " out of range for " + std::to_string(ns) + " points");
    std::vector<int> out(nq * k);
    std::vector<std::pair<double, int>> dist(ns);
    for (std::size_t i = 0; i < nq; ++i) {
        for (std::size_t j = 0; j < ns; ++j)
            dist[j] = {(source.points[j] - query.points[i]).norm2(), static_cast<int>(j)};
        if (exclude_self) dist[i].first = std::numeric_limits<double>::infinity();
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = dist[j].second;
    }
    return out;
}

inline std::vector<int> knn(const PointCloud& cloud, std::size_t k) {
    if (k >= cloud.size()) throw DataError("knn: k=" + std::to_string(k) + " >= n=" + std::to_string(cloud.size()));
    return knn_cross(cloud, cloud, k, true);
}

// ---------------------------------------------------------------------------
// frames

inline Vec3 to_box_frame(const Vec3& p, const Box3D& box) {
    const double c = std::cos(-box.yaw), s = std::sin(-box.yaw);
    const Vec3 t = p - box.center();
    return {c * t.x - s * t.y, s * t.x + c * t.y, t.z};
}

inline Vec3 from_box_frame(const Vec3& p, const Box3D& box) {
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    return Vec3{c * p.x - s * p.y, s * p.x + c * p.y, p.z} + box.center();
}

inline PointCloud to_box_frame(const PointCloud& cloud, const Box3D& box) {
    PointCloud out = cloud;
    for (auto& p : out.points) p = to_box_frame(p, box);
    return out;
}

inline PointCloud from_box_frame(const PointCloud& cloud, const Box3D& box) {
    PointCloud out = cloud;
    for (auto& p : out.points) p = from_box_frame(p, box);
    return out;
}

inline bool point_in_box(const Vec3& p, const Box3D& box, double margin = 0.0) {
    const Vec3 q = to_box_frame(p, box);
    return std::abs(q.x) <= box.l * 0.5 + margin && std::abs(q.y) <= box.w * 0.5 + margin &&
           std::abs(q.z) <= box.h * 0.5 + margin;
}

inline std::vector<int> points_in_box(const PointCloud& cloud, const Box3D& box, double margin = 0.0) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (point_in_box(cloud.points[i], box, margin)) idx.push_back(static_cast<int>(i));
    return idx;
}

// ---------------------------------------------------------------------------
// rotated IoU

namespace detail {

struct Vec2 {
    double x = 0, y = 0;
};

// counter-clockwise corner order, as the clipper requires
inline std::array<Vec2, 4> box_corners_bev(const Box3D& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = b.l * 0.5, hw = b.w * 0.5;
    std::array<Vec2, 4> out;
    const double dx[4] = {hl, hl, -hl, -hl};
    const double dy[4] = {-hw, hw, hw, -hw};
    for (int i = 0; i < 4; ++i) out[i] = {b.x + c * dx[i] - s * dy[i], b.y + s * dx[i] + c * dy[i]};
    return out;
}

inline double polygon_area(const std::vector<Vec2>& poly) {
    double a = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % poly.size()];
        a += p.x * q.y - p.y * q.x;
    }
    return std::abs(a) * 0.5;
}

// Sutherland-Hodgman: clip `subject` against the convex polygon `clip`
// (counter-clockwise). Exact for convex inputs.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject, const std::array<Vec2, 4>& clip) {
    for (int e = 0; e < 4 && !subject.empty(); ++e) {
        const Vec2 a = clip[static_cast<std::size_t>(e)];
        const Vec2 b = clip[static_cast<std::size_t>((e + 1) % 4)];
        std::vector<Vec2> out;
        const auto side = [&](const Vec2& p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
        for (std::size_t i = 0; i < subject.size(); ++i) {
            const Vec2 cur = subject[i];
            const Vec2 nxt = subject[(i + 1) % subject.size()];
            const double sc = side(cur), sn = side(nxt);
            if (sc >= 0) out.push_back(cur);
            if ((sc > 0 && sn < 0) || (sc < 0 && sn > 0)) {
                const double t = sc / (sc - sn);
                out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
            }
        }
        subject = std::move(out);
    }
    return subject;
}

inline double intersection_area_bev(const Box3D& a, const Box3D& b) {
    auto ca = box_corners_bev(a);
    auto cb = box_corners_bev(b);
    std::vector<Vec2> subject(ca.begin(), ca.end());
    std::vector<Vec2> result = clip_convex(std::move(subject), cb);
    if (result.size() < 3) return 0.0;
    return polygon_area(result);
}

}  // namespace detail

inline double iou_bev(const Box3D& a, const Box3D& b) {
    validate_box(a, "iou_bev");
    validate_box(b, "iou_bev");
    const double inter = detail::intersection_area_bev(a, b);
    const double uni = a.l * a.w + b.l * b.w - inter;
    return uni <= 0 ? 0.0 : inter / uni;
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
    validate_box(a, "iou_3d");
    validate_box(b, "iou_3d");
    const double inter_bev = detail::intersection_area_bev(a, b);
    const double zlo = std::max(a.z - a.h * 0.5, b.z - b.h * 0.5);
    const double zhi = std::min(a.z + a.h * 0.5, b.z + b.h * 0.5);
    const double inter = inter_bev * std::max(0.0, zhi - zlo);
    const double uni = a.volume() + b.volume() - inter;
    return uni <= 0 ? 0.0 : inter / uni;
}

// Greedy NMS in bird's-eye view. Score ties resolve to the lower index.
inline std::vector<int> nms_bev(const std::vector<Box3D>& boxes, const std::vector<double>& scores,
                                double iou_thresh) {
    if (boxes.size() != scores.size()) throw DataError("nms_bev: boxes/scores length mismatch");
    std::vector<int> order(boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int l, int r) { return scores[static_cast<std::size_t>(l)] > scores[static_cast<std::size_t>(r)]; });
    std::vector<int> kept;
    std::vector<bool> suppressed(boxes.size(), false);
    for (int i : order) {
        if (suppressed[static_cast<std::size_t>(i)]) continue;
        kept.push_back(i);
        for (int j : order) {
            if (j == i || suppressed[static_cast<std::size_t>(j)]) continue;
            if (iou_bev(boxes[static_cast<std::size_t>(i)], boxes[static_cast<std::size_t>(j)]) > iou_thresh)
                suppressed[static_cast<std::size_t>(j)] = true;
        }
    }
    return kept;
}

// ---------------------------------------------------------------------------
// surface sampling

struct Triangle {
    Vec3 a, b, c;
    double area() const { return 0.5 * (b - a).cross(c - a).norm(); }
};

// Area-proportional triangle choice, uniform barycentric placement.
inline PointCloud sample_surface(const std::vector<Triangle>& mesh, std::size_t n, std::uint64_t seed) {
    std::vector<double> cum;
    cum.reserve(mesh.size());
    double total = 0;
    for (const auto& t : mesh) {
        total += t.area();
        cum.push_back(total);
    }
    if (mesh.empty() || total <= 0) throw DataError("sample_surface: zero total area");
    Rng rng(seed);
    PointCloud out;
    out.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = rng.uniform() * total;
        const auto it = std::lower_bound(cum.begin(), cum.end(), r);
        const auto& t = mesh[std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), mesh.size() - 1)];
        const double r1 = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        out.points.push_back(t.a * (1.0 - r1) + t.b * (r1 * (1.0 - r2)) + t.c * (r1 * r2));
    }
    return out;
}

}  // namespace graphdet
