#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "graphdet/common.hpp"
#include "graphdet/geom.hpp"

namespace graphdet {

// ---------------------------------------------------------------------------
// small homogeneous-transform helper

struct Mat4 {
    std::array<double, 16> m{};  // row-major

    static Mat4 identity() {
        Mat4 r;
        for (int i = 0; i < 4; ++i) r.m[static_cast<std::size_t>(i * 4 + i)] = 1.0;
        return r;
    }

    double& at(int r, int c) { return m[static_cast<std::size_t>(r * 4 + c)]; }
    double at(int r, int c) const { return m[static_cast<std::size_t>(r * 4 + c)]; }

    Mat4 operator*(const Mat4& o) const {
        Mat4 r;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                double s = 0;
                for (int k = 0; k < 4; ++k) s += at(i, k) * o.at(k, j);
                r.at(i, j) = s;
            }
        return r;
    }

    Vec3 apply(const Vec3& p) const {
        const double w = at(3, 0) * p.x + at(3, 1) * p.y + at(3, 2) * p.z + at(3, 3);
        return {(at(0, 0) * p.x + at(0, 1) * p.y + at(0, 2) * p.z + at(0, 3)) / w,
                (at(1, 0) * p.x + at(1, 1) * p.y + at(1, 2) * p.z + at(1, 3)) / w,
                (at(2, 0) * p.x + at(2, 1) * p.y + at(2, 2) * p.z + at(2, 3)) / w};
    }

    Vec3 apply_dir(const Vec3& d) const {
        return {at(0, 0) * d.x + at(0, 1) * d.y + at(0, 2) * d.z,
                at(1, 0) * d.x + at(1, 1) * d.y + at(1, 2) * d.z,
                at(2, 0) * d.x + at(2, 1) * d.y + at(2, 2) * d.z};
    }

    // Gauss-Jordan; fine for well-conditioned calibration matrices
    Mat4 inverse() const {
        std::array<double, 32> aug{};
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) aug[static_cast<std::size_t>(i * 8 + j)] = at(i, j);
            aug[static_cast<std::size_t>(i * 8 + 4 + i)] = 1.0;
        }
        for (int col = 0; col < 4; ++col) {
            int pivot = col;
            for (int r = col + 1; r < 4; ++r)
                if (std::abs(aug[static_cast<std::size_t>(r * 8 + col)]) > std::abs(aug[static_cast<std::size_t>(pivot * 8 + col)])) pivot = r;
            if (std::abs(aug[static_cast<std::size_t>(pivot * 8 + col)]) < 1e-12)
                throw DataError("Mat4::inverse: singular matrix");
            if (pivot != col)
                for (int j = 0; j < 8; ++j) std::swap(aug[static_cast<std::size_t>(col * 8 + j)], aug[static_cast<std::size_t>(pivot * 8 + j)]);
            const double d = aug[static_cast<std::size_t>(col * 8 + col)];
            for (int j = 0; j < 8; ++j) aug[static_cast<std::size_t>(col * 8 + j)] /= d;
            for (int r = 0; r < 4; ++r) {
                if (r == col) continue;
                const double f = aug[static_cast<std::size_t>(r * 8 + col)];
                for (int j = 0; j < 8; ++j) aug[static_cast<std::size_t>(r * 8 + j)] -= f * aug[static_cast<std::size_t>(col * 8 + j)];
            }
        }
        Mat4 inv;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) inv.at(i, j) = aug[static_cast<std::size_t>(i * 8 + 4 + j)];
        return inv;
    }
};

// ---------------------------------------------------------------------------
// procedural shapes

struct SyntheticShape {
    std::vector<Triangle> mesh;
    double h = 0, w = 0, l = 0;  // canonical size, geometric center at origin
};

namespace detail {

inline void add_cuboid(std::vector<Triangle>& mesh, const Vec3& lo, const Vec3& hi) {
    const Vec3 v[8] = {{lo.x, lo.y, lo.z}, {hi.x, lo.y, lo.z}, {hi.x, hi.y, lo.z}, {lo.x, hi.y, lo.z},
                       {lo.x, lo.y, hi.z}, {hi.x, lo.y, hi.z}, {hi.x, hi.y, hi.z}, {lo.x, hi.y, hi.z}};
    const int faces[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4}, {2, 3, 7, 6}, {1, 2, 6, 5}, {0, 3, 7, 4}};
    for (const auto& f : faces) {
        mesh.push_back({v[f[0]], v[f[1]], v[f[2]]});
        mesh.push_back({v[f[0]], v[f[2]], v[f[3]]});
    }
}

// axis along y, 12-sided prism
inline void add_wheel(std::vector<Triangle>& mesh, const Vec3& center, double radius, double width) {
    constexpr int kSides = 12;
    std::array<Vec3, kSides> ring_l, ring_r;
    for (int i = 0; i < kSides; ++i) {
        const double a = 2.0 * kPi * i / kSides;
        const double dx = radius * std::cos(a), dz = radius * std::sin(a);
        ring_l[static_cast<std::size_t>(i)] = {center.x + dx, center.y - width / 2, center.z + dz};
        ring_r[static_cast<std::size_t>(i)] = {center.x + dx, center.y + width / 2, center.z + dz};
    }
    for (int i = 0; i < kSides; ++i) {
        const int j = (i + 1) % kSides;
        mesh.push_back({ring_l[static_cast<std::size_t>(i)], ring_l[static_cast<std::size_t>(j)], ring_r[static_cast<std::size_t>(j)]});
        mesh.push_back({ring_l[static_cast<std::size_t>(i)], ring_r[static_cast<std::size_t>(j)], ring_r[static_cast<std::size_t>(i)]});
        mesh.push_back({center + Vec3{0, -width / 2, 0}, ring_l[static_cast<std::size_t>(j)], ring_l[static_cast<std::size_t>(i)]});
        mesh.push_back({center + Vec3{0, width / 2, 0}, ring_r[static_cast<std::size_t>(i)], ring_r[static_cast<std::size_t>(j)]});
    }
}

}  // namespace detail

// Car-like composite: cuboid body, cuboid cabin, four wheel cylinders.
inline SyntheticShape gen_shape_with_dims(double h, double w, double l) {
    SyntheticShape s;
    s.h = h;
    s.w = w;
    s.l = l;
    const double z0 = -h / 2;
    const double wheel_r = 0.16 * h;
    detail::add_cuboid(s.mesh, {-l / 2, -w / 2, z0 + 0.12 * h}, {l / 2, w / 2, z0 + 0.60 * h});
    detail::add_cuboid(s.mesh, {-0.32 * l, -0.46 * w, z0 + 0.60 * h}, {0.23 * l, 0.46 * w, h / 2});
    detail::add_wheel(s.mesh, {0.32 * l, -0.42 * w, z0 + wheel_r}, wheel_r, 0.12 * w);
    detail::add_wheel(s.mesh, {0.32 * l, 0.42 * w, z0 + wheel_r}, wheel_r, 0.12 * w);
    detail::add_wheel(s.mesh, {-0.32 * l, -0.42 * w, z0 + wheel_r}, wheel_r, 0.12 * w);
    detail::add_wheel(s.mesh, {-0.32 * l, 0.42 * w, z0 + wheel_r}, wheel_r, 0.12 * w);
    return s;
}

// randomized proportions within car-plausible ranges
inline SyntheticShape gen_shape(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xca7));
    return gen_shape_with_dims(rng.uniform(1.3, 1.8), rng.uniform(1.5, 1.9), rng.uniform(3.2, 4.8));
}

inline PointCloud sample_shape(const SyntheticShape& shape, std::size_t n, std::uint64_t seed) {
    return sample_surface(shape.mesh, n, seed);
}

// ---------------------------------------------------------------------------
// viewpoint corruption

struct CorruptResult {
    PointCloud partial;
    PointCloud missing;
};

// Removes every point within `radius` of a viewpoint drawn on the shape's
// bounding sphere. Shrinks the radius (x0.8, up to 5 times) rather than
// return an empty partial cloud.
inline CorruptResult corrupt_viewpoint(const PointCloud& full, double radius, std::uint64_t seed) {
    if (radius < 0) throw DataError("corrupt_viewpoint: radius must be non-negative");
    if (full.empty()) throw DataError("corrupt_viewpoint: empty cloud");
    const Vec3 c = full.centroid();
    double bound = 0;
    for (const Vec3& p : full.points) bound = std::max(bound, (p - c).norm());

    Rng rng(mix_seed(seed, 0xdead));
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double r_xy = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 viewpoint = c + Vec3{r_xy * std::cos(phi), r_xy * std::sin(phi), z} * bound;

    double r = radius;
    for (int attempt = 0; attempt <= 5; ++attempt) {
        CorruptResult out;
        for (std::size_t i = 0; i < full.size(); ++i) {
            if ((full.points[i] - viewpoint).norm() <= r)
                out.missing.push_back(full.points[i]);
            else
                out.partial.push_back(full.points[i]);
        }
        if (!out.partial.empty()) return out;
        r *= 0.8;
    }
    throw DataError("corrupt_viewpoint: removal radius leaves no points after 5 retries");
}

// ---------------------------------------------------------------------------
// synthetic scenes

struct SceneSpec {
    std::vector<Box3D> object_poses;  // pairwise disjoint in BEV
    double ground_half_extent = 30.0;
    std::size_t ground_points = 800;
    std::size_t n_clutter = 3;
    std::size_t clutter_points = 80;
    Vec3 sensor_origin{0, 0, 1.8};
    std::size_t points_per_object = 2048;
    double keep_constant = 25.0;  // keep fraction = min(1, C / d^2)
    std::size_t min_object_points = 10;
    double shadow_radius = 0.1;
};

struct SceneLabel {
    Box3D box;
    double distance = 0;     // sensor to box center
    double shadow_frac = 0;  // fraction of surviving points lost to occlusion
    std::size_t n_points = 0;
};

struct Scene {
    PointCloud cloud;
    std::vector<SceneLabel> labels;
};

// random poses with zero BEV overlap, by rejection
inline SceneSpec make_scene_spec(std::size_t n_objects, std::uint64_t seed, double min_dist = 4.0,
                                 double max_dist = 45.0) {
    SceneSpec spec;
    Rng rng(mix_seed(seed, 0x5ce9e));
    int guard = 0;
    while (spec.object_poses.size() < n_objects && guard < 1000) {
        ++guard;
        const double d = rng.uniform(min_dist, max_dist);
        const double a = rng.uniform(-kPi, kPi);
        Box3D box;
        box.h = rng.uniform(1.3, 1.8);
        box.w = rng.uniform(1.5, 1.9);
        box.l = rng.uniform(3.2, 4.8);
        box.x = d * std::cos(a);
        box.y = d * std::sin(a);
        box.z = box.h / 2;  // resting on the ground plane
        box.yaw = rng.uniform(-kPi, kPi);
        bool ok = true;
        for (const Box3D& other : spec.object_poses)
            if (iou_bev(box, other) > 0 || (other.center() - box.center()).norm() < 3.0) ok = false;
        if (ok) spec.object_poses.push_back(box);
    }
    if (spec.object_poses.size() < n_objects)
        throw DataError("make_scene_spec: could not place objects without overlap");
    return spec;
}

namespace detail {

inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double t = std::clamp(ab.dot(p - a) / std::max(1e-12, ab.norm2()), 0.0, 1.0);
    return (p - (a + ab * t)).norm();
}

}  // namespace detail

// Object clouds posed into the world with distance subsampling and occlusion
// shadowing, plus ground plane and clutter. Labels keep per-object metadata
// for difficulty bucketing; objects that lose every point are dropped.
inline Scene gen_scene(const SceneSpec& spec, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x9c33e));
    Scene scene;

    struct Posed {
        std::vector<Vec3> pts;
        Box3D box;
        double dist;
        std::size_t kept_before_shadow;
        double shadow_frac = 0;
    };
    std::vector<Posed> objects;
    for (std::size_t oi = 0; oi < spec.object_poses.size(); ++oi) {
        const Box3D& box = spec.object_poses[oi];
        SyntheticShape shape = gen_shape_with_dims(box.h, box.w, box.l);
        PointCloud canonical = sample_shape(shape, spec.points_per_object, mix_seed(seed, 100 + oi));
        PointCloud world = from_box_frame(canonical, box);

        const double d = (box.center() - spec.sensor_origin).norm();
        const double keep = std::min(1.0, spec.keep_constant / (d * d));
        std::size_t n_keep = static_cast<std::size_t>(std::floor(keep * static_cast<double>(world.size())));
        n_keep = std::max(spec.min_object_points, n_keep);
        n_keep = std::min(n_keep, world.size());
        std::vector<int> order = rng.permutation(static_cast<int>(world.size()));
        order.resize(n_keep);

        Posed posed;
        posed.box = box;
        posed.dist = d;
        for (int idx : order) posed.pts.push_back(world.points[static_cast<std::size_t>(idx)]);
        posed.kept_before_shadow = posed.pts.size();
        objects.push_back(std::move(posed));
    }

    // occlusion: a point is shadowed when its sensor ray passes near a
    // strictly nearer object's surviving points
    std::vector<std::size_t> order(objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return objects[a].dist < objects[b].dist; });
    for (std::size_t rank = 1; rank < order.size(); ++rank) {
        Posed& far = objects[order[rank]];
        std::vector<Vec3> kept;
        for (const Vec3& p : far.pts) {
            bool shadowed = false;
            for (std::size_t near_rank = 0; near_rank < rank && !shadowed; ++near_rank) {
                const Posed& near = objects[order[near_rank]];
                if (near.dist >= far.dist) continue;
                for (const Vec3& q : near.pts) {
                    if (detail::point_segment_distance(q, spec.sensor_origin, p) < spec.shadow_radius) {
                        shadowed = true;
                        break;
                    }
                }
            }
            if (!shadowed) kept.push_back(p);
        }
        far.shadow_frac = far.pts.empty() ? 0.0
                                          : 1.0 - static_cast<double>(kept.size()) / static_cast<double>(far.kept_before_shadow);
        far.pts = std::move(kept);
    }

    for (const Posed& obj : objects) {
        if (obj.pts.empty()) continue;  // unlearnable ghost label, drop it
        for (const Vec3& p : obj.pts) scene.cloud.points.push_back(p);
        scene.labels.push_back({obj.box, obj.dist, obj.shadow_frac, obj.pts.size()});
    }

    for (std::size_t i = 0; i < spec.ground_points; ++i)
        scene.cloud.points.push_back({rng.uniform(-spec.ground_half_extent, spec.ground_half_extent),
                                      rng.uniform(-spec.ground_half_extent, spec.ground_half_extent),
                                      rng.uniform(0.0, 0.03)});

    for (std::size_t ci = 0; ci < spec.n_clutter; ++ci) {
        const double cx = rng.uniform(-spec.ground_half_extent, spec.ground_half_extent);
        const double cy = rng.uniform(-spec.ground_half_extent, spec.ground_half_extent);
        const double sx = rng.uniform(0.4, 2.5), sy = rng.uniform(0.2, 0.8), sz = rng.uniform(0.5, 2.2);
        bool clash = false;
        for (const auto& lb : scene.labels)
            if (std::hypot(cx - lb.box.x, cy - lb.box.y) < 4.0) clash = true;
        if (clash) continue;
        for (std::size_t i = 0; i < spec.clutter_points; ++i)
            scene.cloud.points.push_back({cx + rng.uniform(-sx, sx), cy + rng.uniform(-sy, sy), rng.uniform(0.0, sz)});
    }
    return scene;
}

// ---------------------------------------------------------------------------
// KITTI velodyne binary format

inline void kitti_write_velodyne(const PointCloud& cloud, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("kitti_write_velodyne: cannot open '" + path + "'");
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const float rec[4] = {static_cast<float>(cloud.points[i].x), static_cast<float>(cloud.points[i].y),
                              static_cast<float>(cloud.points[i].z),
                              cloud.feature_width >= 1 ? static_cast<float>(cloud.features[i * cloud.feature_width]) : 0.0f};
        std::uint32_t bits[4];
        std::memcpy(bits, rec, 16);
        char bytes[16];
        for (int k = 0; k < 4; ++k)
            for (int b = 0; b < 4; ++b) bytes[k * 4 + b] = static_cast<char>((bits[k] >> (8 * b)) & 0xff);
        f.write(bytes, 16);
    }
    if (!f) throw DataError("kitti_write_velodyne: write to '" + path + "' failed");
}

inline PointCloud kitti_read_velodyne(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("kitti_read_velodyne: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() % 16 != 0)
        throw DataError("kitti_read_velodyne '" + path + "': truncated record at byte offset " +
                        std::to_string(buf.size() - buf.size() % 16));
    PointCloud cloud;
    cloud.feature_width = 1;
    const std::size_t n = buf.size() / 16;
    for (std::size_t i = 0; i < n; ++i) {
        float rec[4];
        std::uint32_t bits[4] = {0, 0, 0, 0};
        for (int k = 0; k < 4; ++k)
            for (int b = 0; b < 4; ++b)
                bits[k] |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i * 16 + static_cast<std::size_t>(k * 4 + b)])) << (8 * b);
        std::memcpy(rec, bits, 16);
        cloud.points.push_back({rec[0], rec[1], rec[2]});
        cloud.features.push_back(rec[3]);
    }
    return cloud;
}

// ---------------------------------------------------------------------------
// KITTI calib + labels

struct Calib {
    Mat4 tr_velo_to_cam = Mat4::identity();
    Mat4 r0_rect = Mat4::identity();

    Mat4 velo_to_cam() const { return r0_rect * tr_velo_to_cam; }
    Mat4 cam_to_velo() const { return velo_to_cam().inverse(); }

    // pure axis permutation used for synthetic data: cam x = -y_velo,
    // cam y = -z_velo, cam z = x_velo
    static Calib synthetic() {
        Calib c;
        Mat4 t;
        t.at(0, 1) = -1;
        t.at(1, 2) = -1;
        t.at(2, 0) = 1;
        t.at(3, 3) = 1;
        c.tr_velo_to_cam = t;
        return c;
    }
};

// full label row; boxes are exposed in the LiDAR frame
struct KittiLabel {
    std::string type = "Car";
    double truncation = 0;  // synthetic writer stores the shadow fraction here
    int occluded = 0;
    double alpha = 0;
    double bbox[4] = {0, 0, 50, 50};
    Box3D box;  // LiDAR frame, geometric center
    double score = -1;  // optional 16th column
};

inline void write_calib(const Calib& calib, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_calib: cannot open '" + path + "'");
    f << std::setprecision(12);
    for (const char* name : {"P0", "P1", "P2", "P3"}) {
        f << name << ":";
        for (int i = 0; i < 12; ++i) f << " " << (i % 5 == 0 && i < 11 ? 700.0 : 0.0);
        f << "\n";
    }
    f << "R0_rect:";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) f << " " << calib.r0_rect.at(r, c);
    f << "\nTr_velo_to_cam:";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) f << " " << calib.tr_velo_to_cam.at(r, c);
    f << "\n";
}

inline Calib read_calib(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("read_calib: cannot open '" + path + "'");
    Calib calib;
    bool got_tr = false, got_r0 = false;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "Tr_velo_to_cam:") {
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 4; ++c)
                    if (!(is >> calib.tr_velo_to_cam.at(r, c)))
                        throw DataError("read_calib '" + path + "': short Tr_velo_to_cam");
            got_tr = true;
        } else if (key == "R0_rect:") {
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    if (!(is >> calib.r0_rect.at(r, c)))
                        throw DataError("read_calib '" + path + "': short R0_rect");
            got_r0 = true;
        }
    }
    if (!got_tr || !got_r0) throw DataError("read_calib '" + path + "': missing Tr_velo_to_cam or R0_rect");
    return calib;
}

// camera-frame label -> LiDAR-frame box (bottom center -> geometric center)
inline Box3D label_row_to_lidar(const Calib& calib, double h, double w, double l, double cx, double cy,
                                double cz, double ry) {
    const Mat4 cam_to_velo = calib.cam_to_velo();
    const Vec3 center_cam{cx, cy - h / 2, cz};  // camera y points down
    const Vec3 center = cam_to_velo.apply(center_cam);
    const Vec3 dir_cam{std::cos(ry), 0, -std::sin(ry)};
    const Vec3 dir = cam_to_velo.apply_dir(dir_cam);
    Box3D box;
    box.x = center.x;
    box.y = center.y;
    box.z = center.z;
    box.h = h;
    box.w = w;
    box.l = l;
    box.yaw = std::atan2(dir.y, dir.x);
    return box;
}

inline void lidar_box_to_label_row(const Calib& calib, const Box3D& box, double& cx, double& cy, double& cz,
                                   double& ry) {
    const Mat4 velo_to_cam = calib.velo_to_cam();
    const Vec3 center_cam = velo_to_cam.apply(box.center());
    cx = center_cam.x;
    cy = center_cam.y + box.h / 2;  // back to bottom center
    cz = center_cam.z;
    const Vec3 dir_cam = velo_to_cam.apply_dir({std::cos(box.yaw), std::sin(box.yaw), 0});
    ry = std::atan2(-dir_cam.z, dir_cam.x);
}

inline void kitti_write_labels(const std::vector<KittiLabel>& labels, const Calib& calib, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("kitti_write_labels: cannot open '" + path + "'");
    f << std::setprecision(10);
    for (const KittiLabel& lb : labels) {
        double cx, cy, cz, ry;
        lidar_box_to_label_row(calib, lb.box, cx, cy, cz, ry);
        const double alpha = ry - std::atan2(cx, cz);
        f << lb.type << " " << lb.truncation << " " << lb.occluded << " " << alpha << " "
          << lb.bbox[0] << " " << lb.bbox[1] << " " << lb.bbox[2] << " " << lb.bbox[3] << " "
          << lb.box.h << " " << lb.box.w << " " << lb.box.l << " "
          << cx << " " << cy << " " << cz << " " << ry;
        if (lb.score >= 0) f << " " << lb.score;
        f << "\n";
    }
}

// Non-Car classes are filtered out. Malformed rows report their line number.
inline std::vector<KittiLabel> kitti_read_labels(const std::string& label_path, const Calib& calib) {
    std::ifstream f(label_path);
    if (!f) throw DataError("kitti_read_labels: cannot open '" + label_path + "'");
    std::vector<KittiLabel> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream is(line);
        KittiLabel lb;
        double h, w, l, cx, cy, cz, ry;
        if (!(is >> lb.type >> lb.truncation >> lb.occluded >> lb.alpha >> lb.bbox[0] >> lb.bbox[1] >>
              lb.bbox[2] >> lb.bbox[3] >> h >> w >> l >> cx >> cy >> cz >> ry))
            throw DataError("kitti_read_labels '" + label_path + "': malformed row at line " + std::to_string(line_no));
        double score;
        if (is >> score) lb.score = score;
        if (lb.type != "Car") continue;
        lb.box = label_row_to_lidar(calib, h, w, l, cx, cy, cz, ry);
        out.push_back(lb);
    }
    return out;
}

inline int occlusion_bucket(double shadow_frac) {
    if (shadow_frac < 0.1) return 0;
    if (shadow_frac < 0.5) return 1;
    return 2;
}

}  // namespace graphdet
