#pragma once

#include <array>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "graphdet/common.hpp"
#include "graphdet/geom.hpp"

namespace graphdet {

// ASCII PLY point export/import, optionally with per-point colors.
// Used to inspect completion results (before/after clouds).

inline void write_ply(const std::string& path, const PointCloud& cloud,
                      const std::vector<std::array<std::uint8_t, 3>>& colors = {}) {
    if (!colors.empty() && colors.size() != cloud.size())
        throw DataError("write_ply: color count does not match point count");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_ply: cannot open '" + path + "'");
    f << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n";
    f << "property float x\nproperty float y\nproperty float z\n";
    if (!colors.empty()) f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    f << "end_header\n";
    f.precision(9);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.points[i];
        f << p.x << " " << p.y << " " << p.z;
        if (!colors.empty())
            f << " " << int(colors[i][0]) << " " << int(colors[i][1]) << " " << int(colors[i][2]);
        f << "\n";
    }
    if (!f) throw DataError("write_ply: write to '" + path + "' failed");
}

inline PointCloud read_ply(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("read_ply: cannot open '" + path + "'");
    std::string line;
    std::size_t n = 0;
    bool header_done = false;
    std::vector<std::string> props;
    while (std::getline(f, line)) {
        std::istringstream is(line);
        std::string tok;
        is >> tok;
        if (tok == "element") {
            std::string what;
            is >> what >> n;
            if (what != "vertex") throw DataError("read_ply '" + path + "': unsupported element " + what);
        } else if (tok == "property") {
            std::string type, name;
            is >> type >> name;
            props.push_back(name);
        } else if (tok == "end_header") {
            header_done = true;
            break;
        } else if (tok == "format" && line.find("ascii") == std::string::npos) {
            throw DataError("read_ply '" + path + "': only ascii supported");
        }
    }
    if (!header_done) throw DataError("read_ply '" + path + "': missing end_header");
    if (props.size() < 3 || props[0] != "x" || props[1] != "y" || props[2] != "z")
        throw DataError("read_ply '" + path + "': expected x y z leading properties");
    PointCloud cloud;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(f, line)) throw DataError("read_ply '" + path + "': truncated at vertex " + std::to_string(i));
        std::istringstream is(line);
        Vec3 p;
        if (!(is >> p.x >> p.y >> p.z)) throw DataError("read_ply '" + path + "': malformed vertex " + std::to_string(i));
        cloud.points.push_back(p);
    }
    return cloud;
}

}  // namespace graphdet
