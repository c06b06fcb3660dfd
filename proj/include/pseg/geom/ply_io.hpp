#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pseg/geom/point_cloud.hpp"

namespace pseg::geom {

/// ASCII PLY with float32 vertex properties x y z nx ny nz and an optional
/// uint32 `label` property. Coordinates are stored at float32 precision, so
/// a file -> memory -> file round trip is byte-identical.

inline void write_ply(const std::filesystem::path& path, const LabeledPointCloud& cloud,
                      bool with_labels = true) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());

    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "property float nx\nproperty float ny\nproperty float nz\n";
    if (with_labels) out << "property uint label\n";
    out << "end_header\n";

    char buf[256];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point& p = cloud.cloud.points[i];
        // %.9g reproduces float32 values exactly in decimal.
        int len = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g",
                                static_cast<float>(p.pos.x), static_cast<float>(p.pos.y),
                                static_cast<float>(p.pos.z), static_cast<float>(p.normal.x),
                                static_cast<float>(p.normal.y), static_cast<float>(p.normal.z));
        out.write(buf, len);
        if (with_labels) {
            len = std::snprintf(buf, sizeof(buf), " %u", cloud.labels[i]);
            out.write(buf, len);
        }
        out.put('\n');
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline LabeledPointCloud read_ply(const std::filesystem::path& path, Label default_label = 0) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());

    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply")
        throw IoError("not a PLY file: " + path.string());

    std::size_t vertex_count = 0;
    std::vector<std::string> props;
    bool in_vertex_element = false;
    bool ascii = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = (fmt == "ascii");
        } else if (tok == "comment") {
            continue;
        } else if (tok == "element") {
            std::string name;
            ls >> name >> vertex_count;
            in_vertex_element = (name == "vertex");
            if (!in_vertex_element && vertex_count > 0 && !props.empty())
                throw IoError("unsupported non-vertex element with data: " + path.string());
        } else if (tok == "property") {
            if (!in_vertex_element) continue;
            std::string type, name;
            ls >> type >> name;
            if (type == "list") throw IoError("list properties unsupported: " + path.string());
            props.push_back(name);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!ascii) throw IoError("only ascii PLY is supported: " + path.string());

    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1, ilabel = -1;
    for (std::size_t i = 0; i < props.size(); ++i) {
        const std::string& n = props[i];
        const int idx = static_cast<int>(i);
        if (n == "x") ix = idx;
        else if (n == "y") iy = idx;
        else if (n == "z") iz = idx;
        else if (n == "nx") inx = idx;
        else if (n == "ny") iny = idx;
        else if (n == "nz") inz = idx;
        else if (n == "label") ilabel = idx;
    }
    if (ix < 0 || iy < 0 || iz < 0)
        throw IoError("PLY is missing x/y/z vertex properties: " + path.string());

    LabeledPointCloud out;
    out.cloud.points.reserve(vertex_count);
    out.labels.reserve(vertex_count);
    std::vector<double> fields(props.size());
    for (std::size_t r = 0; r < vertex_count; ++r) {
        if (!std::getline(in, line)) throw IoError("truncated PLY body: " + path.string());
        std::istringstream ls(line);
        for (std::size_t c = 0; c < props.size(); ++c)
            if (!(ls >> fields[c])) throw IoError("malformed vertex row: " + path.string());
        Point p;
        p.pos = {fields[static_cast<std::size_t>(ix)], fields[static_cast<std::size_t>(iy)],
                 fields[static_cast<std::size_t>(iz)]};
        if (inx >= 0 && iny >= 0 && inz >= 0)
            p.normal = {fields[static_cast<std::size_t>(inx)], fields[static_cast<std::size_t>(iny)],
                        fields[static_cast<std::size_t>(inz)]};
        out.cloud.points.push_back(p);
        out.labels.push_back(ilabel >= 0 ? static_cast<Label>(fields[static_cast<std::size_t>(ilabel)])
                                         : default_label);
    }
    return out;
}

}  // namespace pseg::geom
