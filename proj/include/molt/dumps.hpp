#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "molt/imageops.hpp"
#include "molt/ppm.hpp"
#include "molt/segment.hpp"
#include "molt/tensor.hpp"

namespace molt {

// Raw activation-grid dump: one text header line
//   CAM <h> <w> <c> <scale_id>\n
// followed by h*w*c little-endian doubles in row-major, channel-last order.
// The combined CAM uses scale_id = -1. Doubles are written raw, so a dump
// round-trips bit-exactly.

struct CamDump {
    Tensor map;  // [h x w] when c == 1, else [h x w x c]
    int scale_id = 0;
};

inline void write_cam_dump(const std::string& path, const Tensor& map, int scale_id) {
    if (map.rank() != 2 && map.rank() != 3) {
        throw DimensionError("write_cam_dump: expected rank 2 or 3, got " +
                             shape_string(map.shape()));
    }
    const int h = map.shape()[0], w = map.shape()[1];
    const int c = map.rank() == 3 ? map.shape()[2] : 1;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write CAM dump: " + path);
    out << "CAM " << h << ' ' << w << ' ' << c << ' ' << scale_id << '\n';
    out.write(reinterpret_cast<const char*>(map.data().data()),
              static_cast<std::streamsize>(map.size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + path);
}

inline CamDump read_cam_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open CAM dump: " + path);
    std::string line;
    std::getline(in, line);
    std::istringstream header(line);
    std::string tag;
    int h = 0, w = 0, c = 0, scale_id = 0;
    header >> tag >> h >> w >> c >> scale_id;
    if (tag != "CAM" || header.fail() || h <= 0 || w <= 0 || c <= 0) {
        throw ParseError(path + ": bad CAM header '" + line + "'");
    }
    std::vector<double> data(static_cast<std::size_t>(h) * w * c);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw ParseError(path + ": truncated CAM data");
    Tensor map = c == 1 ? Tensor::from_data({h, w}, std::move(data))
                        : Tensor::from_data({h, w, c}, std::move(data));
    return {map, scale_id};
}

// Segment dump: text header "SEG <h> <w> <n>\n" + row-major int32 LE labels.
inline void write_seg_dump(const std::string& path, const SegmentMap& seg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write segment dump: " + path);
    out << "SEG " << seg.h << ' ' << seg.w << ' ' << seg.num_segments << '\n';
    out.write(reinterpret_cast<const char*>(seg.labels.data()),
              static_cast<std::streamsize>(seg.labels.size() * sizeof(std::int32_t)));
    if (!out) throw IoError("write failed: " + path);
}

inline SegmentMap read_seg_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open segment dump: " + path);
    std::string line;
    std::getline(in, line);
    std::istringstream header(line);
    std::string tag;
    SegmentMap seg;
    header >> tag >> seg.h >> seg.w >> seg.num_segments;
    if (tag != "SEG" || header.fail() || seg.h <= 0 || seg.w <= 0 || seg.num_segments <= 0) {
        throw ParseError(path + ": bad SEG header '" + line + "'");
    }
    seg.labels.resize(static_cast<std::size_t>(seg.h) * seg.w);
    in.read(reinterpret_cast<char*>(seg.labels.data()),
            static_cast<std::streamsize>(seg.labels.size() * sizeof(std::int32_t)));
    if (!in) throw ParseError(path + ": truncated SEG data");
    return seg;
}

// Boundary overlay: segment borders painted green over the source image.
inline void write_boundary_overlay(const std::string& path, const Tensor& image,
                                   const SegmentMap& seg) {
    require_rank(image, 3, "write_boundary_overlay");
    if (image.shape()[0] != seg.h || image.shape()[1] != seg.w) {
        throw DimensionError("write_boundary_overlay: image and segments differ in size");
    }
    Tensor overlay = image.clone();
    auto& o = overlay.data_mut();
    for (int y = 0; y < seg.h; ++y) {
        for (int x = 0; x < seg.w; ++x) {
            const std::int32_t l = seg.at(y, x);
            const bool boundary = (x + 1 < seg.w && seg.at(y, x + 1) != l) ||
                                  (y + 1 < seg.h && seg.at(y + 1, x) != l);
            if (boundary) {
                const std::size_t base = (static_cast<std::size_t>(y) * seg.w + x) * 3;
                o[base] = 0.0;
                o[base + 1] = 1.0;
                o[base + 2] = 0.0;
            }
        }
    }
    encode_image(path, overlay);
}

}  // namespace molt
