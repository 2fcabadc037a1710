#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "molt/tensor.hpp"

namespace molt {

namespace ppm_detail {

// Reads one PNM header token, skipping whitespace and '#' comments.
inline std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) continue;
        tok.push_back(static_cast<char>(c));
        while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#') {
            tok.push_back(static_cast<char>(in.get()));
        }
        break;
    }
    return tok;
}

inline int parse_int(const std::string& tok, const std::string& path, const char* what) {
    if (tok.empty()) throw DecodeError(path + ": truncated header reading " + what);
    for (const char c : tok) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw DecodeError(path + ": bad " + what + " '" + tok + "'");
        }
    }
    return std::stoi(tok);
}

}  // namespace ppm_detail

struct ImageHeader {
    int width = 0, height = 0;
};

inline ImageHeader read_ppm_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    if (ppm_detail::next_token(in) != "P6") throw DecodeError(path + ": not a binary PPM (P6)");
    ImageHeader h;
    h.width = ppm_detail::parse_int(ppm_detail::next_token(in), path, "width");
    h.height = ppm_detail::parse_int(ppm_detail::next_token(in), path, "height");
    if (h.width <= 0 || h.height <= 0) throw DecodeError(path + ": non-positive image size");
    return h;
}

// Binary P6 decoder; values come back in [0, 1], channel order R, G, B.
inline Tensor decode_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    if (ppm_detail::next_token(in) != "P6") throw DecodeError(path + ": not a binary PPM (P6)");
    const int w = ppm_detail::parse_int(ppm_detail::next_token(in), path, "width");
    const int h = ppm_detail::parse_int(ppm_detail::next_token(in), path, "height");
    const int maxval = ppm_detail::parse_int(ppm_detail::next_token(in), path, "maxval");
    if (w <= 0 || h <= 0) throw DecodeError(path + ": non-positive image size");
    if (maxval <= 0 || maxval > 255) {
        throw DecodeError(path + ": unsupported maxval " + std::to_string(maxval));
    }
    in.get();  // single whitespace byte after the header
    std::vector<char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw DecodeError(path + ": truncated pixel data");
    }
    Tensor image({h, w, 3});
    auto& o = image.data_mut();
    const double scale = static_cast<double>(maxval);
    for (std::size_t i = 0; i < raw.size(); ++i)
        o[i] = static_cast<double>(static_cast<unsigned char>(raw[i])) / scale;
    return image;
}

inline std::uint8_t quantize_8bit(double v) {
    const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

// Writes an [h x w x 3] tensor of values in [0, 1] as binary P6.
inline void encode_image(const std::string& path, const Tensor& image) {
    require_rank(image, 3, "encode_image");
    if (image.shape()[2] != 3) throw DimensionError("encode_image: expected 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P6\n" << image.shape()[1] << ' ' << image.shape()[0] << "\n255\n";
    std::vector<char> raw(image.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<char>(quantize_8bit(image.data()[i]));
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("write failed: " + path);
}

// 8-bit grayscale (binary P5) export of an [h x w] map in [0, 1].
inline void write_grayscale(const std::string& path, const Tensor& map) {
    require_rank(map, 2, "write_grayscale");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P5\n" << map.shape()[1] << ' ' << map.shape()[0] << "\n255\n";
    std::vector<char> raw(map.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<char>(quantize_8bit(map.data()[i]));
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace molt
