#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "molt/localize.hpp"
#include "molt/ppm.hpp"

namespace molt {

// One dataset entry. Boxes are used only for evaluation; training consumes
// just the path and the class label.
struct ManifestEntry {
    std::string image_path;  // resolved against the manifest's directory
    std::string image_id;    // file stem; keys every per-image artifact
    int class_id = 0;
    std::vector<BBox> gt_boxes;
};

namespace manifest_detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, sep)) fields.push_back(field);
    return fields;
}

inline int parse_int_field(const std::string& text, const std::string& where) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": expected integer, got '" + text + "'");
    }
}

inline BBox parse_box(const std::string& token, const std::string& where) {
    const auto parts = split(token, ',');
    if (parts.size() != 4) {
        throw ParseError(where + ": box token '" + token + "' is not x0,y0,x1,y1");
    }
    BBox box{parse_int_field(parts[0], where), parse_int_field(parts[1], where),
             parse_int_field(parts[2], where), parse_int_field(parts[3], where)};
    if (!box.valid()) throw ParseError(where + ": degenerate box '" + token + "'");
    return box;
}

}  // namespace manifest_detail

// Line-oriented manifest: tab-separated fields per line —
//   <image path> <class id> [<x0,y0,x1,y1> ...]
// Paths resolve relative to the manifest file. Every referenced image must
// exist and each box must fit inside it.
inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const auto fields = manifest_detail::split(line, '\t');
        if (fields.size() < 2) {
            throw ParseError(where + ": expected at least path and class id");
        }
        ManifestEntry entry;
        entry.image_path = (base / fields[0]).string();
        entry.image_id = std::filesystem::path(fields[0]).stem().string();
        entry.class_id = manifest_detail::parse_int_field(fields[1], where);
        if (entry.class_id < 0) throw ParseError(where + ": negative class id");
        for (std::size_t i = 2; i < fields.size(); ++i) {
            if (fields[i].empty()) continue;
            entry.gt_boxes.push_back(manifest_detail::parse_box(fields[i], where));
        }
        ImageHeader header;
        try {
            header = read_ppm_header(entry.image_path);
        } catch (const Error& e) {
            throw ParseError(where + ": " + e.what());
        }
        for (const BBox& box : entry.gt_boxes) {
            if (box.x0 < 0 || box.y0 < 0 || box.x1 > header.width || box.y1 > header.height) {
                throw ParseError(where + ": box outside the " + std::to_string(header.width) +
                                 "x" + std::to_string(header.height) + " image");
            }
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

// Prediction records, tab-separated:
//   <image id> <gt class> <top5 ids comma-sep> <pred box x0,y0,x1,y1> <gt boxes ';'-sep>
// The ground-truth box field may be empty.
inline void write_records(const std::string& path, const std::vector<EvalRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write records: " + path);
    for (const EvalRecord& r : records) {
        out << r.image_id << '\t' << r.gt_class << '\t';
        for (std::size_t i = 0; i < r.top5.size(); ++i) {
            if (i) out << ',';
            out << r.top5[i];
        }
        out << '\t' << r.pred_box.x0 << ',' << r.pred_box.y0 << ',' << r.pred_box.x1 << ','
            << r.pred_box.y1 << '\t';
        for (std::size_t i = 0; i < r.gt_boxes.size(); ++i) {
            if (i) out << ';';
            const BBox& b = r.gt_boxes[i];
            out << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

inline std::vector<EvalRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open records: " + path);
    std::vector<EvalRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const auto fields = manifest_detail::split(line, '\t');
        if (fields.size() < 4) throw ParseError(where + ": expected at least 4 fields");
        EvalRecord r;
        r.image_id = fields[0];
        r.gt_class = manifest_detail::parse_int_field(fields[1], where);
        for (const std::string& id : manifest_detail::split(fields[2], ',')) {
            r.top5.push_back(manifest_detail::parse_int_field(id, where));
        }
        r.pred_box = manifest_detail::parse_box(fields[3], where);
        if (fields.size() > 4 && !fields[4].empty()) {
            for (const std::string& token : manifest_detail::split(fields[4], ';')) {
                r.gt_boxes.push_back(manifest_detail::parse_box(token, where));
            }
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace molt
