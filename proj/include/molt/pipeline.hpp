#pragma once

#include <array>
#include <string>
#include <vector>

#include "molt/dumps.hpp"
#include "molt/localize.hpp"
#include "molt/manifest.hpp"
#include "molt/multiscale.hpp"
#include "molt/refine.hpp"
#include "molt/runconfig.hpp"
#include "molt/segment.hpp"

namespace molt {

// Stage functions shared by the CLI subcommands and the in-process path.
// The staged pipeline (infer -> refine -> eval over dumps) and the
// in-process pipeline call exactly these functions in the same order, and
// every dump format is lossless, so the two routes agree bit for bit.

struct InferenceResult {
    std::array<Cam, 3> cams;   // per-scale CAMs, all classes
    CombinedCam ccam;          // finest-grid fusion, all classes
    Tensor probs;              // [C], mean of per-branch softmax
    std::vector<int> top5;     // up to 5 distinct class ids, best first
};

inline InferenceResult infer_image(const Tensor& image, const MultiscaleParams& params,
                                   const PyramidConfig& pcfg, FuseMode mode) {
    InferenceResult out;
    ScaleRun run = run_scales(image, params, pcfg);
    out.cams = std::move(run.cams);
    out.ccam = fuse_cams(out.cams, mode);
    out.probs = combine_scores(run.scores);
    out.top5 = top_k(out.probs.data(), 5);
    return out;
}

// Deterministic per-image clustering seed.
inline std::uint64_t image_clustering_seed(const RunConfig& cfg, const std::string& image_id) {
    return derive_seed(cfg.seed, image_id);
}

// Nearest-neighbor label upscale, then recompaction.
inline SegmentMap upscale_labels(const SegmentMap& seg, int h, int w) {
    SegmentMap out{h, w, 0, std::vector<std::int32_t>(static_cast<std::size_t>(h) * w, 0)};
    for (int y = 0; y < h; ++y) {
        const int sy = std::min(seg.h - 1, y * seg.h / h);
        for (int x = 0; x < w; ++x) {
            const int sx = std::min(seg.w - 1, x * seg.w / w);
            out.at(y, x) = seg.at(sy, sx);
        }
    }
    seg_detail::compact_labels(out);
    return out;
}

// SLIC + deep pixel clustering for one image, at the configured working
// resolution (seg_side), with labels brought back to image resolution.
inline SegmentMap pipeline_segments(const Tensor& image, const RunConfig& cfg,
                                    const std::string& image_id) {
    DpcParams dpc = cfg.to_dpc();
    dpc.seed = image_clustering_seed(cfg, image_id);
    const int h = image.shape()[0], w = image.shape()[1];
    if (cfg.seg_side > 0 && (cfg.seg_side != h || cfg.seg_side != w)) {
        Tensor working = bilinear_resize(image, cfg.seg_side, cfg.seg_side);
        SegmentMap seg = segment_image(working, cfg.to_slic(), dpc);
        return upscale_labels(seg, h, w);
    }
    return segment_image(image, cfg.to_slic(), dpc);
}

// One class channel of the combined CAM at image resolution.
inline Tensor ccam_channel_at_image(const Tensor& ccam, int class_id, int h, int w) {
    return bilinear_resize(channel_slice(ccam, class_id), h, w);
}

// Refines every class channel against one segment map; output [h x w x C].
inline Tensor refine_all_channels(const Tensor& ccam, const SegmentMap& seg,
                                  const RefineParams& params, int h, int w) {
    const int c = ccam.shape()[2];
    Tensor out({h, w, c});
    auto& o = out.data_mut();
    for (int ch = 0; ch < c; ++ch) {
        Tensor refined = refine_cam(ccam_channel_at_image(ccam, ch, h, w), seg, params);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                o[(static_cast<std::size_t>(y) * w + x) * c + ch] = refined(y, x);
    }
    return out;
}

inline BBox box_from_map(const Tensor& map, double tau) {
    return largest_component_bbox(threshold_mask(map, tau));
}

// Localization map for one class from either a finest-grid combined CAM or
// an already-refined image-resolution stack.
inline Tensor localization_channel(const Tensor& maps, int class_id, int h, int w) {
    Tensor channel = channel_slice(maps, class_id);
    if (channel.shape()[0] != h || channel.shape()[1] != w) {
        channel = bilinear_resize(channel, h, w);
    }
    return channel;
}

struct ImageEvalInput {
    std::string image_id;
    int gt_class = 0;
    std::vector<BBox> gt_boxes;
    std::vector<int> top5;
    Tensor maps;  // [n x n x C] combined or [h x w x C] refined
    int image_h = 0, image_w = 0;
};

// Metrics follow the GT-known protocol: the localization box comes from the
// ground-truth class channel, which coincides with the predicted channel
// whenever the classification condition of Top-1/Top-5 holds.
inline EvalRecord make_eval_record(const ImageEvalInput& in, double tau) {
    EvalRecord r;
    r.image_id = in.image_id;
    r.gt_class = in.gt_class;
    r.gt_boxes = in.gt_boxes;
    r.top5 = in.top5;
    Tensor channel = localization_channel(in.maps, in.gt_class, in.image_h, in.image_w);
    r.pred_box = box_from_map(channel, tau);
    return r;
}

// Report lines in the fixed "metric=<name> value=<real> n=<count>" format.
inline std::string format_report(const Metrics& m) {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "metric=top1 value=%.17g n=%zu\n", m.top1, m.count);
    out += buf;
    std::snprintf(buf, sizeof(buf), "metric=top5 value=%.17g n=%zu\n", m.top5, m.count);
    out += buf;
    std::snprintf(buf, sizeof(buf), "metric=gt_known value=%.17g n=%zu\n", m.gt_known, m.count);
    out += buf;
    return out;
}

inline std::string format_per_image_csv(const std::vector<PerImageResult>& rows) {
    std::string out = "image_id,top1_hit,top5_hit,iou\n";
    char buf[256];
    for (const PerImageResult& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.17g\n", r.image_id.c_str(),
                      r.top1_hit ? 1 : 0, r.top5_hit ? 1 : 0, r.iou);
        out += buf;
    }
    return out;
}

// Scores table, tab-separated: image id, top-5 ids, all class probabilities.
inline std::string format_scores_line(const std::string& image_id,
                                      const std::vector<int>& top5, const Tensor& probs) {
    std::string out = image_id + "\t";
    for (std::size_t i = 0; i < top5.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(top5[i]);
    }
    out += '\t';
    char buf[64];
    for (int i = 0; i < probs.shape()[0]; ++i) {
        if (i) out += ',';
        std::snprintf(buf, sizeof(buf), "%.17g", probs(i));
        out += buf;
    }
    return out;
}

struct ScoresEntry {
    std::vector<int> top5;
    std::vector<double> probs;
};

inline std::map<std::string, ScoresEntry> load_scores(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scores: " + path);
    std::map<std::string, ScoresEntry> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const auto fields = manifest_detail::split(line, '\t');
        if (fields.size() != 3) throw ParseError(where + ": expected 3 fields");
        ScoresEntry entry;
        for (const std::string& id : manifest_detail::split(fields[1], ','))
            entry.top5.push_back(manifest_detail::parse_int_field(id, where));
        for (const std::string& p : manifest_detail::split(fields[2], ','))
            entry.probs.push_back(std::stod(p));
        out.emplace(fields[0], std::move(entry));
    }
    return out;
}

}  // namespace molt
