// Command-line front end: train | infer | segment | refine | eval.
//
// Exit codes: 0 success, 2 usage, 3 config/manifest/records parse error,
// 4 I/O or image decode error, 5 numeric contract violation, 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "molt/molt.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Run configuration file (key=value lines)");
    cmd->add_option("--out", args.out_dir,
                    "Output directory (falls back to $MOLT_OUT_DIR, then '.')");
    cmd->add_option("--set", args.overrides, "Override a config key, e.g. --set tau=0.3")
        ->take_all();
}

std::string resolve_out_dir(const CommonArgs& args) {
    if (!args.out_dir.empty()) return args.out_dir;
    if (const char* env = std::getenv("MOLT_OUT_DIR"); env && *env) return env;
    return ".";
}

molt::RunConfig resolve_config(const CommonArgs& args) {
    molt::RunConfig cfg;
    if (!args.config_path.empty()) cfg = molt::load_run_config(args.config_path);
    for (const std::string& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw molt::ParseError("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1), "--set " + kv);
    }
    cfg.validate();
    return cfg;
}

molt::OptimizerKind optimizer_kind(const molt::RunConfig& cfg) {
    return cfg.optimizer == "sgd" ? molt::OptimizerKind::gradient_descent
                                  : molt::OptimizerKind::momentum;
}

molt::TrainConfig to_train_config(const molt::RunConfig& cfg, const std::string& ckpt_dir) {
    molt::TrainConfig t;
    t.epochs = cfg.epochs;
    t.batch_size = cfg.batch_size;
    t.learning_rate = cfg.learning_rate;
    t.seed = cfg.seed;
    t.optimizer = optimizer_kind(cfg);
    t.momentum = cfg.momentum;
    t.weight_decay = cfg.weight_decay;
    t.scale_loss_weights = {cfg.scale_w1, cfg.scale_w2, cfg.scale_w3};
    t.checkpoint_every = cfg.checkpoint_every;
    t.checkpoint_dir = ckpt_dir;
    return t;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw molt::IoError("cannot write: " + path);
    out << content;
    if (!out) throw molt::IoError("write failed: " + path);
}

int run_train(const CommonArgs& common, const std::string& manifest_path) {
    const molt::RunConfig cfg = resolve_config(common);
    const std::string out_dir = resolve_out_dir(common);
    fs::create_directories(out_dir);
    const auto entries = molt::load_manifest(manifest_path);
    std::vector<molt::LabeledExample> dataset;
    dataset.reserve(entries.size());
    for (const auto& e : entries) {
        if (e.class_id >= cfg.classes) {
            throw molt::ParseError(manifest_path + ": class id " + std::to_string(e.class_id) +
                                   " outside configured " + std::to_string(cfg.classes) +
                                   " classes");
        }
        dataset.push_back({molt::decode_image(e.image_path), e.class_id});
    }
    const molt::PyramidConfig pcfg = cfg.to_pyramid();
    molt::TrainResult result = molt::train(dataset, pcfg, to_train_config(cfg, out_dir));
    std::string log;
    char buf[64];
    for (std::size_t i = 0; i < result.epoch_losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "epoch=%zu loss=%.17g\n", i, result.epoch_losses[i]);
        log += buf;
    }
    write_text(out_dir + "/train_log.txt", log);
    std::cout << "trained " << dataset.size() << " examples for " << cfg.epochs
              << " epochs; checkpoints in " << out_dir << "\n";
    return 0;
}

int run_infer(const CommonArgs& common, const std::string& manifest_path,
              const std::string& ckpt_manifest, bool render) {
    const molt::RunConfig cfg = resolve_config(common);
    const std::string out_dir = resolve_out_dir(common);
    fs::create_directories(out_dir);
    const molt::BranchCheckpoints model = molt::load_branch_checkpoints(ckpt_manifest);
    const auto entries = molt::load_manifest(manifest_path);
    std::string scores;
    for (const auto& e : entries) {
        const molt::Tensor image = molt::decode_image(e.image_path);
        molt::InferenceResult inf =
            molt::infer_image(image, model.params, model.pyramid, cfg.fuse_mode());
        for (int i = 0; i < 3; ++i) {
            molt::write_cam_dump(out_dir + "/cam_" + e.image_id + "_s" + std::to_string(i) +
                                     ".cam",
                                 inf.cams[i].map, i);
        }
        molt::write_cam_dump(out_dir + "/ccam_" + e.image_id + ".cam", inf.ccam.map, -1);
        scores += molt::format_scores_line(e.image_id, inf.top5, inf.probs) + "\n";
        if (render) {
            const int h = image.shape()[0], w = image.shape()[1];
            const int pred = inf.top5.front();
            molt::Tensor channel = molt::ccam_channel_at_image(inf.ccam.map, pred, h, w);
            molt::write_grayscale(out_dir + "/ccam_" + e.image_id + ".pgm", channel);
            molt::render_heatmap(channel, image, out_dir + "/heat_" + e.image_id + ".ppm",
                                 molt::box_from_map(channel, cfg.tau), e.gt_boxes);
        }
    }
    write_text(out_dir + "/scores.tsv", scores);
    std::cout << "inferred " << entries.size() << " images into " << out_dir << "\n";
    return 0;
}

int run_segment(const CommonArgs& common, const std::string& manifest_path) {
    const molt::RunConfig cfg = resolve_config(common);
    const std::string out_dir = resolve_out_dir(common);
    fs::create_directories(out_dir);
    const auto entries = molt::load_manifest(manifest_path);
    for (const auto& e : entries) {
        const molt::Tensor image = molt::decode_image(e.image_path);
        const molt::SegmentMap seg = molt::pipeline_segments(image, cfg, e.image_id);
        molt::write_seg_dump(out_dir + "/seg_" + e.image_id + ".seg", seg);
        molt::write_boundary_overlay(out_dir + "/overlay_" + e.image_id + ".ppm", image, seg);
    }
    std::cout << "segmented " << entries.size() << " images into " << out_dir << "\n";
    return 0;
}

int run_refine(const CommonArgs& common, const std::string& manifest_path,
               const std::string& cams_dir) {
    const molt::RunConfig cfg = resolve_config(common);
    const std::string out_dir = resolve_out_dir(common);
    fs::create_directories(out_dir);
    const auto entries = molt::load_manifest(manifest_path);
    for (const auto& e : entries) {
        const molt::Tensor image = molt::decode_image(e.image_path);
        const molt::CamDump dump = molt::read_cam_dump(cams_dir + "/ccam_" + e.image_id + ".cam");
        const molt::Tensor ccam =
            dump.map.rank() == 3 ? dump.map
                                 : molt::reshape(dump.map, {dump.map.shape()[0],
                                                            dump.map.shape()[1], 1});
        const molt::SegmentMap seg = molt::pipeline_segments(image, cfg, e.image_id);
        molt::Tensor refined = molt::refine_all_channels(ccam, seg, cfg.to_refine(),
                                                         image.shape()[0], image.shape()[1]);
        molt::write_cam_dump(out_dir + "/refined_" + e.image_id + ".cam", refined, -1);
    }
    std::cout << "refined " << entries.size() << " images into " << out_dir << "\n";
    return 0;
}

struct EvalArgs {
    std::string manifest_path;
    std::string records_path;
    std::string ckpt_manifest;
    std::string scores_path;
    std::string maps_dir;
    std::string map_prefix = "refined_";
    bool no_refine = false;
    bool render = false;
};

int run_eval(const CommonArgs& common, const EvalArgs& args) {
    const molt::RunConfig cfg = resolve_config(common);
    const std::string out_dir = resolve_out_dir(common);
    fs::create_directories(out_dir);
    std::vector<molt::EvalRecord> records;

    if (!args.records_path.empty()) {
        records = molt::load_records(args.records_path);
    } else {
        const auto entries = molt::load_manifest(args.manifest_path);
        if (!args.ckpt_manifest.empty()) {
            // End-to-end: checkpoints -> CAMs -> (optional refinement) -> boxes.
            const molt::BranchCheckpoints model =
                molt::load_branch_checkpoints(args.ckpt_manifest);
            for (const auto& e : entries) {
                const molt::Tensor image = molt::decode_image(e.image_path);
                const int h = image.shape()[0], w = image.shape()[1];
                molt::InferenceResult inf =
                    molt::infer_image(image, model.params, model.pyramid, cfg.fuse_mode());
                molt::ImageEvalInput input{e.image_id, e.class_id, e.gt_boxes, inf.top5,
                                           inf.ccam.map, h, w};
                if (!args.no_refine) {
                    const molt::SegmentMap seg = molt::pipeline_segments(image, cfg, e.image_id);
                    input.maps = molt::refine_all_channels(inf.ccam.map, seg, cfg.to_refine(),
                                                           h, w);
                }
                records.push_back(molt::make_eval_record(input, cfg.tau));
                if (args.render) {
                    const int pred = inf.top5.front();
                    molt::Tensor channel =
                        molt::localization_channel(input.maps, pred, h, w);
                    molt::render_heatmap(channel, image,
                                         out_dir + "/heat_" + e.image_id + ".ppm",
                                         molt::box_from_map(channel, cfg.tau), e.gt_boxes);
                }
            }
        } else {
            // Staged: scores + map dumps produced by `infer` and/or `refine`.
            const auto scores = molt::load_scores(args.scores_path);
            for (const auto& e : entries) {
                const auto it = scores.find(e.image_id);
                if (it == scores.end()) {
                    throw molt::ParseError(args.scores_path + ": no scores for image '" +
                                           e.image_id + "'");
                }
                const molt::ImageHeader header = molt::read_ppm_header(e.image_path);
                const molt::CamDump dump = molt::read_cam_dump(
                    args.maps_dir + "/" + args.map_prefix + e.image_id + ".cam");
                const molt::Tensor maps =
                    dump.map.rank() == 3 ? dump.map
                                         : molt::reshape(dump.map, {dump.map.shape()[0],
                                                                    dump.map.shape()[1], 1});
                molt::ImageEvalInput input{e.image_id, e.class_id, e.gt_boxes, it->second.top5,
                                           maps, header.height, header.width};
                records.push_back(molt::make_eval_record(input, cfg.tau));
            }
        }
    }

    std::vector<molt::PerImageResult> per_image;
    const molt::Metrics metrics = molt::evaluate(records, &per_image);
    const std::string report = molt::format_report(metrics);
    write_text(out_dir + "/report.txt", report);
    write_text(out_dir + "/per_image.csv", molt::format_per_image_csv(per_image));
    std::cout << report;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multiscale object localization transformer with clustering-guided refinement"};
    app.require_subcommand(1);

    CommonArgs train_common, infer_common, segment_common, refine_common, eval_common;
    std::string train_manifest, infer_manifest, segment_manifest, refine_manifest;
    std::string infer_ckpts, refine_cams;
    bool infer_render = false;
    EvalArgs eval_args;

    CLI::App* train_cmd = app.add_subcommand("train", "Train the three branches from a manifest");
    train_cmd->add_option("--manifest", train_manifest, "Dataset manifest (TSV)")->required();
    add_common(train_cmd, train_common);

    CLI::App* infer_cmd =
        app.add_subcommand("infer", "Dump per-scale CAMs, combined CAMs and top-5 scores");
    infer_cmd->add_option("--manifest", infer_manifest, "Dataset manifest (TSV)")->required();
    infer_cmd->add_option("--checkpoints", infer_ckpts, "Checkpoint manifest from train")
        ->required();
    infer_cmd->add_flag("--render", infer_render, "Also write heatmap overlays and grayscale CAMs");
    add_common(infer_cmd, infer_common);

    CLI::App* segment_cmd =
        app.add_subcommand("segment", "Write segment maps and boundary overlays");
    segment_cmd->add_option("--manifest", segment_manifest, "Dataset manifest (TSV)")->required();
    add_common(segment_cmd, segment_common);

    CLI::App* refine_cmd =
        app.add_subcommand("refine", "Refine combined CAM dumps with per-image clustering");
    refine_cmd->add_option("--manifest", refine_manifest, "Dataset manifest (TSV)")->required();
    refine_cmd->add_option("--cams", refine_cams, "Directory of ccam_<id>.cam dumps from infer")
        ->required();
    add_common(refine_cmd, refine_common);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Compute Top-1 / Top-5 / GT-known metrics");
    eval_cmd->add_option("--records", eval_args.records_path, "Prepared records file");
    eval_cmd->add_option("--manifest", eval_args.manifest_path, "Dataset manifest (TSV)");
    eval_cmd->add_option("--checkpoints", eval_args.ckpt_manifest,
                         "Checkpoint manifest for the end-to-end path");
    eval_cmd->add_option("--scores", eval_args.scores_path, "scores.tsv from infer (staged path)");
    eval_cmd->add_option("--maps", eval_args.maps_dir,
                         "Directory of map dumps for the staged path");
    eval_cmd->add_option("--map-prefix", eval_args.map_prefix,
                         "Dump filename prefix in --maps (refined_ or ccam_)")
        ->capture_default_str();
    eval_cmd->add_flag("--no-refine", eval_args.no_refine,
                       "Skip clustering-guided refinement on the end-to-end path");
    eval_cmd->add_flag("--render", eval_args.render, "Write heatmap overlays (end-to-end path)");
    add_common(eval_cmd, eval_common);

    try {
        app.parse(argc, argv);
        if (train_cmd->parsed()) return run_train(train_common, train_manifest);
        if (infer_cmd->parsed())
            return run_infer(infer_common, infer_manifest, infer_ckpts, infer_render);
        if (segment_cmd->parsed()) return run_segment(segment_common, segment_manifest);
        if (refine_cmd->parsed()) return run_refine(refine_common, refine_manifest, refine_cams);
        if (eval_cmd->parsed()) {
            const bool records_mode = !eval_args.records_path.empty();
            const bool end_to_end = !eval_args.ckpt_manifest.empty();
            const bool staged = !eval_args.scores_path.empty() || !eval_args.maps_dir.empty();
            if (records_mode ? (end_to_end || staged || !eval_args.manifest_path.empty())
                             : (eval_args.manifest_path.empty() || (end_to_end && staged) ||
                                (!end_to_end && (eval_args.scores_path.empty() ||
                                                 eval_args.maps_dir.empty())))) {
                std::cerr << "eval needs exactly one of: --records FILE; --manifest + "
                             "--checkpoints; --manifest + --scores + --maps\n";
                return 2;
            }
            return run_eval(eval_common, eval_args);
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version exit clean; usage errors map to 2
    } catch (const molt::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const molt::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const molt::DecodeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const molt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
