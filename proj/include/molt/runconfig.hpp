#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "molt/multiscale.hpp"
#include "molt/refine.hpp"
#include "molt/segment.hpp"

namespace molt {

// Flat key=value run configuration. Unset keys keep the defaults below;
// CLI flags may override individual keys after the file is read.
struct RunConfig {
    // Pyramid and encoder
    int h1 = 96, h2 = 128, h3 = 160;
    int patch1 = 16, patch2 = 16, patch3 = 16;
    int embed_dim = 64;
    int heads = 4;
    int blocks = 4;
    int classes = 2;
    int mlp_hidden = 0;  // 0 = 4 * embed_dim

    // Training
    int epochs = 20;
    int batch_size = 8;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::string optimizer = "momentum";  // or "sgd"
    double scale_w1 = 1.0, scale_w2 = 1.0, scale_w3 = 1.0;
    int checkpoint_every = 0;  // epochs between snapshots; 0 = final only

    // Segmentation
    int slic_k = 100;
    double slic_m = 10.0;
    int slic_iters = 10;
    int dpc_q = 32;
    int dpc_iters = 64;
    double dpc_lr = 0.1;
    int dpc_min_clusters = 2;
    int seg_side = 0;  // working resolution for per-image clustering; 0 = native

    // Localization
    double refine_lambda = 0.5;
    double tau = 0.2;
    std::string fuse = "mean";  // or "max"

    std::uint64_t seed = 1234;

    void set(const std::string& key, const std::string& value, const std::string& where) {
        auto to_int = [&](const std::string& v) {
            try {
                return std::stoi(v);
            } catch (const std::exception&) {
                throw ParseError(where + ": key '" + key + "' needs an integer, got '" + v + "'");
            }
        };
        auto to_double = [&](const std::string& v) {
            try {
                return std::stod(v);
            } catch (const std::exception&) {
                throw ParseError(where + ": key '" + key + "' needs a number, got '" + v + "'");
            }
        };
        if (key == "h1") h1 = to_int(value);
        else if (key == "h2") h2 = to_int(value);
        else if (key == "h3") h3 = to_int(value);
        else if (key == "patch") patch1 = patch2 = patch3 = to_int(value);
        else if (key == "patch1") patch1 = to_int(value);
        else if (key == "patch2") patch2 = to_int(value);
        else if (key == "patch3") patch3 = to_int(value);
        else if (key == "embed_dim") embed_dim = to_int(value);
        else if (key == "heads") heads = to_int(value);
        else if (key == "blocks") blocks = to_int(value);
        else if (key == "classes") classes = to_int(value);
        else if (key == "mlp_hidden") mlp_hidden = to_int(value);
        else if (key == "epochs") epochs = to_int(value);
        else if (key == "batch_size") batch_size = to_int(value);
        else if (key == "learning_rate") learning_rate = to_double(value);
        else if (key == "momentum") momentum = to_double(value);
        else if (key == "weight_decay") weight_decay = to_double(value);
        else if (key == "optimizer") optimizer = value;
        else if (key == "scale_w1") scale_w1 = to_double(value);
        else if (key == "scale_w2") scale_w2 = to_double(value);
        else if (key == "scale_w3") scale_w3 = to_double(value);
        else if (key == "checkpoint_every") checkpoint_every = to_int(value);
        else if (key == "slic_k") slic_k = to_int(value);
        else if (key == "slic_m") slic_m = to_double(value);
        else if (key == "slic_iters") slic_iters = to_int(value);
        else if (key == "dpc_q") dpc_q = to_int(value);
        else if (key == "dpc_iters") dpc_iters = to_int(value);
        else if (key == "dpc_lr") dpc_lr = to_double(value);
        else if (key == "dpc_min_clusters") dpc_min_clusters = to_int(value);
        else if (key == "seg_side") seg_side = to_int(value);
        else if (key == "lambda") refine_lambda = to_double(value);
        else if (key == "tau") tau = to_double(value);
        else if (key == "fuse") fuse = value;
        else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
        else throw ParseError(where + ": unknown config key '" + key + "'");
    }

    void validate() const {
        to_pyramid();  // throws on inconsistent encoder settings
        if (epochs <= 0 || batch_size <= 0 || learning_rate <= 0.0) {
            throw ParameterError("run config: epochs, batch_size and learning_rate must be positive");
        }
        if (optimizer != "momentum" && optimizer != "sgd") {
            throw ParameterError("run config: optimizer must be 'momentum' or 'sgd'");
        }
        if (fuse != "mean" && fuse != "max") {
            throw ParameterError("run config: fuse must be 'mean' or 'max'");
        }
        if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("run config: tau must lie in (0,1)");
        if (!(refine_lambda >= 0.0 && refine_lambda <= 1.0)) {
            throw ParameterError("run config: lambda must lie in [0,1]");
        }
        to_slic().validate();
        to_dpc().validate();
        if (seg_side < 0) throw ParameterError("run config: seg_side must be non-negative");
    }

    int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 4 * embed_dim; }

    PyramidConfig to_pyramid() const {
        PyramidConfig p;
        p.scales[0] = {h1, patch1, embed_dim, heads, blocks, classes, hidden()};
        p.scales[1] = {h2, patch2, embed_dim, heads, blocks, classes, hidden()};
        p.scales[2] = {h3, patch3, embed_dim, heads, blocks, classes, hidden()};
        p.validate();
        return p;
    }

    SlicParams to_slic() const { return {slic_k, slic_m, slic_iters}; }

    DpcParams to_dpc() const {
        DpcParams d;
        d.channels = dpc_q;
        d.train_iterations = dpc_iters;
        d.learning_rate = dpc_lr;
        d.min_clusters = dpc_min_clusters;
        return d;
    }

    FuseMode fuse_mode() const { return fuse == "max" ? FuseMode::max : FuseMode::mean; }

    RefineParams to_refine() const { return {refine_lambda}; }
};

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line.erase(comment);
        // trim
        const auto begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        const auto end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected key=value");
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        const auto key_end = key.find_last_not_of(" \t");
        key = key.substr(0, key_end == std::string::npos ? 0 : key_end + 1);
        const auto val_begin = value.find_first_not_of(" \t");
        value = val_begin == std::string::npos ? "" : value.substr(val_begin);
        cfg.set(key, value, path + ":" + std::to_string(line_no));
    }
    return cfg;
}

}  // namespace molt
