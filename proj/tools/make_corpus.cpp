// Generates the synthetic rectangle/disc corpus used by the examples in the
// README and by the acceptance experiments.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "molt/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic two-class localization corpus"};
    std::string out_dir = "corpus";
    molt::SyntheticSpec spec;
    app.add_option("--out", out_dir, "Output directory")->capture_default_str();
    app.add_option("--count", spec.count, "Number of images")->capture_default_str();
    app.add_option("--side", spec.image_side, "Image side in pixels")->capture_default_str();
    app.add_option("--seed", spec.seed, "Corpus seed")->capture_default_str();
    app.add_option("--train-fraction", spec.train_fraction,
                   "Fraction of images in train.tsv")
        ->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    try {
        const molt::CorpusPaths paths = molt::write_synthetic_corpus(out_dir, spec);
        std::cout << "wrote " << spec.count << " images; manifests: " << paths.train_manifest
                  << ", " << paths.eval_manifest << ", " << paths.all_manifest << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
