#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "saltpepper/config.hpp"
#include "saltpepper/data.hpp"

namespace saltpepper {

/// `saltpepper <command> [options] [--section.key=value ...]` without the program name.
/// Returns 0 on success, 1 for user errors (configuration, missing or malformed
/// input) and 2 for internal failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct LoadedCorpus {
    SplitManifest manifest;
    std::vector<DatasetRecord> records;
};

/// Reads <root>/manifest.txt, <root>/images and the configured annotation
/// directories, resizing when the config asks for it.
LoadedCorpus load_corpus_dir(const std::filesystem::path& root, const Config& cfg);

/// Reference image dimmed to [-0.6, 0.6] with the ground truth drawn as a
/// white cross and the prediction as a black cross.
Tensor render_overlay(const ReferenceImage& image, const Point* truth, const Point& prediction);

} // namespace saltpepper
