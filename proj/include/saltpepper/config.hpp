#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "saltpepper/data.hpp"
#include "saltpepper/denoiser.hpp"
#include "saltpepper/metrics.hpp"
#include "saltpepper/schedule.hpp"
#include "saltpepper/train.hpp"

namespace saltpepper {

struct DataOptions {
    CorpusOptions corpus;
    std::vector<std::string> annotation_dirs{"annotations/gt"}; // relative to the corpus root
    int resize_width = 0;                                       // 0 keeps the stored resolution
    int resize_height = 0;
};

struct SynthSplit {
    SynthOptions options;
    int train = 200;
    int validation = 50; // remaining records go to test
};

struct SampleOptions {
    std::string split = "test";
    bool single_step = false;
    bool overlays = true;
};

struct AblateOptions {
    std::vector<int> steps{5, 50, 200};
};

/// Every tunable of the tool. Sections in the file map onto the members below;
/// `seed` sits before any section and feeds every random stream.
struct Config {
    std::uint64_t seed = 7;
    BlurConfig blur;
    UNetConfig model;
    TrainConfig train;
    DataOptions data;
    SynthSplit synth;
    SampleOptions sample;
    MetricsConfig metrics;
    AblateOptions ablate;

    /// Copies the shared settings (seed, landmark count, spacing,
    /// parameterization) into the per-module structs.
    void resolve();
    /// Collects every violated invariant; throws Errc::config listing all of them.
    void validate() const;
};

/// key = value lines under [section] headers; '#' starts a comment. Unknown
/// sections, unknown keys and unparsable values are all reported in one error.
Config parse_config(const std::string& text, const std::string& origin = "<config>");
Config load_config(const std::filesystem::path& path);

/// "section.key" = value pairs applied after the file; same error policy.
void apply_overrides(Config& cfg, const std::vector<std::pair<std::string, std::string>>& overrides);

/// Canonical text form; parse_config(dump_config(c)) reproduces c.
std::string dump_config(const Config& c);

/// All known "section.key" names, in dump order.
std::vector<std::string> config_keys();

} // namespace saltpepper
