#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saltpepper/forward.hpp"
#include "saltpepper/heatmap.hpp"

namespace saltpepper {

struct DatasetRecord {
    std::string id;
    ReferenceImage image;
    std::vector<LandmarkSet> annotations; // one or two annotators
    LandmarkSet ground_truth;             // mean of the annotations
};

struct SplitManifest {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;

    /// Throws misalignment when an id appears twice.
    void validate() const;
    std::vector<std::string> all() const;
    const std::vector<std::string>& split(const std::string& name) const;
};

SplitManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const SplitManifest& m);

/// Greyscale PGM (P5 8/16-bit or P2) mapped to [-1, 1].
ReferenceImage read_pgm(const std::filesystem::path& path);
/// Writes channel 0 of the image, mapping [-1, 1] to [0, maxval]. bits is 8 or 16.
void write_pgm(const std::filesystem::path& path, const Tensor& image, int bits = 16, int channel = 0);

struct AnnotationFormat {
    int landmarks = 19;
    bool one_indexed = false;
};

/// Parses "x,y" decimal pairs, one per line; lines past `landmarks` are ignored.
std::vector<Point> read_landmark_csv(const std::filesystem::path& path, const AnnotationFormat& fmt);
void write_landmark_csv(const std::filesystem::path& path, const std::vector<Point>& points);

struct CorpusOptions {
    AnnotationFormat format;
    Spacing spacing{0.1, 0.1};
};

/// Mean of one or more annotator sets (same N, frame and spacing).
LandmarkSet mean_annotation(const std::vector<LandmarkSet>& annotations);

/// Loads every id of the manifest (train, then validation, then test order).
/// Annotation files are looked up as <dir>/<id>.csv, then <dir>/<id>.txt.
std::vector<DatasetRecord> load_corpus(const std::filesystem::path& image_dir,
                                       const std::vector<std::filesystem::path>& annotation_dirs,
                                       const SplitManifest& manifest, const CorpusOptions& opts);

/// Records of `split` from a corpus loaded with the same manifest.
std::vector<DatasetRecord> select_split(const std::vector<DatasetRecord>& corpus, const SplitManifest& manifest,
                                        const std::string& split);

/// Area-averaged resize; coordinates scale with the image and spacing scales inversely.
DatasetRecord downsample_record(const DatasetRecord& r, int target_w, int target_h);
Tensor area_resize(const Tensor& img, int target_w, int target_h);

struct SynthOptions {
    int count = 300;
    int height = 64;
    int width = 64;
    int landmarks = 4;
    std::uint64_t seed = 7;
    Spacing spacing{0.1, 0.1};
};

/// Radius of the rendered structures for a given image size.
int synth_structure_radius(int height, int width);

/// Renders structure `kind` (landmark index) centred at the origin: returns the
/// signed contribution at offset (dx, dy) for unit amplitude.
double synth_structure_profile(int kind, double dx, double dy, int radius);

/// Smooth random background plus one distinct structure per landmark index.
/// Ground truth is the structure centre. Fully determined by the seed.
std::vector<DatasetRecord> synth_corpus(const SynthOptions& opts);

struct CorpusLayout {
    std::filesystem::path root;

    std::filesystem::path manifest() const { return root / "manifest.txt"; }
    std::filesystem::path images() const { return root / "images"; }
    std::filesystem::path annotations() const { return root / "annotations" / "gt"; }
};

/// Writes images, ground-truth CSVs and the manifest in the loadable layout.
void write_corpus(const CorpusLayout& layout, const std::vector<DatasetRecord>& records, const SplitManifest& manifest);

/// First `train` ids to train, next `validation` to validation, rest to test.
SplitManifest split_ids(const std::vector<DatasetRecord>& records, int train, int validation);

} // namespace saltpepper
