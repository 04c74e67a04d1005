#pragma once

#include <span>
#include <string>
#include <vector>

#include "saltpepper/heatmap.hpp"

namespace saltpepper {

enum class StdKind { population, sample };

struct MetricsConfig {
    bool per_image_first = false; // average within each image before pooling
    StdKind std_kind = StdKind::population;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Per-landmark distance in millimetres.
std::vector<double> radial_errors(const LandmarkSet& pred, const LandmarkSet& gt);

MeanStd mre(std::span<const double> errors, StdKind kind = StdKind::population);

/// Percentage of errors strictly below z_mm.
double sdr(std::span<const double> errors, double z_mm);

struct LandmarkStat {
    int index = 0;
    double mre_mm = 0.0;
    double std_mm = 0.0;
};

struct EvalReport {
    double mre_mm = 0.0;
    double mre_std_mm = 0.0;
    double sdr_2mm = 0.0;
    double sdr_2_5mm = 0.0;
    double sdr_4mm = 0.0;
    std::vector<LandmarkStat> per_landmark;
    int images = 0;
    int landmarks = 0;
};

EvalReport evaluate(const std::vector<LandmarkSet>& preds, const std::vector<LandmarkSet>& gts,
                    const MetricsConfig& cfg = {});

std::string to_json(const EvalReport& r);
EvalReport eval_report_from_json(const std::string& text);

} // namespace saltpepper
