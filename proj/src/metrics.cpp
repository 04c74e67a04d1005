#include "saltpepper/metrics.hpp"

#include <cmath>

#include <json.hpp>

#include "saltpepper/error.hpp"

namespace saltpepper {

std::vector<double> radial_errors(const LandmarkSet& pred, const LandmarkSet& gt) {
    if (pred.size() != gt.size()) {
        fail(Errc::landmark_count_mismatch, "prediction has " + std::to_string(pred.size()) +
                                                " landmarks, ground truth " + std::to_string(gt.size()));
    }
    if (!(pred.frame == gt.frame)) fail(Errc::misalignment, "prediction and ground truth frames differ");
    if (!(pred.spacing_mm == gt.spacing_mm)) fail(Errc::misalignment, "prediction and ground truth spacings differ");
    std::vector<double> d(pred.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double dx = (pred.points[i].x - gt.points[i].x) * gt.spacing_mm.sx;
        const double dy = (pred.points[i].y - gt.points[i].y) * gt.spacing_mm.sy;
        d[i] = std::sqrt(dx * dx + dy * dy);
    }
    return d;
}

MeanStd mre(std::span<const double> errors, StdKind kind) {
    if (errors.empty()) fail(Errc::empty_stack, "mre of an empty error list");
    const double n = static_cast<double>(errors.size());
    double sum = 0.0;
    for (double e : errors) sum += e;
    const double mean = sum / n;
    double ss = 0.0;
    for (double e : errors) ss += (e - mean) * (e - mean);
    const double denom = kind == StdKind::sample ? n - 1.0 : n;
    return {mean, denom > 0.0 ? std::sqrt(ss / denom) : 0.0};
}

double sdr(std::span<const double> errors, double z_mm) {
    if (errors.empty()) fail(Errc::empty_stack, "sdr of an empty error list");
    if (!(z_mm > 0.0)) fail(Errc::invalid_range, "sdr radius must be > 0");
    std::size_t hits = 0;
    for (double e : errors) hits += e < z_mm ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

EvalReport evaluate(const std::vector<LandmarkSet>& preds, const std::vector<LandmarkSet>& gts,
                    const MetricsConfig& cfg) {
    if (preds.size() != gts.size()) {
        fail(Errc::misalignment, std::to_string(preds.size()) + " predictions for " + std::to_string(gts.size()) +
                                     " ground-truth sets");
    }
    if (preds.empty()) fail(Errc::empty_stack, "evaluate needs at least one image");
    const std::size_t n = gts.front().size();

    std::vector<double> pooled;
    std::vector<double> image_means;
    std::vector<std::vector<double>> by_landmark(n);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (gts[i].size() != n) fail(Errc::landmark_count_mismatch, "ground-truth sets disagree on the landmark count");
        const auto d = radial_errors(preds[i], gts[i]);
        pooled.insert(pooled.end(), d.begin(), d.end());
        image_means.push_back(mre(d, cfg.std_kind).mean);
        for (std::size_t k = 0; k < n; ++k) by_landmark[k].push_back(d[k]);
    }

    EvalReport r;
    const auto m = mre(cfg.per_image_first ? image_means : pooled, cfg.std_kind);
    r.mre_mm = m.mean;
    r.mre_std_mm = m.std;
    r.sdr_2mm = sdr(pooled, 2.0);
    r.sdr_2_5mm = sdr(pooled, 2.5);
    r.sdr_4mm = sdr(pooled, 4.0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto s = mre(by_landmark[k], cfg.std_kind);
        r.per_landmark.push_back({static_cast<int>(k), s.mean, s.std});
    }
    r.images = static_cast<int>(preds.size());
    r.landmarks = static_cast<int>(n);
    return r;
}

std::string to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["mre_mm"] = r.mre_mm;
    j["mre_std_mm"] = r.mre_std_mm;
    j["sdr_2mm"] = r.sdr_2mm;
    j["sdr_2_5mm"] = r.sdr_2_5mm;
    j["sdr_4mm"] = r.sdr_4mm;
    j["per_landmark"] = nlohmann::ordered_json::array();
    for (const auto& s : r.per_landmark) {
        j["per_landmark"].push_back({{"index", s.index}, {"mre_mm", s.mre_mm}, {"std_mm", s.std_mm}});
    }
    j["counts"] = {{"images", r.images}, {"landmarks", r.landmarks}};
    return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        EvalReport r;
        r.mre_mm = j.at("mre_mm").get<double>();
        r.mre_std_mm = j.at("mre_std_mm").get<double>();
        r.sdr_2mm = j.at("sdr_2mm").get<double>();
        r.sdr_2_5mm = j.at("sdr_2_5mm").get<double>();
        r.sdr_4mm = j.at("sdr_4mm").get<double>();
        for (const auto& s : j.at("per_landmark")) {
            r.per_landmark.push_back({s.at("index").get<int>(), s.at("mre_mm").get<double>(), s.at("std_mm").get<double>()});
        }
        r.images = j.at("counts").at("images").get<int>();
        r.landmarks = j.at("counts").at("landmarks").get<int>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::io, std::string("malformed eval report: ") + e.what());
    }
}

} // namespace saltpepper
