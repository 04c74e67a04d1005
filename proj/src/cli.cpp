#include "saltpepper/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "saltpepper/error.hpp"
#include "saltpepper/metrics.hpp"
#include "saltpepper/train.hpp"

namespace saltpepper {

namespace fs = std::filesystem;

LoadedCorpus load_corpus_dir(const fs::path& root, const Config& cfg) {
    if (!fs::is_directory(root)) fail(Errc::missing_file, "corpus directory " + root.string() + " does not exist");
    LoadedCorpus c;
    c.manifest = read_manifest(root / "manifest.txt");
    std::vector<fs::path> dirs;
    for (const auto& d : cfg.data.annotation_dirs) dirs.push_back(root / d);
    c.records = load_corpus(root / "images", dirs, c.manifest, cfg.data.corpus);
    if (cfg.data.resize_width > 0) {
        for (auto& r : c.records) r = downsample_record(r, cfg.data.resize_width, cfg.data.resize_height);
    }
    return c;
}

Tensor render_overlay(const ReferenceImage& image, const Point* truth, const Point& prediction) {
    Tensor out(1, image.height(), image.width());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = 0.6 * image.pixels.data[i];
    auto cross = [&](const Point& p, double value) {
        const int cx = static_cast<int>(std::lround(p.x)), cy = static_cast<int>(std::lround(p.y));
        for (int k = -2; k <= 2; ++k) {
            if (cx + k >= 0 && cx + k < out.width && cy >= 0 && cy < out.height) out.at(0, cy, cx + k) = value;
            if (cy + k >= 0 && cy + k < out.height && cx >= 0 && cx < out.width) out.at(0, cy + k, cx) = value;
        }
    };
    if (truth != nullptr) cross(*truth, 1.0);
    cross(prediction, -1.0);
    return out;
}

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
};

Config build_config(const Common& common, const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    Config cfg = common.config_path.empty() ? Config{} : load_config(common.config_path);
    std::vector<std::pair<std::string, std::string>> kv;
    std::vector<std::string> bad;
    for (const auto& arg : common.overrides) {
        const auto eq = arg.find('=');
        if (arg.rfind("--", 0) != 0 || eq == std::string::npos) {
            bad.push_back("unrecognised argument '" + arg + "' (overrides take the form --section.key=value)");
            continue;
        }
        kv.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
    }
    if (!bad.empty()) {
        std::string msg = "invalid arguments:";
        for (const auto& b : bad) msg += "\n  " + b;
        fail(Errc::config, msg);
    }
    kv.insert(kv.end(), extra.begin(), extra.end());
    // Report bad values and violated invariants together, as one list.
    std::vector<std::string> problems;
    auto collect = [&](auto&& step) {
        try {
            step();
        } catch (const Error& e) {
            std::istringstream lines(e.what());
            std::string line;
            std::getline(lines, line); // header
            while (std::getline(lines, line)) problems.push_back(line);
        }
    };
    collect([&] { apply_overrides(cfg, kv); });
    cfg.resolve();
    collect([&] { cfg.validate(); });
    if (!problems.empty()) {
        std::string msg = std::to_string(problems.size()) + " configuration error(s):";
        for (const auto& p : problems) msg += "\n" + p;
        fail(Errc::config, msg);
    }
    return cfg;
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        fail(Errc::io, "cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) fail(Errc::io, "cannot open " + path.string() + " for writing");
    os << text;
    if (!os) fail(Errc::io, "failed writing " + path.string());
}

std::vector<Point> to_file_convention(std::vector<Point> pts, const Config& cfg) {
    if (cfg.data.corpus.format.one_indexed) {
        for (auto& p : pts) {
            p.x += 1.0;
            p.y += 1.0;
        }
    }
    return pts;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Config& cfg, const fs::path& out_dir, std::ostream& out) {
    const auto records = synth_corpus(cfg.synth.options);
    const auto manifest = split_ids(records, cfg.synth.train, cfg.synth.validation);
    make_dir(out_dir);
    write_corpus(CorpusLayout{out_dir}, records, manifest);
    out << "wrote " << records.size() << " records (" << manifest.train.size() << " train / "
        << manifest.validation.size() << " validation / " << manifest.test.size() << " test) of "
        << cfg.synth.options.width << "x" << cfg.synth.options.height << " with " << cfg.model.landmarks
        << " landmarks to " << out_dir.string() << "\n";
    return 0;
}

int cmd_train(const Config& cfg, const fs::path& corpus_dir, const fs::path& out_dir, const std::string& resume,
              std::ostream& out) {
    const auto corpus = load_corpus_dir(corpus_dir, cfg);
    const auto train = select_split(corpus.records, corpus.manifest, "train");
    const auto validation = select_split(corpus.records, corpus.manifest, "validation");
    if (train.empty() && cfg.train.epochs > 0) fail(Errc::misalignment, "the manifest has no training records");
    if (!resume.empty() && !fs::exists(resume)) fail(Errc::missing_file, "cannot open training state " + resume);

    make_dir(out_dir);
    write_text(out_dir / "config.cfg", dump_config(cfg));
    FitOptions opts;
    opts.out_dir = out_dir;
    if (!resume.empty()) opts.resume_from = fs::path(resume);
    opts.inference.blur = cfg.blur;
    opts.inference.seed = cfg.seed;
    const auto start = std::chrono::steady_clock::now();
    opts.on_epoch = [&](int epoch, const LossBreakdown& probe) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char buf[160];
        std::snprintf(buf, sizeof(buf), "epoch %d/%d  probe loss %.6f (s %.6f, nll %.6f)  %.1fs\n", epoch,
                      cfg.train.epochs, probe.total, probe.loss_s, probe.loss_nll, secs);
        out << buf << std::flush;
    };
    const auto result = fit(train, validation, cfg.model, cfg.train, opts);
    out << "trained " << to_string(cfg.train.mode) << " model for " << cfg.train.epochs << " epochs ("
        << result.log.size() << " updates); checkpoint " << (out_dir / "checkpoint.spck").string() << "\n";
    return 0;
}

void check_checkpoint(const UNet& net, const Config& cfg) {
    const auto& m = net.config();
    const bool diffusion = cfg.train.mode == TrainMode::diffusion;
    if (m.heatmap_input != diffusion) {
        fail(Errc::checkpoint_mismatch, std::string("checkpoint was trained as ") +
                                            (m.heatmap_input ? "diffusion" : "baseline") + " but train.mode = " +
                                            to_string(cfg.train.mode));
    }
    if (diffusion && m.parameterization != cfg.train.parameterization) {
        fail(Errc::checkpoint_mismatch, std::string("checkpoint predicts ") + to_string(m.parameterization) +
                                            " but model.parameterization = " + to_string(cfg.train.parameterization));
    }
    if (m.landmarks != cfg.model.landmarks) {
        fail(Errc::checkpoint_mismatch, "checkpoint has " + std::to_string(m.landmarks) +
                                            " landmark channels but model.landmarks = " +
                                            std::to_string(cfg.model.landmarks));
    }
}

int cmd_sample(const Config& cfg, const fs::path& checkpoint, const fs::path& corpus_dir, const fs::path& out_dir,
               std::ostream& out) {
    const UNet net = read_checkpoint(checkpoint);
    check_checkpoint(net, cfg);
    const auto corpus = load_corpus_dir(corpus_dir, cfg);
    const auto records = select_split(corpus.records, corpus.manifest, cfg.sample.split);
    const Schedule sched = cfg.train.schedule();

    make_dir(out_dir / "heatmaps");
    make_dir(out_dir / "landmarks");
    InferenceOptions io;
    io.blur = cfg.blur;
    io.single_step = cfg.sample.single_step;
    io.seed = cfg.seed;
    std::vector<LandmarkSet> preds, gts;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        Rng rng = record_rng(io.seed, i);
        const auto loc = localize(net, cfg.train.mode, r.image, r.ground_truth.frame, r.ground_truth.spacing_mm, sched,
                                  io, rng);
        const fs::path hm = out_dir / "heatmaps";
        write_sphm(hm / (r.id + "_x0.sphm"), loc.x0);
        write_sphm(hm / (r.id + "_softmax.sphm"), loc.probability);
        if (cfg.sample.overlays) {
            for (int c = 0; c < loc.x0.channels(); ++c) {
                const Point* truth = c < static_cast<int>(r.ground_truth.size()) ? &r.ground_truth.points[c] : nullptr;
                write_pgm(hm / (r.id + "_overlay_c" + std::to_string(c) + ".pgm"),
                          render_overlay(r.image, truth, loc.landmarks.points[c]), 8);
            }
        }
        write_landmark_csv(out_dir / "landmarks" / (r.id + ".csv"), to_file_convention(loc.landmarks.points, cfg));
        preds.push_back(loc.landmarks);
        gts.push_back(r.ground_truth);
    }
    out << "sampled " << records.size() << " '" << cfg.sample.split << "' records ("
        << (cfg.sample.single_step ? "single-step" : "multi-step") << ", T = " << sched.steps() << ") into "
        << out_dir.string() << "\n";
    if (!records.empty()) {
        const auto rep = evaluate(preds, gts, cfg.metrics);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "MRE %.4f +- %.4f mm  SDR 2mm %.2f%%  2.5mm %.2f%%  4mm %.2f%%\n", rep.mre_mm,
                      rep.mre_std_mm, rep.sdr_2mm, rep.sdr_2_5mm, rep.sdr_4mm);
        out << buf;
    }
    return 0;
}

std::vector<std::string> csv_ids(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(Errc::missing_file, "landmark directory " + dir.string() + " does not exist");
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && (e.path().extension() == ".csv" || e.path().extension() == ".txt")) {
            ids.push_back(e.path().stem().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

fs::path csv_path(const fs::path& dir, const std::string& id) {
    const auto csv = dir / (id + ".csv");
    return fs::exists(csv) ? csv : dir / (id + ".txt");
}

int cmd_eval(const Config& cfg, const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& report_path,
             const std::string& manifest_path, std::ostream& out, std::ostream& err) {
    auto gt_ids = csv_ids(gt_dir);
    if (!manifest_path.empty()) {
        auto wanted = read_manifest(manifest_path).split(cfg.sample.split);
        std::sort(wanted.begin(), wanted.end());
        for (const auto& id : wanted) {
            if (!std::binary_search(gt_ids.begin(), gt_ids.end(), id)) {
                fail(Errc::misalignment, "no ground truth for '" + id + "' in " + gt_dir.string());
            }
        }
        gt_ids = wanted;
    }
    const auto pred_ids = csv_ids(pred_dir);
    if (gt_ids.empty()) fail(Errc::missing_file, "no landmark files in " + gt_dir.string());
    for (const auto& id : gt_ids) {
        if (!std::binary_search(pred_ids.begin(), pred_ids.end(), id)) {
            fail(Errc::misalignment, "no prediction for '" + id + "' in " + pred_dir.string());
        }
    }
    for (const auto& id : pred_ids) {
        if (!std::binary_search(gt_ids.begin(), gt_ids.end(), id)) {
            fail(Errc::misalignment, "prediction '" + id + "' has no ground truth in " + gt_dir.string());
        }
    }
    std::vector<LandmarkSet> preds, gts;
    for (const auto& id : gt_ids) {
        preds.push_back({read_landmark_csv(csv_path(pred_dir, id), cfg.data.corpus.format), {}, cfg.data.corpus.spacing});
        gts.push_back({read_landmark_csv(csv_path(gt_dir, id), cfg.data.corpus.format), {}, cfg.data.corpus.spacing});
    }
    const auto rep = evaluate(preds, gts, cfg.metrics);
    const std::string json = to_json(rep);
    if (!report_path.empty()) {
        if (report_path.has_parent_path()) make_dir(report_path.parent_path());
        write_text(report_path, json);
    }
    char buf[200];
    std::snprintf(buf, sizeof(buf), "images %d  landmarks %d\nMRE  %.4f +- %.4f mm\nSDR  2mm %.2f%%  2.5mm %.2f%%  4mm %.2f%%\n",
                  rep.images, rep.landmarks, rep.mre_mm, rep.mre_std_mm, rep.sdr_2mm, rep.sdr_2_5mm, rep.sdr_4mm);
    err << buf;
    out << json;
    return 0;
}

int cmd_ablate(const Config& cfg, const fs::path& corpus_dir, const fs::path& out_dir, const std::string& checkpoint,
               std::ostream& out) {
    std::optional<UNet> fixed;
    if (!checkpoint.empty()) {
        fixed.emplace(read_checkpoint(checkpoint));
        check_checkpoint(*fixed, cfg);
    }
    const auto corpus = load_corpus_dir(corpus_dir, cfg);
    const auto train = select_split(corpus.records, corpus.manifest, "train");
    const auto validation = select_split(corpus.records, corpus.manifest, "validation");
    const auto test = select_split(corpus.records, corpus.manifest, cfg.sample.split);
    if (test.empty()) fail(Errc::misalignment, "split '" + cfg.sample.split + "' is empty");
    if (!fixed && train.empty()) fail(Errc::misalignment, "the manifest has no training records");

    make_dir(out_dir);
    std::string csv = "T,mre_mm,sdr_2mm\n";
    for (int T : cfg.ablate.steps) {
        Config run = cfg;
        run.train.steps = T;
        run.train.validate();
        InferenceOptions io;
        io.blur = cfg.blur;
        io.seed = cfg.seed;
        EvalReport rep;
        if (fixed) {
            rep = evaluate_split(*fixed, cfg.train.mode, test, run.train.schedule(), io, cfg.metrics);
        } else {
            FitOptions opts;
            opts.out_dir = out_dir / ("T" + std::to_string(T));
            opts.inference = io;
            const auto fitted = fit(train, validation, cfg.model, run.train, opts);
            rep = evaluate_split(fitted.net, cfg.train.mode, test, run.train.schedule(), io, cfg.metrics);
        }
        char row[96];
        std::snprintf(row, sizeof(row), "%d,%.9g,%.9g\n", T, rep.mre_mm, rep.sdr_2mm);
        csv += row;
        out << "T = " << T << "  MRE " << rep.mre_mm << " mm  SDR@2mm " << rep.sdr_2mm << "%\n" << std::flush;
    }
    write_text(out_dir / "ablation.csv", csv);
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Diffusion-based landmark detection on few-hot heatmaps", "saltpepper"};
    app.require_subcommand(1);

    auto add_common = [](CLI::App* sub, Common& c) {
        sub->add_option("-c,--config", c.config_path, "Configuration file")->check(CLI::ExistingFile);
        sub->allow_extras();
    };

    Common synth_c, train_c, sample_c, eval_c, ablate_c;
    std::string out_dir, corpus_dir, checkpoint, resume, split, pred_dir, gt_dir, report, steps, spacing, manifest;
    bool single_step = false;
    int landmarks = 0;

    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
    add_common(synth, synth_c);
    synth->add_option("-o,--out", out_dir, "Output corpus directory")->required();

    auto* train = app.add_subcommand("train", "Train a denoiser (or the baseline)");
    add_common(train, train_c);
    train->add_option("--corpus", corpus_dir, "Corpus directory")->required();
    train->add_option("-o,--out", out_dir, "Output run directory")->required();
    train->add_option("--resume", resume, "Training state to continue from");

    auto* sample = app.add_subcommand("sample", "Sample heatmaps and landmarks for a split");
    add_common(sample, sample_c);
    sample->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    sample->add_option("--corpus", corpus_dir, "Corpus directory")->required();
    sample->add_option("--split", split, "train, validation or test");
    sample->add_option("-o,--out", out_dir, "Output directory")->required();
    sample->add_flag("--single-step", single_step, "Predict x0 straight from x_T");

    auto* eval = app.add_subcommand("eval", "Score predicted landmark files against ground truth");
    add_common(eval, eval_c);
    eval->add_option("--pred", pred_dir, "Directory of predicted CSVs")->required();
    eval->add_option("--gt", gt_dir, "Directory of ground-truth CSVs")->required();
    eval->add_option("-o,--out", report, "Report path (default <pred>/eval.json)");
    eval->add_option("--landmarks", landmarks, "Landmarks per file (default model.landmarks)");
    eval->add_option("--spacing", spacing, "Pixel spacing in mm: sx[,sy]");
    eval->add_option("--manifest", manifest, "Restrict the ground truth to one split of this manifest");
    eval->add_option("--split", split, "Split used with --manifest (default sample.split)");

    auto* ablate = app.add_subcommand("ablate", "Sweep the number of diffusion steps");
    add_common(ablate, ablate_c);
    ablate->add_option("--corpus", corpus_dir, "Corpus directory")->required();
    ablate->add_option("-o,--out", out_dir, "Output directory")->required();
    ablate->add_option("--steps", steps, "Comma-separated list of T");
    ablate->add_option("--checkpoint", checkpoint, "Resample this checkpoint instead of retraining");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 1;
    }

    try {
        if (synth->parsed()) {
            synth_c.overrides = synth->remaining();
            return cmd_synth(build_config(synth_c), out_dir, out);
        }
        if (train->parsed()) {
            train_c.overrides = train->remaining();
            return cmd_train(build_config(train_c), corpus_dir, out_dir, resume, out);
        }
        if (sample->parsed()) {
            sample_c.overrides = sample->remaining();
            std::vector<std::pair<std::string, std::string>> extra;
            if (!split.empty()) extra.emplace_back("sample.split", split);
            if (single_step) extra.emplace_back("sample.single_step", "true");
            return cmd_sample(build_config(sample_c, extra), checkpoint, corpus_dir, out_dir, out);
        }
        if (eval->parsed()) {
            eval_c.overrides = eval->remaining();
            std::vector<std::pair<std::string, std::string>> extra;
            if (!split.empty()) extra.emplace_back("sample.split", split);
            if (landmarks > 0) extra.emplace_back("model.landmarks", std::to_string(landmarks));
            if (!spacing.empty()) {
                const auto comma = spacing.find(',');
                extra.emplace_back("data.spacing_x", spacing.substr(0, comma));
                extra.emplace_back("data.spacing_y", comma == std::string::npos ? spacing : spacing.substr(comma + 1));
            }
            const fs::path report_path = report.empty() ? fs::path(pred_dir) / "eval.json" : fs::path(report);
            return cmd_eval(build_config(eval_c, extra), pred_dir, gt_dir, report_path, manifest, out, err);
        }
        if (ablate->parsed()) {
            ablate_c.overrides = ablate->remaining();
            std::vector<std::pair<std::string, std::string>> extra;
            if (!steps.empty()) extra.emplace_back("ablate.steps", steps);
            return cmd_ablate(build_config(ablate_c, extra), corpus_dir, out_dir, checkpoint, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.is_user_error() ? 1 : 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

} // namespace saltpepper
