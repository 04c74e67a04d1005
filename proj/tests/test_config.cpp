#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "saltpepper/config.hpp"
#include "support.hpp"

using namespace saltpepper;
using testing::code_of;

namespace {

std::string error_text(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

std::filesystem::path config_dir() { return std::filesystem::path(SALTPEPPER_SOURCE_DIR) / "configs"; }

} // namespace

TEST_CASE("defaults validate and describe the desk corpus") {
    Config c;
    c.resolve();
    CHECK_NOTHROW(c.validate());
    CHECK(c.synth.options.count == 300);
    CHECK(c.synth.train == 200);
    CHECK(c.synth.validation == 50);
    CHECK(c.synth.options.height == 64);
    CHECK(c.model.landmarks == 4);
    CHECK(c.train.loss.lambda_s == 0.01);
    CHECK(c.train.loss.lambda_nll == 1.0);
    CHECK(c.train.optimizer.beta1 == 0.9);
    CHECK(c.train.optimizer.beta2 == 0.999);
    CHECK(c.blur.kernel_size == 13);
    CHECK(c.blur.sigma_max == 14.0);
}

TEST_CASE("dump and parse round trip") {
    Config c;
    c.seed = 123456789012345ull;
    c.train.steps = 37;
    c.train.beta_end = 0.0123456789;
    c.model.encoder = {4, 8};
    c.model.decoder = {4};
    c.train.mode = TrainMode::baseline;
    c.train.loss.reduction = NllReduction::pixel_mean;
    c.metrics.std_kind = StdKind::sample;
    c.data.annotation_dirs = {"a", "b"};
    c.sample.split = "validation";
    c.ablate.steps = {1, 2, 3};
    c.train.augment.scale = {0.9, 1.1};
    const auto text = dump_config(c);
    const auto back = parse_config(text);
    CHECK(dump_config(back) == text);
    CHECK(back.seed == c.seed);
    CHECK(back.train.beta_end == c.train.beta_end);
    CHECK(back.model.encoder == c.model.encoder);
    CHECK(back.data.annotation_dirs == c.data.annotation_dirs);
    CHECK(back.train.mode == TrainMode::baseline);

    // every key appears exactly once in the dump
    for (const auto& key : config_keys()) {
        const auto dot = key.find('.');
        const auto bare = dot == std::string::npos ? key : key.substr(dot + 1);
        CHECK(("\n" + text).find("\n" + bare + " = ") != std::string::npos);
    }
}

TEST_CASE("sections, comments and overrides") {
    auto c = parse_config("seed = 3 # top level\n\n[schedule]\n  steps = 10  \n[train]\nepochs=2\n");
    CHECK(c.seed == 3);
    CHECK(c.train.steps == 10);
    CHECK(c.train.epochs == 2);
    apply_overrides(c, {{"train.epochs", "5"}, {"augment.enabled", "off"}});
    CHECK(c.train.epochs == 5);
    CHECK_FALSE(c.train.augment.enabled);
    c.resolve();
    CHECK(c.train.seed == 3);
    CHECK(c.synth.options.seed == 3);
    CHECK(c.data.corpus.format.landmarks == c.model.landmarks);
}

TEST_CASE("parse errors are reported together") {
    const std::string text = "[train]\nepochs = many\nlearning_rate = 1e-3x\nbogus = 1\n[nowhere]\nx = 1\n[model\nnot a pair\n";
    CHECK(code_of([&] { parse_config(text, "run.cfg"); }) == Errc::config);
    const auto msg = error_text([&] { parse_config(text, "run.cfg"); });
    CHECK(msg.find("run.cfg:2") != std::string::npos);
    CHECK(msg.find("epochs = 'many' is not an integer") != std::string::npos);
    CHECK(msg.find("run.cfg:3") != std::string::npos);
    CHECK(msg.find("unknown key 'train.bogus'") != std::string::npos);
    CHECK(msg.find("unknown section [nowhere]") != std::string::npos);
    CHECK(msg.find("unterminated section header") != std::string::npos);
    CHECK(msg.find("expected key = value") != std::string::npos);

    Config c;
    CHECK(code_of([&] { apply_overrides(c, {{"train.nope", "1"}}); }) == Errc::config);
    CHECK(code_of([&] { apply_overrides(c, {{"train.mode", "gan"}}); }) == Errc::config);
}

TEST_CASE("validation lists every violated invariant") {
    Config c;
    c.train.epochs = -1;
    c.train.optimizer.beta1 = 1.5;
    c.blur.kernel_size = 4;
    c.synth.options.width = 16;
    c.sample.split = "holdout";
    c.ablate.steps = {0};
    c.data.resize_width = 10;
    c.resolve();
    const auto msg = error_text([&] { c.validate(); });
    CHECK(code_of([&] { c.validate(); }) == Errc::config);
    for (const char* section : {"[train]", "[blur]", "[synth]", "[sample]", "[ablate]", "[data]"})
        CHECK(msg.find(section) != std::string::npos);
    CHECK(msg.find("6 configuration errors") != std::string::npos);

    Config b;
    b.train.mode = TrainMode::baseline;
    b.train.parameterization = Parameterization::predicts_eps;
    b.resolve();
    CHECK(code_of([&] { b.validate(); }) == Errc::config);
}

TEST_CASE("shipped configs load and validate") {
    for (const char* name : {"desk.cfg", "full.cfg"}) {
        auto c = load_config(config_dir() / name);
        c.resolve();
        CHECK_NOTHROW(c.validate());
    }
    auto desk = load_config(config_dir() / "desk.cfg");
    CHECK(desk.train.steps == 50);
    CHECK_FALSE(desk.train.augment.enabled);
    auto full = load_config(config_dir() / "full.cfg");
    CHECK(full.model.landmarks == 19);
    CHECK(full.train.epochs == 120);
    CHECK(full.train.optimizer.learning_rate == 1e-4);
    CHECK(full.model.encoder.size() == 6);
    CHECK(code_of([] { load_config("/nonexistent/x.cfg"); }) == Errc::missing_file);
}
