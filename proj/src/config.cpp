#include "saltpepper/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "saltpepper/error.hpp"

namespace saltpepper {

namespace {

struct BadValue {
    std::string expected;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& v, const char* expected) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) throw BadValue{expected};
    return out;
}

int to_int(const std::string& v) { return parse_number<int>(v, "an integer"); }
double to_double(const std::string& v) { return parse_number<double>(v, "a number"); }

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw BadValue{"true or false"};
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> to_int_list(const std::string& v) {
    std::vector<int> out;
    for (const auto& s : split_list(v)) out.push_back(parse_number<int>(s, "a comma-separated integer list"));
    return out;
}

std::string fmt(double d) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), d);
    return std::string(buf, r.ptr);
}

std::string fmt(bool b) { return b ? "true" : "false"; }
std::string fmt(int i) { return std::to_string(i); }

std::string fmt(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

struct Field {
    std::string key; // "section.key", or a bare key for the top level
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

#define SP_FIELD(name, member, parse)                                                      \
    Field {                                                                                \
        name, [](Config& c, const std::string& v) { c.member = parse(v); },                \
            [](const Config& c) { return fmt(c.member); }                                  \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"seed", [](Config& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v, "an unsigned integer"); },
              [](const Config& c) { return std::to_string(c.seed); }},

        SP_FIELD("schedule.steps", train.steps, to_int),
        SP_FIELD("schedule.beta_start", train.beta_start, to_double),
        SP_FIELD("schedule.beta_end", train.beta_end, to_double),

        SP_FIELD("blur.kernel_size", blur.kernel_size, to_int),
        SP_FIELD("blur.sigma_min", blur.sigma_min, to_double),
        SP_FIELD("blur.sigma_max", blur.sigma_max, to_double),

        SP_FIELD("model.image_channels", model.image_channels, to_int),
        SP_FIELD("model.landmarks", model.landmarks, to_int),
        SP_FIELD("model.encoder", model.encoder, to_int_list),
        SP_FIELD("model.decoder", model.decoder, to_int_list),
        SP_FIELD("model.groups", model.groups, to_int),
        SP_FIELD("model.time_dim", model.time_dim, to_int),
        Field{"model.parameterization",
              [](Config& c, const std::string& v) {
                  try {
                      c.train.parameterization = parse_parameterization(v);
                  } catch (const Error&) {
                      throw BadValue{"x0 or eps"};
                  }
              },
              [](const Config& c) { return std::string(to_string(c.train.parameterization)); }},

        SP_FIELD("loss.lambda_s", train.loss.lambda_s, to_double),
        SP_FIELD("loss.lambda_nll", train.loss.lambda_nll, to_double),
        SP_FIELD("loss.epsilon_floor", train.loss.epsilon_floor, to_double),
        Field{"loss.reduction",
              [](Config& c, const std::string& v) {
                  if (v == "channel_sum") c.train.loss.reduction = NllReduction::channel_sum;
                  else if (v == "pixel_mean") c.train.loss.reduction = NllReduction::pixel_mean;
                  else throw BadValue{"channel_sum or pixel_mean"};
              },
              [](const Config& c) {
                  return std::string(c.train.loss.reduction == NllReduction::channel_sum ? "channel_sum" : "pixel_mean");
              }},

        SP_FIELD("augment.enabled", train.augment.enabled, to_bool),
        SP_FIELD("augment.rotation_deg", train.augment.rotation_deg, to_double),
        SP_FIELD("augment.translate_px", train.augment.translate_px, to_double),
        SP_FIELD("augment.scale_lo", train.augment.scale.lo, to_double),
        SP_FIELD("augment.scale_hi", train.augment.scale.hi, to_double),
        SP_FIELD("augment.shear_deg", train.augment.shear_deg, to_double),
        SP_FIELD("augment.value_mult", train.augment.value_mult, to_double),
        SP_FIELD("augment.elastic_alpha", train.augment.elastic_alpha, to_double),
        SP_FIELD("augment.elastic_sigma", train.augment.elastic_sigma, to_double),
        SP_FIELD("augment.cutout_max_frac", train.augment.cutout_max_frac, to_double),
        SP_FIELD("augment.gamma_lo", train.augment.gamma.lo, to_double),
        SP_FIELD("augment.gamma_hi", train.augment.gamma.hi, to_double),
        SP_FIELD("augment.max_redraws", train.augment.max_redraws, to_int),

        Field{"train.mode",
              [](Config& c, const std::string& v) {
                  try {
                      c.train.mode = parse_train_mode(v);
                  } catch (const Error&) {
                      throw BadValue{"diffusion or baseline"};
                  }
              },
              [](const Config& c) { return std::string(to_string(c.train.mode)); }},
        SP_FIELD("train.epochs", train.epochs, to_int),
        SP_FIELD("train.batch_size", train.batch_size, to_int),
        SP_FIELD("train.learning_rate", train.optimizer.learning_rate, to_double),
        SP_FIELD("train.weight_decay", train.optimizer.weight_decay, to_double),
        SP_FIELD("train.beta1", train.optimizer.beta1, to_double),
        SP_FIELD("train.beta2", train.optimizer.beta2, to_double),
        SP_FIELD("train.epsilon_opt", train.optimizer.epsilon, to_double),
        SP_FIELD("train.channel_dropout", train.channel_dropout, to_double),
        SP_FIELD("train.checkpoint_every", train.checkpoint_every, to_int),
        SP_FIELD("train.eval_every", train.eval_every, to_int),

        SP_FIELD("data.one_indexed", data.corpus.format.one_indexed, to_bool),
        SP_FIELD("data.spacing_x", data.corpus.spacing.sx, to_double),
        SP_FIELD("data.spacing_y", data.corpus.spacing.sy, to_double),
        SP_FIELD("data.annotation_dirs", data.annotation_dirs, split_list),
        SP_FIELD("data.resize_width", data.resize_width, to_int),
        SP_FIELD("data.resize_height", data.resize_height, to_int),

        SP_FIELD("synth.count", synth.options.count, to_int),
        SP_FIELD("synth.height", synth.options.height, to_int),
        SP_FIELD("synth.width", synth.options.width, to_int),
        SP_FIELD("synth.train", synth.train, to_int),
        SP_FIELD("synth.validation", synth.validation, to_int),

        Field{"sample.split", [](Config& c, const std::string& v) { c.sample.split = v; },
              [](const Config& c) { return c.sample.split; }},
        SP_FIELD("sample.single_step", sample.single_step, to_bool),
        SP_FIELD("sample.overlays", sample.overlays, to_bool),

        SP_FIELD("metrics.per_image_first", metrics.per_image_first, to_bool),
        Field{"metrics.std",
              [](Config& c, const std::string& v) {
                  if (v == "population") c.metrics.std_kind = StdKind::population;
                  else if (v == "sample") c.metrics.std_kind = StdKind::sample;
                  else throw BadValue{"population or sample"};
              },
              [](const Config& c) {
                  return std::string(c.metrics.std_kind == StdKind::population ? "population" : "sample");
              }},

        SP_FIELD("ablate.steps", ablate.steps, to_int_list),
    };
    return table;
}

#undef SP_FIELD

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

void set_value(Config& c, const std::string& key, const std::string& value, const std::string& where,
               std::vector<std::string>& errors) {
    const Field* f = find_field(key);
    if (f == nullptr) {
        errors.push_back(where + ": unknown key '" + key + "'");
        return;
    }
    try {
        f->set(c, value);
    } catch (const BadValue& b) {
        errors.push_back(where + ": " + key + " = '" + value + "' is not " + b.expected);
    }
}

[[noreturn]] void report(const std::vector<std::string>& errors) {
    std::string msg = errors.size() == 1 ? "invalid configuration:" : std::to_string(errors.size()) + " configuration errors:";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(Errc::config, msg);
}

} // namespace

void Config::resolve() {
    synth.options.seed = seed;
    synth.options.landmarks = model.landmarks;
    synth.options.spacing = data.corpus.spacing;
    data.corpus.format.landmarks = model.landmarks;
    train.seed = seed;
    model.parameterization = train.parameterization;
}

void Config::validate() const {
    std::vector<std::string> errors;
    auto check = [&](const char* section, auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            errors.push_back(std::string("[") + section + "] " + e.what());
        }
    };
    check("blur", [&] { blur.validate(); });
    check("model", [&] { model.validate(); });
    check("train", [&] { train.validate(); });
    check("train", [&] {
        if (train.mode == TrainMode::baseline && train.parameterization != Parameterization::predicts_x0) {
            fail(Errc::config, "mode = baseline needs model.parameterization = x0");
        }
    });
    check("data", [&] {
        if (!(data.corpus.spacing.sx > 0.0 && data.corpus.spacing.sy > 0.0)) fail(Errc::config, "spacing must be > 0");
        if (data.annotation_dirs.empty()) fail(Errc::config, "annotation_dirs must name at least one directory");
        if (data.annotation_dirs.size() > 2) fail(Errc::config, "at most two annotators are supported");
        if ((data.resize_width == 0) != (data.resize_height == 0) || data.resize_width < 0 || data.resize_height < 0) {
            fail(Errc::config, "resize_width and resize_height must both be 0 or both be positive");
        }
    });
    check("synth", [&] {
        const auto& o = synth.options;
        if (o.count < 1) fail(Errc::config, "count must be >= 1");
        if (o.height < 32 || o.width < 32) fail(Errc::config, "height and width must be >= 32");
        if (synth.train < 0 || synth.validation < 0 || synth.train + synth.validation > o.count) {
            fail(Errc::config, "train + validation must not exceed count");
        }
        const int div = 1 << (model.levels() - 1);
        if (o.height % div != 0 || o.width % div != 0) {
            fail(Errc::config, "height and width must be divisible by " + std::to_string(div) + " for the model");
        }
    });
    check("sample", [&] {
        if (sample.split != "train" && sample.split != "validation" && sample.split != "test") {
            fail(Errc::config, "split must be train, validation or test");
        }
        if (sample.single_step && train.parameterization != Parameterization::predicts_x0) {
            fail(Errc::config, "single_step needs model.parameterization = x0");
        }
    });
    check("ablate", [&] {
        if (ablate.steps.empty()) fail(Errc::config, "steps must list at least one T");
        for (int t : ablate.steps) {
            if (t < 1) fail(Errc::config, "every T in steps must be >= 1");
        }
    });
    if (!errors.empty()) report(errors);
}

Config parse_config(const std::string& text, const std::string& origin) {
    Config c;
    std::vector<std::string> errors;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') {
                errors.push_back(where + ": unterminated section header");
                continue;
            }
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            const bool known = std::any_of(fields().begin(), fields().end(), [&](const Field& f) {
                return f.key.rfind(section + ".", 0) == 0;
            });
            if (!known) errors.push_back(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back(where + ": expected key = value");
            continue;
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        set_value(c, section.empty() ? key : section + "." + key, value, where, errors);
    }
    if (!errors.empty()) report(errors);
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(Errc::missing_file, "cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path.string());
}

void apply_overrides(Config& cfg, const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::vector<std::string> errors;
    for (const auto& [key, value] : overrides) set_value(cfg, key, value, "--" + key, errors);
    if (!errors.empty()) report(errors);
}

std::string dump_config(const Config& c) {
    std::string out, section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
        const std::string key = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
        if (sec != section) {
            out += "\n[" + sec + "]\n";
            section = sec;
        }
        out += key + " = " + f.get(c) + "\n";
    }
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

} // namespace saltpepper
