#include "saltpepper/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "saltpepper/error.hpp"

namespace saltpepper {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest

void SplitManifest::validate() const {
    std::set<std::string> seen;
    for (const auto& id : all()) {
        if (!seen.insert(id).second) fail(Errc::misalignment, "manifest lists '" + id + "' more than once");
    }
}

std::vector<std::string> SplitManifest::all() const {
    std::vector<std::string> out(train);
    out.insert(out.end(), validation.begin(), validation.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
}

const std::vector<std::string>& SplitManifest::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "validation" || name == "val") return validation;
    if (name == "test") return test;
    fail(Errc::config, "unknown split '" + name + "' (expected train, validation or test)");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

SplitManifest read_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) fail(Errc::missing_file, "cannot open manifest " + path.string());
    SplitManifest m;
    std::vector<std::string>* current = nullptr;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line == "[train]") {
            current = &m.train;
        } else if (line == "[validation]") {
            current = &m.validation;
        } else if (line == "[test]") {
            current = &m.test;
        } else if (line.front() == '[') {
            fail(Errc::malformed_line, path.string() + ":" + std::to_string(lineno) + ": unknown section " + line);
        } else if (current == nullptr) {
            fail(Errc::malformed_line, path.string() + ":" + std::to_string(lineno) + ": id before any section");
        } else {
            current->push_back(line);
        }
    }
    m.validate();
    return m;
}

void write_manifest(const fs::path& path, const SplitManifest& m) {
    std::ofstream os(path);
    if (!os) fail(Errc::io, "cannot open " + path.string() + " for writing");
    auto section = [&](const char* name, const std::vector<std::string>& ids) {
        os << '[' << name << "]\n";
        for (const auto& id : ids) os << id << '\n';
    };
    section("train", m.train);
    section("validation", m.validation);
    section("test", m.test);
    if (!os) fail(Errc::io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// PGM

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& is) {
    std::string tok;
    int ch = 0;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while ((ch = is.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

int pgm_int(std::istream& is, const fs::path& path) {
    const auto tok = pgm_token(is);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) fail(Errc::io, path.string() + ": bad PGM header");
    return v;
}

} // namespace

ReferenceImage read_pgm(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(Errc::missing_file, "cannot open image " + path.string());
    const auto magic = pgm_token(is);
    if (magic != "P5" && magic != "P2") fail(Errc::io, path.string() + ": not a greymap (P2/P5)");
    const int w = pgm_int(is, path);
    const int h = pgm_int(is, path);
    const int maxval = pgm_int(is, path);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) fail(Errc::io, path.string() + ": bad PGM dimensions");

    ReferenceImage img{Tensor(1, h, w)};
    const double scale = 2.0 / maxval;
    if (magic == "P2") {
        for (auto& v : img.pixels.data) v = pgm_int(is, path) * scale - 1.0;
        return img;
    }
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * bytes);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) fail(Errc::io, path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const int raw = bytes == 2 ? (buf[2 * i] << 8) | buf[2 * i + 1] : buf[i];
        img.pixels.data[i] = raw * scale - 1.0;
    }
    return img;
}

void write_pgm(const fs::path& path, const Tensor& image, int bits, int channel) {
    if (bits != 8 && bits != 16) fail(Errc::invalid_range, "PGM depth must be 8 or 16 bits");
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(Errc::io, "cannot open " + path.string() + " for writing");
    const int maxval = bits == 16 ? 65535 : 255;
    os << "P5\n" << image.width << ' ' << image.height << '\n' << maxval << '\n';
    const auto ch = image.channel(channel);
    std::vector<unsigned char> buf;
    buf.reserve(ch.size() * (bits / 8));
    for (double v : ch) {
        const auto q = static_cast<int>(std::lround(std::clamp((v + 1.0) / 2.0, 0.0, 1.0) * maxval));
        if (bits == 16) buf.push_back(static_cast<unsigned char>(q >> 8));
        buf.push_back(static_cast<unsigned char>(q & 0xFF));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) fail(Errc::io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Landmark CSV

std::vector<Point> read_landmark_csv(const fs::path& path, const AnnotationFormat& fmt) {
    std::ifstream is(path);
    if (!is) fail(Errc::missing_file, "cannot open landmarks " + path.string());
    std::vector<Point> pts;
    std::string line;
    int lineno = 0;
    auto parse = [&](std::string_view tok, double& out) {
        const auto t = trim(std::string(tok));
        const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
        return ec == std::errc() && ptr == t.data() + t.size() && !t.empty();
    };
    while (static_cast<int>(pts.size()) < fmt.landmarks && std::getline(is, line)) {
        ++lineno;
        const auto comma = line.find(',');
        Point p;
        if (comma == std::string::npos || !parse(std::string_view(line).substr(0, comma), p.x) ||
            !parse(std::string_view(line).substr(comma + 1), p.y)) {
            fail(Errc::malformed_line, path.string() + ":" + std::to_string(lineno) + ": expected \"x,y\", got \"" +
                                           trim(line) + "\"");
        }
        if (fmt.one_indexed) {
            p.x -= 1.0;
            p.y -= 1.0;
        }
        pts.push_back(p);
    }
    if (static_cast<int>(pts.size()) < fmt.landmarks) {
        fail(Errc::landmark_count_mismatch, path.string() + ": expected " + std::to_string(fmt.landmarks) +
                                                " landmarks, found " + std::to_string(pts.size()));
    }
    return pts;
}

void write_landmark_csv(const fs::path& path, const std::vector<Point>& points) {
    std::ofstream os(path);
    if (!os) fail(Errc::io, "cannot open " + path.string() + " for writing");
    char buf[64];
    for (const auto& p : points) {
        auto r = std::to_chars(buf, buf + sizeof(buf), p.x);
        *r.ptr++ = ',';
        r = std::to_chars(r.ptr, buf + sizeof(buf), p.y);
        *r.ptr++ = '\n';
        os.write(buf, r.ptr - buf);
    }
    if (!os) fail(Errc::io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Corpus

LandmarkSet mean_annotation(const std::vector<LandmarkSet>& annotations) {
    if (annotations.empty()) fail(Errc::landmark_count_mismatch, "no annotations to average");
    LandmarkSet out = annotations.front();
    for (std::size_t a = 1; a < annotations.size(); ++a) {
        if (annotations[a].size() != out.size()) {
            fail(Errc::landmark_count_mismatch, "annotators disagree on the landmark count");
        }
        for (std::size_t i = 0; i < out.size(); ++i) {
            out.points[i].x += annotations[a].points[i].x;
            out.points[i].y += annotations[a].points[i].y;
        }
    }
    const double n = static_cast<double>(annotations.size());
    for (auto& p : out.points) {
        p.x /= n;
        p.y /= n;
    }
    return out;
}

namespace {

fs::path find_annotation(const fs::path& dir, const std::string& id) {
    for (const char* ext : {".csv", ".txt"}) {
        auto p = dir / (id + ext);
        if (fs::exists(p)) return p;
    }
    fail(Errc::missing_file, "no annotation for '" + id + "' in " + dir.string());
}

} // namespace

std::vector<DatasetRecord> load_corpus(const fs::path& image_dir, const std::vector<fs::path>& annotation_dirs,
                                       const SplitManifest& manifest, const CorpusOptions& opts) {
    if (annotation_dirs.empty()) fail(Errc::config, "load_corpus needs at least one annotation directory");
    manifest.validate();
    std::vector<DatasetRecord> records;
    for (const auto& id : manifest.all()) {
        DatasetRecord r;
        r.id = id;
        r.image = read_pgm(image_dir / (id + ".pgm"));
        const Frame frame{r.image.width(), r.image.height()};
        for (const auto& dir : annotation_dirs) {
            LandmarkSet set{read_landmark_csv(find_annotation(dir, id), opts.format), frame, opts.spacing};
            set.validate();
            r.annotations.push_back(std::move(set));
        }
        r.ground_truth = mean_annotation(r.annotations);
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<DatasetRecord> select_split(const std::vector<DatasetRecord>& corpus, const SplitManifest& manifest,
                                        const std::string& split) {
    std::map<std::string, const DatasetRecord*> by_id;
    for (const auto& r : corpus) by_id[r.id] = &r;
    std::vector<DatasetRecord> out;
    for (const auto& id : manifest.split(split)) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) fail(Errc::misalignment, "split '" + split + "' names unknown record '" + id + "'");
        out.push_back(*it->second);
    }
    return out;
}

namespace {

struct AxisWeights {
    std::vector<int> first;                 // first source index per output index
    std::vector<std::vector<double>> weight; // overlap fractions, normalized
};

// Exact box-filter overlap of output cell [o*r, (o+1)*r) with source cells.
AxisWeights axis_weights(int src, int dst) {
    AxisWeights aw;
    const double ratio = static_cast<double>(src) / dst;
    for (int o = 0; o < dst; ++o) {
        const double lo = o * ratio, hi = (o + 1) * ratio;
        const int first = static_cast<int>(std::floor(lo));
        const int last = std::min(src - 1, static_cast<int>(std::ceil(hi)) - 1);
        std::vector<double> w;
        for (int s = first; s <= last; ++s) w.push_back(std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s)));
        double total = 0.0;
        for (double v : w) total += v;
        for (auto& v : w) v /= total;
        aw.first.push_back(first);
        aw.weight.push_back(std::move(w));
    }
    return aw;
}

} // namespace

Tensor area_resize(const Tensor& img, int target_w, int target_h) {
    if (target_w <= 0 || target_h <= 0) fail(Errc::degenerate, "resize target must be positive");
    if (target_w == img.width && target_h == img.height) return img;
    const auto ax = axis_weights(img.width, target_w);
    const auto ay = axis_weights(img.height, target_h);
    Tensor tmp(img.channels, img.height, target_w);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < target_w; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < ax.weight[x].size(); ++k) acc += ax.weight[x][k] * img.at(c, y, ax.first[x] + static_cast<int>(k));
                tmp.at(c, y, x) = acc;
            }
        }
    }
    Tensor out(img.channels, target_h, target_w);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < target_h; ++y) {
            for (int x = 0; x < target_w; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < ay.weight[y].size(); ++k) acc += ay.weight[y][k] * tmp.at(c, ay.first[y] + static_cast<int>(k), x);
                out.at(c, y, x) = acc;
            }
        }
    }
    return out;
}

DatasetRecord downsample_record(const DatasetRecord& r, int target_w, int target_h) {
    if (target_w <= 0 || target_h <= 0) fail(Errc::degenerate, "downsample target must be positive");
    const int ow = r.image.width(), oh = r.image.height();
    if (target_w == ow && target_h == oh) return r;
    const double kx = static_cast<double>(target_w) / ow;
    const double ky = static_cast<double>(target_h) / oh;
    auto scale_set = [&](const LandmarkSet& s) {
        LandmarkSet o;
        o.frame = {target_w, target_h};
        o.spacing_mm = {s.spacing_mm.sx / kx, s.spacing_mm.sy / ky};
        for (const auto& p : s.points) o.points.push_back({p.x * kx, p.y * ky});
        return o;
    };
    DatasetRecord out;
    out.id = r.id;
    out.image.pixels = area_resize(r.image.pixels, target_w, target_h);
    for (const auto& a : r.annotations) out.annotations.push_back(scale_set(a));
    out.ground_truth = scale_set(r.ground_truth);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

int synth_structure_radius(int height, int width) { return std::max(3, std::min(height, width) / 16); }

double synth_structure_profile(int kind, double dx, double dy, int radius) {
    const double r = radius;
    // Soft coverage of a band of half-width hw around a distance field value.
    auto band = [](double dist, double hw) { return std::clamp(hw + 0.5 - std::abs(dist), 0.0, 1.0); };
    const double d = std::hypot(dx, dy);
    double v = 0.0;
    switch (kind % 4) {
    case 0: v = band(d - (r - 0.5), 0.75); break;                        // ring
    case 1: v = std::clamp(r + 0.5 - d, 0.0, 1.0); break;                // disk
    case 2:                                                              // plus
        v = std::max(band(dx, 0.6) * (std::abs(dy) <= r ? 1.0 : 0.0), band(dy, 0.6) * (std::abs(dx) <= r ? 1.0 : 0.0));
        break;
    default: v = band(std::max(std::abs(dx), std::abs(dy)) - (r - 0.5), 0.6); break; // square outline
    }
    if ((kind / 8) % 2 == 1) v = std::max(v, std::clamp(1.5 - d, 0.0, 1.0)); // centre dot
    return (kind + kind / 4) % 2 == 0 ? v : -v;
}

std::vector<DatasetRecord> synth_corpus(const SynthOptions& o) {
    if (o.height < 32 || o.width < 32) fail(Errc::invalid_range, "synthetic images need h, w >= 32");
    if (o.landmarks < 1) fail(Errc::invalid_range, "synthetic corpus needs at least one landmark");
    if (o.count < 0) fail(Errc::invalid_range, "synthetic corpus count must be >= 0");

    const int radius = synth_structure_radius(o.height, o.width);
    const int margin = radius + 2;
    const double min_dist = 2.0 * radius + 2.0;
    Rng rng(o.seed);
    std::vector<DatasetRecord> out;
    out.reserve(o.count);
    for (int n = 0; n < o.count; ++n) {
        DatasetRecord r;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth_%04d", n);
        r.id = idbuf;

        // Smooth background: low-pass filtered noise on a random base level.
        Tensor img(1, o.height, o.width);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& v : img.data) v = normal(rng);
        const double bg_sigma = std::min(o.height, o.width) / 10.0;
        blur_in_place(img, bg_sigma, 2 * static_cast<int>(std::ceil(3.0 * bg_sigma)) + 1);
        double sd = 0.0;
        for (double v : img.data) sd += v * v;
        sd = std::sqrt(sd / static_cast<double>(img.size()));
        const double base = std::uniform_real_distribution<double>(-0.4, 0.0)(rng);
        for (auto& v : img.data) v = base + 0.15 * v / sd;

        std::vector<Point> centers;
        std::uniform_int_distribution<int> ux(margin, o.width - 1 - margin);
        std::uniform_int_distribution<int> uy(margin, o.height - 1 - margin);
        for (int k = 0; k < o.landmarks; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
                const Point c{static_cast<double>(ux(rng)), static_cast<double>(uy(rng))};
                placed = std::all_of(centers.begin(), centers.end(), [&](const Point& q) {
                    return std::hypot(c.x - q.x, c.y - q.y) >= min_dist;
                });
                if (placed) centers.push_back(c);
            }
            if (!placed) fail(Errc::cannot_place, "cannot place landmark " + std::to_string(k) + " in " + r.id);
        }

        std::uniform_real_distribution<double> amp_jitter(0.6, 0.9);
        for (int k = 0; k < o.landmarks; ++k) {
            const double amp = amp_jitter(rng);
            const Point c = centers[k];
            for (int y = std::max(0, static_cast<int>(c.y) - radius - 2); y <= std::min(o.height - 1, static_cast<int>(c.y) + radius + 2); ++y) {
                for (int x = std::max(0, static_cast<int>(c.x) - radius - 2); x <= std::min(o.width - 1, static_cast<int>(c.x) + radius + 2); ++x) {
                    img.at(0, y, x) += amp * synth_structure_profile(k, x - c.x, y - c.y, radius);
                }
            }
        }
        for (auto& v : img.data) v = std::clamp(v + 0.03 * normal(rng), -1.0, 1.0);

        r.image.pixels = std::move(img);
        r.ground_truth = LandmarkSet{centers, Frame{o.width, o.height}, o.spacing};
        r.annotations = {r.ground_truth};
        out.push_back(std::move(r));
    }
    return out;
}

SplitManifest split_ids(const std::vector<DatasetRecord>& records, int train, int validation) {
    SplitManifest m;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& dst = static_cast<int>(i) < train ? m.train : static_cast<int>(i) < train + validation ? m.validation : m.test;
        dst.push_back(records[i].id);
    }
    return m;
}

void write_corpus(const CorpusLayout& layout, const std::vector<DatasetRecord>& records, const SplitManifest& manifest) {
    std::error_code ec;
    fs::create_directories(layout.images(), ec);
    if (ec) fail(Errc::io, "cannot create " + layout.images().string() + ": " + ec.message());
    fs::create_directories(layout.annotations(), ec);
    if (ec) fail(Errc::io, "cannot create " + layout.annotations().string() + ": " + ec.message());
    for (const auto& r : records) {
        write_pgm(layout.images() / (r.id + ".pgm"), r.image.pixels, 16);
        write_landmark_csv(layout.annotations() / (r.id + ".csv"), r.ground_truth.points);
    }
    write_manifest(layout.manifest(), manifest);
}

} // namespace saltpepper
