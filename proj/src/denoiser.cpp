#include "saltpepper/denoiser.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "saltpepper/error.hpp"

namespace saltpepper {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace {

// Eigen's vectorized sum peels by pointer alignment, which would make results
// depend on where the allocator put the buffer.
template <class M>
double row_sum(const M& m, Eigen::Index r) {
    const double* p = m.data() + r * m.cols();
    double s = 0.0;
    for (Eigen::Index i = 0; i < m.cols(); ++i) s += p[i];
    return s;
}

} // namespace

const char* to_string(Parameterization p) noexcept {
    return p == Parameterization::predicts_x0 ? "x0" : "eps";
}

Parameterization parse_parameterization(const std::string& s) {
    if (s == "x0" || s == "predicts_x0") return Parameterization::predicts_x0;
    if (s == "eps" || s == "predicts_eps") return Parameterization::predicts_eps;
    fail(Errc::config, "unknown parameterization '" + s + "' (expected x0 or eps)");
}

std::vector<double> sinusoidal_time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) fail(Errc::invalid_range, "time embedding dim must be even and >= 2");
    std::vector<double> e(dim);
    for (int k = 0; k < dim / 2; ++k) {
        const double freq = std::pow(10000.0, -2.0 * k / dim);
        e[2 * k] = std::sin(t * freq);
        e[2 * k + 1] = std::cos(t * freq);
    }
    return e;
}

void UNetConfig::validate() const {
    auto bad = [](const std::string& m) { fail(Errc::config, "model: " + m); };
    if (image_channels < 1) bad("image_channels must be >= 1");
    if (landmarks < 1) bad("landmarks must be >= 1");
    if (encoder.empty()) bad("encoder channel plan is empty");
    if (decoder.size() + 1 != encoder.size() && decoder.size() != encoder.size()) {
        bad("decoder plan needs encoder.size() - 1 or encoder.size() entries");
    }
    if (groups < 1) bad("groups must be >= 1");
    for (int c : encoder) {
        if (c < 1 || c % groups != 0) bad("encoder channels must be positive multiples of groups");
    }
    for (int c : decoder) {
        if (c < 1 || c % groups != 0) bad("decoder channels must be positive multiples of groups");
    }
    if (time_dim < 2 || time_dim % 2 != 0) bad("time_dim must be even and >= 2");
}

UNetConfig UNetConfig::full_scale_preset(int image_channels, int landmarks) {
    UNetConfig cfg;
    cfg.image_channels = image_channels;
    cfg.landmarks = landmarks;
    cfg.encoder = {32, 64, 128, 256, 256, 512};
    cfg.decoder = {256, 128, 64, 64, 32, 32};
    cfg.groups = 4;
    cfg.time_dim = 128;
    return cfg;
}

// ---------------------------------------------------------------------------
// Layer primitives

namespace {

constexpr double kNormEps = 1e-5;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void im2col3(const Tensor& in, MatRM& col) {
    const int C = in.channels, H = in.height, W = in.width;
    const auto hw = static_cast<Eigen::Index>(in.plane());
    col.resize(static_cast<Eigen::Index>(C) * 9, hw);
    for (int c = 0; c < C; ++c) {
        const double* src = in.data.data() + c * in.plane();
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* dst = col.data() + (static_cast<Eigen::Index>(c) * 9 + ky * 3 + kx) * hw;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + ky - 1;
                    double* drow = dst + static_cast<std::size_t>(y) * W;
                    if (sy < 0 || sy >= H) {
                        std::fill(drow, drow + W, 0.0);
                        continue;
                    }
                    const double* srow = src + static_cast<std::size_t>(sy) * W;
                    for (int x = 0; x < W; ++x) {
                        const int sx = x + kx - 1;
                        drow[x] = (sx < 0 || sx >= W) ? 0.0 : srow[sx];
                    }
                }
            }
        }
    }
}

// Adds the image-space adjoint of im2col3 into `out`.
void col2im3(const MatRM& dcol, Tensor& out) {
    const int C = out.channels, H = out.height, W = out.width;
    const auto hw = static_cast<Eigen::Index>(out.plane());
    for (int c = 0; c < C; ++c) {
        double* dst = out.data.data() + c * out.plane();
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* src = dcol.data() + (static_cast<Eigen::Index>(c) * 9 + ky * 3 + kx) * hw;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= H) continue;
                    const double* srow = src + static_cast<std::size_t>(y) * W;
                    double* drow = dst + static_cast<std::size_t>(sy) * W;
                    for (int x = 0; x < W; ++x) {
                        const int sx = x + kx - 1;
                        if (sx >= 0 && sx < W) drow[sx] += srow[x];
                    }
                }
            }
        }
    }
}

Tensor avg_pool2(const Tensor& in) {
    Tensor out(in.channels, in.height / 2, in.width / 2);
    for (int c = 0; c < out.channels; ++c) {
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                out.at(c, y, x) = 0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                          in.at(c, 2 * y + 1, 2 * x) + in.at(c, 2 * y + 1, 2 * x + 1));
            }
        }
    }
    return out;
}

void avg_pool2_backward(const Tensor& dout, Tensor& din) {
    for (int c = 0; c < dout.channels; ++c) {
        for (int y = 0; y < dout.height; ++y) {
            for (int x = 0; x < dout.width; ++x) {
                const double g = 0.25 * dout.at(c, y, x);
                din.at(c, 2 * y, 2 * x) += g;
                din.at(c, 2 * y, 2 * x + 1) += g;
                din.at(c, 2 * y + 1, 2 * x) += g;
                din.at(c, 2 * y + 1, 2 * x + 1) += g;
            }
        }
    }
}

// Nearest-neighbour 2x upsampling of `in`, written as the leading channels of a
// concatenation with `skip`.
Tensor upsample_concat(const Tensor& in, const Tensor& skip) {
    Tensor out(in.channels + skip.channels, skip.height, skip.width);
    for (int c = 0; c < in.channels; ++c) {
        for (int y = 0; y < skip.height; ++y) {
            for (int x = 0; x < skip.width; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
        }
    }
    std::copy(skip.data.begin(), skip.data.end(), out.data.begin() + static_cast<long>(in.channels * out.plane()));
    return out;
}

// Splits the gradient of upsample_concat into the low-resolution input and the skip.
void upsample_concat_backward(const Tensor& dcat, Tensor& din, Tensor& dskip) {
    for (int c = 0; c < din.channels; ++c) {
        for (int y = 0; y < dcat.height; ++y) {
            for (int x = 0; x < dcat.width; ++x) din.at(c, y / 2, x / 2) += dcat.at(c, y, x);
        }
    }
    const auto offset = static_cast<std::size_t>(din.channels) * dcat.plane();
    for (std::size_t i = 0; i < dskip.size(); ++i) dskip.data[i] += dcat.data[offset + i];
}

} // namespace

// ---------------------------------------------------------------------------
// Tape

namespace detail {

struct StageCache {
    MatRM col1;
    Tensor xhat;                 // normalized conv1 output
    std::vector<double> inv_std; // per group
    Tensor a1;                   // norm output, SiLU input
    MatRM col2;
    Tensor a2;                   // conv2 output, SiLU input
    Tensor out;
};

struct TapeData {
    int t = 0;
    std::vector<double> emb;
    std::vector<StageCache> enc;
    std::vector<StageCache> dec;
    Tensor head_in;
    Tensor out;
};

} // namespace detail

Tape::Tape() = default;
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;
bool Tape::recorded() const noexcept { return data_ != nullptr; }
void Tape::clear() noexcept { data_.reset(); }

// ---------------------------------------------------------------------------
// UNet

std::size_t UNet::add_param(const std::string& name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    ParamSpec spec{name, std::move(shape), params_.size(), n};
    params_.resize(params_.size() + n, 0.0);
    manifest_.push_back(std::move(spec));
    return manifest_.back().offset;
}

UNet::Stage UNet::add_stage(const std::string& prefix, int in_ch, int out_ch) {
    Stage s;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.conv1_w = add_param(prefix + ".conv1.weight", {out_ch, in_ch, 3, 3});
    s.conv1_b = add_param(prefix + ".conv1.bias", {out_ch});
    s.norm_w = add_param(prefix + ".norm.weight", {out_ch});
    s.norm_b = add_param(prefix + ".norm.bias", {out_ch});
    s.time_w = add_param(prefix + ".time.weight", {out_ch, cfg_.time_dim});
    s.time_b = add_param(prefix + ".time.bias", {out_ch});
    s.conv2_w = add_param(prefix + ".conv2.weight", {out_ch, out_ch, 3, 3});
    s.conv2_b = add_param(prefix + ".conv2.bias", {out_ch});
    return s;
}

UNet::UNet(UNetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int L = cfg_.levels();
    int in_ch = cfg_.input_channels();
    for (int l = 0; l < L; ++l) {
        encoder_.push_back(add_stage("enc" + std::to_string(l), in_ch, cfg_.encoder[l]));
        in_ch = cfg_.encoder[l];
    }
    bottom_decoder_ = cfg_.decoder.size() == cfg_.encoder.size();
    std::size_t j = 0;
    if (bottom_decoder_) {
        decoder_.push_back(add_stage("dec0", in_ch, cfg_.decoder[0]));
        in_ch = cfg_.decoder[0];
        j = 1;
    }
    for (int l = L - 2; l >= 0; --l, ++j) {
        decoder_.push_back(add_stage("dec" + std::to_string(j), in_ch + cfg_.encoder[l], cfg_.decoder[j]));
        in_ch = cfg_.decoder[j];
    }
    head_w_ = add_param("head.weight", {cfg_.landmarks, in_ch, 1, 1});
    head_b_ = add_param("head.bias", {cfg_.landmarks});
}

void UNet::initialize(Rng& rng) {
    auto fill_uniform = [&](std::size_t offset, std::size_t n, int fan_in) {
        const double bound = std::sqrt(1.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < n; ++i) params_[offset + i] = u(rng);
    };
    std::fill(params_.begin(), params_.end(), 0.0);
    auto init_stage = [&](const Stage& s) {
        fill_uniform(s.conv1_w, static_cast<std::size_t>(s.out_channels) * s.in_channels * 9, s.in_channels * 9);
        for (int c = 0; c < s.out_channels; ++c) params_[s.norm_w + c] = 1.0;
        fill_uniform(s.time_w, static_cast<std::size_t>(s.out_channels) * cfg_.time_dim, cfg_.time_dim);
        fill_uniform(s.conv2_w, static_cast<std::size_t>(s.out_channels) * s.out_channels * 9, s.out_channels * 9);
    };
    for (const auto& s : encoder_) init_stage(s);
    for (const auto& s : decoder_) init_stage(s);
    const int head_in = decoder_.empty() ? cfg_.encoder.back() : decoder_.back().out_channels;
    fill_uniform(head_w_, static_cast<std::size_t>(cfg_.landmarks) * head_in, head_in);
}

namespace {

struct StageOps {
    const std::vector<double>& p;
    int groups;
    const std::vector<double>& emb;

    void conv3(const Tensor& in, std::size_t w_off, std::size_t b_off, int out_ch, MatRM& col, Tensor& out) const {
        im2col3(in, col);
        out = Tensor(out_ch, in.height, in.width);
        CMapRM w(p.data() + w_off, out_ch, static_cast<Eigen::Index>(in.channels) * 9);
        MapRM o(out.data.data(), out_ch, static_cast<Eigen::Index>(out.plane()));
        o.noalias() = w * col;
        for (int c = 0; c < out_ch; ++c) o.row(c).array() += p[b_off + c];
    }

    void forward(const UNet::Stage& s, const Tensor& in, detail::StageCache& cache) const {
        Tensor conv1;
        conv3(in, s.conv1_w, s.conv1_b, s.out_channels, cache.col1, conv1);

        // Group normalization with per-channel affine.
        const int C = s.out_channels;
        const int cpg = C / groups;
        const std::size_t hw = conv1.plane();
        const double m = static_cast<double>(cpg) * hw;
        cache.xhat = Tensor(C, conv1.height, conv1.width);
        cache.inv_std.assign(groups, 0.0);
        cache.a1 = Tensor(C, conv1.height, conv1.width);
        for (int g = 0; g < groups; ++g) {
            const double* x = conv1.data.data() + g * cpg * hw;
            double mean = 0.0;
            for (std::size_t i = 0; i < cpg * hw; ++i) mean += x[i];
            mean /= m;
            double var = 0.0;
            for (std::size_t i = 0; i < cpg * hw; ++i) var += (x[i] - mean) * (x[i] - mean);
            var /= m;
            const double inv = 1.0 / std::sqrt(var + kNormEps);
            cache.inv_std[g] = inv;
            double* xh = cache.xhat.data.data() + g * cpg * hw;
            for (std::size_t i = 0; i < cpg * hw; ++i) xh[i] = (x[i] - mean) * inv;
        }
        for (int c = 0; c < C; ++c) {
            const double gamma = p[s.norm_w + c], beta = p[s.norm_b + c];
            const auto xh = cache.xhat.channel(c);
            auto a = cache.a1.channel(c);
            for (std::size_t i = 0; i < hw; ++i) a[i] = gamma * xh[i] + beta;
        }

        // SiLU, then the additive time projection.
        Tensor h(C, conv1.height, conv1.width);
        const int td = static_cast<int>(emb.size());
        for (int c = 0; c < C; ++c) {
            double shift = p[s.time_b + c];
            for (int k = 0; k < td; ++k) shift += p[s.time_w + static_cast<std::size_t>(c) * td + k] * emb[k];
            const auto a = cache.a1.channel(c);
            auto hc = h.channel(c);
            for (std::size_t i = 0; i < hw; ++i) hc[i] = a[i] * sigmoid(a[i]) + shift;
        }

        conv3(h, s.conv2_w, s.conv2_b, C, cache.col2, cache.a2);
        cache.out = Tensor(C, conv1.height, conv1.width);
        for (std::size_t i = 0; i < cache.out.size(); ++i) {
            const double a = cache.a2.data[i];
            cache.out.data[i] = a * sigmoid(a);
        }
    }

    // Returns d(input) when want_input is set; accumulates parameter gradients.
    Tensor backward(const UNet::Stage& s, const detail::StageCache& cache, const Tensor& dout, std::span<double> gp,
                    int in_h, int in_w, bool want_input) const {
        const int C = s.out_channels;
        const std::size_t hw = dout.plane();
        const auto hwi = static_cast<Eigen::Index>(hw);

        MatRM da2(C, hwi);
        for (std::size_t i = 0; i < dout.size(); ++i) {
            const double a = cache.a2.data[i];
            const double sg = sigmoid(a);
            da2.data()[i] = dout.data[i] * sg * (1.0 + a * (1.0 - sg));
        }
        {
            MapRM gw(gp.data() + s.conv2_w, C, static_cast<Eigen::Index>(C) * 9);
            gw.noalias() += da2 * cache.col2.transpose();
            for (int c = 0; c < C; ++c) gp[s.conv2_b + c] += row_sum(da2, c);
        }
        CMapRM w2(p.data() + s.conv2_w, C, static_cast<Eigen::Index>(C) * 9);
        MatRM dcol2 = w2.transpose() * da2;
        Tensor dh(C, dout.height, dout.width);
        col2im3(dcol2, dh);

        const int td = static_cast<int>(emb.size());
        Tensor da1(C, dout.height, dout.width);
        for (int c = 0; c < C; ++c) {
            const auto g = dh.channel(c);
            double total = 0.0;
            for (std::size_t i = 0; i < hw; ++i) total += g[i];
            gp[s.time_b + c] += total;
            for (int k = 0; k < td; ++k) gp[s.time_w + static_cast<std::size_t>(c) * td + k] += total * emb[k];
            const auto a = cache.a1.channel(c);
            auto d = da1.channel(c);
            for (std::size_t i = 0; i < hw; ++i) {
                const double sg = sigmoid(a[i]);
                d[i] = g[i] * sg * (1.0 + a[i] * (1.0 - sg));
            }
        }

        // Group-norm adjoint.
        const int cpg = C / groups;
        const double m = static_cast<double>(cpg) * hw;
        MatRM dconv1(C, hwi);
        std::vector<double> dxhat(cpg * hw);
        for (int g = 0; g < groups; ++g) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (int cc = 0; cc < cpg; ++cc) {
                const int c = g * cpg + cc;
                const double gamma = p[s.norm_w + c];
                const auto d = da1.channel(c);
                const auto xh = cache.xhat.channel(c);
                double gsum = 0.0, bsum = 0.0;
                for (std::size_t i = 0; i < hw; ++i) {
                    gsum += d[i] * xh[i];
                    bsum += d[i];
                    const double v = d[i] * gamma;
                    dxhat[cc * hw + i] = v;
                    sum_d += v;
                    sum_dx += v * xh[i];
                }
                gp[s.norm_w + c] += gsum;
                gp[s.norm_b + c] += bsum;
            }
            const double inv = cache.inv_std[g];
            const double* xh = cache.xhat.data.data() + g * cpg * hw;
            double* dst = dconv1.data() + g * cpg * hw;
            for (std::size_t i = 0; i < cpg * hw; ++i) {
                dst[i] = inv / m * (m * dxhat[i] - sum_d - xh[i] * sum_dx);
            }
        }

        {
            MapRM gw(gp.data() + s.conv1_w, C, static_cast<Eigen::Index>(s.in_channels) * 9);
            gw.noalias() += dconv1 * cache.col1.transpose();
            for (int c = 0; c < C; ++c) gp[s.conv1_b + c] += row_sum(dconv1, c);
        }
        if (!want_input) return {};
        CMapRM w1(p.data() + s.conv1_w, C, static_cast<Eigen::Index>(s.in_channels) * 9);
        MatRM dcol1 = w1.transpose() * dconv1;
        Tensor din(s.in_channels, in_h, in_w);
        col2im3(dcol1, din);
        return din;
    }
};

} // namespace

Tensor UNet::forward(const Tensor& input, int t, Tape* tape) const {
    const int L = cfg_.levels();
    if (input.channels != cfg_.input_channels()) {
        fail(Errc::shape_mismatch, "denoiser expects " + std::to_string(cfg_.input_channels()) + " input channels, got " +
                                       std::to_string(input.channels));
    }
    const int div = 1 << (L - 1);
    if (input.height % div != 0 || input.width % div != 0 || input.height == 0 || input.width == 0) {
        fail(Errc::shape_mismatch, "denoiser input " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                                       " is not divisible by " + std::to_string(div));
    }

    auto data = std::make_unique<detail::TapeData>();
    data->t = t;
    data->emb = sinusoidal_time_embedding(t, cfg_.time_dim);
    data->enc.resize(encoder_.size());
    data->dec.resize(decoder_.size());
    const StageOps ops{params_, cfg_.groups, data->emb};

    for (int l = 0; l < L; ++l) {
        if (l == 0) {
            ops.forward(encoder_[0], input, data->enc[0]);
        } else {
            ops.forward(encoder_[l], avg_pool2(data->enc[l - 1].out), data->enc[l]);
        }
    }
    const Tensor* h = &data->enc[L - 1].out;
    std::size_t j = 0;
    if (bottom_decoder_) {
        ops.forward(decoder_[0], *h, data->dec[0]);
        h = &data->dec[0].out;
        j = 1;
    }
    for (int l = L - 2; l >= 0; --l, ++j) {
        ops.forward(decoder_[j], upsample_concat(*h, data->enc[l].out), data->dec[j]);
        h = &data->dec[j].out;
    }

    Tensor out(cfg_.landmarks, input.height, input.width);
    {
        CMapRM w(params_.data() + head_w_, cfg_.landmarks, h->channels);
        CMapRM x(h->data.data(), h->channels, static_cast<Eigen::Index>(h->plane()));
        MapRM o(out.data.data(), cfg_.landmarks, static_cast<Eigen::Index>(out.plane()));
        o.noalias() = w * x;
        for (int c = 0; c < cfg_.landmarks; ++c) o.row(c).array() += params_[head_b_ + c];
    }
    if (cfg_.parameterization == Parameterization::predicts_x0) {
        for (auto& v : out.data) v = std::tanh(v);
    }

    if (tape != nullptr) {
        data->head_in = *h;
        data->out = out;
        tape->data_ = std::move(data);
    }
    return out;
}

std::vector<double> UNet::backward(const Tape& tape, const Tensor& grad_out) const {
    std::vector<double> grads(params_.size(), 0.0);
    backward_accumulate(tape, grad_out, grads);
    return grads;
}

void UNet::backward_accumulate(const Tape& tape, const Tensor& grad_out, std::span<double> grads) const {
    if (!tape.recorded()) fail(Errc::backward_before_forward, "backward called without a recorded forward pass");
    if (grads.size() != params_.size()) fail(Errc::shape_mismatch, "gradient buffer does not match parameter count");
    const auto& data = *tape.data_;
    require_same_shape(grad_out, data.out, "backward output gradient");
    const int L = cfg_.levels();
    const StageOps ops{params_, cfg_.groups, data.emb};

    Tensor dz = grad_out;
    if (cfg_.parameterization == Parameterization::predicts_x0) {
        for (std::size_t i = 0; i < dz.size(); ++i) dz.data[i] *= 1.0 - data.out.data[i] * data.out.data[i];
    }
    const Tensor& hin = data.head_in;
    Tensor dh(hin.channels, hin.height, hin.width);
    {
        const auto hw = static_cast<Eigen::Index>(hin.plane());
        CMapRM dzm(dz.data.data(), cfg_.landmarks, hw);
        CMapRM x(hin.data.data(), hin.channels, hw);
        MapRM gw(grads.data() + head_w_, cfg_.landmarks, hin.channels);
        gw.noalias() += dzm * x.transpose();
        for (int c = 0; c < cfg_.landmarks; ++c) grads[head_b_ + c] += row_sum(dzm, c);
        CMapRM w(params_.data() + head_w_, cfg_.landmarks, hin.channels);
        MapRM dhm(dh.data.data(), hin.channels, hw);
        dhm.noalias() = w.transpose() * dzm;
    }

    std::vector<Tensor> dskip(L);
    for (int l = 0; l < L; ++l) {
        const auto& o = data.enc[l].out;
        dskip[l] = Tensor(o.channels, o.height, o.width);
    }

    // Decoder stages in reverse order of execution.
    const std::size_t first_up = bottom_decoder_ ? 1 : 0;
    for (std::size_t j = decoder_.size(); j-- > first_up;) {
        const int l = L - 2 - static_cast<int>(j - first_up);
        const auto& skip = data.enc[l].out;
        Tensor dcat = ops.backward(decoder_[j], data.dec[j], dh, grads, skip.height, skip.width, true);
        const Tensor& low = j == first_up ? (bottom_decoder_ ? data.dec[0].out : data.enc[L - 1].out) : data.dec[j - 1].out;
        Tensor dlow(low.channels, low.height, low.width);
        upsample_concat_backward(dcat, dlow, dskip[l]);
        dh = std::move(dlow);
    }
    if (bottom_decoder_) {
        const auto& b = data.enc[L - 1].out;
        dh = ops.backward(decoder_[0], data.dec[0], dh, grads, b.height, b.width, true);
    }
    for (std::size_t i = 0; i < dh.size(); ++i) dskip[L - 1].data[i] += dh.data[i];

    for (int l = L - 1; l >= 0; --l) {
        const bool need_input = l > 0;
        const int in_h = l == 0 ? data.enc[0].out.height : data.enc[l].out.height;
        const int in_w = l == 0 ? data.enc[0].out.width : data.enc[l].out.width;
        Tensor din = ops.backward(encoder_[l], data.enc[l], dskip[l], grads, in_h, in_w, need_input);
        if (need_input) avg_pool2_backward(din, dskip[l - 1]);
    }
}

HeatmapStack UNet::predict(const ReferenceImage& y, const HeatmapStack& x_t, int t) const {
    Tensor out = cfg_.heatmap_input ? forward(concat_condition(y, x_t), t) : forward(y.pixels, t);
    return {std::move(out), ScaleTag::raw};
}

// ---------------------------------------------------------------------------
// Parameterization conversions

namespace {

void check_nondegenerate(double ab, double one_minus) {
    if (ab < 1e-12 || one_minus < 1e-12) fail(Errc::degenerate, "alpha_bar too close to 0 or 1 for conversion");
}

} // namespace

Tensor eps_to_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const Schedule& sched) {
    require_same_shape(x_t, eps_hat, "eps_to_x0");
    const double ab = sched.alpha_bar(t);
    if (ab < 1e-12) fail(Errc::degenerate, "alpha_bar below 1e-12 in eps_to_x0");
    const double s = std::sqrt(ab), n = std::sqrt(1.0 - ab);
    Tensor out(x_t.channels, x_t.height, x_t.width);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (x_t.data[i] - eps_hat.data[i] * n) / s;
    return out;
}

Tensor x0_to_eps(const Tensor& x_t, const Tensor& x0_hat, int t, const Schedule& sched) {
    require_same_shape(x_t, x0_hat, "x0_to_eps");
    const double ab = sched.alpha_bar(t);
    check_nondegenerate(ab, 1.0 - ab);
    const double s = std::sqrt(ab), n = std::sqrt(1.0 - ab);
    Tensor out(x_t.channels, x_t.height, x_t.width);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (x_t.data[i] - x0_hat.data[i] * s) / n;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

} // namespace

std::string encode_model_config(const UNetConfig& c) {
    std::ostringstream os;
    os << "image_channels=" << c.image_channels << "\n"
       << "landmarks=" << c.landmarks << "\n"
       << "heatmap_input=" << (c.heatmap_input ? 1 : 0) << "\n"
       << "encoder=" << join_ints(c.encoder) << "\n"
       << "decoder=" << join_ints(c.decoder) << "\n"
       << "groups=" << c.groups << "\n"
       << "time_dim=" << c.time_dim << "\n"
       << "parameterization=" << to_string(c.parameterization) << "\n";
    return os.str();
}

UNetConfig decode_model_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) fail(Errc::checkpoint_mismatch, std::string("checkpoint config lacks ") + key);
        return it->second;
    };
    UNetConfig c;
    try {
        c.image_channels = std::stoi(get("image_channels"));
        c.landmarks = std::stoi(get("landmarks"));
        c.heatmap_input = std::stoi(get("heatmap_input")) != 0;
        c.encoder = split_ints(get("encoder"));
        c.decoder = split_ints(get("decoder"));
        c.groups = std::stoi(get("groups"));
        c.time_dim = std::stoi(get("time_dim"));
    } catch (const std::logic_error&) {
        fail(Errc::checkpoint_mismatch, "checkpoint config block is malformed");
    }
    c.parameterization = parse_parameterization(get("parameterization"));
    return c;
}

void write_checkpoint(const std::filesystem::path& path, const UNet& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(Errc::io, "cannot open " + path.string() + " for writing");
    os.write("SPCK", 4);
    detail::put_u32(os, 1);
    detail::put_string(os, encode_model_config(net.config()));
    detail::put_u32(os, static_cast<std::uint32_t>(net.manifest().size()));
    for (const auto& spec : net.manifest()) {
        detail::put_string(os, spec.name);
        detail::put_u32(os, static_cast<std::uint32_t>(spec.shape.size()));
        for (int d : spec.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    }
    for (double v : net.parameters()) detail::put_f32(os, static_cast<float>(v));
    if (!os) fail(Errc::io, "failed writing checkpoint " + path.string());
}

UNet read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(Errc::missing_file, "cannot open checkpoint " + path.string());
    detail::expect_magic(is, "SPCK");
    if (detail::get_u32(is) != 1) fail(Errc::checkpoint_mismatch, "unsupported checkpoint version");
    UNet net(decode_model_config(detail::get_string(is)));
    const auto count = detail::get_u32(is);
    if (count != net.manifest().size()) fail(Errc::checkpoint_mismatch, "checkpoint manifest size differs from model");
    for (const auto& spec : net.manifest()) {
        const auto name = detail::get_string(is);
        const auto rank = detail::get_u32(is);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(detail::get_u32(is));
        if (name != spec.name || shape != spec.shape) {
            fail(Errc::checkpoint_mismatch, "checkpoint tensor '" + name + "' does not match model tensor '" + spec.name + "'");
        }
    }
    for (auto& v : net.parameters()) v = detail::get_f32(is);
    return net;
}

} // namespace saltpepper
