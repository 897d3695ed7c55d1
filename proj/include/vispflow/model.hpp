#pragma once

#include <cassert>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vispflow/autograd.hpp"
#include "vispflow/canvas.hpp"
#include "vispflow/dataset.hpp"
#include "vispflow/errors.hpp"
#include "vispflow/flow.hpp"
#include "vispflow/rng.hpp"
#include "vispflow/tensor.hpp"

namespace vispflow {

struct ModelConfig {
    int image_side{64};
    int patch{8};
    int width{64};      // latent channel count D
    int enc_width{96};  // visual encoder channel count
    int layers{2};
    int heads{4};
    int time_embed_dim{128};
    double sigma_min{1e-3};
    double beta_kld{1e-2};
    double beta_clip{1.0};
    double p_drop{0.1};
    double cfg_scale{7.0};
    int sampler_steps{50};
    double tau_init{0.07};
    bool tau_frozen{false};

    int tokens() const { return (image_side / patch) * (image_side / patch); }
    int patch_dim() const { return 3 * patch * patch; }
    // Channel count the codec works in; patches are zero-padded up to this
    // when the latent width exceeds the raw patch dimension.
    int codec_dim() const { return std::max(patch_dim(), width); }
    // The linear patch codec is exactly invertible iff the orthonormal map
    // is square, i.e. width >= patch_dim.
    bool codec_exact() const { return width >= patch_dim(); }

    void validate() const {
        if (image_side <= 0 || patch <= 0 || image_side % patch != 0)
            throw contract_error("model config: patch must divide image side");
        if (width <= 0 || width % heads != 0)
            throw contract_error("model config: width must be divisible by heads");
        if (sigma_min < 0.0 || sigma_min >= 1.0)
            throw contract_error("model config: sigma_min must be in [0, 1)");
        if (beta_kld < 0.0 || beta_clip < 0.0)
            throw contract_error("model config: loss weights must be >= 0");
        if (layers < 1) throw contract_error("model config: need at least one layer");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw contract_error("model config: time embedding dim must be even and >= 2");
    }
};

using VarMap = std::map<std::string, Var>;

namespace detail {

// Orthonormal columns via Gram-Schmidt with re-orthogonalization; square
// input gives a fully orthogonal matrix.
inline Tensor orthonormal_columns(int rows, int cols, Rng& rng) {
    Tensor m = Tensor::zeros({rows, cols});
    for (double& v : m.data) v = rng.normal();
    for (int j = 0; j < cols; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (int k = 0; k < j; ++k) {
                double dot = 0.0;
                for (int i = 0; i < rows; ++i) dot += m.at(i, j) * m.at(i, k);
                for (int i = 0; i < rows; ++i) m.at(i, j) -= dot * m.at(i, k);
            }
        }
        double norm = 0.0;
        for (int i = 0; i < rows; ++i) norm += m.at(i, j) * m.at(i, j);
        norm = std::sqrt(norm);
        for (int i = 0; i < rows; ++i) m.at(i, j) /= norm;
    }
    return m;
}

inline Tensor normal_init(Rng& rng, Shape shape, double std) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = std * rng.normal();
    return t;
}

}  // namespace detail

// Sinusoidal embedding of t in [0, 1], shape (1 x dim).
inline Tensor time_embedding(double t, int dim) {
    Tensor e = Tensor::zeros({1, dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        const double angle = 1000.0 * t * freq;
        e.data[static_cast<std::size_t>(2 * i)] = std::sin(angle);
        e.data[static_cast<std::size_t>(2 * i + 1)] = std::cos(angle);
    }
    return e;
}

// Plain-tensor posterior output.
struct Posterior {
    Tensor mu;     // N x D
    Tensor sigma;  // N x D, strictly positive
};

// ------------------------------------------------------- standalone losses
// Plain-tensor loss formulas; the training path re-expresses them as tape
// graphs so the gradients come from the same definitions.

inline double kld_loss(const Posterior& p) {
    check_same_shape(p.mu, p.sigma, "kld_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < p.mu.numel(); ++i) {
        const double mu = p.mu.data[i];
        const double sig = p.sigma.data[i];
        if (sig <= 0.0) throw contract_error("kld_loss: sigma must be > 0");
        s += 0.5 * (mu * mu + sig * sig - 1.0 - std::log(sig * sig));
    }
    return s / static_cast<double>(p.mu.numel());
}

// Symmetric InfoNCE over flattened, L2-normalized latents with diagonal
// targets; logits are cosine / tau.
inline double clip_contrastive_loss(const std::vector<Tensor>& z_ti, const std::vector<Tensor>& z_i,
                                    double tau) {
    const std::size_t b = z_ti.size();
    if (b == 0 || z_i.size() != b) throw contract_error("clip loss: batch sides must match");
    if (tau <= 0.0) throw contract_error("clip loss: tau must be > 0");
    const auto normalize = [](const Tensor& t) {
        std::vector<double> v = t.data;
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n == 0.0) throw contract_error("clip loss: zero-norm latent");
        for (double& x : v) x /= n;
        return v;
    };
    std::vector<std::vector<double>> a, c;
    for (std::size_t i = 0; i < b; ++i) {
        a.push_back(normalize(z_ti[i]));
        c.push_back(normalize(z_i[i]));
    }
    std::vector<std::vector<double>> logits(b, std::vector<double>(b, 0.0));
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < a[i].size(); ++k) dot += a[i][k] * c[j][k];
            logits[i][j] = dot / tau;
        }
    const auto ce_rows = [&](bool transpose) {
        double total = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < b; ++j) mx = std::max(mx, transpose ? logits[j][i] : logits[i][j]);
            double lse = 0.0;
            for (std::size_t j = 0; j < b; ++j)
                lse += std::exp((transpose ? logits[j][i] : logits[i][j]) - mx);
            total += mx + std::log(lse) - logits[i][i];
        }
        return total / static_cast<double>(b);
    };
    return 0.5 * (ce_rows(false) + ce_rows(true));
}

// --------------------------------------------------------------- the model

// Flow-matching transformer over instruction latents with dual-path
// spatially-adaptive modulation: a self-attention trunk, plus a gated
// cross-attention increment from the source-image latent that a binary task
// indicator switches on for editing inputs.
class FlowModel {
public:
    ModelConfig cfg;
    ParamSet params;

    FlowModel() = default;

    static FlowModel init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        FlowModel m;
        m.cfg = cfg;
        Rng rng(seed);
        const int n = cfg.tokens();
        const int d = cfg.width;
        const int de = cfg.enc_width;
        const int pd = cfg.patch_dim();
        auto& p = m.params;

        p.add("enc.patch.w", detail::normal_init(rng, {pd, de}, 1.0 / std::sqrt(pd)));
        p.add("enc.patch.b", Tensor::zeros({de}));
        p.add("enc.pos", detail::normal_init(rng, {n, de}, 0.02));
        p.add("enc.proj.w1", detail::normal_init(rng, {de, de}, 1.0 / std::sqrt(de)));
        p.add("enc.proj.b1", Tensor::zeros({de}));
        p.add("enc.proj.w2", detail::normal_init(rng, {de, de}, 1.0 / std::sqrt(de)));
        p.add("enc.proj.b2", Tensor::zeros({de}));

        Tensor tok = Tensor::identity(n);
        for (double& v : tok.data) v += 0.02 * rng.normal();
        p.add("comp.tok.w", std::move(tok));
        p.add("comp.feat.w", detail::normal_init(rng, {de, d}, 1.0 / std::sqrt(de)));
        p.add("comp.feat.b", Tensor::zeros({d}));

        p.add("post.mu.w", detail::normal_init(rng, {d, d}, 1.0 / std::sqrt(d)));
        p.add("post.mu.b", Tensor::zeros({d}));
        p.add("post.logsig.w", Tensor::zeros({d, d}));
        p.add("post.logsig.b", Tensor::zeros({d}));

        p.add("codec.p", detail::orthonormal_columns(cfg.codec_dim(), d, rng), /*trainable=*/false);

        for (int l = 0; l < cfg.layers; ++l) {
            const std::string b = "blk" + std::to_string(l) + ".";
            p.add(b + "ln1.g", Tensor::full({d}, 1.0));
            p.add(b + "ln1.b", Tensor::zeros({d}));
            p.add(b + "attn.wq", detail::normal_init(rng, {d, d}, 1.0 / std::sqrt(d)));
            p.add(b + "attn.wk", detail::normal_init(rng, {d, d}, 1.0 / std::sqrt(d)));
            p.add(b + "attn.wv", detail::normal_init(rng, {d, d}, 1.0 / std::sqrt(d)));
            p.add(b + "attn.wo", detail::normal_init(rng, {d, d}, 1.0 / std::sqrt(d)));
            p.add(b + "cross.wq", detail::normal_init(rng, {d, d}, 1.0 / std::sqrt(d)));
            p.add(b + "cross.wk", detail::normal_init(rng, {d, d}, 1.0 / std::sqrt(d)));
            p.add(b + "cross.wv", detail::normal_init(rng, {d, d}, 1.0 / std::sqrt(d)));
            p.add(b + "gate.w1", detail::normal_init(rng, {2 * d, d}, 1.0 / std::sqrt(2 * d)));
            p.add(b + "gate.b1", Tensor::zeros({d}));
            p.add(b + "gate.w2", Tensor::zeros({d, 1}));
            p.add(b + "gate.b2", Tensor::zeros({1}));
        }

        p.add("time.w", detail::normal_init(rng, {cfg.time_embed_dim, d},
                                            1.0 / std::sqrt(cfg.time_embed_dim)));
        p.add("time.b", Tensor::zeros({d}));
        p.add("head.w", Tensor::zeros({d, d}));
        p.add("head.b", Tensor::zeros({d}));
        p.add("clip.tau", Tensor::scalar(cfg.tau_init), !cfg.tau_frozen);
        return m;
    }

    // Drops the edit-path parameters entirely; with the indicator at 0 the
    // remaining network must behave bit-identically to the full one.
    FlowModel excised() const {
        FlowModel m;
        m.cfg = cfg;
        for (const auto& [path, e] : params.entries) {
            if (path.find(".cross.") != std::string::npos || path.find(".gate.") != std::string::npos)
                continue;
            m.params.add(path, e.value, e.trainable);
        }
        return m;
    }

    // --------------------------------------------------- patch codec (frozen)

    // N x patch_dim rows in [-1, 1]; value 128 maps exactly to 0.
    Tensor patchify(const Canvas& image) const {
        if (image.width != cfg.image_side || image.height != cfg.image_side)
            throw dim_error("patchify: canvas does not match configured size");
        const int g = cfg.image_side / cfg.patch;
        Tensor out = Tensor::zeros({cfg.tokens(), cfg.patch_dim()});
        int row = 0;
        for (int py = 0; py < g; ++py) {
            for (int px = 0; px < g; ++px, ++row) {
                int col = 0;
                for (int dy = 0; dy < cfg.patch; ++dy) {
                    for (int dx = 0; dx < cfg.patch; ++dx) {
                        const Color c = image.get(px * cfg.patch + dx, py * cfg.patch + dy);
                        out.at(row, col++) = (static_cast<double>(c.r) - 128.0) / 127.5;
                        out.at(row, col++) = (static_cast<double>(c.g) - 128.0) / 127.5;
                        out.at(row, col++) = (static_cast<double>(c.b) - 128.0) / 127.5;
                    }
                }
            }
        }
        return out;
    }

    Canvas unpatchify(const Tensor& patches) const {
        const int g = cfg.image_side / cfg.patch;
        Canvas image(cfg.image_side, cfg.image_side);
        const auto to_byte = [](double v) {
            v = std::clamp(v, -1.0, 1.0);
            const long q = std::lround(v * 127.5 + 128.0);
            return static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
        };
        int row = 0;
        for (int py = 0; py < g; ++py) {
            for (int px = 0; px < g; ++px, ++row) {
                int col = 0;
                for (int dy = 0; dy < cfg.patch; ++dy) {
                    for (int dx = 0; dx < cfg.patch; ++dx) {
                        const std::uint8_t r = to_byte(patches.at(row, col++));
                        const std::uint8_t gch = to_byte(patches.at(row, col++));
                        const std::uint8_t b = to_byte(patches.at(row, col++));
                        image.set(px * cfg.patch + dx, py * cfg.patch + dy, {r, gch, b, 255});
                    }
                }
            }
        }
        return image;
    }

    // z1 = lift(patchify(I)) P with P orthonormal; exact when square.
    Tensor encode_target(const Canvas& image) const {
        Tensor x = patchify(image);
        if (cfg.codec_dim() > cfg.patch_dim()) {
            Tensor lifted = Tensor::zeros({cfg.tokens(), cfg.codec_dim()});
            for (int i = 0; i < cfg.tokens(); ++i)
                for (int j = 0; j < cfg.patch_dim(); ++j) lifted.at(i, j) = x.at(i, j);
            x = std::move(lifted);
        }
        return matmul(x, params.at("codec.p"));
    }

    Canvas decode_target(const Tensor& z) const {
        Tensor lifted = matmul(z, transpose2d(params.at("codec.p")));
        if (cfg.codec_dim() > cfg.patch_dim()) {
            Tensor x = Tensor::zeros({cfg.tokens(), cfg.patch_dim()});
            for (int i = 0; i < cfg.tokens(); ++i)
                for (int j = 0; j < cfg.patch_dim(); ++j) x.at(i, j) = lifted.at(i, j);
            lifted = std::move(x);
        }
        return unpatchify(lifted);
    }

    // The annotated input canvas doubles as the edit-path source image.
    Tensor encode_source(const Canvas& input) const { return encode_target(input); }

    // ------------------------------------------------------- graph builders

    // Patch embedding + learned positions, then a residual two-layer MLP
    // projector: X_fuse = R + MLP(R).
    Var encode_visual(Tape& t, const VarMap& lv, const Canvas& input) const {
        Var x = t.constant(patchify(input));
        Var r = t.add(t.add_rowvec(t.matmul(x, lv.at("enc.patch.w")), lv.at("enc.patch.b")),
                      lv.at("enc.pos"));
        Var h = t.gelu(t.add_rowvec(t.matmul(r, lv.at("enc.proj.w1")), lv.at("enc.proj.b1")));
        Var mlp = t.add_rowvec(t.matmul(h, lv.at("enc.proj.w2")), lv.at("enc.proj.b2"));
        return t.add(r, mlp);
    }

    // Token-axis map then feature-axis affine map (the MLP + MLP route).
    Var compress(Tape& t, const VarMap& lv, Var x_fuse) const {
        Var tok = t.matmul(lv.at("comp.tok.w"), x_fuse);
        return t.add_rowvec(t.matmul(tok, lv.at("comp.feat.w")), lv.at("comp.feat.b"));
    }

    // Feature map only, token axis truncated; the ablation baseline.
    Var compress_truncate(Tape& t, const VarMap& lv, Var x_fuse) const {
        return t.add_rowvec(t.matmul(x_fuse, lv.at("comp.feat.w")), lv.at("comp.feat.b"));
    }

    struct PosteriorVars {
        Var mu;
        Var logsig;
    };

    PosteriorVars posterior(Tape& t, const VarMap& lv, Var x) const {
        return {t.add_rowvec(t.matmul(x, lv.at("post.mu.w")), lv.at("post.mu.b")),
                t.add_rowvec(t.matmul(x, lv.at("post.logsig.w")), lv.at("post.logsig.b"))};
    }

    // Reparameterized draw z0 = mu + sigma * eps with a fixed noise tensor.
    Var sample_z0(Tape& t, const PosteriorVars& p, const Tensor& eps) const {
        Var sigma = t.exp(p.logsig);
        return t.add(p.mu, t.mul(sigma, t.constant(eps)));
    }

    Var self_attention(Tape& t, const VarMap& lv, const std::string& prefix, Var h) const {
        const int d = cfg.width;
        const int hd = d / cfg.heads;
        Var q = t.matmul(h, lv.at(prefix + "wq"));
        Var k = t.matmul(h, lv.at(prefix + "wk"));
        Var v = t.matmul(h, lv.at(prefix + "wv"));
        Var merged{-1};
        for (int head = 0; head < cfg.heads; ++head) {
            Var qh = t.slice_cols(q, head * hd, (head + 1) * hd);
            Var kh = t.slice_cols(k, head * hd, (head + 1) * hd);
            Var vh = t.slice_cols(v, head * hd, (head + 1) * hd);
            Var scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(hd));
            Var oh = t.matmul(t.softmax_lastdim(scores), vh);
            merged = head == 0 ? oh : t.concat_cols(merged, oh);
        }
        return t.matmul(merged, lv.at(prefix + "wo"));
    }

    // One dual-path block. The hidden state is refreshed by self-attention;
    // for editing inputs a cross-attention increment from the source latent
    // is admitted per token through a sigmoid gate, and for generation
    // inputs the edit branch is bypassed entirely.
    Var sam_block(Tape& t, const VarMap& lv, int layer, Var h, std::optional<Var> z_src, bool i_edit,
                  Var t_emb) const {
        if (i_edit && !z_src.has_value())
            throw contract_error("sam_block: editing indicator set but z_src is absent");
        const std::string b = "blk" + std::to_string(layer) + ".";
        Var hin = t.add_rowvec(h, t_emb);
        Var attn = self_attention(t, lv, b + "attn.", hin);
        Var tilde = t.layer_norm(t.add(hin, attn), lv.at(b + "ln1.g"), lv.at(b + "ln1.b"));
        if (!i_edit) return tilde;

        const int d = cfg.width;
        Var q = t.matmul(tilde, lv.at(b + "cross.wq"));
        Var k = t.matmul(*z_src, lv.at(b + "cross.wk"));
        Var v = t.matmul(*z_src, lv.at(b + "cross.wv"));
        Var scores = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(d));
        Var delta = t.matmul(t.softmax_lastdim(scores), v);

        Var gate_in = t.concat_cols(tilde, delta);
        Var g1 = t.gelu(t.add_rowvec(t.matmul(gate_in, lv.at(b + "gate.w1")), lv.at(b + "gate.b1")));
        Var logits = t.add_rowvec(t.matmul(g1, lv.at(b + "gate.w2")), lv.at(b + "gate.b2"));
        Var lambda = t.sigmoid(logits);  // (N x 1) in [0, 1]
#ifndef NDEBUG
        for (double v : t.val(lambda).data) assert(v >= 0.0 && v <= 1.0);
#endif
        return t.add(tilde, t.rowwise_scale(delta, lambda));
    }

    // Velocity field: time embedding injected before every block, then a
    // linear head back to the latent width.
    Var velocity(Tape& t, const VarMap& lv, Var z_t, double time, std::optional<Var> z_src,
                 bool i_edit) const {
        if (time < 0.0 || time > 1.0) throw contract_error("velocity: t must be in [0, 1]");
        Var t_emb = t.add_rowvec(t.matmul(t.constant(time_embedding(time, cfg.time_embed_dim)),
                                          lv.at("time.w")),
                                 lv.at("time.b"));
        Var h = z_t;
        for (int l = 0; l < cfg.layers; ++l) h = sam_block(t, lv, l, h, z_src, i_edit, t_emb);
        return t.add_rowvec(t.matmul(h, lv.at("head.w")), lv.at("head.b"));
    }

    // ---------------------------------------------------- plain evaluation

    Posterior posterior_eval(const Canvas& input) const {
        Tape t;
        auto lv = constants(t);
        Var x = compress(t, lv, encode_visual(t, lv, input));
        auto p = posterior(t, lv, x);
        Tensor sigma = t.val(p.logsig);
        for (double& v : sigma.data) v = std::exp(v);
        return {t.val(p.mu), std::move(sigma)};
    }

    // eps = nullptr is the deterministic mode (z0 = mu).
    static Tensor sample_z0_eval(const Posterior& p, const Tensor* eps) {
        Tensor z = p.mu;
        if (eps) {
            check_same_shape(p.mu, *eps, "sample_z0");
            for (std::size_t i = 0; i < z.numel(); ++i) z.data[i] += p.sigma.data[i] * eps->data[i];
        }
        return z;
    }

    Tensor velocity_eval(const Tensor& z_t, double time, const Tensor* z_src, bool i_edit) const {
        Tape t;
        auto lv = constants(t);
        std::optional<Var> src;
        if (z_src) src = t.constant(*z_src);
        return t.val(velocity(t, lv, t.constant(z_t), time, src, i_edit));
    }

    Tensor normal_like(Rng& rng) const {
        Tensor eps = Tensor::zeros({cfg.tokens(), cfg.width});
        for (double& v : eps.data) v = rng.normal();
        return eps;
    }

    // Full image-in image-out pass: posterior draw from the instruction
    // canvas, guided Euler integration of the velocity field, decode.
    // The unconditional guidance pass zeroes z_src and clears the indicator.
    Canvas sample(const Canvas& input, int steps, double cfg_scale, Rng& rng, bool i_edit) const {
        const Posterior post = posterior_eval(input);
        const Tensor eps = normal_like(rng);
        Tensor z = sample_z0_eval(post, &eps);
        const Tensor z_src = encode_source(input);
        Tensor result = euler_integrate(std::move(z), steps, [&](const Tensor& zt, double tt) {
            if (!i_edit)  // both passes collapse onto the same field
                return velocity_eval(zt, tt, nullptr, false);
            const Tensor v_c = velocity_eval(zt, tt, &z_src, true);
            const Tensor v_u = velocity_eval(zt, tt, nullptr, false);
            return guided_velocity(v_u, v_c, cfg_scale);
        });
        return decode_target(result);
    }

    VarMap constants(Tape& t) const {
        VarMap lv;
        for (const auto& [path, e] : params.entries) lv.emplace(path, t.constant(e.value));
        return lv;
    }
};

// ------------------------------------------------------------ batched loss

// Pre-drawn per-example randomness so a loss evaluation is a deterministic
// function of the parameters (required by the finite-difference oracle).
struct ExampleDraw {
    double t{0.5};
    Tensor eps;
    bool drop_condition{false};
};

inline std::vector<ExampleDraw> make_draws(const FlowModel& m, std::size_t batch, Rng& rng,
                                           double p_drop) {
    std::vector<ExampleDraw> out(batch);
    for (auto& d : out) {
        d.t = rng.uniform();
        d.eps = m.normal_like(rng);
        d.drop_condition = rng.uniform() < p_drop;
    }
    return out;
}

struct LossGraph {
    Var total;
    Var fm;
    Var kld;
    Var clip;
};

struct LossParts {
    double fm{0.0};
    double kld{0.0};
    double clip{0.0};
    double total{0.0};
};

// L = L_fm + beta_kld L_kld + beta_clip L_clip over one balanced batch.
inline LossGraph total_loss_graph(const FlowModel& m, Tape& t, const VarMap& lv,
                                  const std::vector<const PairRecord*>& batch,
                                  const std::vector<ExampleDraw>& draws) {
    if (batch.empty() || draws.size() != batch.size())
        throw contract_error("total_loss: batch and draws must align");
    const double sm = m.cfg.sigma_min;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Var fm_sum{-1}, kld_sum{-1};
    std::vector<Var> zti_flat;
    std::vector<Tensor> zi_values;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const PairRecord& rec = *batch[i];
        const ExampleDraw& draw = draws[i];

        Var x = m.compress(t, lv, m.encode_visual(t, lv, rec.input));
        auto post = m.posterior(t, lv, x);
        Var z0 = m.sample_z0(t, post, draw.eps);

        const Tensor z1 = m.encode_target(rec.target);
        Var z1c = t.constant(z1);

        const bool edit = is_edit_category(rec.category) && !draw.drop_condition;
        std::optional<Var> z_src;
        if (edit) z_src = t.constant(m.encode_source(rec.input));

        Var z_t = t.add(t.scale(z1c, draw.t), t.scale(z0, 1.0 - (1.0 - sm) * draw.t));
        Var v_star = t.sub(z1c, t.scale(z0, 1.0 - sm));
        Var v_pred = m.velocity(t, lv, z_t, draw.t, z_src, edit);
        Var fm_i = t.mse(v_pred, v_star);

        Var sig2 = t.exp(t.scale(post.logsig, 2.0));
        Var kld_terms = t.scale(t.add(t.add(t.mul(post.mu, post.mu), sig2),
                                      t.add_scalar(t.scale(post.logsig, -2.0), -1.0)),
                                0.5);
        Var kld_i = t.mean_all(kld_terms);

        fm_sum = i == 0 ? fm_i : t.add(fm_sum, fm_i);
        kld_sum = i == 0 ? kld_i : t.add(kld_sum, kld_i);
        zti_flat.push_back(t.reshape(z0, {1, m.cfg.tokens() * m.cfg.width}));
        zi_values.push_back(z1);
    }

    Var fm = t.scale(fm_sum, inv_b);
    Var kld = t.scale(kld_sum, inv_b);

    // Contrastive term: rows are instruction latents (on tape), columns are
    // the frozen target latents, both L2-normalized.
    Var zti = t.stack_rows(zti_flat);
    Var sq = t.rowsum_lastdim(t.mul(zti, zti));
    {
        const Tensor& norms = t.val(sq);
        for (double v : norms.data)
            if (v <= 0.0) throw contract_error("clip loss: zero-norm latent");
    }
    Var zti_hat = t.rowwise_scale(zti, t.powc(sq, -0.5));

    const int flat = m.cfg.tokens() * m.cfg.width;
    Tensor zi_mat = Tensor::zeros({static_cast<int>(zi_values.size()), flat});
    for (std::size_t i = 0; i < zi_values.size(); ++i) {
        double n = 0.0;
        for (double v : zi_values[i].data) n += v * v;
        n = std::sqrt(n);
        if (n == 0.0) throw contract_error("clip loss: zero-norm target latent");
        for (int j = 0; j < flat; ++j)
            zi_mat.at(static_cast<int>(i), j) = zi_values[i].data[static_cast<std::size_t>(j)] / n;
    }
    Var logits = t.scale_by_recip(t.matmul(zti_hat, t.transpose(t.constant(zi_mat))), lv.at("clip.tau"));
    Var row_ce = t.mean_all(t.sub(t.logsumexp_lastdim(logits), t.take_diag(logits)));
    Var logits_t = t.transpose(logits);
    Var col_ce = t.mean_all(t.sub(t.logsumexp_lastdim(logits_t), t.take_diag(logits_t)));
    Var clip = t.scale(t.add(row_ce, col_ce), 0.5);

    Var total = t.add(fm, t.add(t.scale(kld, m.cfg.beta_kld), t.scale(clip, m.cfg.beta_clip)));
    return {total, fm, kld, clip};
}

inline LossParts loss_parts(const Tape& t, const LossGraph& g) {
    return {t.val(g.fm).data[0], t.val(g.kld).data[0], t.val(g.clip).data[0], t.val(g.total).data[0]};
}

}  // namespace vispflow
