#pragma once

// Toy adversarial training. The dataset is procedural (soft ellipses over a
// vertical gradient), the critic is a small strided-conv classifier, and the
// loop runs alternating Adam updates with non-saturating logistic losses,
// lazy R1 on real images, and style-mixing regularization on the generator's
// latents. Deterministic given the seed.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "opstyle/image.hpp"
#include "opstyle/latent.hpp"
#include "opstyle/nn.hpp"
#include "opstyle/optim.hpp"
#include "opstyle/rng.hpp"
#include "opstyle/synthesis.hpp"
#include "opstyle/tensor.hpp"

namespace opstyle {

// images of 1-3 axis-aligned soft ellipses on a vertical color gradient,
// values in [-1,1]; item i depends only on (seed, i)
class SyntheticDataset {
public:
    SyntheticDataset(uint64_t seed, int64_t size, int resolution)
        : seed_(seed), size_(size), res_(resolution) {
        check_arg(size >= 1 && resolution >= 4, "dataset: bad size or resolution");
    }

    int64_t size() const { return size_; }
    int resolution() const { return res_; }

    ImageTensor make(int64_t index) const {
        check_arg(index >= 0 && index < size_, "dataset: index out of range");
        SeededRng rng(hash64(seed_, uint64_t(index)));
        ImageTensor img(res_, res_);

        float top[3], bottom[3];
        for (int c = 0; c < 3; ++c) {
            top[c] = float(rng.uniform(-1.0, 1.0));
            bottom[c] = float(rng.uniform(-1.0, 1.0));
        }
        for (int y = 0; y < res_; ++y) {
            const float t = res_ == 1 ? 0.0f : float(y) / float(res_ - 1);
            for (int x = 0; x < res_; ++x)
                for (int c = 0; c < 3; ++c)
                    img.at(c, y, x) = top[c] + t * (bottom[c] - top[c]);
        }

        const int n_ellipses = 1 + int(rng.next_below(3));
        for (int e = 0; e < n_ellipses; ++e) {
            const float cx = float(rng.uniform(0.15, 0.85)) * float(res_);
            const float cy = float(rng.uniform(0.15, 0.85)) * float(res_);
            const float rx = float(rng.uniform(0.10, 0.30)) * float(res_);
            const float ry = float(rng.uniform(0.10, 0.30)) * float(res_);
            float col[3];
            for (int c = 0; c < 3; ++c) col[c] = float(rng.uniform(-1.0, 1.0));
            const float sharp = 8.0f;
            for (int y = 0; y < res_; ++y)
                for (int x = 0; x < res_; ++x) {
                    const float dx = (float(x) + 0.5f - cx) / rx;
                    const float dy = (float(y) + 0.5f - cy) / ry;
                    const float d = std::sqrt(dx * dx + dy * dy);
                    const float a = 1.0f / (1.0f + std::exp((d - 1.0f) * sharp));
                    if (a < 1e-4f) continue;
                    for (int c = 0; c < 3; ++c)
                        img.at(c, y, x) += a * (col[c] - img.at(c, y, x));
                }
        }
        for (auto& v : img.chw.vec()) v = std::min(1.0f, std::max(-1.0f, v));
        return img;
    }

    // channel-wise pixel mean and std over the first n items
    std::pair<std::array<double, 3>, std::array<double, 3>> channel_stats(int64_t n) const {
        check_arg(n >= 1 && n <= size_, "dataset: bad sample count");
        std::array<double, 3> mean{}, var{};
        int64_t count = 0;
        for (int64_t i = 0; i < n; ++i) {
            const ImageTensor img = make(i);
            const int64_t hw = img.chw.dim(1) * img.chw.dim(2);
            for (int c = 0; c < 3; ++c) {
                const float* p = img.chw.data() + c * hw;
                for (int64_t k = 0; k < hw; ++k) {
                    mean[size_t(c)] += p[k];
                    var[size_t(c)] += double(p[k]) * double(p[k]);
                }
            }
            count += hw;
        }
        std::array<double, 3> std_out{};
        for (int c = 0; c < 3; ++c) {
            mean[size_t(c)] /= double(count);
            var[size_t(c)] = var[size_t(c)] / double(count) - mean[size_t(c)] * mean[size_t(c)];
            std_out[size_t(c)] = std::sqrt(std::max(0.0, var[size_t(c)]));
        }
        return {mean, std_out};
    }

private:
    uint64_t seed_;
    int64_t size_;
    int res_;
};

// stable softplus and the logistic sigmoid
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// non-saturating logistic pair: g = softplus(-d_fake), d = softplus(d_fake) + softplus(-d_real)
inline std::pair<double, double> gan_losses(double d_real, double d_fake) {
    check_arg(std::isfinite(d_real) && std::isfinite(d_fake), "gan_losses: non-finite logits");
    return {softplus(-d_fake), softplus(d_fake) + softplus(-d_real)};
}

// small strided-conv critic: 3 -> 32 -> 64 -> 128 (stride 2 each), then a
// full-spatial conv to one logit; leaky 0.2 between stages, no norm layers
class Discriminator {
public:
    Discriminator() = default;

    Discriminator(SeededRng& rng, int resolution) : res_(resolution) {
        check_arg(resolution % 8 == 0 && resolution >= 8,
                  "discriminator: resolution must be a multiple of 8");
        const int chans[4] = {3, 32, 64, 128};
        for (int s = 0; s < 3; ++s) {
            Tensor w = rng.normal_tensor({chans[s + 1], chans[s], 3, 3});
            scale(w, std::sqrt(2.0f / float(chans[s] * 9)));
            weights_.push_back(std::move(w));
            biases_.emplace_back(Tensor({int64_t(chans[s + 1])}));
        }
        const int spatial = resolution / 8;
        Tensor w = rng.normal_tensor({1, 128, spatial, spatial});
        scale(w, std::sqrt(1.0f / float(128 * spatial * spatial)));
        weights_.push_back(std::move(w));
        biases_.emplace_back(Tensor({int64_t(1)}));
    }

    int resolution() const { return res_; }
    std::vector<Tensor>& weights() { return weights_; }
    std::vector<Tensor>& biases() { return biases_; }
    const std::vector<Tensor>& weights() const { return weights_; }
    const std::vector<Tensor>& biases() const { return biases_; }

    struct Trace {
        Tensor x;                 // input image
        std::vector<Tensor> pre;  // pre-activations of the three strided stages
        Tensor feat;              // input to the readout conv
    };

    double forward(const ImageTensor& img, Trace* tr = nullptr) const {
        check_arg(img.height() == res_ && img.width() == res_, "discriminator: wrong input size");
        Tensor x = img.chw;
        if (tr) {
            tr->x = x;
            tr->pre.clear();
        }
        for (int s = 0; s < 3; ++s) {
            Tensor p = conv2d_stride2(x, weights_[size_t(s)]);
            add_bias(p, biases_[size_t(s)]);
            if (tr) tr->pre.push_back(p);
            x = leaky_relu(p, 0.2f);
        }
        if (tr) tr->feat = x;
        // valid full-spatial conv = weighted sum over the whole feature map
        const Tensor& w = weights_[3];
        double acc = double(biases_[3][0]);
        for (int64_t i = 0; i < x.size(); ++i) acc += double(w[i]) * double(x[i]);
        return acc;
    }

    struct Grads {
        std::vector<Tensor> weight, bias;
        void init(const Discriminator& d) {
            weight.clear();
            bias.clear();
            for (const auto& w : d.weights_) weight.emplace_back(w.shape());
            for (const auto& b : d.biases_) bias.emplace_back(b.shape());
        }
    };

    // d logit / d params (scaled by g_logit) and optionally d logit / d input
    Tensor backward(const Trace& tr, double g_logit, Grads* grads,
                    bool want_input_grad = false) const {
        const float gl = float(g_logit);
        Tensor g_feat(tr.feat.shape());
        for (int64_t i = 0; i < g_feat.size(); ++i) g_feat[i] = gl * weights_[3][i];
        if (grads) {
            for (int64_t i = 0; i < g_feat.size(); ++i)
                grads->weight[3][i] += gl * tr.feat[i];
            grads->bias[3][0] += gl;
        }
        Tensor g = std::move(g_feat);
        for (int s = 2; s >= 0; --s) {
            g = leaky_relu_backward(g, tr.pre[size_t(s)], 0.2f);
            if (grads) {
                const Tensor& x_in = s == 0 ? tr.x : leaky_relu(tr.pre[size_t(s - 1)], 0.2f);
                axpy(grads->weight[size_t(s)],
                     conv2d_stride2_weight_grad(x_in, g, int(weights_[size_t(s)].dim(2))), 1.0f);
                axpy(grads->bias[size_t(s)], bias_grad(g), 1.0f);
            }
            if (s == 0 && !want_input_grad) return Tensor();
            const Tensor& x_in = s == 0 ? tr.x : tr.pre[size_t(s - 1)];
            g = conv2d_stride2_input_grad(g, weights_[size_t(s)], x_in.dim(1), x_in.dim(2));
        }
        return g;
    }

    Tensor input_grad(const Trace& tr, double g_logit = 1.0) const {
        return backward(tr, g_logit, nullptr, true);
    }

    // R1 penalty gamma/2 |d logit/d x|^2 and its parameter gradient, holding
    // the rectifier masks fixed at their forward values. The input gradient is
    // a linear chain in the weights once masks freeze, so its derivative runs
    // the chain once more in the opposite direction:
    //   reverse chain:  t3 = M3 . C4^T(1), t2 = M2 . C3^T(t3), ...  g = C1^T(t1)
    //   with gbar = gamma*g:  tbar_s = C_s(prev), W_s gets wgrad(prev, t_s)
    // Biases never reach the input gradient, so their R1 gradient is zero.
    double r1_penalty(const Trace& tr, double gamma, Grads* grads) const {
        // reverse chain, keeping each mask input
        Tensor t3({tr.feat.shape()});
        for (int64_t i = 0; i < t3.size(); ++i) t3[i] = weights_[3][i];
        t3 = leaky_relu_backward(t3, tr.pre[2], 0.2f);
        Tensor t2 = conv2d_stride2_input_grad(t3, weights_[2], tr.pre[1].dim(1), tr.pre[1].dim(2));
        t2 = leaky_relu_backward(t2, tr.pre[1], 0.2f);
        Tensor t1 = conv2d_stride2_input_grad(t2, weights_[1], tr.pre[0].dim(1), tr.pre[0].dim(2));
        t1 = leaky_relu_backward(t1, tr.pre[0], 0.2f);
        Tensor g = conv2d_stride2_input_grad(t1, weights_[0], tr.x.dim(1), tr.x.dim(2));

        double norm_sq = 0.0;
        for (int64_t i = 0; i < g.size(); ++i) norm_sq += double(g[i]) * double(g[i]);
        const double penalty = 0.5 * gamma * norm_sq;
        if (!grads) return penalty;

        Tensor gbar = g;
        scale(gbar, float(gamma));
        // unwind: each C_s^T consumed t_{s+1}; its weight picks up
        // wgrad(input=running, outgrad=t_{s+1}), and the running vector moves
        // forward through C_s then the frozen mask
        axpy(grads->weight[0], conv2d_stride2_weight_grad(gbar, t1, int(weights_[0].dim(2))), 1.0f);
        Tensor u = conv2d_stride2(gbar, weights_[0]);
        u = leaky_relu_backward(u, tr.pre[0], 0.2f);
        axpy(grads->weight[1], conv2d_stride2_weight_grad(u, t2, int(weights_[1].dim(2))), 1.0f);
        u = conv2d_stride2(u, weights_[1]);
        u = leaky_relu_backward(u, tr.pre[1], 0.2f);
        axpy(grads->weight[2], conv2d_stride2_weight_grad(u, t3, int(weights_[2].dim(2))), 1.0f);
        u = conv2d_stride2(u, weights_[2]);
        u = leaky_relu_backward(u, tr.pre[2], 0.2f);
        for (int64_t i = 0; i < u.size(); ++i) grads->weight[3][i] += u[i];
        return penalty;
    }

    std::vector<std::pair<std::string, Tensor*>> param_refs() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (size_t s = 0; s < weights_.size(); ++s) {
            const std::string p = "disc.layer" + std::to_string(s);
            out.push_back({p + ".weight", &weights_[s]});
            out.push_back({p + ".bias", &biases_[s]});
        }
        return out;
    }

    // same order as grad_refs, for optimizers
    std::vector<Tensor*> param_ptrs() {
        std::vector<Tensor*> out;
        for (size_t s = 0; s < weights_.size(); ++s) {
            out.push_back(&weights_[s]);
            out.push_back(&biases_[s]);
        }
        return out;
    }

    static std::vector<Tensor*> grad_refs(Grads& g) {
        std::vector<Tensor*> out;
        for (size_t s = 0; s < g.weight.size(); ++s) {
            out.push_back(&g.weight[s]);
            out.push_back(&g.bias[s]);
        }
        return out;
    }

private:
    int res_ = 0;
    std::vector<Tensor> weights_, biases_;
};

// with probability prob, mix two latent draws at a uniform crossover in 1..L-1
struct MixAssignment {
    bool mixed = false;
    int crossover = 0; // layers < crossover from A, the rest from B
};

inline MixAssignment style_mixing_regularize(SeededRng& rng, float prob, int n_layers) {
    check_arg(prob >= 0.0f && prob <= 1.0f, "style mixing: prob must lie in [0,1]");
    check_arg(n_layers >= 2, "style mixing: need at least two layers");
    MixAssignment a;
    if (rng.next_unit() < double(prob)) {
        a.mixed = true;
        a.crossover = 1 + int(rng.next_below(uint64_t(n_layers - 1)));
    }
    return a;
}

struct TrainConfig {
    int steps = 2000;
    int batch = 8;
    double g_lr = 2.5e-3;
    double d_lr = 2.5e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    float style_mixing_prob = 0.9f;
    double r1_gamma = 1.0;
    int r1_interval = 16;
    int snapshot_interval = 500; // how often the last-good copy refreshes
    int64_t mean_w_samples = 10000;

    void validate() const {
        check_arg(steps >= 0 && batch >= 1, "train: bad steps or batch");
        check_arg(g_lr > 0.0 && d_lr > 0.0, "train: learning rates must be positive");
        check_arg(style_mixing_prob >= 0.0f && style_mixing_prob <= 1.0f,
                  "train: style_mixing_prob must lie in [0,1]");
        check_arg(r1_interval >= 1, "train: r1_interval must be positive");
    }
};

struct TrainReport {
    std::vector<double> g_losses, d_losses;
    std::vector<double> r1_values; // 0 on steps where the lazy penalty is skipped
    int steps_done = 0;
    bool aborted_nonfinite = false;
};

namespace detail {

// draw one generator latent source (with optional mixing) per batch element
inline StyleSource sample_train_source(const Generator& g, SeededRng& rng, float mix_prob,
                                       MappingNetwork::Trace* tr_a, MappingNetwork::Trace* tr_b,
                                       MixAssignment* out_mix) {
    const GeneratorConfig& cfg = g.config();
    const int L = cfg.num_layers();
    const MixAssignment mix = style_mixing_regularize(rng, mix_prob, L);
    if (out_mix) *out_mix = mix;

    const bool matrix_mode = cfg.mode == ModulationMode::overparam;
    auto draw_rows = [&](MappingNetwork::Trace* tr) {
        const Tensor z = matrix_mode
                             ? sample_correlated_z(rng, cfg.latent_rows, cfg.latent_dim).m
                             : rng.normal_tensor({int64_t(1), int64_t(cfg.latent_dim)});
        return g.mapper().forward_rows(z, tr);
    };

    const Tensor rows_a = draw_rows(tr_a);
    if (!mix.mixed) {
        if (matrix_mode) return StyleSource::from_matrix(rows_a);
        return StyleSource::from_w(rows_a.reshaped({cfg.latent_dim}));
    }
    const Tensor rows_b = draw_rows(tr_b);
    std::vector<Tensor> entries;
    entries.reserve(size_t(L));
    for (int l = 0; l < L; ++l) {
        const Tensor& rows = l < mix.crossover ? rows_a : rows_b;
        entries.push_back(matrix_mode ? rows : rows.reshaped({cfg.latent_dim}));
    }
    return matrix_mode ? StyleSource::from_matrix_plus(std::move(entries))
                       : StyleSource::from_w_plus(std::move(entries));
}

} // namespace detail

// Alternating updates; critic first, generator second, both on fresh batches.
// On a non-finite loss the loop stops and restores the last snapshot.
inline TrainReport train(Generator& g, Discriminator& d, const SyntheticDataset& data,
                         const TrainConfig& cfg, SeededRng& rng,
                         const std::function<void(int, const TrainReport&)>& on_step = {}) {
    cfg.validate();
    check_arg(d.resolution() == g.config().output_resolution(),
              "train: discriminator resolution must match generator output");
    check_arg(data.resolution() == d.resolution(),
              "train: dataset resolution must match discriminator");

    TrainReport rep;
    Adam g_opt(cfg.g_lr, cfg.beta1, cfg.beta2);
    Adam d_opt(cfg.d_lr, cfg.beta1, cfg.beta2);
    Generator g_snapshot = g;
    Discriminator d_snapshot = d;

    const double inv_b = 1.0 / double(cfg.batch);

    for (int step = 0; step < cfg.steps; ++step) {
        // ---- critic update ----
        Discriminator::Grads d_grads;
        d_grads.init(d);
        double d_loss = 0.0, r1_val = 0.0;
        const bool do_r1 = cfg.r1_gamma > 0.0 && step % cfg.r1_interval == 0;
        for (int b = 0; b < cfg.batch; ++b) {
            const ImageTensor real = data.make(int64_t(rng.next_below(uint64_t(data.size()))));
            Discriminator::Trace tr_real;
            const double d_real = d.forward(real, &tr_real);
            const StyleSource src =
                detail::sample_train_source(g, rng, cfg.style_mixing_prob, nullptr, nullptr, nullptr);
            const ImageTensor fake = g.synthesize(src);
            Discriminator::Trace tr_fake;
            const double d_fake = d.forward(fake, &tr_fake);

            d_loss += (softplus(d_fake) + softplus(-d_real)) * inv_b;
            d.backward(tr_real, -sigmoid(-d_real) * inv_b, &d_grads);
            d.backward(tr_fake, sigmoid(d_fake) * inv_b, &d_grads);
            if (do_r1) r1_val += d.r1_penalty(tr_real, cfg.r1_gamma, &d_grads) * inv_b;
        }
        if (!std::isfinite(d_loss + r1_val)) {
            rep.aborted_nonfinite = true;
            break;
        }
        d_opt.step(d.param_ptrs(), Discriminator::grad_refs(d_grads));

        // ---- generator update ----
        GeneratorGrads g_grads = g.make_grads();
        double g_loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            MappingNetwork::Trace tr_a, tr_b;
            MixAssignment mix;
            const StyleSource src =
                detail::sample_train_source(g, rng, cfg.style_mixing_prob, &tr_a, &tr_b, &mix);
            SynthesisTrace st;
            const ImageTensor fake = g.synthesize(src, &st);
            Discriminator::Trace tr_d;
            const double d_fake = d.forward(fake, &tr_d);
            g_loss += softplus(-d_fake) * inv_b;

            const Tensor g_img = d.input_grad(tr_d, -sigmoid(-d_fake) * inv_b);
            StyleGrads src_grads = make_style_grads(src);
            g.backward(src, st, g_img, &src_grads, &g_grads);

            // fold style-source gradients back through the mapper
            const int L = g.config().num_layers();
            auto rows_shape = [&](const MappingNetwork::Trace& t) { return t.out.shape(); };
            Tensor acc_a(rows_shape(tr_a));
            Tensor acc_b = mix.mixed ? Tensor(rows_shape(tr_b)) : Tensor();
            auto fold = [&](const Tensor& grad, bool from_a) {
                Tensor& acc = from_a ? acc_a : acc_b;
                if (grad.rank() == 1) {
                    for (int64_t j = 0; j < grad.dim(0); ++j) acc(0, j) += grad[j];
                } else {
                    axpy(acc, grad, 1.0f);
                }
            };
            if (src.layered()) {
                for (int l = 0; l < L; ++l) fold(src_grads[size_t(l)], l < mix.crossover);
            } else {
                fold(src_grads[0], true);
            }
            g.mapper().backward_rows(tr_a, acc_a, &g_grads.mapping);
            if (mix.mixed) g.mapper().backward_rows(tr_b, acc_b, &g_grads.mapping);
        }
        if (!std::isfinite(g_loss)) {
            rep.aborted_nonfinite = true;
            break;
        }
        g_opt.step(g.param_ptrs(), Generator::grad_refs(g_grads));

        rep.g_losses.push_back(g_loss);
        rep.d_losses.push_back(d_loss);
        rep.r1_values.push_back(r1_val);
        rep.steps_done = step + 1;
        if (cfg.snapshot_interval > 0 && (step + 1) % cfg.snapshot_interval == 0) {
            g_snapshot = g;
            d_snapshot = d;
        }
        if (on_step) on_step(step, rep);
    }

    if (rep.aborted_nonfinite) {
        g = g_snapshot;
        d = d_snapshot;
    } else {
        SeededRng mu_rng = rng.child(0x6d75ULL); // dedicated stream for the final estimate
        g.refresh_mean_w(mu_rng, cfg.mean_w_samples);
    }
    return rep;
}

} // namespace opstyle
