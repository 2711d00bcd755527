#pragma once

// Optimization-based inversion: find the style source whose synthesis matches
// a target image. Adam on the latent parameters, perceptual loss (optionally
// plus weighted pixel MSE), and truncation applied as a projection toward the
// mean style before each step — active for the first half of the run by
// default, kept throughout in the degraded-upsampling mode. The trace records
// every step's loss and the truncation instrumentation the tests assert on.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "opstyle/image.hpp"
#include "opstyle/latent.hpp"
#include "opstyle/optim.hpp"
#include "opstyle/perception.hpp"
#include "opstyle/rng.hpp"
#include "opstyle/synthesis.hpp"
#include "opstyle/tensor.hpp"

namespace opstyle {

struct DegradationOp {
    enum class Kind { identity, downsample };

    Kind kind = Kind::identity;
    int factor = 1;

    static DegradationOp identity() { return {}; }
    static DegradationOp downsample(int factor) {
        check_arg(factor >= 1, "degradation: factor must be positive");
        return {Kind::downsample, factor};
    }

    ImageTensor apply(const ImageTensor& img) const {
        if (kind == Kind::identity || factor == 1) return img;
        return ImageTensor(downsample_nearest(img.chw, factor));
    }

    Tensor backward(const Tensor& g_low, int64_t h_in, int64_t w_in) const {
        if (kind == Kind::identity || factor == 1) return g_low;
        return downsample_nearest_backward(g_low, factor, h_in, w_in);
    }
};

struct InversionConfig {
    StyleSource::Kind space = StyleSource::Kind::matrix;
    int steps = 1000;
    double lr = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    float psi = 0.9f;                    // truncation strength while active
    float trunc_disable_fraction = 0.5f; // active while step < fraction*steps
    bool keep_truncation_throughout = false;
    double lambda_pix = 0.0;             // weight of the pixel MSE term
    bool random_init = false;            // default: start every row at mean_w

    void validate() const {
        check_arg(steps >= 1, "inversion: steps must be positive");
        check_arg(lr > 0.0, "inversion: lr must be positive");
        check_arg(psi >= 0.0f && psi <= 1.0f, "inversion: psi must lie in [0,1]");
        check_arg(trunc_disable_fraction >= 0.0f && trunc_disable_fraction <= 1.0f,
                  "inversion: trunc_disable_fraction must lie in [0,1]");
        check_arg(lambda_pix >= 0.0, "inversion: lambda_pix must be nonnegative");
    }
};

struct InversionTrace {
    std::vector<double> losses;       // one entry per completed step
    std::vector<char> trunc_applied;  // per step
    std::vector<float> dev_before;    // max row distance to mean_w before projection
    std::vector<float> dev_after;     // same, after projection (0 when not applied)
    int trunc_disabled_at = -1;       // first step with truncation off; -1 = never
    bool aborted_nonfinite = false;
    StyleSource final_src;
    ImageTensor final_image;

    double first_loss() const { return losses.empty() ? 0.0 : losses.front(); }
    double last_loss() const { return losses.empty() ? 0.0 : losses.back(); }
};

namespace detail {

inline StyleSource init_source(const Generator& g, StyleSource::Kind kind, bool random_init,
                               SeededRng& rng) {
    const GeneratorConfig& cfg = g.config();
    const int L = cfg.num_layers();
    const int64_t D = cfg.latent_dim, R = cfg.latent_rows;
    const bool layered =
        kind == StyleSource::Kind::w_plus || kind == StyleSource::Kind::matrix_plus;
    const bool matrix =
        kind == StyleSource::Kind::matrix || kind == StyleSource::Kind::matrix_plus;
    const int64_t rows = matrix ? R : 1;

    auto make_entry = [&]() {
        Tensor e({rows, D});
        if (random_init) {
            // stay on the style marginal: each row is the mapper's image of a fresh z
            for (int64_t r = 0; r < rows; ++r) {
                const Tensor w = g.mapper().forward(rng.normal_tensor({D}));
                for (int64_t j = 0; j < D; ++j) e(r, j) = w[j];
            }
        } else {
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < D; ++j) e(r, j) = g.mean_w()[j];
        }
        return matrix ? e : e.reshaped({D});
    };

    StyleSource src;
    src.kind = kind;
    const int n_entries = layered ? L : 1;
    for (int i = 0; i < n_entries; ++i) src.entries.push_back(make_entry());
    return src;
}

inline float max_row_deviation(const StyleSource& src, const Tensor& mu) {
    double worst = 0.0;
    for (const Tensor& e : src.entries) {
        const int64_t rows = e.rank() == 1 ? 1 : e.dim(0);
        const int64_t D = e.rank() == 1 ? e.dim(0) : e.dim(1);
        for (int64_t r = 0; r < rows; ++r) {
            double nsq = 0.0;
            for (int64_t j = 0; j < D; ++j) {
                const double d = double(e[r * D + j]) - double(mu[j]);
                nsq += d * d;
            }
            worst = std::max(worst, nsq);
        }
    }
    return float(std::sqrt(worst));
}

inline void project_rows(StyleSource& src, const Tensor& mu, float psi) {
    for (Tensor& e : src.entries) {
        const int64_t rows = e.rank() == 1 ? 1 : e.dim(0);
        const int64_t D = e.rank() == 1 ? e.dim(0) : e.dim(1);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < D; ++j) {
                const int64_t i = r * D + j;
                e[i] = mu[j] + psi * (e[i] - mu[j]);
            }
    }
}

} // namespace detail

// minimize loss(deg(S(src)), y) over the latent parameters of cfg.space
inline InversionTrace invert_degraded(const Generator& g, const ImageTensor& y,
                                      const DegradationOp& deg, const InversionConfig& cfg,
                                      SeededRng& rng) {
    cfg.validate();
    const GeneratorConfig& gc = g.config();
    {
        int64_t expect = gc.output_resolution();
        if (deg.kind == DegradationOp::Kind::downsample) {
            check_arg(expect % deg.factor == 0, "invert: factor must divide the output size");
            expect /= deg.factor;
        }
        check_arg(y.chw.rank() == 3 && y.chw.dim(0) == 3 && y.chw.dim(1) == expect &&
                      y.chw.dim(2) == expect,
                  "invert: target shape mismatch with generator output");
    }

    const FeatureExtractor& fx = FeatureExtractor::shared();
    const FeatureExtractor::Target tgt = fx.target(y);

    InversionTrace tr;
    tr.final_src = detail::init_source(g, cfg.space, cfg.random_init, rng);
    tr.final_src.validate(gc);

    const int trunc_until =
        cfg.keep_truncation_throughout
            ? cfg.steps
            : int(std::lround(double(cfg.trunc_disable_fraction) * double(cfg.steps)));
    tr.trunc_disabled_at = trunc_until >= cfg.steps ? -1 : trunc_until;

    Adam opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    tr.losses.reserve(size_t(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        const bool trunc_active = step < trunc_until;
        float dev_b = 0.0f, dev_a = 0.0f;
        if (trunc_active) {
            dev_b = detail::max_row_deviation(tr.final_src, g.mean_w());
            detail::project_rows(tr.final_src, g.mean_w(), cfg.psi);
            dev_a = detail::max_row_deviation(tr.final_src, g.mean_w());
        }
        tr.trunc_applied.push_back(trunc_active ? 1 : 0);
        tr.dev_before.push_back(dev_b);
        tr.dev_after.push_back(dev_a);

        SynthesisTrace st;
        const ImageTensor full = g.synthesize(tr.final_src, &st);
        const ImageTensor low = deg.apply(full);

        auto [loss, g_low] = fx.distance_grad(low, tgt);
        if (cfg.lambda_pix > 0.0) {
            const int64_t n = low.chw.size();
            double pix = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const double d = double(low.chw[i]) - double(y.chw[i]);
                pix += d * d;
                g_low[i] += float(cfg.lambda_pix * 2.0 * d / double(n));
            }
            loss += cfg.lambda_pix * pix / double(n);
        }
        if (!std::isfinite(loss)) {
            tr.aborted_nonfinite = true;
            break;
        }
        tr.losses.push_back(loss);

        const Tensor g_img = deg.backward(g_low, full.chw.dim(1), full.chw.dim(2));
        StyleGrads grads = make_style_grads(tr.final_src);
        g.backward(tr.final_src, st, g_img, &grads, nullptr);

        std::vector<Tensor*> params, gptrs;
        for (size_t k = 0; k < tr.final_src.entries.size(); ++k) {
            params.push_back(&tr.final_src.entries[k]);
            gptrs.push_back(&grads[k]);
        }
        opt.step(params, gptrs);
    }

    tr.final_image = g.synthesize(tr.final_src);
    return tr;
}

inline InversionTrace invert(const Generator& g, const ImageTensor& y,
                             const InversionConfig& cfg, SeededRng& rng) {
    return invert_degraded(g, y, DegradationOp::identity(), cfg, rng);
}

// Restart the same unregularized inversion from random points and measure how
// differently the restarts' pairwise latent midpoints render.
struct NondetReport {
    struct PerSpace {
        StyleSource::Kind space;
        int n_midpoints = 0;
        double mean_pairwise_distance = 0.0;
    };
    PerSpace baseline;   // w+ (per-layer vectors)
    PerSpace overparam;  // W (shared style matrix)
};

inline double midpoint_spread(const Generator& g, const std::vector<StyleSource>& solutions) {
    std::vector<ImageTensor> mids;
    for (size_t i = 0; i < solutions.size(); ++i)
        for (size_t j = i + 1; j < solutions.size(); ++j)
            mids.push_back(g.synthesize(lerp_source(solutions[i], solutions[j], 0.5f)));
    if (mids.size() < 2) return 0.0;
    double total = 0.0;
    int64_t n = 0;
    for (size_t i = 0; i < mids.size(); ++i)
        for (size_t j = i + 1; j < mids.size(); ++j) {
            total += perceptual_distance(mids[i], mids[j]);
            ++n;
        }
    return total / double(n);
}

inline NondetReport nondeterminism_experiment(const Generator& g, const ImageTensor& y,
                                              int n_restarts, const InversionConfig& base_cfg,
                                              SeededRng& rng) {
    check_arg(n_restarts >= 1, "nondeterminism_experiment: need at least one restart");
    NondetReport rep;
    const StyleSource::Kind spaces[2] = {StyleSource::Kind::w_plus, StyleSource::Kind::matrix};
    for (int si = 0; si < 2; ++si) {
        InversionConfig cfg = base_cfg;
        cfg.space = spaces[si];
        cfg.random_init = true;
        cfg.keep_truncation_throughout = false;
        cfg.trunc_disable_fraction = 0.0f; // regularizer fully off
        std::vector<StyleSource> sols;
        for (int r = 0; r < n_restarts; ++r) {
            SeededRng restart_rng = rng.child(uint64_t(si * 1000 + r));
            sols.push_back(invert(g, y, cfg, restart_rng).final_src);
        }
        NondetReport::PerSpace ps;
        ps.space = spaces[si];
        ps.n_midpoints = n_restarts * (n_restarts - 1) / 2;
        ps.mean_pairwise_distance = midpoint_spread(g, sols);
        if (spaces[si] == StyleSource::Kind::w_plus)
            rep.baseline = ps;
        else
            rep.overparam = ps;
    }
    return rep;
}

} // namespace opstyle
