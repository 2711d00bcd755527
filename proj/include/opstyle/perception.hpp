#pragma once

// Deterministic perceptual machinery built on one fixed random conv pyramid:
// 4 stages of 3x3 conv (3->16->32->64->64), leaky 0.2, 2x average pool, He
// weights from a documented seed, no biases, never trained. The same
// extractor backs the pairwise perceptual distance (channel-unit-normalized
// feature MSE summed over stages), the Gaussian feature statistics behind the
// Frechet distance, and segment-summed perceptual path length.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "opstyle/image.hpp"
#include "opstyle/nn.hpp"
#include "opstyle/rng.hpp"
#include "opstyle/synthesis.hpp"
#include "opstyle/tensor.hpp"

namespace opstyle {

class FeatureExtractor {
public:
    static constexpr uint64_t kDefaultSeed = 0;
    static constexpr float kNormEps = 1e-10f;

    explicit FeatureExtractor(uint64_t seed = kDefaultSeed) {
        SeededRng rng(seed);
        const int chans[5] = {3, 16, 32, 64, 64};
        for (int s = 0; s < 4; ++s) {
            Tensor w = rng.normal_tensor({chans[s + 1], chans[s], 3, 3});
            scale(w, std::sqrt(2.0f / float(chans[s] * 9)));
            weights_.push_back(std::move(w));
        }
    }

    // frozen seed-0 instance shared by every metric in the process
    static const FeatureExtractor& shared() {
        static const FeatureExtractor inst;
        return inst;
    }

    int stages() const { return int(weights_.size()); }

    const std::vector<Tensor>& weights() const { return weights_; }

    struct Forward {
        std::vector<Tensor> pre;    // conv output per stage (pre-activation)
        std::vector<bool> pooled;   // whether the stage's 2x pool ran
        std::vector<Tensor> feat;   // stage output (post-activation, post-pool)
    };

    // stages pool only while both spatial dims are even and > 1, so small
    // inputs (degraded targets) still pass through all four convs
    Forward forward(const ImageTensor& img) const {
        check_arg(img.height() > 0 && img.width() > 0, "feature extractor: empty image");
        Forward f;
        Tensor x = img.chw;
        for (const Tensor& w : weights_) {
            Tensor pre = conv2d(x, w);
            Tensor act = leaky_relu(pre, 0.2f);
            const bool do_pool =
                act.dim(1) % 2 == 0 && act.dim(2) % 2 == 0 && act.dim(1) > 1 && act.dim(2) > 1;
            f.pre.push_back(std::move(pre));
            f.pooled.push_back(do_pool);
            x = do_pool ? avgpool2(act) : std::move(act);
            f.feat.push_back(x);
        }
        return f;
    }

    // channel vector at each position scaled to unit length
    static Tensor normalize_channels(const Tensor& feat) {
        const int64_t C = feat.dim(0), H = feat.dim(1), W = feat.dim(2);
        Tensor out(feat.shape());
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double nsq = double(kNormEps);
                for (int64_t c = 0; c < C; ++c)
                    nsq += double(feat(c, y, x)) * double(feat(c, y, x));
                const float inv = float(1.0 / std::sqrt(nsq));
                for (int64_t c = 0; c < C; ++c) out(c, y, x) = feat(c, y, x) * inv;
            }
        return out;
    }

    std::vector<Tensor> normalized_features(const ImageTensor& img) const {
        const Forward f = forward(img);
        std::vector<Tensor> out;
        out.reserve(f.feat.size());
        for (const Tensor& t : f.feat) out.push_back(normalize_channels(t));
        return out;
    }

    // global-average-pooled final stage; the embedding behind fit_stats
    Tensor embed(const ImageTensor& img) const {
        const Forward f = forward(img);
        const Tensor& last = f.feat.back();
        const int64_t C = last.dim(0), HW = last.dim(1) * last.dim(2);
        Tensor e({C});
        for (int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            const float* p = last.data() + c * HW;
            for (int64_t i = 0; i < HW; ++i) acc += p[i];
            e[c] = float(acc / double(HW));
        }
        return e;
    }

    double distance(const ImageTensor& a, const ImageTensor& b) const {
        check_arg(a.same_shape(b), "perceptual_distance: shape mismatch");
        const auto fa = normalized_features(a);
        const auto fb = normalized_features(b);
        double d = 0.0;
        for (size_t s = 0; s < fa.size(); ++s) {
            double acc = 0.0;
            for (int64_t i = 0; i < fa[s].size(); ++i) {
                const double e = double(fa[s][i]) - double(fb[s][i]);
                acc += e * e;
            }
            d += acc / double(fa[s].size());
        }
        return d;
    }

    struct Target {
        std::vector<int64_t> shape;
        std::vector<Tensor> normalized;
    };

    Target target(const ImageTensor& b) const {
        return {b.chw.shape(), normalized_features(b)};
    }

    // distance to a precomputed target and its gradient w.r.t. image a
    std::pair<double, Tensor> distance_grad(const ImageTensor& a, const Target& tgt) const {
        check_arg(a.chw.shape() == tgt.shape, "perceptual_distance: shape mismatch");
        const Forward f = forward(a);
        double d = 0.0;
        std::vector<Tensor> g_feat(f.feat.size()); // grad w.r.t. raw stage outputs
        for (size_t s = 0; s < f.feat.size(); ++s) {
            const Tensor& raw = f.feat[s];
            const Tensor& tn = tgt.normalized[s];
            const int64_t C = raw.dim(0), H = raw.dim(1), W = raw.dim(2);
            const double inv_n = 1.0 / double(raw.size());
            Tensor g(raw.shape());
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    double nsq = double(kNormEps);
                    for (int64_t c = 0; c < C; ++c)
                        nsq += double(raw(c, y, x)) * double(raw(c, y, x));
                    const double r = std::sqrt(nsq);
                    // quantize exactly like normalize_channels so the residual
                    // against a cached target vanishes bitwise at the target
                    const float inv = float(1.0 / r);
                    double u_dot_gu = 0.0;
                    // g_uhat = 2 (uhat - v) / n; fold the normalization Jacobian
                    for (int64_t c = 0; c < C; ++c) {
                        const double uh = double(raw(c, y, x) * inv);
                        const double e = uh - double(tn(c, y, x));
                        d += e * e * inv_n;
                        const double gu = 2.0 * e * inv_n;
                        g(c, y, x) = float(gu / r);
                        u_dot_gu += double(raw(c, y, x)) * gu;
                    }
                    const double corr = u_dot_gu / (r * r * r);
                    for (int64_t c = 0; c < C; ++c)
                        g(c, y, x) -= float(corr * double(raw(c, y, x)));
                }
            g_feat[s] = std::move(g);
        }
        // walk the pyramid backwards, merging each stage's metric gradient
        Tensor g = g_feat.back();
        for (int s = stages() - 1; s >= 0; --s) {
            Tensor g_act = f.pooled[size_t(s)] ? avgpool2_backward(g) : std::move(g);
            Tensor g_pre = leaky_relu_backward(g_act, f.pre[size_t(s)], 0.2f);
            g = conv2d_input_grad(g_pre, weights_[size_t(s)]);
            if (s > 0) axpy(g, g_feat[size_t(s - 1)], 1.0f);
        }
        return {d, std::move(g)};
    }

private:
    std::vector<Tensor> weights_;
};

inline double perceptual_distance(const ImageTensor& a, const ImageTensor& b) {
    return FeatureExtractor::shared().distance(a, b);
}

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    int64_t dim() const { return mean.size(); }
};

// mean and unbiased covariance of the pooled final-stage features
inline GaussianStats fit_stats(const std::vector<ImageTensor>& images,
                               const FeatureExtractor& fx = FeatureExtractor::shared()) {
    check_arg(images.size() >= 2, "fit_stats: need at least two images");
    const int64_t n = int64_t(images.size());
    std::vector<Eigen::VectorXd> embs;
    embs.reserve(images.size());
    for (const auto& img : images) {
        const Tensor e = fx.embed(img);
        Eigen::VectorXd v(e.size());
        for (int64_t i = 0; i < e.size(); ++i) v[i] = double(e[i]);
        embs.push_back(std::move(v));
    }
    GaussianStats st;
    st.mean = Eigen::VectorXd::Zero(embs[0].size());
    for (const auto& v : embs) st.mean += v;
    st.mean /= double(n);
    st.cov = Eigen::MatrixXd::Zero(embs[0].size(), embs[0].size());
    for (const auto& v : embs) {
        const Eigen::VectorXd d = v - st.mean;
        st.cov += d * d.transpose();
    }
    st.cov /= double(n - 1);
    return st;
}

// |mu_p - mu_q|^2 + Tr(Sp + Sq - 2 (Sp Sq)^{1/2}). Sp*Sq itself is not
// symmetric, and symmetrizing it changes the spectrum for non-commuting
// inputs, so the root's trace is taken from Sp^{1/2} Sq Sp^{1/2}, which is
// PSD for PSD inputs and shares the product's eigenvalues exactly.
inline double frechet_distance(const GaussianStats& p, const GaussianStats& q) {
    check_arg(p.dim() == q.dim(), "frechet_distance: dimension mismatch");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_p(0.5 * (p.cov + p.cov.transpose()));
    check(es_p.info() == Eigen::Success, "frechet_distance: eigendecomposition failed");
    const Eigen::VectorXd& ev_p = es_p.eigenvalues();
    const double scale_p = std::max(1.0, ev_p.cwiseAbs().maxCoeff());
    Eigen::VectorXd root_p(ev_p.size());
    for (int64_t i = 0; i < ev_p.size(); ++i) {
        check(ev_p[i] > -1e-5 * scale_p, "frechet_distance: product not PSD within tolerance");
        root_p[i] = std::sqrt(std::max(0.0, ev_p[i]));
    }
    const Eigen::MatrixXd sqrt_p =
        es_p.eigenvectors() * root_p.asDiagonal() * es_p.eigenvectors().transpose();

    const Eigen::MatrixXd inner = sqrt_p * q.cov * sqrt_p;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
    check(es.info() == Eigen::Success, "frechet_distance: eigendecomposition failed");
    const Eigen::VectorXd& ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    double tr_sqrt = 0.0;
    for (int64_t i = 0; i < ev.size(); ++i) {
        check(ev[i] > -1e-5 * scale, "frechet_distance: product not PSD within tolerance");
        tr_sqrt += std::sqrt(std::max(0.0, ev[i]));
    }
    const double mean_term = (p.mean - q.mean).squaredNorm();
    return mean_term + p.cov.trace() + q.cov.trace() - 2.0 * tr_sqrt;
}

// element-wise interpolation between two same-variant style sources
inline StyleSource lerp_source(const StyleSource& a, const StyleSource& b, float t) {
    check_arg(a.kind == b.kind && a.entries.size() == b.entries.size(),
              "lerp_source: variant mismatch");
    StyleSource out;
    out.kind = a.kind;
    out.entries.reserve(a.entries.size());
    for (size_t k = 0; k < a.entries.size(); ++k)
        out.entries.push_back(lerp(a.entries[k], b.entries[k], t));
    return out;
}

// total perceptual variation along the straight latent path, summed over
// n_segments consecutive image pairs
inline double ppl_segments(const Generator& g, const StyleSource& src_a,
                           const StyleSource& src_b, int n_segments = 5) {
    check_arg(src_a.kind == src_b.kind, "ppl_segments: variant mismatch");
    check_arg(n_segments >= 1, "ppl_segments: need at least one segment");
    double total = 0.0;
    ImageTensor prev = g.synthesize(src_a);
    for (int i = 1; i <= n_segments; ++i) {
        const float t = float(i) / float(n_segments);
        ImageTensor cur = g.synthesize(lerp_source(src_a, src_b, t));
        total += perceptual_distance(prev, cur);
        prev = std::move(cur);
    }
    return total;
}

} // namespace opstyle
