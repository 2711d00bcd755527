#pragma once

// Mapping network z -> w (small MLP with optional input normalization) and
// the per-layer affine projections w -> style. Both come in single-vector and
// batched row forms; the batched forms are one matrix product per layer.
// Backwards are hand-derived and accumulate parameter gradients on request.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "opstyle/latent.hpp"
#include "opstyle/rng.hpp"
#include "opstyle/tensor.hpp"

namespace opstyle {

struct DenseLayer {
    Tensor weight; // [out, in]
    Tensor bias;   // [out]
};

inline void leaky_inplace(Tensor& t, float slope) {
    for (auto& v : t.vec())
        if (v < 0.0f) v *= slope;
}

class MappingNetwork {
public:
    MappingNetwork() = default;

    MappingNetwork(SeededRng& rng, int dim, int n_layers) : dim_(dim) {
        check_arg(dim >= 1 && n_layers >= 1, "mapping network: bad dim or layer count");
        const float stddev = 1.0f / std::sqrt(float(dim));
        layers_.reserve(size_t(n_layers));
        for (int l = 0; l < n_layers; ++l) {
            DenseLayer d;
            d.weight = rng.normal_tensor({dim, dim});
            scale(d.weight, stddev);
            d.bias = Tensor({dim});
            layers_.push_back(std::move(d));
        }
    }

    int dim() const { return dim_; }
    int layer_count() const { return int(layers_.size()); }
    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    float slope() const { return slope_; }
    void set_slope(float s) { slope_ = s; } // test hook; slope 1 disables the activation
    bool normalize_input() const { return normalize_; }
    void set_normalize_input(bool b) { normalize_ = b; }

    // row -> row * sqrt(D)/|row|; rows with vanishing norm pass through
    static void normalize_rows(Tensor& rows) {
        const int64_t R = rows.dim(0), D = rows.dim(1);
        const float root_d = std::sqrt(float(D));
        for (int64_t i = 0; i < R; ++i) {
            double nsq = 0.0;
            for (int64_t j = 0; j < D; ++j) nsq += double(rows(i, j)) * double(rows(i, j));
            const float n = float(std::sqrt(nsq));
            if (n < 1e-12f) continue;
            const float f = root_d / n;
            for (int64_t j = 0; j < D; ++j) rows(i, j) *= f;
        }
    }

    struct Trace {
        Tensor input;             // [R,D] raw rows
        Tensor x0;                // rows after normalization
        std::vector<Tensor> pre;  // pre-activation per layer
        Tensor out;
    };

    Tensor forward_rows(const Tensor& z_rows, Trace* trace = nullptr) const {
        check_arg(z_rows.rank() == 2 && z_rows.dim(1) == dim_, "mapping: expected [R,D] rows");
        const int64_t R = z_rows.dim(0);
        Tensor x = z_rows;
        if (normalize_) normalize_rows(x);
        if (trace) {
            trace->input = z_rows;
            trace->x0 = x;
            trace->pre.clear();
        }
        for (const auto& L : layers_) {
            Tensor p = matmul(x, R, dim_, L.weight, dim_, dim_, false, /*tb=*/true);
            for (int64_t i = 0; i < R; ++i)
                for (int64_t j = 0; j < dim_; ++j) p(i, j) += L.bias[j];
            if (trace) trace->pre.push_back(p);
            leaky_inplace(p, slope_);
            x = std::move(p);
        }
        if (trace) trace->out = x;
        return x;
    }

    Tensor forward(const Tensor& z) const {
        check_arg(z.rank() == 1 && z.dim(0) == dim_, "mapping: expected [D] vector");
        Tensor row = forward_rows(z.reshaped({1, dim_}));
        return row.reshaped({dim_});
    }

    struct Grads {
        std::vector<Tensor> weight, bias;
        void init(const MappingNetwork& net) {
            weight.clear();
            bias.clear();
            for (const auto& L : net.layers_) {
                weight.emplace_back(L.weight.shape());
                bias.emplace_back(L.bias.shape());
            }
        }
    };

    // returns d loss / d z_rows; adds parameter gradients into *grads if given
    Tensor backward_rows(const Trace& tr, const Tensor& g_out, Grads* grads = nullptr) const {
        check_arg(g_out.same_shape(tr.out), "mapping backward: gradient shape mismatch");
        const int64_t R = g_out.dim(0);
        Tensor g = g_out;
        for (int l = layer_count() - 1; l >= 0; --l) {
            const Tensor& pre = tr.pre[size_t(l)];
            for (int64_t i = 0; i < g.size(); ++i)
                if (pre[i] < 0.0f) g[i] *= slope_;
            const Tensor& x_in = l == 0 ? tr.x0 : tr.pre[size_t(l - 1)];
            // x_in for l>0 is the *post*-activation of the previous layer
            Tensor x_prev = x_in;
            if (l > 0) leaky_inplace(x_prev, slope_);
            if (grads) {
                Tensor gw = matmul(g, R, dim_, x_prev, R, dim_, /*ta=*/true);
                axpy(grads->weight[size_t(l)], gw, 1.0f);
                for (int64_t i = 0; i < R; ++i)
                    for (int64_t j = 0; j < dim_; ++j)
                        grads->bias[size_t(l)][j] += g(i, j);
            }
            g = matmul(g, R, dim_, layers_[size_t(l)].weight, dim_, dim_);
        }
        if (!normalize_) return g;
        // x = z*sqrt(D)/|z| row-wise: J = sqrt(D) (I/r - z z^T / r^3)
        Tensor gz({R, int64_t(dim_)});
        const float root_d = std::sqrt(float(dim_));
        for (int64_t i = 0; i < R; ++i) {
            double nsq = 0.0, zg = 0.0;
            for (int64_t j = 0; j < dim_; ++j) {
                nsq += double(tr.input(i, j)) * double(tr.input(i, j));
                zg += double(tr.input(i, j)) * double(g(i, j));
            }
            const double r = std::sqrt(nsq);
            if (r < 1e-12) {
                for (int64_t j = 0; j < dim_; ++j) gz(i, j) = g(i, j);
                continue;
            }
            const double a = double(root_d) / r;
            const double b = double(root_d) * zg / (r * r * r);
            for (int64_t j = 0; j < dim_; ++j)
                gz(i, j) = float(a * double(g(i, j)) - b * double(tr.input(i, j)));
        }
        return gz;
    }

private:
    int dim_ = 0;
    float slope_ = 0.2f;
    bool normalize_ = true;
    std::vector<DenseLayer> layers_;
};

// style = weight * w + bias; bias starts at one so styles begin near identity
class AffineProjection {
public:
    AffineProjection() = default;

    AffineProjection(SeededRng& rng, int out_dim, int in_dim) {
        check_arg(out_dim >= 1 && in_dim >= 1, "affine projection: bad dims");
        weight_ = rng.normal_tensor({out_dim, in_dim});
        scale(weight_, 1.0f / std::sqrt(float(in_dim)));
        bias_ = Tensor::full({out_dim}, 1.0f);
    }

    int out_dim() const { return int(weight_.dim(0)); }
    int in_dim() const { return int(weight_.dim(1)); }
    Tensor& weight() { return weight_; }
    const Tensor& weight() const { return weight_; }
    Tensor& bias() { return bias_; }
    const Tensor& bias() const { return bias_; }

    Tensor apply(const Tensor& w) const {
        check_arg(w.rank() == 1 && w.dim(0) == weight_.dim(1), "affine projection: dim mismatch");
        Tensor s = apply_rows(w.reshaped({1, w.dim(0)}));
        return s.reshaped({weight_.dim(0)});
    }

    Tensor apply_rows(const Tensor& w_rows) const {
        check_arg(w_rows.rank() == 2 && w_rows.dim(1) == weight_.dim(1),
                  "affine projection: dim mismatch");
        const int64_t R = w_rows.dim(0), N = weight_.dim(0), D = weight_.dim(1);
        Tensor s = matmul(w_rows, R, D, weight_, N, D, false, /*tb=*/true);
        for (int64_t i = 0; i < R; ++i)
            for (int64_t j = 0; j < N; ++j) s(i, j) += bias_[j];
        return s;
    }

    struct Grads {
        Tensor weight, bias;
        void init(const AffineProjection& a) {
            weight = Tensor(a.weight_.shape());
            bias = Tensor(a.bias_.shape());
        }
    };

    // returns d loss / d w_rows given the rows used in the forward pass
    Tensor backward_rows(const Tensor& w_rows, const Tensor& g_s, Grads* grads = nullptr) const {
        const int64_t R = w_rows.dim(0), N = weight_.dim(0), D = weight_.dim(1);
        check_arg(g_s.rank() == 2 && g_s.dim(0) == R && g_s.dim(1) == N,
                  "affine projection backward: shape mismatch");
        if (grads) {
            Tensor gw = matmul(g_s, R, N, w_rows, R, D, /*ta=*/true);
            axpy(grads->weight, gw, 1.0f);
            for (int64_t i = 0; i < R; ++i)
                for (int64_t j = 0; j < N; ++j) grads->bias[j] += g_s(i, j);
        }
        return matmul(g_s, R, N, weight_, N, D);
    }

private:
    Tensor weight_; // [N, D]
    Tensor bias_;   // [N]
};

inline Tensor map_latent(const MappingNetwork& m, const Tensor& z) { return m.forward(z); }

// one batched product per layer: rows of Z through M, then each projection
inline std::vector<Tensor> map_matrix(const MappingNetwork& m,
                                      const std::vector<AffineProjection>& projections,
                                      const LatentMatrix& z) {
    check_arg(z.space == LatentSpace::Z, "map_matrix: expected Z-space input");
    const Tensor w_rows = m.forward_rows(z.m);
    std::vector<Tensor> styles;
    styles.reserve(projections.size());
    for (const auto& a : projections) styles.push_back(a.apply_rows(w_rows));
    return styles;
}

} // namespace opstyle
