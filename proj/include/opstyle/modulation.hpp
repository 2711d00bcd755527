#pragma once

// Style modulation of conv weights. Baseline scales weight columns (one style
// value per input channel); the overparameterized form scales each (out,in)
// plane by its own style entry, so a style *matrix* replaces the style vector.
// Replicating one style row across the matrix reproduces the baseline exactly,
// multiply for multiply. Demodulation rescales each output channel to unit
// fan-in norm afterwards.

#include <cmath>
#include <cstdint>
#include <utility>

#include "opstyle/tensor.hpp"

namespace opstyle {

struct ModulatedWeights {
    Tensor theta; // [N_O, N_I, k, k]
    bool demodulated = false;
};

inline Tensor replicate_rows(const Tensor& s, int64_t n_rows) {
    check_arg(s.rank() == 1 && n_rows >= 1, "replicate_rows: expected vector and positive count");
    Tensor out({n_rows, s.dim(0)});
    for (int64_t i = 0; i < n_rows; ++i)
        for (int64_t j = 0; j < s.dim(0); ++j) out(i, j) = s[j];
    return out;
}

// theta'[i,j,:,:] = theta[i,j,:,:] * s[j]
inline ModulatedWeights modulate_baseline(const Tensor& theta, const Tensor& s) {
    check_arg(theta.rank() == 4, "modulate_baseline: expected [N_O,N_I,k,k] weights");
    check_arg(s.rank() == 1 && s.dim(0) == theta.dim(1),
              "modulate_baseline: style length must equal input channels");
    const int64_t No = theta.dim(0), Ni = theta.dim(1), kk = theta.dim(2) * theta.dim(3);
    ModulatedWeights out{Tensor(theta.shape()), false};
    const float* src = theta.data();
    float* dst = out.theta.data();
    for (int64_t i = 0; i < No; ++i)
        for (int64_t j = 0; j < Ni; ++j) {
            const float sj = s[j];
            const int64_t base = (i * Ni + j) * kk;
            for (int64_t t = 0; t < kk; ++t) dst[base + t] = src[base + t] * sj;
        }
    return out;
}

// theta'[i,j,:,:] = theta[i,j,:,:] * S[i,j]
inline ModulatedWeights modulate_overparam(const Tensor& theta, const Tensor& S) {
    check_arg(theta.rank() == 4, "modulate_overparam: expected [N_O,N_I,k,k] weights");
    check_arg(S.rank() == 2 && S.dim(0) == theta.dim(0) && S.dim(1) == theta.dim(1),
              "modulate_overparam: style matrix must be [N_O,N_I]");
    const int64_t No = theta.dim(0), Ni = theta.dim(1), kk = theta.dim(2) * theta.dim(3);
    ModulatedWeights out{Tensor(theta.shape()), false};
    const float* src = theta.data();
    float* dst = out.theta.data();
    for (int64_t i = 0; i < No; ++i)
        for (int64_t j = 0; j < Ni; ++j) {
            const float sij = S(i, j);
            const int64_t base = (i * Ni + j) * kk;
            for (int64_t t = 0; t < kk; ++t) dst[base + t] = src[base + t] * sij;
        }
    return out;
}

// keep the first n_out rows of a style matrix
inline Tensor drop_rows(const Tensor& S, int64_t n_out) {
    check_arg(S.rank() == 2, "drop_rows: expected a matrix");
    check_arg(S.dim(0) >= n_out, "drop_rows: fewer style rows than output channels");
    check_arg(n_out >= 1, "drop_rows: n_out must be positive");
    Tensor out({n_out, S.dim(1)});
    std::copy(S.data(), S.data() + n_out * S.dim(1), out.data());
    return out;
}

// scatter gradient of the kept rows back into an R-row matrix of zeros
inline Tensor drop_rows_backward(const Tensor& g_kept, int64_t total_rows) {
    check_arg(g_kept.rank() == 2 && total_rows >= g_kept.dim(0), "drop_rows_backward: bad shapes");
    Tensor g({total_rows, g_kept.dim(1)});
    std::copy(g_kept.data(), g_kept.data() + g_kept.size(), g.data());
    return g;
}

// theta''[i] = theta'[i] / sqrt(|theta'[i]|^2 + eps), per output channel
inline ModulatedWeights demodulate(const ModulatedWeights& mw, float eps = 1e-8f) {
    check_arg(!mw.demodulated, "demodulate: weights already demodulated");
    const Tensor& tp = mw.theta;
    const int64_t No = tp.dim(0), plane = tp.dim(1) * tp.dim(2) * tp.dim(3);
    ModulatedWeights out{Tensor(tp.shape()), true};
    for (int64_t i = 0; i < No; ++i) {
        const float* src = tp.data() + i * plane;
        float* dst = out.theta.data() + i * plane;
        double nsq = 0.0;
        for (int64_t t = 0; t < plane; ++t) nsq += double(src[t]) * double(src[t]);
        const float inv = float(1.0 / std::sqrt(nsq + double(eps)));
        for (int64_t t = 0; t < plane; ++t) dst[t] = src[t] * inv;
    }
    return out;
}

// gradient pair for the row-wise modulation:
//   gS[i,j]     = sum_{a,b} g_theta'[i,j,a,b] * theta[i,j,a,b]
//   gTheta[...] = g_theta'[...] * S[i,j]
inline void modulate_overparam_backward(const Tensor& theta, const Tensor& S,
                                        const Tensor& g_theta_prime, Tensor* g_S,
                                        Tensor* g_theta) {
    const int64_t No = theta.dim(0), Ni = theta.dim(1), kk = theta.dim(2) * theta.dim(3);
    check_arg(g_theta_prime.same_shape(theta), "modulation backward: gradient shape mismatch");
    for (int64_t i = 0; i < No; ++i)
        for (int64_t j = 0; j < Ni; ++j) {
            const int64_t base = (i * Ni + j) * kk;
            if (g_S) {
                double acc = 0.0;
                for (int64_t t = 0; t < kk; ++t)
                    acc += double(g_theta_prime[base + t]) * double(theta[base + t]);
                (*g_S)(i, j) += float(acc);
            }
            if (g_theta) {
                const float sij = S(i, j);
                for (int64_t t = 0; t < kk; ++t)
                    (*g_theta)[base + t] += g_theta_prime[base + t] * sij;
            }
        }
}

// column modulation gradients: gs[j] = sum_{i,a,b} g' * theta; gTheta = g' * s[j]
inline void modulate_baseline_backward(const Tensor& theta, const Tensor& s,
                                       const Tensor& g_theta_prime, Tensor* g_s,
                                       Tensor* g_theta) {
    const int64_t No = theta.dim(0), Ni = theta.dim(1), kk = theta.dim(2) * theta.dim(3);
    check_arg(g_theta_prime.same_shape(theta), "modulation backward: gradient shape mismatch");
    for (int64_t j = 0; j < Ni; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < No; ++i) {
            const int64_t base = (i * Ni + j) * kk;
            for (int64_t t = 0; t < kk; ++t) {
                if (g_s) acc += double(g_theta_prime[base + t]) * double(theta[base + t]);
                if (g_theta) (*g_theta)[base + t] += g_theta_prime[base + t] * s[j];
            }
        }
        if (g_s) (*g_s)[j] += float(acc);
    }
}

// d loss / d theta' given grad w.r.t. the demodulated weights:
//   with n_i = |theta'[i]|^2 + eps, d_i = sqrt(n_i):
//   g[i] = G[i]/d_i - (G[i].theta'[i]) / d_i^3 * theta'[i]
inline Tensor demodulate_backward(const Tensor& theta_prime, const Tensor& g_demod,
                                  float eps = 1e-8f) {
    check_arg(g_demod.same_shape(theta_prime), "demodulate backward: shape mismatch");
    const int64_t No = theta_prime.dim(0);
    const int64_t plane = theta_prime.dim(1) * theta_prime.dim(2) * theta_prime.dim(3);
    Tensor g(theta_prime.shape());
    for (int64_t i = 0; i < No; ++i) {
        const float* tp = theta_prime.data() + i * plane;
        const float* gd = g_demod.data() + i * plane;
        float* out = g.data() + i * plane;
        double nsq = double(eps), dotv = 0.0;
        for (int64_t t = 0; t < plane; ++t) {
            nsq += double(tp[t]) * double(tp[t]);
            dotv += double(gd[t]) * double(tp[t]);
        }
        const double d = std::sqrt(nsq);
        const double a = 1.0 / d;
        const double b = dotv / (nsq * d);
        for (int64_t t = 0; t < plane; ++t)
            out[t] = float(a * double(gd[t]) - b * double(tp[t]));
    }
    return g;
}

} // namespace opstyle
