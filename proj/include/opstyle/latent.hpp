#pragma once

// Latent sampling: correlated Z rows (one shared draw pulls all rows toward a
// common direction while each row stays marginally unit Gaussian), plain
// independent rows, truncation toward the mean style, and mean-style
// estimation by Monte Carlo.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "opstyle/rng.hpp"
#include "opstyle/tensor.hpp"

namespace opstyle {

enum class LatentSpace { Z, W };

struct LatentMatrix {
    Tensor m; // [R, D]
    LatentSpace space = LatentSpace::Z;

    LatentMatrix() = default;
    LatentMatrix(Tensor t, LatentSpace s) : m(std::move(t)), space(s) {
        check_arg(m.rank() == 2, "latent matrix must be rank 2");
    }

    int64_t rows() const { return m.dim(0); }
    int64_t dim() const { return m.dim(1); }
};

// per-layer latent codes (w+ / layered-matrix sources)
using LatentTuple = std::vector<LatentMatrix>;

// rows_i = (noise_i + shared)/sqrt(2); exposed so tests can inject both parts
inline LatentMatrix correlated_z_from_parts(const Tensor& shared, const Tensor& row_noise) {
    check_arg(shared.rank() == 1 && row_noise.rank() == 2 && row_noise.dim(1) == shared.dim(0),
              "correlated_z_from_parts: shared [D] and row noise [R,D] expected");
    const int64_t R = row_noise.dim(0), D = row_noise.dim(1);
    const float inv_sqrt2 = float(1.0 / std::sqrt(2.0));
    Tensor z({R, D});
    for (int64_t i = 0; i < R; ++i)
        for (int64_t j = 0; j < D; ++j)
            z(i, j) = (row_noise(i, j) + shared[j]) * inv_sqrt2;
    return {std::move(z), LatentSpace::Z};
}

// shared draw first, then the R row draws; each row is marginally N(0, I)
// and distinct rows have per-component covariance 1/2
inline LatentMatrix sample_correlated_z(SeededRng& rng, int64_t R, int64_t D) {
    check_arg(R >= 1 && D >= 1, "sample_correlated_z: R and D must be positive");
    const Tensor shared = rng.normal_tensor({D});
    const Tensor row_noise = rng.normal_tensor({R, D});
    return correlated_z_from_parts(shared, row_noise);
}

// fully independent rows; this is what the W-marginal consumers (PCA) want
inline LatentMatrix sample_z_independent(SeededRng& rng, int64_t R, int64_t D) {
    check_arg(R >= 1 && D >= 1, "sample_z_independent: R and D must be positive");
    return {rng.normal_tensor({R, D}), LatentSpace::Z};
}

// every row moves toward mu_w: row <- mu_w + psi*(row - mu_w)
inline LatentMatrix truncate(const LatentMatrix& m, const Tensor& mu_w, float psi) {
    check_arg(psi >= 0.0f && psi <= 1.0f, "truncate: psi must lie in [0,1]");
    check_arg(m.space == LatentSpace::W, "truncate: operates on W-space latents");
    check_arg(mu_w.rank() == 1 && mu_w.dim(0) == m.dim(), "truncate: mu_w dimension mismatch");
    LatentMatrix out = m;
    for (int64_t i = 0; i < out.rows(); ++i)
        for (int64_t j = 0; j < out.dim(); ++j)
            out.m(i, j) = mu_w[j] + psi * (m.m(i, j) - mu_w[j]);
    return out;
}

// same contraction on a single [D] style vector
inline Tensor truncate_row(const Tensor& w, const Tensor& mu_w, float psi) {
    check_arg(psi >= 0.0f && psi <= 1.0f, "truncate: psi must lie in [0,1]");
    check_arg(w.rank() == 1 && mu_w.rank() == 1 && w.dim(0) == mu_w.dim(0),
              "truncate: dimension mismatch");
    Tensor out = w;
    for (int64_t j = 0; j < w.dim(0); ++j)
        out[j] = mu_w[j] + psi * (w[j] - mu_w[j]);
    return out;
}

// mean of mapper(z) over n_samples i.i.d. standard-normal z
template <class Mapper>
Tensor estimate_mean_w(Mapper&& mapper, SeededRng& rng, int64_t D, int64_t n_samples = 10000) {
    check_arg(n_samples >= 1, "estimate_mean_w: n_samples must be positive");
    std::vector<double> acc;
    int64_t out_dim = -1;
    for (int64_t s = 0; s < n_samples; ++s) {
        const Tensor w = mapper(rng.normal_tensor({D}));
        check(w.rank() == 1, "estimate_mean_w: mapper must return a vector");
        if (out_dim < 0) {
            out_dim = w.dim(0);
            acc.assign(size_t(out_dim), 0.0);
        }
        check(w.dim(0) == out_dim, "estimate_mean_w: mapper output dimension changed");
        for (int64_t j = 0; j < out_dim; ++j) acc[size_t(j)] += double(w[j]);
    }
    Tensor mu({out_dim});
    for (int64_t j = 0; j < out_dim; ++j) mu[j] = float(acc[size_t(j)] / double(n_samples));
    return mu;
}

} // namespace opstyle
