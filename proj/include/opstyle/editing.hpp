#pragma once

// Downstream drivers on a trained generator: per-layer style mixing, PCA
// directions over the style marginal with uniform row edits, and the pairwise
// interpolation suite (midpoint realism against fresh samples, mean segment
// path length).

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opstyle/latent.hpp"
#include "opstyle/perception.hpp"
#include "opstyle/rng.hpp"
#include "opstyle/serialize.hpp"
#include "opstyle/synthesis.hpp"
#include "opstyle/tensor.hpp"

namespace opstyle {

struct PcaBasis {
    Tensor mean;       // [D]
    Tensor components; // [D,D], row k = k-th direction, variance-ordered
    Tensor variances;  // [D], non-increasing
    int effective_rank = 0; // directions with non-negligible variance

    int64_t dim() const { return mean.dim(0); }
    bool degenerate() const { return effective_rank < int(dim()); }

    Tensor component(int k) const {
        check_arg(k >= 0 && k < int(components.dim(0)), "pca: component index out of range");
        Tensor v({components.dim(1)});
        for (int64_t j = 0; j < components.dim(1); ++j) v[j] = components(int64_t(k), j);
        return v;
    }

    void save(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        nlohmann::json meta;
        meta["format"] = "opstyle-pca";
        meta["effective_rank"] = effective_rank;
        std::ofstream mf(fs::path(dir) / "meta.json");
        check(bool(mf), "pca save: cannot write meta.json in " + dir);
        mf << meta.dump(2) << "\n";
        save_tensor(mean, (fs::path(dir) / "mean.opt1").string());
        save_tensor(components, (fs::path(dir) / "components.opt1").string());
        save_tensor(variances, (fs::path(dir) / "variances.opt1").string());
    }

    static PcaBasis load(const std::string& dir) {
        namespace fs = std::filesystem;
        std::ifstream mf(fs::path(dir) / "meta.json");
        check(bool(mf), "pca load: missing meta.json in " + dir);
        nlohmann::json meta;
        mf >> meta;
        check(meta.value("format", "") == "opstyle-pca", "pca load: unrecognized format tag");
        PcaBasis b;
        b.mean = load_tensor((fs::path(dir) / "mean.opt1").string());
        b.components = load_tensor((fs::path(dir) / "components.opt1").string());
        b.variances = load_tensor((fs::path(dir) / "variances.opt1").string());
        b.effective_rank = meta.at("effective_rank").get<int>();
        return b;
    }
};

// PCA of row samples [N,D]: eigendecomposition of the unbiased sample
// covariance, components sign-fixed so the largest-magnitude coordinate is
// positive. Rank deficiency is reported via effective_rank, not an error.
inline PcaBasis pca_from_samples(const Tensor& samples) {
    check_arg(samples.rank() == 2, "pca: expected [N,D] samples");
    const int64_t N = samples.dim(0), D = samples.dim(1);
    check_arg(N >= D + 1, "pca: need at least D+1 samples");

    Eigen::MatrixXd X(N, D);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < D; ++j) X(i, j) = double(samples(i, j));
    const Eigen::RowVectorXd mu = X.colwise().mean();
    X.rowwise() -= mu;
    const Eigen::MatrixXd cov = (X.transpose() * X) / double(N - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    check(es.info() == Eigen::Success, "pca: eigendecomposition failed");

    PcaBasis b;
    b.mean = Tensor({D});
    for (int64_t j = 0; j < D; ++j) b.mean[j] = float(mu[j]);
    b.components = Tensor({D, D});
    b.variances = Tensor({D});
    const double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
    const double rank_tol = 1e-10 * std::max(1.0, lmax);
    b.effective_rank = 0;
    for (int64_t k = 0; k < D; ++k) {
        const int64_t src = D - 1 - k; // ascending -> descending
        Eigen::VectorXd v = es.eigenvectors().col(src);
        int64_t arg = 0;
        for (int64_t j = 1; j < D; ++j)
            if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
        if (v[arg] < 0.0) v = -v;
        for (int64_t j = 0; j < D; ++j) b.components(k, j) = float(v[j]);
        const double lam = std::max(es.eigenvalues()[src], 0.0);
        b.variances[k] = float(lam);
        if (lam > rank_tol) ++b.effective_rank;
    }
    return b;
}

// basis of the style marginal: independent z draws through the mapper
inline PcaBasis compute_pca(const Generator& g, SeededRng& rng, int64_t n_samples) {
    const int64_t D = g.config().latent_dim;
    check_arg(n_samples >= D + 1, "compute_pca: need at least D+1 samples");
    const LatentMatrix z = sample_z_independent(rng, n_samples, D);
    return pca_from_samples(g.mapper().forward_rows(z.m));
}

// shift every row (or the single vector) by alpha along component k
inline StyleSource apply_edit(const StyleSource& src, const PcaBasis& basis, int k, float alpha) {
    check_arg(!src.layered(), "apply_edit: expected a shared (non-layered) style source");
    const Tensor v = basis.component(k);
    StyleSource out = src;
    for (Tensor& e : out.entries) {
        const int64_t rows = e.rank() == 1 ? 1 : e.dim(0);
        const int64_t D = e.rank() == 1 ? e.dim(0) : e.dim(1);
        check_arg(D == v.dim(0), "apply_edit: dimension mismatch with basis");
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < D; ++j) e[r * D + j] += alpha * v[j];
    }
    return out;
}

// layered source taking layers < crossover from content, the rest from style
inline StyleSource mix_sources(const StyleSource& content, const StyleSource& style,
                               int crossover, int n_layers) {
    check_arg(crossover >= 0 && crossover <= n_layers, "style_mix: crossover out of range");
    check_arg(content.matrix_kind() == style.matrix_kind(),
              "style_mix: sources must live in the same family of spaces");
    StyleSource out;
    out.kind = content.matrix_kind() ? StyleSource::Kind::matrix_plus : StyleSource::Kind::w_plus;
    out.entries.reserve(size_t(n_layers));
    for (int l = 0; l < n_layers; ++l)
        out.entries.push_back(l < crossover ? content.layer_entry(l) : style.layer_entry(l));
    return out;
}

inline ImageTensor style_mix(const Generator& g, const StyleSource& content,
                             const StyleSource& style, int crossover) {
    const StyleSource mixed = mix_sources(content, style, crossover, g.config().num_layers());
    return g.synthesize(mixed);
}

struct InterpolationReport {
    int n_pairs = 0;
    double midpoint_realism = std::numeric_limits<double>::quiet_NaN(); // needs >= 2 midpoints
    double mean_ppl = 0.0;
    bool has_realism = false;
};

// natural sample in the same family as `kind`, for the realism reference set
inline StyleSource sample_reference_source(const Generator& g, StyleSource::Kind kind,
                                           SeededRng& rng) {
    const GeneratorConfig& cfg = g.config();
    if (kind == StyleSource::Kind::matrix || kind == StyleSource::Kind::matrix_plus)
        return g.map_to_matrix(sample_correlated_z(rng, cfg.latent_rows, cfg.latent_dim));
    return g.map_to_w(rng.normal_tensor({cfg.latent_dim}));
}

// all-pairs midpoints: realism of the midpoint image distribution against a
// fresh reference set plus the mean 5-segment path length over pairs
inline InterpolationReport interpolation_suite(const Generator& g,
                                               const std::vector<StyleSource>& latents,
                                               SeededRng& rng, int n_reference = 64,
                                               int n_segments = 5) {
    check_arg(latents.size() >= 2, "interpolation_suite: need at least two latents");
    for (const auto& s : latents)
        check_arg(s.kind == latents[0].kind, "interpolation_suite: variant mismatch");

    InterpolationReport rep;
    std::vector<ImageTensor> midpoints;
    double ppl_total = 0.0;
    for (size_t i = 0; i < latents.size(); ++i)
        for (size_t j = i + 1; j < latents.size(); ++j) {
            midpoints.push_back(g.synthesize(lerp_source(latents[i], latents[j], 0.5f)));
            ppl_total += ppl_segments(g, latents[i], latents[j], n_segments);
            ++rep.n_pairs;
        }
    rep.mean_ppl = ppl_total / double(rep.n_pairs);

    if (midpoints.size() >= 2 && n_reference >= 2) {
        std::vector<ImageTensor> ref;
        ref.reserve(size_t(n_reference));
        for (int r = 0; r < n_reference; ++r)
            ref.push_back(g.synthesize(sample_reference_source(g, latents[0].kind, rng)));
        rep.midpoint_realism = frechet_distance(fit_stats(midpoints), fit_stats(ref));
        rep.has_realism = true;
    }
    return rep;
}

} // namespace opstyle
