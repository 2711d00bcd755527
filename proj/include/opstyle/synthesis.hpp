#pragma once

// The synthesis network: a learned constant input run through a chain of
// style-modulated convolutions (modulate, demodulate, conv, bias, leaky,
// optional 2x upsample) and a final 1x1 RGB projection. Styles come from one
// of four sources: a single w vector, one w per layer, a style row-matrix
// shared across layers, or one matrix per layer. Matrix sources need the
// overparameterized modulation mode; vector sources work in both modes.
//
// forward_cached/backward give exact gradients of a scalar image loss with
// respect to the style source and, when asked, every network parameter.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opstyle/config.hpp"
#include "opstyle/image.hpp"
#include "opstyle/latent.hpp"
#include "opstyle/mapper.hpp"
#include "opstyle/modulation.hpp"
#include "opstyle/nn.hpp"
#include "opstyle/rng.hpp"
#include "opstyle/serialize.hpp"
#include "opstyle/tensor.hpp"

namespace opstyle {

struct StyleSource {
    enum class Kind { w, w_plus, matrix, matrix_plus };

    Kind kind = Kind::w;
    std::vector<Tensor> entries; // 1 entry for w/matrix, one per layer otherwise

    static StyleSource from_w(Tensor w) {
        check_arg(w.rank() == 1, "style source: w must be a vector");
        return {Kind::w, {std::move(w)}};
    }
    static StyleSource from_w_plus(std::vector<Tensor> per_layer) {
        check_arg(!per_layer.empty(), "style source: empty w+ list");
        for (const auto& t : per_layer)
            check_arg(t.rank() == 1, "style source: w+ entries must be vectors");
        return {Kind::w_plus, std::move(per_layer)};
    }
    static StyleSource from_matrix(Tensor rows) {
        check_arg(rows.rank() == 2, "style source: matrix must be rank 2");
        return {Kind::matrix, {std::move(rows)}};
    }
    static StyleSource from_matrix_plus(std::vector<Tensor> per_layer) {
        check_arg(!per_layer.empty(), "style source: empty layered-matrix list");
        for (const auto& t : per_layer)
            check_arg(t.rank() == 2, "style source: layered entries must be matrices");
        return {Kind::matrix_plus, std::move(per_layer)};
    }

    bool layered() const { return kind == Kind::w_plus || kind == Kind::matrix_plus; }
    bool matrix_kind() const { return kind == Kind::matrix || kind == Kind::matrix_plus; }
    const Tensor& layer_entry(int l) const {
        return layered() ? entries[size_t(l)] : entries[0];
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& t : entries) n += t.size();
        return n;
    }

    void validate(const GeneratorConfig& cfg) const {
        check_arg(!entries.empty(), "style source: no entries");
        check_arg(layered() ? int(entries.size()) == cfg.num_layers() : entries.size() == 1,
                  "style source: entry count must match layer count");
        for (const auto& t : entries) {
            if (matrix_kind()) {
                check_arg(t.rank() == 2 && t.dim(0) == cfg.latent_rows && t.dim(1) == cfg.latent_dim,
                          "style source: matrix entries must be [R,D]");
            } else {
                check_arg(t.rank() == 1 && t.dim(0) == cfg.latent_dim,
                          "style source: vector entries must be [D]");
            }
            check_arg(t.all_finite(), "style source: non-finite values");
        }
        if (matrix_kind())
            check_arg(cfg.mode == ModulationMode::overparam,
                      "style source: matrix styles need overparameterized modulation");
    }
};

inline std::string to_string(StyleSource::Kind k) {
    switch (k) {
        case StyleSource::Kind::w: return "w";
        case StyleSource::Kind::w_plus: return "w+";
        case StyleSource::Kind::matrix: return "W";
        case StyleSource::Kind::matrix_plus: return "W+";
    }
    fail("bad style source kind");
}

inline StyleSource::Kind source_kind_from_string(const std::string& s) {
    if (s == "w") return StyleSource::Kind::w;
    if (s == "w+" || s == "wplus") return StyleSource::Kind::w_plus;
    if (s == "W" || s == "mat") return StyleSource::Kind::matrix;
    if (s == "W+" || s == "matplus") return StyleSource::Kind::matrix_plus;
    fail_arg("unknown latent space '" + s + "' (expected w, w+, W, or W+)");
}

inline int64_t count_latent_params(const GeneratorConfig& cfg, StyleSource::Kind kind) {
    const int64_t D = cfg.latent_dim, R = cfg.latent_rows, L = cfg.num_layers();
    switch (kind) {
        case StyleSource::Kind::w: return D;
        case StyleSource::Kind::w_plus: return L * D;
        case StyleSource::Kind::matrix: return R * D;
        case StyleSource::Kind::matrix_plus: return L * R * D;
    }
    fail("bad style source kind");
}

// gradient w.r.t. a StyleSource: same layout as its entries
using StyleGrads = std::vector<Tensor>;

inline StyleGrads make_style_grads(const StyleSource& src) {
    StyleGrads g;
    g.reserve(src.entries.size());
    for (const auto& t : src.entries) g.emplace_back(t.shape());
    return g;
}

struct GeneratorGrads {
    MappingNetwork::Grads mapping;
    std::vector<AffineProjection::Grads> affine;
    Tensor const_input;
    std::vector<Tensor> conv_weight, conv_bias;
    Tensor rgb_weight, rgb_bias;
};

struct SynthesisTrace {
    struct Layer {
        Tensor rows;        // style-source rows fed to the affine ([1,D] or [R,D])
        Tensor s_rows;      // affine output rows, pre-drop/replicate
        Tensor s_used;      // matrix actually used for modulation (or vector, baseline)
        Tensor theta_prime; // modulated weights, pre-demodulation
        Tensor theta_demod;
        Tensor x_in;        // conv input
        Tensor pre_act;     // conv output + bias
    };
    std::vector<Layer> layers;
    Tensor rgb_in; // features entering the 1x1 RGB projection
};

class Generator {
public:
    Generator() = default;

    Generator(SeededRng& rng, GeneratorConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        mapper_ = MappingNetwork(rng, cfg_.latent_dim, cfg_.mapping_layers);
        const int L = cfg_.num_layers();
        projections_.reserve(size_t(L));
        conv_weight_.reserve(size_t(L));
        conv_bias_.reserve(size_t(L));
        for (int l = 0; l < L; ++l) {
            const auto& spec = cfg_.layers[size_t(l)];
            projections_.emplace_back(rng, spec.in_channels, cfg_.latent_dim);
            conv_weight_.push_back(
                rng.normal_tensor({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}));
            conv_bias_.emplace_back(Tensor({int64_t(spec.out_channels)}));
        }
        const_input_ = rng.normal_tensor(
            {cfg_.const_channels, cfg_.base_resolution, cfg_.base_resolution});
        const int c_last = cfg_.layers.back().out_channels;
        rgb_weight_ = rng.normal_tensor({3, c_last, 1, 1});
        scale(rgb_weight_, 1.0f / std::sqrt(float(c_last)));
        rgb_bias_ = Tensor({3});
        mu_w_ = Tensor({cfg_.latent_dim});
    }

    const GeneratorConfig& config() const { return cfg_; }
    MappingNetwork& mapper() { return mapper_; }
    const MappingNetwork& mapper() const { return mapper_; }
    std::vector<AffineProjection>& projections() { return projections_; }
    const std::vector<AffineProjection>& projections() const { return projections_; }
    Tensor& const_input() { return const_input_; }
    std::vector<Tensor>& conv_weights() { return conv_weight_; }
    std::vector<Tensor>& conv_biases() { return conv_bias_; }
    Tensor& rgb_weight() { return rgb_weight_; }
    Tensor& rgb_bias() { return rgb_bias_; }
    const Tensor& const_input() const { return const_input_; }
    const std::vector<Tensor>& conv_weights() const { return conv_weight_; }
    const std::vector<Tensor>& conv_biases() const { return conv_bias_; }
    const Tensor& rgb_weight() const { return rgb_weight_; }
    const Tensor& rgb_bias() const { return rgb_bias_; }
    const Tensor& mean_w() const { return mu_w_; }
    void set_mean_w(Tensor mu) {
        check_arg(mu.rank() == 1 && mu.dim(0) == cfg_.latent_dim, "mean_w: dimension mismatch");
        mu_w_ = std::move(mu);
    }

    // Monte-Carlo estimate of E[M(z)], cached on the generator
    void refresh_mean_w(SeededRng& rng, int64_t n_samples = 10000) {
        mu_w_ = estimate_mean_w([this](const Tensor& z) { return mapper_.forward(z); }, rng,
                                cfg_.latent_dim, n_samples);
    }

    // map a z vector (or z rows) to the matching style source
    StyleSource map_to_w(const Tensor& z) const {
        return StyleSource::from_w(mapper_.forward(z));
    }
    StyleSource map_to_matrix(const LatentMatrix& z) const {
        check_arg(z.rows() == cfg_.latent_rows && z.dim() == cfg_.latent_dim,
                  "map_to_matrix: latent shape mismatch");
        return StyleSource::from_matrix(mapper_.forward_rows(z.m));
    }

    ImageTensor synthesize(const StyleSource& src, SynthesisTrace* trace = nullptr) const {
        src.validate(cfg_);
        const int L = cfg_.num_layers();
        if (trace) {
            trace->layers.clear();
            trace->layers.resize(size_t(L));
        }
        Tensor x = const_input_;
        for (int l = 0; l < L; ++l) {
            const auto& spec = cfg_.layers[size_t(l)];
            const Tensor& entry = src.layer_entry(l);
            const Tensor rows =
                entry.rank() == 1 ? entry.reshaped({1, entry.dim(0)}) : entry;
            const Tensor s_rows = projections_[size_t(l)].apply_rows(rows);

            ModulatedWeights mod;
            Tensor s_used;
            if (cfg_.mode == ModulationMode::baseline) {
                s_used = s_rows.reshaped({s_rows.dim(1)});
                mod = modulate_baseline(conv_weight_[size_t(l)], s_used);
            } else if (src.matrix_kind()) {
                s_used = drop_rows(s_rows, spec.out_channels);
                mod = modulate_overparam(conv_weight_[size_t(l)], s_used);
            } else {
                s_used = replicate_rows(s_rows.reshaped({s_rows.dim(1)}), spec.out_channels);
                mod = modulate_overparam(conv_weight_[size_t(l)], s_used);
            }
            const ModulatedWeights dem = demodulate(mod);

            Tensor pre = conv2d(x, dem.theta);
            add_bias(pre, conv_bias_[size_t(l)]);
            if (trace) {
                auto& tl = trace->layers[size_t(l)];
                tl.rows = rows;
                tl.s_rows = s_rows;
                tl.s_used = s_used;
                tl.theta_prime = mod.theta;
                tl.theta_demod = dem.theta;
                tl.x_in = x;
                tl.pre_act = pre;
            }
            Tensor act = leaky_relu(pre, kSlope);
            x = spec.upsample ? upsample2_nearest(act) : std::move(act);
        }
        if (trace) trace->rgb_in = x;
        Tensor img = conv2d(x, rgb_weight_);
        add_bias(img, rgb_bias_);
        check(img.all_finite(), "synthesize: non-finite output");
        return ImageTensor(std::move(img));
    }

    // Pulls d loss / d image back to the style source (g_src, always) and the
    // network parameters (g_params, when non-null). Gradients accumulate.
    void backward(const StyleSource& src, const SynthesisTrace& tr, const Tensor& g_image,
                  StyleGrads* g_src, GeneratorGrads* g_params) const {
        const int L = cfg_.num_layers();
        check_arg(int(tr.layers.size()) == L, "backward: trace missing");

        Tensor g = conv2d_input_grad(g_image, rgb_weight_);
        if (g_params) {
            axpy_into(g_params->rgb_weight, conv2d_weight_grad(tr.rgb_in, g_image, 1));
            axpy_into(g_params->rgb_bias, bias_grad(g_image));
        }

        for (int l = L - 1; l >= 0; --l) {
            const auto& spec = cfg_.layers[size_t(l)];
            const auto& tl = tr.layers[size_t(l)];
            if (spec.upsample) g = upsample2_nearest_backward(g);
            g = leaky_relu_backward(g, tl.pre_act, kSlope);
            if (g_params) axpy_into(g_params->conv_bias[size_t(l)], bias_grad(g));

            const Tensor g_theta_demod = conv2d_weight_grad(tl.x_in, g, spec.kernel);
            Tensor g_next = conv2d_input_grad(g, tl.theta_demod);
            const Tensor g_theta_prime = demodulate_backward(tl.theta_prime, g_theta_demod);

            Tensor* g_theta = nullptr;
            if (g_params) g_theta = &g_params->conv_weight[size_t(l)];

            Tensor g_s_rows; // gradient w.r.t. the affine output rows
            if (cfg_.mode == ModulationMode::baseline) {
                Tensor g_s({tl.s_used.dim(0)});
                modulate_baseline_backward(conv_weight_[size_t(l)], tl.s_used, g_theta_prime,
                                           &g_s, g_theta);
                g_s_rows = g_s.reshaped({1, g_s.dim(0)});
            } else {
                Tensor g_S(tl.s_used.shape());
                modulate_overparam_backward(conv_weight_[size_t(l)], tl.s_used, g_theta_prime,
                                            &g_S, g_theta);
                if (src.matrix_kind()) {
                    g_s_rows = drop_rows_backward(g_S, tl.s_rows.dim(0));
                } else {
                    // replicated rows: fold the matrix gradient back onto one row
                    g_s_rows = Tensor({int64_t(1), g_S.dim(1)});
                    for (int64_t i = 0; i < g_S.dim(0); ++i)
                        for (int64_t j = 0; j < g_S.dim(1); ++j) g_s_rows(0, j) += g_S(i, j);
                }
            }

            AffineProjection::Grads* ag =
                g_params ? &g_params->affine[size_t(l)] : nullptr;
            const Tensor g_rows =
                projections_[size_t(l)].backward_rows(tl.rows, g_s_rows, ag);

            if (g_src) {
                Tensor& slot = src.layered() ? (*g_src)[size_t(l)] : (*g_src)[0];
                if (slot.rank() == 1) {
                    for (int64_t j = 0; j < slot.dim(0); ++j) slot[j] += g_rows(0, j);
                } else {
                    axpy(slot, g_rows, 1.0f);
                }
            }
            g = std::move(g_next);
        }
        if (g_params) axpy_into(g_params->const_input, g);
    }

    // mean-squared-error objective and its gradient w.r.t. the style source
    std::pair<double, StyleGrads> loss_and_grad(const StyleSource& src,
                                                const ImageTensor& target) const {
        SynthesisTrace tr;
        const ImageTensor out = synthesize(src, &tr);
        check_arg(out.chw.same_shape(target.chw), "loss_and_grad: target shape mismatch");
        const int64_t n = out.chw.size();
        double loss = 0.0;
        Tensor g_img(out.chw.shape());
        for (int64_t i = 0; i < n; ++i) {
            const double d = double(out.chw[i]) - double(target.chw[i]);
            loss += d * d;
            g_img[i] = float(2.0 * d / double(n));
        }
        loss /= double(n);
        check(std::isfinite(loss), "loss_and_grad: non-finite loss");
        StyleGrads g = make_style_grads(src);
        backward(src, tr, g_img, &g, nullptr);
        return {loss, std::move(g)};
    }

    GeneratorGrads make_grads() const {
        GeneratorGrads g;
        g.mapping.init(mapper_);
        g.affine.resize(projections_.size());
        for (size_t l = 0; l < projections_.size(); ++l) g.affine[l].init(projections_[l]);
        g.const_input = Tensor(const_input_.shape());
        for (const auto& w : conv_weight_) g.conv_weight.emplace_back(w.shape());
        for (const auto& b : conv_bias_) g.conv_bias.emplace_back(b.shape());
        g.rgb_weight = Tensor(rgb_weight_.shape());
        g.rgb_bias = Tensor(rgb_bias_.shape());
        return g;
    }

    // parameters and gradients in one canonical order, for optimizers and IO
    std::vector<std::pair<std::string, Tensor*>> param_refs() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (int i = 0; i < mapper_.layer_count(); ++i) {
            const std::string p = "mapping.layer" + std::to_string(i);
            out.push_back({p + ".weight", &mapper_.layers()[size_t(i)].weight});
            out.push_back({p + ".bias", &mapper_.layers()[size_t(i)].bias});
        }
        for (size_t l = 0; l < projections_.size(); ++l) {
            const std::string p = "affine.layer" + std::to_string(l);
            out.push_back({p + ".weight", &projections_[l].weight()});
            out.push_back({p + ".bias", &projections_[l].bias()});
        }
        out.push_back({"const_input", &const_input_});
        for (size_t l = 0; l < conv_weight_.size(); ++l) {
            const std::string p = "conv.layer" + std::to_string(l);
            out.push_back({p + ".weight", &conv_weight_[l]});
            out.push_back({p + ".bias", &conv_bias_[l]});
        }
        out.push_back({"rgb.weight", &rgb_weight_});
        out.push_back({"rgb.bias", &rgb_bias_});
        return out;
    }

    // same order as grad_refs, for optimizers
    std::vector<Tensor*> param_ptrs() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : param_refs()) out.push_back(t);
        return out;
    }

    static std::vector<Tensor*> grad_refs(GeneratorGrads& g) {
        std::vector<Tensor*> out;
        for (size_t i = 0; i < g.mapping.weight.size(); ++i) {
            out.push_back(&g.mapping.weight[i]);
            out.push_back(&g.mapping.bias[i]);
        }
        for (auto& a : g.affine) {
            out.push_back(&a.weight);
            out.push_back(&a.bias);
        }
        out.push_back(&g.const_input);
        for (size_t l = 0; l < g.conv_weight.size(); ++l) {
            out.push_back(&g.conv_weight[l]);
            out.push_back(&g.conv_bias[l]);
        }
        out.push_back(&g.rgb_weight);
        out.push_back(&g.rgb_bias);
        return out;
    }

    void save(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        nlohmann::json meta;
        meta["format"] = "opstyle-checkpoint";
        meta["version"] = 1;
        meta["config"] = cfg_;
        std::ofstream mf(fs::path(dir) / "meta.json");
        check(bool(mf), "checkpoint save: cannot write meta.json in " + dir);
        mf << meta.dump(2) << "\n";
        mf.close();
        auto* self = const_cast<Generator*>(this);
        for (const auto& [name, t] : self->param_refs())
            save_tensor(*t, (fs::path(dir) / (name + ".opt1")).string());
        save_tensor(mu_w_, (fs::path(dir) / "mu_w.opt1").string());
    }

    static Generator load(const std::string& dir) {
        namespace fs = std::filesystem;
        std::ifstream mf(fs::path(dir) / "meta.json");
        check(bool(mf), "checkpoint load: missing meta.json in " + dir);
        nlohmann::json meta;
        mf >> meta;
        check(meta.value("format", "") == "opstyle-checkpoint",
              "checkpoint load: unrecognized format tag");
        Generator g;
        g.cfg_ = meta.at("config").get<GeneratorConfig>();
        g.cfg_.validate();
        SeededRng scratch(0);
        Generator shaped(scratch, g.cfg_); // establishes shapes, then overwritten
        g = std::move(shaped);
        for (auto& [name, t] : g.param_refs()) {
            Tensor loaded = load_tensor((fs::path(dir) / (name + ".opt1")).string());
            check(loaded.shape() == t->shape(),
                  "checkpoint load: shape mismatch for " + name);
            *t = std::move(loaded);
        }
        g.set_mean_w(load_tensor((fs::path(dir) / "mu_w.opt1").string()));
        return g;
    }

    // stable content hash over parameters, for run manifests
    uint64_t content_hash() const {
        auto* self = const_cast<Generator*>(this);
        uint64_t h = 0xCBF29CE484222325ull;
        for (const auto& [name, t] : self->param_refs()) {
            h = fnv1a64(reinterpret_cast<const uint8_t*>(name.data()), name.size(), h);
            h = fnv1a64(reinterpret_cast<const uint8_t*>(t->data()), size_t(t->size()) * 4, h);
        }
        h = fnv1a64(reinterpret_cast<const uint8_t*>(mu_w_.data()), size_t(mu_w_.size()) * 4, h);
        return h;
    }

    static constexpr float kSlope = 0.2f;

private:
    static void axpy_into(Tensor& dst, const Tensor& src) { axpy(dst, src, 1.0f); }

    GeneratorConfig cfg_;
    MappingNetwork mapper_;
    std::vector<AffineProjection> projections_;
    Tensor const_input_;
    std::vector<Tensor> conv_weight_, conv_bias_;
    Tensor rgb_weight_, rgb_bias_;
    Tensor mu_w_;
};

} // namespace opstyle
