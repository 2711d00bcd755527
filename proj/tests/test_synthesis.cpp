#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "opstyle/synthesis.hpp"
#include "reference_model.hpp"

using namespace opstyle;
namespace fs = std::filesystem;

namespace {

GeneratorConfig tiny_config(ModulationMode mode) {
    GeneratorConfig cfg;
    cfg.latent_dim = 8;
    cfg.latent_rows = 8;
    cfg.mapping_layers = 2;
    cfg.mode = mode;
    cfg.const_channels = 6;
    cfg.base_resolution = 4;
    cfg.layers = {{6, 8, 3, true}, {8, 5, 3, false}};
    return cfg;
}

// the 4 style-source families for one generator, drawn from one stream
struct SourceSet {
    StyleSource w, w_plus, mat, mat_plus;
};

SourceSet draw_sources(const Generator& g, SeededRng& rng) {
    const auto& cfg = g.config();
    const int L = cfg.num_layers();
    SourceSet s;
    s.w = g.map_to_w(rng.normal_tensor({cfg.latent_dim}));
    std::vector<Tensor> wl;
    for (int l = 0; l < L; ++l)
        wl.push_back(g.map_to_w(rng.normal_tensor({cfg.latent_dim})).entries[0]);
    s.w_plus = StyleSource::from_w_plus(std::move(wl));
    s.mat = g.map_to_matrix(sample_correlated_z(rng, cfg.latent_rows, cfg.latent_dim));
    std::vector<Tensor> ml;
    for (int l = 0; l < L; ++l)
        ml.push_back(
            g.map_to_matrix(sample_correlated_z(rng, cfg.latent_rows, cfg.latent_dim)).entries[0]);
    s.mat_plus = StyleSource::from_matrix_plus(std::move(ml));
    return s;
}

double max_abs_vs_ref(const ImageTensor& img, const refmodel::Vec& ref) {
    REQUIRE(size_t(img.chw.size()) == ref.size());
    double m = 0;
    for (int64_t i = 0; i < img.chw.size(); ++i)
        m = std::max(m, std::abs(double(img.chw[i]) - ref[size_t(i)]));
    return m;
}

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("opstyle_synth_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

float max_abs(const Tensor& t) {
    float m = 0;
    for (int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
    return m;
}

} // namespace

TEST_CASE("synthesis matches the reference model in every style family") {
    SeededRng rng(60);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    SourceSet s = draw_sources(g, rng);
    REQUIRE(max_abs_vs_ref(g.synthesize(s.w), refmodel::synthesize(g, s.w)) < 1e-5);
    REQUIRE(max_abs_vs_ref(g.synthesize(s.w_plus), refmodel::synthesize(g, s.w_plus)) < 1e-5);
    REQUIRE(max_abs_vs_ref(g.synthesize(s.mat), refmodel::synthesize(g, s.mat)) < 1e-5);
    REQUIRE(max_abs_vs_ref(g.synthesize(s.mat_plus), refmodel::synthesize(g, s.mat_plus)) < 1e-5);
}

TEST_CASE("column-modulated synthesis matches the reference model") {
    SeededRng rng(61);
    Generator g(rng, tiny_config(ModulationMode::baseline));
    const StyleSource w = g.map_to_w(rng.normal_tensor({8}));
    REQUIRE(max_abs_vs_ref(g.synthesize(w), refmodel::synthesize(g, w)) < 1e-5);
    std::vector<Tensor> wl;
    for (int l = 0; l < 2; ++l)
        wl.push_back(g.map_to_w(rng.normal_tensor({8})).entries[0]);
    const StyleSource wp = StyleSource::from_w_plus(std::move(wl));
    REQUIRE(max_abs_vs_ref(g.synthesize(wp), refmodel::synthesize(g, wp)) < 1e-5);
}

TEST_CASE("output shape and finiteness") {
    SeededRng rng(62);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    const ImageTensor img = g.synthesize(g.map_to_w(rng.normal_tensor({8})));
    REQUIRE(img.channels() == 3);
    REQUIRE(img.height() == g.config().output_resolution());
    REQUIRE(img.width() == g.config().output_resolution());
    REQUIRE(img.chw.all_finite());
}

TEST_CASE("a repeated w vector behaves like a row-matrix of copies") {
    SeededRng rng(63);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor z = rng.normal_tensor({8});
        Tensor z_rows({8, 8});
        for (int64_t r = 0; r < 8; ++r)
            for (int64_t d = 0; d < 8; ++d) z_rows(r, d) = z[d];
        const ImageTensor a = g.synthesize(g.map_to_w(z));
        const ImageTensor b = g.synthesize(g.map_to_matrix(LatentMatrix{z_rows, LatentSpace::Z}));
        REQUIRE(max_abs_diff(a.chw, b.chw) <= 1e-5f);
    }
}

TEST_CASE("layered sources with identical entries collapse to the single-entry form") {
    SeededRng rng(64);
    Generator g(rng, tiny_config(ModulationMode::overparam));

    const StyleSource w = g.map_to_w(rng.normal_tensor({8}));
    const StyleSource wp = StyleSource::from_w_plus({w.entries[0], w.entries[0]});
    REQUIRE(max_abs_diff(g.synthesize(w).chw, g.synthesize(wp).chw) <= 1e-5f);

    const StyleSource m = g.map_to_matrix(sample_correlated_z(rng, 8, 8));
    const StyleSource mp = StyleSource::from_matrix_plus({m.entries[0], m.entries[0]});
    REQUIRE(max_abs_diff(g.synthesize(m).chw, g.synthesize(mp).chw) <= 1e-5f);
}

TEST_CASE("style-source gradients match finite differences of the reference loss") {
    SeededRng rng(65);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    SourceSet sources = draw_sources(g, rng);
    const ImageTensor target = g.synthesize(g.map_to_matrix(sample_correlated_z(rng, 8, 8)));

    auto check_space = [&](StyleSource src, const char* label) {
        INFO("space " << label);
        auto [loss, grads] = g.loss_and_grad(src, target);
        REQUIRE(std::isfinite(loss));
        REQUIRE(grads.size() == src.entries.size());

        float gmax = 0;
        for (const auto& gt : grads) gmax = std::max(gmax, max_abs(gt));
        REQUIRE(gmax > 0);

        SeededRng pick(900 + uint64_t(src.kind));
        int checked = 0, attempts = 0;
        while (checked < 12 && attempts < 400) {
            ++attempts;
            const size_t e = size_t(pick.next_below(uint64_t(src.entries.size())));
            const int64_t i = int64_t(pick.next_below(uint64_t(src.entries[e].size())));
            const float saved = src.entries[e][i];
            std::vector<int> sp, sm;
            src.entries[e][i] = saved + 1e-3f;
            const double lp = refmodel::l2_loss(g, src, target, &sp);
            src.entries[e][i] = saved - 1e-3f;
            const double lm = refmodel::l2_loss(g, src, target, &sm);
            const double span = double(saved + 1e-3f) - double(saved - 1e-3f);
            src.entries[e][i] = saved;
            // a rectifier kink between the two probe points invalidates the stencil
            if (sp != sm) continue;
            const double fd = (lp - lm) / span;
            if (std::abs(fd) < 1e-3 * double(gmax)) continue;
            const double rel = std::abs(double(grads[e][i]) - fd) /
                               std::max(std::abs(fd), 1e-12);
            INFO("entry " << e << " coord " << i << " fd " << fd << " analytic "
                          << double(grads[e][i]));
            REQUIRE(rel < 1e-3);
            ++checked;
        }
        REQUIRE(checked >= 8);
    };

    check_space(sources.w, "w");
    check_space(sources.w_plus, "w+");
    check_space(sources.mat, "W");
    check_space(sources.mat_plus, "W+");
}

TEST_CASE("parameter gradients match finite differences of the reference loss") {
    SeededRng rng(66);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    const StyleSource src = g.map_to_matrix(sample_correlated_z(rng, 8, 8));
    const ImageTensor target = g.synthesize(g.map_to_matrix(sample_correlated_z(rng, 8, 8)));

    // analytic parameter gradients for the mean-squared-error objective
    SynthesisTrace tr;
    const ImageTensor out = g.synthesize(src, &tr);
    const int64_t n = out.chw.size();
    Tensor g_img(out.chw.shape());
    for (int64_t i = 0; i < n; ++i)
        g_img[i] = float(2.0 * (double(out.chw[i]) - double(target.chw[i])) / double(n));
    StyleGrads g_src = make_style_grads(src);
    GeneratorGrads gp = g.make_grads();
    g.backward(src, tr, g_img, &g_src, &gp);

    // every parameter tensor, paired with its analytic gradient
    std::vector<Tensor*> params = g.param_ptrs();
    std::vector<Tensor*> grads = Generator::grad_refs(gp);
    REQUIRE(params.size() == grads.size());

    float gmax = 0;
    for (const Tensor* t : grads) gmax = std::max(gmax, max_abs(*t));
    REQUIRE(gmax > 0);

    SeededRng pick(970);
    int checked = 0, attempts = 0;
    while (checked < 24 && attempts < 800) {
        ++attempts;
        const size_t p = size_t(pick.next_below(uint64_t(params.size())));
        const int64_t i = int64_t(pick.next_below(uint64_t(params[p]->size())));
        Tensor& t = *params[p];
        const float saved = t[i];
        std::vector<int> sp, sm;
        t[i] = saved + 1e-3f;
        const double lp = refmodel::l2_loss(g, src, target, &sp);
        t[i] = saved - 1e-3f;
        const double lm = refmodel::l2_loss(g, src, target, &sm);
        const double span = double(saved + 1e-3f) - double(saved - 1e-3f);
        t[i] = saved;
        if (sp != sm) continue;
        const double fd = (lp - lm) / span;
        if (std::abs(fd) < 1e-3 * double(gmax)) continue;
        const double rel =
            std::abs(double((*grads[p])[i]) - fd) / std::max(std::abs(fd), 1e-12);
        INFO("param " << p << " coord " << i << " fd " << fd << " analytic "
                      << double((*grads[p])[i]));
        REQUIRE(rel < 2e-3);
        ++checked;
    }
    REQUIRE(checked >= 16);
}

TEST_CASE("loss gradient for the style matrix agrees with the full-vector norm check") {
    SeededRng rng(67);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    const StyleSource src = g.map_to_matrix(sample_correlated_z(rng, 8, 8));
    const ImageTensor target = g.synthesize(g.map_to_matrix(sample_correlated_z(rng, 8, 8)));
    auto [loss, grads] = g.loss_and_grad(src, target);
    REQUIRE(loss > 0);
    // gradient of MSE at the optimum vanishes: invert against the source's own image
    auto [self_loss, self_grads] = g.loss_and_grad(src, g.synthesize(src));
    REQUIRE(self_loss == 0.0);
    REQUIRE(max_abs(self_grads[0]) == 0.0f);
    (void)grads;
}

TEST_CASE("checkpoint round trip preserves parameters and behaviour") {
    SeededRng rng(68);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    g.refresh_mean_w(rng, 500);
    const fs::path dir = temp_dir("ckpt");
    g.save(dir.string());
    const Generator loaded = Generator::load(dir.string());

    REQUIRE(loaded.content_hash() == g.content_hash());
    REQUIRE(max_abs_diff(loaded.mean_w(), g.mean_w()) == 0.0f);
    const StyleSource src = g.map_to_matrix(sample_correlated_z(rng, 8, 8));
    REQUIRE(max_abs_diff(loaded.synthesize(src).chw, g.synthesize(src).chw) == 0.0f);

    // and the hash is sensitive to any parameter change
    Generator tweaked = Generator::load(dir.string());
    tweaked.conv_weights()[0][0] += 1e-3f;
    REQUIRE(tweaked.content_hash() != g.content_hash());
    fs::remove_all(dir);
}

TEST_CASE("checkpoint loading rejects a foreign meta file") {
    const fs::path dir = temp_dir("badmeta");
    std::ofstream(dir / "meta.json") << "{\"format\":\"something-else\",\"version\":1}\n";
    REQUIRE_THROWS(Generator::load(dir.string()));
    REQUIRE_THROWS(Generator::load((dir / "missing").string()));
    fs::remove_all(dir);
}

TEST_CASE("latent parameter counts per family") {
    GeneratorConfig desk = GeneratorConfig::desk_default();
    const int64_t D = desk.latent_dim, R = desk.latent_rows, L = desk.num_layers();
    REQUIRE(count_latent_params(desk, StyleSource::Kind::w) == D);
    REQUIRE(count_latent_params(desk, StyleSource::Kind::w_plus) == L * D);
    REQUIRE(count_latent_params(desk, StyleSource::Kind::matrix) == R * D);
    REQUIRE(count_latent_params(desk, StyleSource::Kind::matrix_plus) == L * R * D);

    // full-scale configuration: 512-dim styles, 512 rows, 14 layers
    GeneratorConfig big;
    big.latent_dim = 512;
    big.latent_rows = 512;
    big.mapping_layers = 8;
    big.const_channels = 512;
    big.base_resolution = 4;
    big.layers.clear();
    for (int l = 0; l < 14; ++l) big.layers.push_back({512, 512, 3, l % 2 == 0});
    REQUIRE(count_latent_params(big, StyleSource::Kind::matrix) == 512 * 512);
    REQUIRE(count_latent_params(big, StyleSource::Kind::matrix) == 262144);
    // family ratio identity: count(W) * L == count(w+) * R for any config
    for (const GeneratorConfig* cfg : {&desk, &big}) {
        REQUIRE(count_latent_params(*cfg, StyleSource::Kind::matrix) * cfg->num_layers() ==
                count_latent_params(*cfg, StyleSource::Kind::w_plus) * cfg->latent_rows);
    }

    // a constructed source carries exactly that many degrees of freedom
    SeededRng rng(69);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    REQUIRE(g.map_to_w(rng.normal_tensor({8})).param_count() ==
            count_latent_params(g.config(), StyleSource::Kind::w));
    REQUIRE(g.map_to_matrix(sample_correlated_z(rng, 8, 8)).param_count() ==
            count_latent_params(g.config(), StyleSource::Kind::matrix));
}

TEST_CASE("style sources validate their shapes against the generator") {
    SeededRng rng(70);
    const GeneratorConfig cfg = tiny_config(ModulationMode::overparam);
    Generator g(rng, cfg);

    REQUIRE_THROWS(StyleSource::from_w(rng.normal_tensor({4, 4})));
    REQUIRE_THROWS(StyleSource::from_matrix(rng.normal_tensor({8})));
    REQUIRE_THROWS(StyleSource::from_w_plus({}));

    // wrong vector width
    REQUIRE_THROWS(g.synthesize(StyleSource::from_w(rng.normal_tensor({9}))));
    // wrong row count for the style matrix
    REQUIRE_THROWS(g.synthesize(StyleSource::from_matrix(rng.normal_tensor({4, 8}))));
    // layered source must cover every layer
    REQUIRE_THROWS(g.synthesize(StyleSource::from_w_plus({rng.normal_tensor({8})})));
    // matrix styles require the row-wise modulation mode
    Generator base(rng, tiny_config(ModulationMode::baseline));
    REQUIRE_THROWS(base.synthesize(StyleSource::from_matrix(rng.normal_tensor({8, 8}))));
    // non-finite entries are rejected
    Tensor bad({8});
    bad[3] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS(g.synthesize(StyleSource::from_w(std::move(bad))));
}

TEST_CASE("source kind names round trip") {
    using K = StyleSource::Kind;
    for (K k : {K::w, K::w_plus, K::matrix, K::matrix_plus})
        REQUIRE(source_kind_from_string(to_string(k)) == k);
    REQUIRE_THROWS(source_kind_from_string("q"));
}
