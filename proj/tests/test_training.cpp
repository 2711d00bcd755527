#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "opstyle/training.hpp"
#include "reference_model.hpp"

using namespace opstyle;

namespace {

GeneratorConfig tiny_config(ModulationMode mode) {
    GeneratorConfig cfg;
    cfg.latent_dim = 8;
    cfg.latent_rows = 8;
    cfg.mapping_layers = 2;
    cfg.mode = mode;
    cfg.const_channels = 6;
    cfg.base_resolution = 4;
    cfg.layers = {{6, 8, 3, true}, {8, 5, 3, false}};  // output 8x8
    return cfg;
}

ImageTensor random_image(SeededRng& rng, int res) {
    ImageTensor img(res, res);
    img.chw = rng.normal_tensor({3, res, res});
    return img;
}

} // namespace

TEST_CASE("the synthetic dataset is deterministic per (seed, index)") {
    const SyntheticDataset data(5, 100, 16);
    REQUIRE(data.size() == 100);
    REQUIRE(data.resolution() == 16);
    REQUIRE(max_abs_diff(data.make(7).chw, data.make(7).chw) == 0.0f);
    REQUIRE(max_abs_diff(data.make(7).chw, SyntheticDataset(5, 100, 16).make(7).chw) == 0.0f);
    REQUIRE(max_abs_diff(data.make(7).chw, data.make(8).chw) > 0.0f);
    REQUIRE(max_abs_diff(data.make(7).chw, SyntheticDataset(6, 100, 16).make(7).chw) > 0.0f);

    // values clamped to [-1, 1], shape as configured
    const ImageTensor img = data.make(0);
    REQUIRE(img.height() == 16);
    for (int64_t i = 0; i < img.chw.size(); ++i) {
        REQUIRE(img.chw[i] >= -1.0f);
        REQUIRE(img.chw[i] <= 1.0f);
    }
    REQUIRE_THROWS(data.make(100));
    REQUIRE_THROWS(data.make(-1));
    REQUIRE_THROWS(SyntheticDataset(5, 0, 16));
    REQUIRE_THROWS(SyntheticDataset(5, 10, 2));
}

TEST_CASE("channel statistics match a direct pass over the items") {
    const SyntheticDataset data(9, 10, 8);
    const auto [mean, stddev] = data.channel_stats(3);
    for (int c = 0; c < 3; ++c) {
        double m = 0, v = 0;
        int64_t n = 0;
        for (int64_t i = 0; i < 3; ++i) {
            const ImageTensor img = data.make(i);
            const int64_t hw = 64;
            for (int64_t k = 0; k < hw; ++k) {
                const double x = double(img.chw[c * hw + k]);
                m += x;
                v += x * x;
                ++n;
            }
        }
        m /= double(n);
        v = v / double(n) - m * m;
        REQUIRE_THAT(mean[size_t(c)], Catch::Matchers::WithinAbs(m, 1e-9));
        REQUIRE_THAT(stddev[size_t(c)], Catch::Matchers::WithinAbs(std::sqrt(v), 1e-9));
    }
}

TEST_CASE("logistic loss pair takes its textbook values") {
    const double ln2 = std::log(2.0);
    auto [g0, d0] = gan_losses(0.0, 0.0);
    REQUIRE_THAT(g0, Catch::Matchers::WithinAbs(ln2, 1e-12));
    REQUIRE_THAT(d0, Catch::Matchers::WithinAbs(2.0 * ln2, 1e-12));

    auto [g1, d1] = gan_losses(0.3, -0.7);
    REQUIRE_THAT(g1, Catch::Matchers::WithinAbs(1.103186048885458, 1e-12));
    REQUIRE_THAT(d1, Catch::Matchers::WithinAbs(0.957541293353984, 1e-12));

    // a confident critic drives its own loss to zero and the generator's up
    auto [g2, d2] = gan_losses(50.0, -50.0);
    REQUIRE(d2 < 1e-12);
    REQUIRE_THAT(g2, Catch::Matchers::WithinAbs(50.0, 1e-9));

    // softplus stays finite far out and sigmoid saturates cleanly
    REQUIRE(softplus(1000.0) == 1000.0);
    REQUIRE(softplus(-1000.0) == 0.0);
    REQUIRE_THAT(sigmoid(0.0), Catch::Matchers::WithinAbs(0.5, 1e-15));
    REQUIRE_THAT(sigmoid(30.0) + sigmoid(-30.0), Catch::Matchers::WithinAbs(1.0, 1e-12));

    REQUIRE_THROWS(gan_losses(std::numeric_limits<double>::infinity(), 0.0));
}

TEST_CASE("style mixing fires at the configured rate with crossovers inside the run") {
    SeededRng rng(130);
    int mixed = 0;
    bool saw[4] = {false, false, false, false};
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
        const MixAssignment a = style_mixing_regularize(rng, 0.5f, 4);
        if (a.mixed) {
            ++mixed;
            REQUIRE(a.crossover >= 1);
            REQUIRE(a.crossover <= 3);
            saw[a.crossover] = true;
        } else {
            REQUIRE(a.crossover == 0);
        }
    }
    REQUIRE_THAT(double(mixed) / n, Catch::Matchers::WithinAbs(0.5, 0.03));
    REQUIRE(saw[1]);
    REQUIRE(saw[2]);
    REQUIRE(saw[3]);

    SeededRng r2(131);
    for (int i = 0; i < 50; ++i) REQUIRE_FALSE(style_mixing_regularize(r2, 0.0f, 3).mixed);
    for (int i = 0; i < 50; ++i) REQUIRE(style_mixing_regularize(r2, 1.0f, 3).mixed);
    REQUIRE_THROWS(style_mixing_regularize(r2, 1.5f, 3));
    REQUIRE_THROWS(style_mixing_regularize(r2, 0.5f, 1));
}

TEST_CASE("critic forward matches the reference model") {
    SeededRng rng(132);
    Discriminator d(rng, 16);
    for (int trial = 0; trial < 3; ++trial) {
        const ImageTensor img = random_image(rng, 16);
        Discriminator::Trace tr;
        const double logit = d.forward(img, &tr);
        const refmodel::CriticForward ref = refmodel::critic_forward(d, img);
        REQUIRE_THAT(logit, Catch::Matchers::WithinAbs(ref.logit, 1e-4));
        REQUIRE(tr.pre.size() == 3);
        REQUIRE(tr.pre[0].dim(1) == 8);
        REQUIRE(tr.pre[2].dim(1) == 2);
        REQUIRE(tr.feat.dim(0) == 128);
    }
    SeededRng r2(133);
    REQUIRE_THROWS(Discriminator(r2, 12));  // not a multiple of 8
    const ImageTensor wrong = random_image(rng, 8);
    REQUIRE_THROWS(d.forward(wrong));
}

TEST_CASE("critic input gradient matches the reference model") {
    SeededRng rng(134);
    Discriminator d(rng, 8);
    const ImageTensor img = random_image(rng, 8);
    Discriminator::Trace tr;
    d.forward(img, &tr);
    const Tensor gx = d.input_grad(tr, 1.0);
    const refmodel::Vec ref = refmodel::critic_input_grad(d, img, refmodel::critic_forward(d, img));
    REQUIRE(size_t(gx.size()) == ref.size());
    double worst = 0;
    for (int64_t i = 0; i < gx.size(); ++i)
        worst = std::max(worst, std::abs(double(gx[i]) - ref[size_t(i)]));
    REQUIRE(worst < 1e-5);
}

TEST_CASE("critic parameter gradients match finite differences of the logit") {
    SeededRng rng(135);
    Discriminator d(rng, 8);
    const ImageTensor img = random_image(rng, 8);
    Discriminator::Trace tr;
    d.forward(img, &tr);
    Discriminator::Grads grads;
    grads.init(d);
    d.backward(tr, 1.0, &grads);

    std::vector<Tensor*> params = d.param_ptrs();
    std::vector<Tensor*> gptrs = Discriminator::grad_refs(grads);
    float gmax = 0;
    for (const Tensor* t : gptrs)
        for (int64_t i = 0; i < t->size(); ++i) gmax = std::max(gmax, std::abs((*t)[i]));

    auto signs_of = [](const refmodel::CriticForward& f) {
        std::vector<int> s;
        for (const auto& stage : f.pre)
            for (double v : stage) s.push_back(v >= 0.0 ? 1 : -1);
        return s;
    };

    SeededRng pick(1350);
    int checked = 0, attempts = 0;
    while (checked < 20 && attempts < 600) {
        ++attempts;
        const size_t p = size_t(pick.next_below(uint64_t(params.size())));
        const int64_t i = int64_t(pick.next_below(uint64_t(params[p]->size())));
        Tensor& t = *params[p];
        const float saved = t[i];
        t[i] = saved + 1e-3f;
        const refmodel::CriticForward fp = refmodel::critic_forward(d, img);
        t[i] = saved - 1e-3f;
        const refmodel::CriticForward fm = refmodel::critic_forward(d, img);
        const double span = double(saved + 1e-3f) - double(saved - 1e-3f);
        t[i] = saved;
        if (signs_of(fp) != signs_of(fm)) continue;
        const double fd = (fp.logit - fm.logit) / span;
        if (std::abs(fd) < 1e-3 * double(gmax)) continue;
        const double rel =
            std::abs(double((*gptrs[p])[i]) - fd) / std::max(std::abs(fd), 1e-12);
        INFO("param " << p << " coord " << i << " fd " << fd << " analytic "
                      << double((*gptrs[p])[i]));
        REQUIRE(rel < 2e-3);
        ++checked;
    }
    REQUIRE(checked >= 14);
}

TEST_CASE("gradient penalty value and parameter gradients") {
    SeededRng rng(136);
    Discriminator d(rng, 8);
    const ImageTensor img = random_image(rng, 8);
    Discriminator::Trace tr;
    d.forward(img, &tr);

    const double gamma = 0.7;
    Discriminator::Grads grads;
    grads.init(d);
    const double pen = d.r1_penalty(tr, gamma, &grads);
    REQUIRE_THAT(pen, Catch::Matchers::WithinRel(refmodel::r1_penalty(d, img, gamma), 1e-6));
    // the penalty scales linearly in gamma
    REQUIRE_THAT(d.r1_penalty(tr, 2.0 * gamma, nullptr),
                 Catch::Matchers::WithinRel(2.0 * pen, 1e-9));
    // biases never reach the input gradient, so they get no penalty gradient
    for (const Tensor& b : grads.bias)
        for (int64_t i = 0; i < b.size(); ++i) REQUIRE(b[i] == 0.0f);

    std::vector<Tensor*> params = d.param_ptrs();
    std::vector<Tensor*> gptrs = Discriminator::grad_refs(grads);
    float gmax = 0;
    for (const Tensor* t : gptrs)
        for (int64_t i = 0; i < t->size(); ++i) gmax = std::max(gmax, std::abs((*t)[i]));

    auto signs_of = [](const refmodel::CriticForward& f) {
        std::vector<int> s;
        for (const auto& stage : f.pre)
            for (double v : stage) s.push_back(v >= 0.0 ? 1 : -1);
        return s;
    };

    // finite differences of the oracle penalty; only weights carry gradient
    SeededRng pick(1360);
    int checked = 0, attempts = 0;
    while (checked < 14 && attempts < 600) {
        ++attempts;
        const size_t p = 2 * size_t(pick.next_below(4));  // weight slots only
        const int64_t i = int64_t(pick.next_below(uint64_t(params[p]->size())));
        Tensor& t = *params[p];
        const float saved = t[i];
        t[i] = saved + 5e-4f;
        const double pp = refmodel::r1_penalty(d, img, gamma);
        const std::vector<int> sp = signs_of(refmodel::critic_forward(d, img));
        t[i] = saved - 5e-4f;
        const double pm = refmodel::r1_penalty(d, img, gamma);
        const std::vector<int> sm = signs_of(refmodel::critic_forward(d, img));
        const double span = double(saved + 5e-4f) - double(saved - 5e-4f);
        t[i] = saved;
        if (sp != sm) continue;
        const double fd = (pp - pm) / span;
        if (std::abs(fd) < 1e-3 * double(gmax)) continue;
        const double rel =
            std::abs(double((*gptrs[p])[i]) - fd) / std::max(std::abs(fd), 1e-12);
        INFO("param " << p << " coord " << i << " fd " << fd << " analytic "
                      << double((*gptrs[p])[i]));
        REQUIRE(rel < 5e-3);
        ++checked;
    }
    REQUIRE(checked >= 10);
}

TEST_CASE("a few training steps run finite in both modulation modes") {
    for (ModulationMode mode : {ModulationMode::overparam, ModulationMode::baseline}) {
        SeededRng rng(140 + uint64_t(mode));
        Generator g(rng, tiny_config(mode));
        Discriminator d(rng, 8);
        const SyntheticDataset data(3, 64, 8);

        TrainConfig tc;
        tc.steps = 3;
        tc.batch = 2;
        tc.r1_interval = 2;
        tc.mean_w_samples = 200;
        std::vector<int> seen;
        SeededRng trng(141);
        const TrainReport rep = train(g, d, data, tc, trng,
                                      [&](int step, const TrainReport&) { seen.push_back(step); });
        REQUIRE(rep.steps_done == 3);
        REQUIRE_FALSE(rep.aborted_nonfinite);
        REQUIRE(rep.g_losses.size() == 3);
        REQUIRE(rep.d_losses.size() == 3);
        REQUIRE(rep.r1_values.size() == 3);
        for (double l : rep.g_losses) REQUIRE(std::isfinite(l));
        for (double l : rep.d_losses) REQUIRE(std::isfinite(l));
        // lazy penalty fires on steps 0 and 2 with interval 2
        REQUIRE(rep.r1_values[0] > 0.0);
        REQUIRE(rep.r1_values[1] == 0.0);
        REQUIRE(rep.r1_values[2] > 0.0);
        REQUIRE(seen == std::vector<int>{0, 1, 2});

        // the mean style estimate is refreshed at the end of a healthy run
        float mu_norm = 0;
        for (int64_t i = 0; i < g.mean_w().size(); ++i)
            mu_norm = std::max(mu_norm, std::abs(g.mean_w()[i]));
        REQUIRE(mu_norm > 0.0f);
    }
}

TEST_CASE("training is reproducible given the seed") {
    auto run = [](uint64_t trseed) {
        SeededRng rng(150);
        Generator g(rng, tiny_config(ModulationMode::overparam));
        Discriminator d(rng, 8);
        const SyntheticDataset data(3, 64, 8);
        TrainConfig tc;
        tc.steps = 2;
        tc.batch = 2;
        tc.mean_w_samples = 100;
        SeededRng trng(trseed);
        train(g, d, data, tc, trng);
        return g.content_hash();
    };
    REQUIRE(run(7) == run(7));
    REQUIRE(run(7) != run(8));
}

TEST_CASE("a non-finite loss stops training and restores the last snapshot") {
    auto build = [] {
        SeededRng rng(160);
        Generator g(rng, tiny_config(ModulationMode::overparam));
        Discriminator d(rng, 8);
        return std::pair<Generator, Discriminator>{std::move(g), std::move(d)};
    };
    const SyntheticDataset data(3, 64, 8);
    TrainConfig tc;
    tc.batch = 2;
    tc.snapshot_interval = 1;
    tc.mean_w_samples = 100;

    // reference: one healthy step
    auto [g_ref, d_ref] = build();
    tc.steps = 1;
    SeededRng ta(161);
    const TrainReport ra = train(g_ref, d_ref, data, tc, ta);
    REQUIRE_FALSE(ra.aborted_nonfinite);

    // same run poisoned after step 0 must abort on step 1 and roll back to
    // the state the reference run ended on
    auto [g_bad, d_bad] = build();
    tc.steps = 3;
    SeededRng tb(161);
    Discriminator* dp = &d_bad;
    const TrainReport rb = train(g_bad, d_bad, data, tc, tb, [dp](int step, const TrainReport&) {
        if (step == 0) dp->weights()[0][0] = std::numeric_limits<float>::quiet_NaN();
    });
    REQUIRE(rb.aborted_nonfinite);
    REQUIRE(rb.steps_done == 1);
    REQUIRE(rb.g_losses.size() == 1);

    auto pa = g_ref.param_refs();
    auto pb = g_bad.param_refs();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        REQUIRE(max_abs_diff(*pa[i].second, *pb[i].second) == 0.0f);
    auto da = d_ref.param_refs();
    auto db = d_bad.param_refs();
    for (size_t i = 0; i < da.size(); ++i)
        REQUIRE(max_abs_diff(*da[i].second, *db[i].second) == 0.0f);
}

TEST_CASE("training validates its wiring") {
    SeededRng rng(170);
    Generator g(rng, tiny_config(ModulationMode::overparam));
    Discriminator d16(rng, 16);  // mismatched with the 8x8 generator output
    const SyntheticDataset data(3, 16, 8);
    TrainConfig tc;
    tc.steps = 1;
    SeededRng trng(171);
    REQUIRE_THROWS(train(g, d16, data, tc, trng));

    TrainConfig bad;
    bad.batch = 0;
    REQUIRE_THROWS(bad.validate());
    bad = TrainConfig{};
    bad.g_lr = 0.0;
    REQUIRE_THROWS(bad.validate());
    bad = TrainConfig{};
    bad.r1_interval = 0;
    REQUIRE_THROWS(bad.validate());
    bad = TrainConfig{};
    bad.style_mixing_prob = 2.0f;
    REQUIRE_THROWS(bad.validate());
}
