// Command-line front end: training, sampling, inversion, editing, and the
// metric suite, each run leaving a manifest that pins every resolved option.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "opstyle/opstyle.hpp"

namespace fs = std::filesystem;
using namespace opstyle;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// option plumbing
// ---------------------------------------------------------------------------

// values shared by most subcommands
struct Common {
    std::string config_path;
    std::string checkpoint;
    std::string out_dir = ".";
    uint64_t seed = 0;
    bool seed_given = false;
    int threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool needs_checkpoint) {
    cmd->add_option("--config", c.config_path, "JSON file supplying defaults for any flag");
    if (needs_checkpoint)
        cmd->add_option("--checkpoint", c.checkpoint, "generator checkpoint directory")
            ->required();
    cmd->add_option("--out-dir", c.out_dir, "directory for outputs and the run manifest");
    cmd->add_option("--seed", c.seed, "rng seed (chosen and recorded if omitted)");
    cmd->add_option("--threads", c.threads, "worker threads (only 1 is implemented)")
        ->check(CLI::Range(1, 1));
}

// every option in the app gets last-one-wins semantics so config-file values
// (injected before the explicit argv) are overridden by explicit flags
void take_last(CLI::App* app) {
    for (CLI::Option* o : app->get_options())
        if (!o->get_positional()) o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    for (CLI::App* sub : app->get_subcommands({})) take_last(sub);
}

// rewrite argv so values from --config <file> come right after the subcommand
std::vector<std::string> inject_config(const std::vector<std::string>& args) {
    std::string path;
    for (size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    if (args.empty() || args[0].rfind('-', 0) == 0)
        throw CLI::ValidationError("--config", "needs a subcommand");

    std::ifstream in(path, std::ios::binary);
    if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CLI::ValidationError("--config", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ValidationError("--config", "expected a JSON object");

    std::vector<std::string> out;
    out.push_back(args[0]); // subcommand name stays first
    for (const auto& [key, value] : j.items()) {
        out.push_back("--" + key);
        if (value.is_string()) out.push_back(value.get<std::string>());
        else out.push_back(value.dump());
    }
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
}

uint64_t resolve_seed(Common& c, const CLI::App* cmd) {
    c.seed_given = cmd->count("--seed") > 0;
    if (!c.seed_given) {
        std::random_device rd;
        c.seed = (uint64_t(rd()) << 32) ^ uint64_t(rd());
    }
    return c.seed;
}

RunManifest begin_run(const std::string& name, const Common& c, json config,
                      const Generator* g) {
    fs::create_directories(c.out_dir);
    config["out_dir"] = c.out_dir;
    config["seed"] = c.seed;
    config["threads"] = c.threads;
    if (!c.checkpoint.empty()) config["checkpoint"] = c.checkpoint;
    RunManifest m = start_manifest(name, std::move(config), c.seed);
    if (g) m.checkpoint_hash = hash_hex(g->content_hash());
    m.write((fs::path(c.out_dir) / "manifest.json").string());
    return m;
}

void end_run(RunManifest& m, const Common& c) {
    m.finish((fs::path(c.out_dir) / "manifest.json").string());
}

std::string save_image(const ImageTensor& img, const Common& c, const std::string& name,
                       RunManifest& m) {
    const std::string path = (fs::path(c.out_dir) / name).string();
    export_png(img, path);
    m.output_paths.push_back(path);
    return path;
}

// tile a list of equally sized images into one grid image, row-major
ImageTensor tile_grid(const std::vector<ImageTensor>& imgs, int cols) {
    check_arg(!imgs.empty() && cols >= 1, "grid: nothing to tile");
    const int h = imgs[0].height(), w = imgs[0].width();
    const int rows = (int(imgs.size()) + cols - 1) / cols;
    ImageTensor grid(rows * h, cols * w);
    for (size_t i = 0; i < imgs.size(); ++i) {
        check_arg(imgs[i].height() == h && imgs[i].width() == w, "grid: size mismatch");
        const int r0 = int(i) / cols * h, c0 = int(i) % cols * w;
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    grid.at(ch, r0 + y, c0 + x) = imgs[i].at(ch, y, x);
    }
    return grid;
}

StyleSource draw_source(const Generator& g, StyleSource::Kind kind, SeededRng& rng) {
    const auto& cfg = g.config();
    switch (kind) {
        case StyleSource::Kind::w:
            return g.map_to_w(rng.normal_tensor({cfg.latent_dim}));
        case StyleSource::Kind::matrix:
            return g.map_to_matrix(sample_correlated_z(rng, cfg.latent_rows, cfg.latent_dim));
        default: {
            std::vector<Tensor> layers;
            for (int l = 0; l < cfg.num_layers(); ++l)
                layers.push_back(draw_source(g,
                                             kind == StyleSource::Kind::w_plus
                                                 ? StyleSource::Kind::w
                                                 : StyleSource::Kind::matrix,
                                             rng)
                                     .entries[0]);
            return kind == StyleSource::Kind::w_plus
                       ? StyleSource::from_w_plus(std::move(layers))
                       : StyleSource::from_matrix_plus(std::move(layers));
        }
    }
}

StyleSource::Kind default_space(const Generator& g) {
    return g.config().mode == ModulationMode::overparam ? StyleSource::Kind::matrix
                                                        : StyleSource::Kind::w;
}

// ---------------------------------------------------------------------------
// subcommand bodies (return process exit code)
// ---------------------------------------------------------------------------

int run_train(Common& c, const std::string& mode, int steps, int batch, float mix_prob,
              int sample_interval) {
    SeededRng build_rng(hash64(c.seed, 1));
    GeneratorConfig gcfg = GeneratorConfig::desk_default();
    gcfg.mode = modulation_mode_from_string(mode);
    Generator g(build_rng, gcfg);
    const int res = gcfg.output_resolution();
    Discriminator d(build_rng, res);
    const SyntheticDataset data(hash64(c.seed, 2), 4096, res);

    TrainConfig tc;
    tc.steps = steps;
    tc.batch = batch;
    tc.style_mixing_prob = mix_prob;

    json cfg{{"mode", mode},
             {"steps", steps},
             {"batch", batch},
             {"style_mixing_prob", mix_prob},
             {"sample_interval", sample_interval},
             {"dataset_size", 4096},
             {"resolution", res}};
    RunManifest m = begin_run("train", c, cfg, nullptr);

    std::ofstream csv(fs::path(c.out_dir) / "curves.csv", std::ios::trunc);
    check(bool(csv), "train: cannot write curves.csv");
    csv << "step,g_loss,d_loss,r1\n";

    auto sample_grid = [&](int step) {
        SeededRng srng(hash64(c.seed, 3)); // same latents at every snapshot
        std::vector<ImageTensor> imgs;
        for (int i = 0; i < 16; ++i) imgs.push_back(g.synthesize(draw_source(g, default_space(g), srng)));
        char name[64];
        std::snprintf(name, sizeof(name), "samples_%06d.png", step);
        save_image(tile_grid(imgs, 4), c, name, m);
    };

    SeededRng trng(hash64(c.seed, 4));
    const TrainReport rep = train(g, d, data, tc, trng, [&](int step, const TrainReport& r) {
        csv << step << ',' << r.g_losses[size_t(step)] << ',' << r.d_losses[size_t(step)] << ','
            << r.r1_values[size_t(step)] << '\n';
        if (sample_interval > 0 && (step + 1) % sample_interval == 0 && step + 1 < steps)
            sample_grid(step + 1);
    });
    csv.close();
    m.output_paths.push_back((fs::path(c.out_dir) / "curves.csv").string());

    if (rep.aborted_nonfinite) {
        std::cerr << "train: aborted on non-finite loss at step " << rep.steps_done
                  << " (parameters restored to last snapshot)\n";
        return 2;
    }
    sample_grid(rep.steps_done);
    const std::string ckpt = (fs::path(c.out_dir) / "checkpoint").string();
    g.save(ckpt);
    m.output_paths.push_back(ckpt);
    m.checkpoint_hash = hash_hex(g.content_hash());
    end_run(m, c);
    return 0;
}

int run_generate(Common& c, int count, const std::string& space) {
    const Generator g = Generator::load(c.checkpoint);
    const StyleSource::Kind kind =
        space.empty() ? default_space(g) : source_kind_from_string(space);
    json cfg{{"count", count}, {"space", to_string(kind)}};
    RunManifest m = begin_run("generate", c, cfg, &g);

    SeededRng rng(c.seed);
    for (int i = 0; i < count; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "img_%03d.png", i);
        save_image(g.synthesize(draw_source(g, kind, rng)), c, name, m);
    }
    end_run(m, c);
    return 0;
}

json trace_summary(const InversionTrace& tr) {
    return json{{"first_loss", tr.first_loss()},
                {"final_loss", tr.last_loss()},
                {"steps", tr.losses.size()},
                {"truncation_disabled_at", tr.trunc_disabled_at}};
}

int run_invert(Common& c, const std::string& target_path, const std::string& space, int steps,
               float lr, float psi, float trunc_fraction, float lambda_pix, bool random_init) {
    const Generator g = Generator::load(c.checkpoint);
    const ImageTensor target = load_png(target_path);

    InversionConfig ic;
    ic.space = space.empty() ? default_space(g) : source_kind_from_string(space);
    ic.steps = steps;
    ic.lr = lr;
    ic.psi = psi;
    ic.trunc_disable_fraction = trunc_fraction;
    ic.lambda_pix = lambda_pix;
    ic.random_init = random_init;

    json cfg{{"target", target_path},     {"space", to_string(ic.space)},
             {"steps", steps},            {"lr", lr},
             {"psi", psi},                {"trunc_fraction", trunc_fraction},
             {"lambda_pix", lambda_pix},  {"random_init", random_init}};
    RunManifest m = begin_run("invert", c, cfg, &g);

    SeededRng rng(c.seed);
    const InversionTrace tr = invert(g, target, ic, rng);
    if (tr.aborted_nonfinite) {
        std::cerr << "invert: loss went non-finite\n";
        return 2;
    }
    save_image(tr.final_image, c, "reconstruction.png", m);
    for (size_t e = 0; e < tr.final_src.entries.size(); ++e) {
        const std::string p =
            (fs::path(c.out_dir) / ("latent_" + std::to_string(e) + ".opt1")).string();
        save_tensor(tr.final_src.entries[e], p);
        m.output_paths.push_back(p);
    }
    std::ofstream rep(fs::path(c.out_dir) / "inversion.json", std::ios::trunc);
    rep << trace_summary(tr).dump(2) << "\n";
    m.output_paths.push_back((fs::path(c.out_dir) / "inversion.json").string());
    end_run(m, c);
    std::cout << "final loss " << tr.last_loss() << "\n";
    return 0;
}

int run_upsample(Common& c, const std::string& target_path, int factor, int steps, float lr,
                 float psi) {
    const Generator g = Generator::load(c.checkpoint);
    const ImageTensor low = load_png(target_path);

    InversionConfig ic;
    ic.space = default_space(g);
    ic.steps = steps;
    ic.lr = lr;
    ic.psi = psi;
    ic.keep_truncation_throughout = true; // stay near the mean for out-of-domain targets

    json cfg{{"target", target_path}, {"factor", factor}, {"steps", steps}, {"lr", lr},
             {"psi", psi}};
    RunManifest m = begin_run("upsample", c, cfg, &g);

    SeededRng rng(c.seed);
    const InversionTrace tr = invert_degraded(g, low, DegradationOp::downsample(factor), ic, rng);
    if (tr.aborted_nonfinite) {
        std::cerr << "upsample: loss went non-finite\n";
        return 2;
    }
    save_image(tr.final_image, c, "upsampled.png", m);
    std::ofstream rep(fs::path(c.out_dir) / "upsample.json", std::ios::trunc);
    rep << trace_summary(tr).dump(2) << "\n";
    m.output_paths.push_back((fs::path(c.out_dir) / "upsample.json").string());
    end_run(m, c);
    std::cout << "low-res loss " << tr.first_loss() << " -> " << tr.last_loss() << "\n";
    return 0;
}

int run_mix(Common& c, int crossover) {
    const Generator g = Generator::load(c.checkpoint);
    const int L = g.config().num_layers();
    if (crossover < 0) crossover = L / 2;
    json cfg{{"crossover", crossover}};
    RunManifest m = begin_run("mix", c, cfg, &g);

    SeededRng rng(c.seed);
    const StyleSource content = draw_source(g, default_space(g), rng);
    const StyleSource style = draw_source(g, default_space(g), rng);
    save_image(g.synthesize(content), c, "content.png", m);
    save_image(g.synthesize(style), c, "style.png", m);
    save_image(g.synthesize(mix_sources(content, style, crossover, L)), c, "mixed.png", m);
    end_run(m, c);
    return 0;
}

int run_pca(Common& c, int samples) {
    const Generator g = Generator::load(c.checkpoint);
    json cfg{{"samples", samples}};
    RunManifest m = begin_run("pca", c, cfg, &g);

    SeededRng rng(c.seed);
    const PcaBasis basis = compute_pca(g, rng, samples);
    const std::string dir = (fs::path(c.out_dir) / "basis").string();
    basis.save(dir);
    m.output_paths.push_back(dir);
    end_run(m, c);
    std::cout << "effective rank " << basis.effective_rank << " of " << basis.dim() << "\n";
    return 0;
}

int run_edit(Common& c, const std::string& basis_dir, int component, float alpha) {
    const Generator g = Generator::load(c.checkpoint);
    const PcaBasis basis = PcaBasis::load(basis_dir);
    json cfg{{"basis", basis_dir}, {"component", component}, {"alpha", alpha}};
    RunManifest m = begin_run("edit", c, cfg, &g);

    SeededRng rng(c.seed);
    const StyleSource src = draw_source(g, default_space(g), rng);
    save_image(g.synthesize(src), c, "original.png", m);
    save_image(g.synthesize(apply_edit(src, basis, component, alpha)), c, "edited.png", m);
    end_run(m, c);
    return 0;
}

int run_interp(Common& c, int count, const std::string& space, int refs, int segments) {
    const Generator g = Generator::load(c.checkpoint);
    const StyleSource::Kind kind =
        space.empty() ? default_space(g) : source_kind_from_string(space);
    json cfg{{"count", count}, {"space", to_string(kind)}, {"refs", refs},
             {"segments", segments}};
    RunManifest m = begin_run("interp", c, cfg, &g);

    SeededRng rng(c.seed);
    std::vector<StyleSource> latents;
    for (int i = 0; i < count; ++i) latents.push_back(draw_source(g, kind, rng));
    const InterpolationReport rep = interpolation_suite(g, latents, rng, refs, segments);

    json out{{"space", to_string(kind)},
             {"n_pairs", rep.n_pairs},
             {"mean_path_length", rep.mean_ppl}};
    if (rep.has_realism) out["midpoint_realism"] = rep.midpoint_realism;
    std::ofstream f(fs::path(c.out_dir) / "interp.json", std::ios::trunc);
    f << out.dump(2) << "\n";
    m.output_paths.push_back((fs::path(c.out_dir) / "interp.json").string());
    end_run(m, c);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_metrics(Common& c, int n) {
    const Generator g = Generator::load(c.checkpoint);
    json cfg{{"samples", n}};
    RunManifest m = begin_run("metrics", c, cfg, &g);

    SeededRng rng(c.seed);
    SeededRng rng_a = rng.child(1), rng_b = rng.child(2), rng_p = rng.child(3);
    auto sample_set = [&](SeededRng& r) {
        std::vector<ImageTensor> imgs;
        for (int i = 0; i < n; ++i) imgs.push_back(g.synthesize(draw_source(g, default_space(g), r)));
        return imgs;
    };
    const double fid = frechet_distance(fit_stats(sample_set(rng_a)), fit_stats(sample_set(rng_b)));
    double ppl = 0.0;
    const int walks = 10;
    for (int i = 0; i < walks; ++i) {
        const StyleSource a = draw_source(g, default_space(g), rng_p);
        const StyleSource b = draw_source(g, default_space(g), rng_p);
        ppl += ppl_segments(g, a, b, 5);
    }
    json out{{"fid_between_independent_sets", fid}, {"mean_path_length", ppl / walks}};
    std::ofstream f(fs::path(c.out_dir) / "metrics.json", std::ios::trunc);
    f << out.dump(2) << "\n";
    m.output_paths.push_back((fs::path(c.out_dir) / "metrics.json").string());
    end_run(m, c);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_selftest(Common& c) {
    RunManifest m = begin_run("selftest", c, json::object(), nullptr);
    struct Row {
        std::string name;
        bool ok;
    };
    std::vector<Row> rows;
    auto add = [&](const std::string& name, bool ok) { rows.push_back({name, ok}); };

    try {
        SeededRng rng(7);
        // replicated rows reproduce column modulation exactly
        bool bitwise = true;
        for (int t = 0; t < 20; ++t) {
            const Tensor theta = rng.normal_tensor({5, 4, 3, 3});
            const Tensor s = rng.normal_tensor({4});
            const auto a = modulate_baseline(theta, s);
            const auto b = modulate_overparam(theta, replicate_rows(s, 5));
            bitwise = bitwise && max_abs_diff(a.theta, b.theta) == 0.0f;
        }
        add("replicated-row modulation bitwise", bitwise);

        // correlated rows: quick moment check
        double var = 0, cov = 0;
        const int ns = 20000;
        for (int i = 0; i < ns; ++i) {
            const LatentMatrix z = sample_correlated_z(rng, 2, 4);
            for (int j = 0; j < 4; ++j) {
                var += double(z.m(0, j)) * double(z.m(0, j));
                cov += double(z.m(0, j)) * double(z.m(1, j));
            }
        }
        var /= 4 * ns;
        cov /= 4 * ns;
        add("correlated rows moments", std::abs(var - 1.0) < 0.05 && std::abs(cov - 0.5) < 0.05);

        GeneratorConfig gc;
        gc.latent_dim = 8;
        gc.latent_rows = 8;
        gc.mapping_layers = 2;
        gc.mode = ModulationMode::overparam;
        gc.const_channels = 6;
        gc.base_resolution = 4;
        gc.layers = {{6, 8, 3, true}, {8, 5, 3, false}};
        Generator g(rng, gc);
        g.refresh_mean_w(rng, 500);

        const StyleSource w = g.map_to_w(rng.normal_tensor({8}));
        Tensor rows({8, 8});
        for (int r = 0; r < 8; ++r)
            for (int j = 0; j < 8; ++j) rows(r, j) = w.entries[0][j];
        add("equal-rows matrix degeneracy",
            max_abs_diff(g.synthesize(w).chw,
                         g.synthesize(StyleSource::from_matrix(rows)).chw) <= 1e-5f);

        const ImageTensor target = g.synthesize(g.map_to_matrix(sample_correlated_z(rng, 8, 8)));
        InversionConfig ic;
        ic.steps = 10;
        ic.random_init = true;
        SeededRng irng(3);
        const InversionTrace tr = invert(g, target, ic, irng);
        bool sched = tr.trunc_disabled_at == 5;
        for (int s = 0; s < 10; ++s) sched = sched && (tr.trunc_applied[size_t(s)] == 1) == (s < 5);
        add("truncation schedule half-run", sched);

        GaussianStats p, q;
        p.mean = Eigen::VectorXd::Zero(4);
        q.mean = Eigen::VectorXd::Zero(4);
        p.cov = 4.0 * Eigen::MatrixXd::Identity(4, 4);
        q.cov = Eigen::MatrixXd::Identity(4, 4);
        add("frechet commuting closed form", std::abs(frechet_distance(p, q) - 4.0) < 1e-6);

        const ImageTensor ia(target), ib = g.synthesize(g.map_to_w(rng.normal_tensor({8})));
        add("perceptual pseudometric",
            perceptual_distance(ia, ia) == 0.0 && perceptual_distance(ia, ib) > 0.0 &&
                perceptual_distance(ia, ib) == perceptual_distance(ib, ia));

        add("latent parameter counting",
            count_latent_params(gc, StyleSource::Kind::matrix) == 64 &&
                count_latent_params(gc, StyleSource::Kind::matrix) * gc.num_layers() ==
                    count_latent_params(gc, StyleSource::Kind::w_plus) * gc.latent_rows);
    } catch (const std::exception& e) {
        add(std::string("exception: ") + e.what(), false);
    }

    bool all = true;
    for (const Row& r : rows) {
        all = all && r.ok;
        std::cout << (r.ok ? "  ok  " : " FAIL ") << r.name << "\n";
    }
    std::cout << (all ? "selftest passed" : "selftest FAILED") << " (" << rows.size()
              << " checks)\n";
    end_run(m, c);
    return all ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"style-modulated generator toolkit"};
    app.name("opstyle");
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");

    // train
    Common c_train;
    std::string t_mode = "overparam";
    int t_steps = 2000, t_batch = 8, t_sample_interval = 500;
    float t_mix = 0.9f;
    CLI::App* train_cmd = app.add_subcommand("train", "adversarial training on the synthetic set");
    add_common(train_cmd, c_train, false);
    train_cmd->add_option("--mode", t_mode, "baseline or overparam")
        ->check(CLI::IsMember({"baseline", "overparam"}));
    train_cmd->add_option("--steps", t_steps)->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch", t_batch)->check(CLI::PositiveNumber);
    train_cmd->add_option("--mix-prob", t_mix, "style mixing probability");
    train_cmd->add_option("--sample-interval", t_sample_interval,
                          "steps between sample grids (0 = final only)");

    // generate
    Common c_gen;
    int g_count = 1;
    std::string g_space;
    CLI::App* gen_cmd = app.add_subcommand("generate", "sample images from a checkpoint");
    add_common(gen_cmd, c_gen, true);
    const auto space_names = CLI::IsMember({"w", "w+", "wplus", "W", "mat", "W+", "matplus"});
    gen_cmd->add_option("-n,--count", g_count)->check(CLI::PositiveNumber);
    gen_cmd->add_option("--space", g_space, "latent space: w, w+, W, or W+")->check(space_names);

    // invert
    Common c_inv;
    std::string i_target, i_space;
    int i_steps = 1000;
    float i_lr = 0.05f, i_psi = 0.9f, i_fraction = 0.5f, i_lambda = 0.0f;
    bool i_random = false;
    CLI::App* inv_cmd = app.add_subcommand("invert", "optimize a latent to match a target image");
    add_common(inv_cmd, c_inv, true);
    inv_cmd->add_option("--target", i_target, "target PNG")->required();
    inv_cmd->add_option("--space", i_space, "latent space to optimize")->check(space_names);
    inv_cmd->add_option("--steps", i_steps)->check(CLI::PositiveNumber);
    inv_cmd->add_option("--lr", i_lr);
    inv_cmd->add_option("--psi", i_psi, "truncation strength");
    inv_cmd->add_option("--trunc-fraction", i_fraction, "fraction of steps with truncation on");
    inv_cmd->add_option("--lambda-pix", i_lambda, "pixel loss weight");
    inv_cmd->add_flag("--random-init", i_random, "start from a mapped random latent");

    // upsample
    Common c_up;
    std::string u_target;
    int u_factor = 4, u_steps = 1000;
    float u_lr = 0.05f, u_psi = 0.9f;
    CLI::App* up_cmd = app.add_subcommand("upsample", "reconstruct a plausible high-res image");
    add_common(up_cmd, c_up, true);
    up_cmd->add_option("--target", u_target, "low-resolution PNG")->required();
    up_cmd->add_option("--factor", u_factor)->check(CLI::PositiveNumber);
    up_cmd->add_option("--steps", u_steps)->check(CLI::PositiveNumber);
    up_cmd->add_option("--lr", u_lr);
    up_cmd->add_option("--psi", u_psi);

    // mix
    Common c_mix;
    int m_cross = -1;
    CLI::App* mix_cmd = app.add_subcommand("mix", "style mixing between two sampled latents");
    add_common(mix_cmd, c_mix, true);
    mix_cmd->add_option("--crossover", m_cross, "layers taking the content latent (default L/2)");

    // pca
    Common c_pca;
    int p_samples = 2000;
    CLI::App* pca_cmd = app.add_subcommand("pca", "fit a style-space principal basis");
    add_common(pca_cmd, c_pca, true);
    pca_cmd->add_option("--samples", p_samples)->check(CLI::PositiveNumber);

    // edit
    Common c_edit;
    std::string e_basis;
    int e_comp = 0;
    float e_alpha = 1.0f;
    CLI::App* edit_cmd = app.add_subcommand("edit", "move a sampled latent along a basis direction");
    add_common(edit_cmd, c_edit, true);
    edit_cmd->add_option("--basis", e_basis, "basis directory from `pca`")->required();
    edit_cmd->add_option("--component", e_comp);
    edit_cmd->add_option("--alpha", e_alpha, "step along the component");

    // interp
    Common c_interp;
    int n_latents = 6, n_refs = 64, n_segments = 5;
    std::string n_space;
    CLI::App* interp_cmd =
        app.add_subcommand("interp", "midpoint realism and path lengths between latents");
    add_common(interp_cmd, c_interp, true);
    interp_cmd->add_option("--count", n_latents, "latents to interpolate between")
        ->check(CLI::Range(2, 1000000));
    interp_cmd->add_option("--space", n_space)->check(space_names);
    interp_cmd->add_option("--refs", n_refs, "reference samples for the realism score");
    interp_cmd->add_option("--segments", n_segments)->check(CLI::PositiveNumber);

    // metrics
    Common c_met;
    int met_n = 64;
    CLI::App* met_cmd = app.add_subcommand("metrics", "sampling metrics for a checkpoint");
    add_common(met_cmd, c_met, true);
    met_cmd->add_option("-n,--samples", met_n)->check(CLI::Range(2, 1000000));

    // selftest
    Common c_self;
    CLI::App* self_cmd = app.add_subcommand("selftest", "fast invariant table");
    add_common(self_cmd, c_self, false);

    take_last(&app);

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        args = inject_config(args);
        // CLI11 consumes the vector reversed
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\nusage: see `opstyle --help`\n";
        return 1;
    }

    try {
        if (train_cmd->parsed()) {
            resolve_seed(c_train, train_cmd);
            return run_train(c_train, t_mode, t_steps, t_batch, t_mix, t_sample_interval);
        }
        if (gen_cmd->parsed()) {
            resolve_seed(c_gen, gen_cmd);
            return run_generate(c_gen, g_count, g_space);
        }
        if (inv_cmd->parsed()) {
            resolve_seed(c_inv, inv_cmd);
            return run_invert(c_inv, i_target, i_space, i_steps, i_lr, i_psi, i_fraction,
                              i_lambda, i_random);
        }
        if (up_cmd->parsed()) {
            resolve_seed(c_up, up_cmd);
            return run_upsample(c_up, u_target, u_factor, u_steps, u_lr, u_psi);
        }
        if (mix_cmd->parsed()) {
            resolve_seed(c_mix, mix_cmd);
            return run_mix(c_mix, m_cross);
        }
        if (pca_cmd->parsed()) {
            resolve_seed(c_pca, pca_cmd);
            return run_pca(c_pca, p_samples);
        }
        if (edit_cmd->parsed()) {
            resolve_seed(c_edit, edit_cmd);
            return run_edit(c_edit, e_basis, e_comp, e_alpha);
        }
        if (interp_cmd->parsed()) {
            resolve_seed(c_interp, interp_cmd);
            return run_interp(c_interp, n_latents, n_space, n_refs, n_segments);
        }
        if (met_cmd->parsed()) {
            resolve_seed(c_met, met_cmd);
            return run_metrics(c_met, met_n);
        }
        if (self_cmd->parsed()) {
            resolve_seed(c_self, self_cmd);
            return run_selftest(c_self);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << "usage: see `opstyle --help`\n";
    return 1;
}
