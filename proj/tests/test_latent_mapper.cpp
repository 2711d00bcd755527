#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "opstyle/latent.hpp"
#include "opstyle/mapper.hpp"
#include "reference_model.hpp"

using namespace opstyle;

TEST_CASE("correlated rows are built as (row_noise + shared)/sqrt(2)") {
    Tensor shared({3});
    shared[0] = 1.0f; shared[1] = -2.0f; shared[2] = 0.5f;
    Tensor noise({2, 3});
    noise(0, 0) = 3.0f; noise(0, 1) = 0.0f; noise(0, 2) = 1.5f;
    noise(1, 0) = -1.0f; noise(1, 1) = 2.0f; noise(1, 2) = 0.0f;
    const LatentMatrix z = correlated_z_from_parts(shared, noise);
    REQUIRE(z.space == LatentSpace::Z);
    const float inv = float(1.0 / std::sqrt(2.0));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            REQUIRE(z.m(i, j) == (noise(i, j) + shared[j]) * inv);
}

TEST_CASE("correlated sampling consumes shared draw first") {
    // reproduce the stream by hand: [D] shared, then [R,D] rows
    SeededRng a(123), b(123);
    const LatentMatrix z = sample_correlated_z(a, 4, 6);
    const Tensor shared = b.normal_tensor({6});
    const Tensor noise = b.normal_tensor({4, 6});
    const LatentMatrix expect = correlated_z_from_parts(shared, noise);
    REQUIRE(max_abs_diff(z.m, expect.m) == 0.0f);
}

TEST_CASE("correlated sampling moments: unit variance, half covariance") {
    SeededRng rng(777);
    const int64_t n = 20000, R = 4, D = 6;
    std::vector<double> sum(size_t(D), 0.0), sum2(size_t(D), 0.0), cross(size_t(D), 0.0);
    for (int64_t s = 0; s < n; ++s) {
        const LatentMatrix z = sample_correlated_z(rng, R, D);
        for (int64_t j = 0; j < D; ++j) {
            sum[size_t(j)] += double(z.m(0, j));
            sum2[size_t(j)] += double(z.m(0, j)) * double(z.m(0, j));
            cross[size_t(j)] += double(z.m(0, j)) * double(z.m(1, j));
        }
    }
    for (int64_t j = 0; j < D; ++j) {
        const double mean = sum[size_t(j)] / double(n);
        const double var = sum2[size_t(j)] / double(n) - mean * mean;
        const double cov = cross[size_t(j)] / double(n) - mean * mean;
        REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 0.05));
        REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 0.05));
        REQUIRE_THAT(cov, Catch::Matchers::WithinAbs(0.5, 0.05));
    }
}

TEST_CASE("independent sampling has (near) zero cross-row covariance") {
    SeededRng rng(778);
    const int64_t n = 20000;
    double cross = 0.0;
    for (int64_t s = 0; s < n; ++s) {
        const LatentMatrix z = sample_z_independent(rng, 2, 1);
        cross += double(z.m(0, 0)) * double(z.m(1, 0));
    }
    REQUIRE_THAT(cross / double(n), Catch::Matchers::WithinAbs(0.0, 0.05));
}

TEST_CASE("truncation is the affine contraction toward mu") {
    Tensor mu({2});
    mu[0] = 1.0f; mu[1] = -1.0f;
    Tensor rows({2, 2});
    rows(0, 0) = 3.0f; rows(0, 1) = 1.0f;
    rows(1, 0) = -1.0f; rows(1, 1) = -1.0f;
    const LatentMatrix w{rows, LatentSpace::W};
    const LatentMatrix t = truncate(w, mu, 0.5f);
    REQUIRE(t.m(0, 0) == 2.0f);    // 1 + 0.5*(3-1)
    REQUIRE(t.m(0, 1) == 0.0f);    // -1 + 0.5*(1+1)
    REQUIRE(t.m(1, 0) == 0.0f);
    REQUIRE(t.m(1, 1) == -1.0f);   // fixed point at mu
    // psi=1 is identity, psi=0 collapses to mu
    REQUIRE(max_abs_diff(truncate(w, mu, 1.0f).m, rows) == 0.0f);
    const LatentMatrix z0 = truncate(w, mu, 0.0f);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) REQUIRE(z0.m(i, j) == mu[j]);
    // rejects out-of-range psi and z-space inputs
    REQUIRE_THROWS(truncate(w, mu, 1.5f));
    REQUIRE_THROWS(truncate(LatentMatrix{rows, LatentSpace::Z}, mu, 0.5f));
}

TEST_CASE("row truncation composes: psi twice equals psi squared") {
    SeededRng rng(20);
    const Tensor w = rng.normal_tensor({5});
    const Tensor mu = rng.normal_tensor({5});
    const Tensor once = truncate_row(truncate_row(w, mu, 0.8f), mu, 0.8f);
    const Tensor direct = truncate_row(w, mu, 0.8f * 0.8f);
    REQUIRE(max_abs_diff(once, direct) < 1e-6f);
}

TEST_CASE("estimate_mean_w with identity map recovers the normal mean") {
    SeededRng rng(21);
    const Tensor mu = estimate_mean_w([](const Tensor& z) { return z; }, rng, 4, 20000);
    for (int64_t j = 0; j < 4; ++j)
        REQUIRE_THAT(double(mu[j]), Catch::Matchers::WithinAbs(0.0, 0.03));
}

TEST_CASE("estimate_mean_w with constant map returns the constant") {
    SeededRng rng(22);
    Tensor c({3});
    c[0] = 1.5f; c[1] = -2.0f; c[2] = 0.25f;
    const Tensor mu = estimate_mean_w([&](const Tensor&) { return c; }, rng, 3, 50);
    REQUIRE(max_abs_diff(mu, c) < 1e-6f);
}

TEST_CASE("mapping network forward agrees with the reference model") {
    SeededRng rng(23);
    MappingNetwork net(rng, 8, 3);
    const Tensor z = rng.normal_tensor({5, 8});
    const Tensor out = net.forward_rows(z);
    const refmodel::Vec ref = refmodel::mapper_rows(net, refmodel::to_vec(z), 5);
    for (int64_t i = 0; i < out.size(); ++i)
        REQUIRE_THAT(double(out[i]), Catch::Matchers::WithinAbs(ref[size_t(i)], 1e-5));
}

TEST_CASE("input normalization scales rows to norm sqrt(D)") {
    SeededRng rng(24);
    MappingNetwork net(rng, 6, 1);
    Tensor rows = rng.normal_tensor({3, 6});
    Tensor copy = rows;
    MappingNetwork::normalize_rows(copy);
    for (int i = 0; i < 3; ++i) {
        double nsq = 0;
        for (int j = 0; j < 6; ++j) nsq += double(copy(i, j)) * double(copy(i, j));
        REQUIRE_THAT(std::sqrt(nsq), Catch::Matchers::WithinAbs(std::sqrt(6.0), 1e-4));
        // direction is preserved: copy is a positive multiple of rows
        const double f = double(copy(i, 0)) / double(rows(i, 0));
        REQUIRE(f > 0.0);
        for (int j = 1; j < 6; ++j)
            REQUIRE_THAT(double(copy(i, j)), Catch::Matchers::WithinAbs(f * double(rows(i, j)), 1e-5));
    }
    // a zero row passes through untouched
    Tensor zero({1, 6});
    MappingNetwork::normalize_rows(zero);
    for (int j = 0; j < 6; ++j) REQUIRE(zero(0, j) == 0.0f);
}

TEST_CASE("linear mapper (slope 1, no normalization) is the weight product") {
    SeededRng rng(25);
    MappingNetwork net(rng, 4, 1);
    net.set_slope(1.0f);
    net.set_normalize_input(false);
    const Tensor z = rng.normal_tensor({4});
    const Tensor out = net.forward(z);
    const auto& L = net.layers()[0];
    for (int64_t o = 0; o < 4; ++o) {
        double acc = double(L.bias[o]);
        for (int64_t j = 0; j < 4; ++j) acc += double(L.weight(o, j)) * double(z[j]);
        REQUIRE_THAT(double(out[o]), Catch::Matchers::WithinAbs(acc, 1e-6));
    }
}

TEST_CASE("mapper backward matches finite differences of the reference") {
    SeededRng rng(26);
    MappingNetwork net(rng, 6, 2);
    const int64_t R = 3, D = 6;
    const Tensor z = rng.normal_tensor({R, D});
    // scalar objective: weighted sum of outputs
    const Tensor w_obj = rng.normal_tensor({R, D});
    MappingNetwork::Trace tr;
    const Tensor out = net.forward_rows(z, &tr);
    MappingNetwork::Grads grads;
    grads.init(net);
    const Tensor gz = net.backward_rows(tr, w_obj, &grads);

    auto objective = [&](const Tensor& zz) {
        const refmodel::Vec o = refmodel::mapper_rows(net, refmodel::to_vec(zz), R);
        double acc = 0;
        for (int64_t i = 0; i < R * D; ++i) acc += o[size_t(i)] * double(w_obj[i]);
        return acc;
    };
    const double h = 1e-3;
    // input gradient
    for (int64_t i = 0; i < R * D; i += 5) {
        Tensor zp = z, zm = z;
        zp[i] += float(h);
        zm[i] -= float(h);
        const double fd = (objective(zp) - objective(zm)) /
                          (double(zp[i]) - double(zm[i]));
        REQUIRE_THAT(double(gz[i]), Catch::Matchers::WithinAbs(fd, 5e-4));
    }
    // weight gradient (perturb a few coordinates of layer 0 and layer 1)
    for (int layer : {0, 1}) {
        for (int64_t i = 0; i < D * D; i += 13) {
            MappingNetwork netp = net, netm = net;
            netp.layers()[size_t(layer)].weight[i] += float(h);
            netm.layers()[size_t(layer)].weight[i] -= float(h);
            auto obj_net = [&](const MappingNetwork& nn) {
                const refmodel::Vec o = refmodel::mapper_rows(nn, refmodel::to_vec(z), R);
                double acc = 0;
                for (int64_t t = 0; t < R * D; ++t) acc += o[size_t(t)] * double(w_obj[t]);
                return acc;
            };
            const double fd = (obj_net(netp) - obj_net(netm)) / (2 * h);
            REQUIRE_THAT(double(grads.weight[size_t(layer)][i]),
                         Catch::Matchers::WithinAbs(fd, 5e-4));
        }
    }
}

TEST_CASE("affine projection applies bias-initialized row map") {
    SeededRng rng(27);
    AffineProjection proj(rng, 5, 3);
    REQUIRE(proj.out_dim() == 5);
    REQUIRE(proj.in_dim() == 3);
    // fresh projection has all-ones bias: zero input maps to ones
    const Tensor s0 = proj.apply(Tensor({3}));
    for (int64_t j = 0; j < 5; ++j) REQUIRE(s0[j] == 1.0f);
    const Tensor w = rng.normal_tensor({3});
    const Tensor s = proj.apply(w);
    const refmodel::Vec ref = refmodel::affine_rows(proj, refmodel::to_vec(w), 1);
    for (int64_t j = 0; j < 5; ++j)
        REQUIRE_THAT(double(s[j]), Catch::Matchers::WithinAbs(ref[size_t(j)], 1e-5));
}

TEST_CASE("batched affine rows equal per-row application") {
    SeededRng rng(28);
    AffineProjection proj(rng, 4, 6);
    const Tensor rows = rng.normal_tensor({7, 6});
    const Tensor batched = proj.apply_rows(rows);
    for (int64_t i = 0; i < 7; ++i) {
        Tensor row({6});
        for (int64_t j = 0; j < 6; ++j) row[j] = rows(i, j);
        const Tensor one = proj.apply(row);
        for (int64_t j = 0; j < 4; ++j)
            REQUIRE_THAT(double(batched(i, j)),
                         Catch::Matchers::WithinAbs(double(one[j]), 1e-5));
    }
}

TEST_CASE("affine backward matches finite differences") {
    SeededRng rng(29);
    AffineProjection proj(rng, 4, 3);
    const Tensor rows = rng.normal_tensor({2, 3});
    const Tensor g_s = rng.normal_tensor({2, 4});
    AffineProjection::Grads grads;
    grads.init(proj);
    const Tensor g_rows = proj.backward_rows(rows, g_s, &grads);
    auto objective = [&](const Tensor& rr) {
        const refmodel::Vec s = refmodel::affine_rows(proj, refmodel::to_vec(rr), 2);
        double acc = 0;
        for (int64_t i = 0; i < 8; ++i) acc += s[size_t(i)] * double(g_s[i]);
        return acc;
    };
    const double h = 1e-3;
    for (int64_t i = 0; i < 6; ++i) {
        Tensor rp = rows, rm = rows;
        rp[i] += float(h);
        rm[i] -= float(h);
        const double fd = (objective(rp) - objective(rm)) / (double(rp[i]) - double(rm[i]));
        REQUIRE_THAT(double(g_rows[i]), Catch::Matchers::WithinAbs(fd, 1e-4));
    }
    // weight grad: dL/dA[o,j] = sum_rows g_s[i,o] * rows[i,j]
    for (int64_t o = 0; o < 4; ++o)
        for (int64_t j = 0; j < 3; ++j) {
            double expect = 0;
            for (int64_t i = 0; i < 2; ++i) expect += double(g_s(i, o)) * double(rows(i, j));
            REQUIRE_THAT(double(grads.weight(o, j)), Catch::Matchers::WithinAbs(expect, 1e-5));
        }
    // bias grad: column sums of g_s
    for (int64_t o = 0; o < 4; ++o) {
        double expect = double(g_s(0, o)) + double(g_s(1, o));
        REQUIRE_THAT(double(grads.bias[o]), Catch::Matchers::WithinAbs(expect, 1e-5));
    }
}

TEST_CASE("map_matrix batch equals row loop") {
    SeededRng rng(30);
    MappingNetwork net(rng, 6, 2);
    const Tensor z = rng.normal_tensor({4, 6});
    const Tensor batch = net.forward_rows(z);
    for (int64_t i = 0; i < 4; ++i) {
        Tensor row({6});
        for (int64_t j = 0; j < 6; ++j) row[j] = z(i, j);
        const Tensor one = net.forward(row);
        for (int64_t j = 0; j < 6; ++j)
            REQUIRE_THAT(double(batch(i, j)), Catch::Matchers::WithinAbs(double(one[j]), 2e-5));
    }
}
