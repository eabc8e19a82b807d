#include <doctest.h>

#include <cstring>

#include "bodyadapt/finite_diff.hpp"
#include "bodyadapt/gemm.hpp"
#include "bodyadapt/optimizer.hpp"
#include "bodyadapt/rng.hpp"
#include "bodyadapt/tape.hpp"
#include "bodyadapt/tensor.hpp"
#include "gradcheck_util.hpp"

using namespace bodyadapt;
using testutil::gradcheck;

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f}), ShapeError);
    Tensor bad = Tensor::from({1.0f, 2.0f});
    bad[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(bad.all_finite());
    CHECK_THROWS_AS(bad.require_finite("test"), NumericError);
}

TEST_CASE("rng reproducibility") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u32() == b.next_u32());
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 100; ++i) differs = differs || (a2.next_u32() != c.next_u32());
    CHECK(differs);
    CHECK(derive_seed(7, "stage", 0) != derive_seed(7, "stage", 1));
    CHECK(derive_seed(7, "stage") != derive_seed(7, "other"));
    CHECK(derive_seed(7, "stage", 3) == derive_seed(7, "stage", 3));
}

static void naive_gemm(int M, int N, int K, const float* A, std::ptrdiff_t ars, std::ptrdiff_t aks,
                       const float* B, int ldb, float* C, int ldc) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            float acc = 0.0f;
            for (int k = 0; k < K; ++k) acc += A[i * ars + k * aks] * B[k * ldb + j];
            C[i * ldc + j] += acc;
        }
}

TEST_CASE("gemm matches naive reference over odd shapes") {
    Rng rng(11);
    for (auto [M, N, K] : {std::tuple{1, 1, 1}, {3, 5, 7}, {2, 33, 9}, {4, 64, 17}, {7, 70, 31},
                           {16, 512, 192}, {5, 40, 3}}) {
        Tensor a = Tensor::uniform({M, K}, rng, -1.0f, 1.0f);
        Tensor b = Tensor::uniform({K, N}, rng, -1.0f, 1.0f);
        Tensor c0 = Tensor::uniform({M, N}, rng, -1.0f, 1.0f);
        Tensor c1 = c0, c2 = c0;
        gemm_nn(M, N, K, a.data(), b.data(), c1.data(), true);
        naive_gemm(M, N, K, a.data(), K, 1, b.data(), N, c2.data(), N);
        for (std::int64_t i = 0; i < c1.numel(); ++i)
            CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-5));
        // transposed-A path
        Tensor at = transposed(a);
        Tensor c3 = c0, c4 = c0;
        gemm_tn(M, N, K, at.data(), b.data(), c3.data(), true);
        naive_gemm(M, N, K, at.data(), 1, M, b.data(), N, c4.data(), N);
        for (std::int64_t i = 0; i < c3.numel(); ++i)
            CHECK(c3[i] == doctest::Approx(c4[i]).epsilon(1e-5));
    }
}

TEST_CASE("gemm is identical with and without the thread pool") {
    Rng rng(5);
    int M = 37, N = 70, K = 23;
    Tensor a = Tensor::uniform({M, K}, rng, -1.0f, 1.0f);
    Tensor b = Tensor::uniform({K, N}, rng, -1.0f, 1.0f);
    Tensor c1({M, N}), c2({M, N});
    gemm_nn(M, N, K, a.data(), b.data(), c1.data(), false, false);
    gemm_nn(M, N, K, a.data(), b.data(), c2.data(), false, true);
    CHECK(std::memcmp(c1.data(), c2.data(), sizeof(float) * static_cast<std::size_t>(c1.numel())) == 0);
}

TEST_CASE("linear form: y = sum(w*x)") {
    GradientTape tape;
    Var w = tape.input(Tensor::from({1.0f, 2.0f}), true);
    Var x = tape.input(Tensor::from({3.0f, 4.0f}), false);
    Var y = tape.sum_all(tape.mul(w, x));
    CHECK(tape.val(y)[0] == doctest::Approx(11.0));
    tape.backward(y);
    const Tensor& g = tape.grad(w);
    CHECK(g.shape() == tape.val(w).shape());
    CHECK(g[0] == doctest::Approx(3.0));
    CHECK(g[1] == doctest::Approx(4.0));
}

TEST_CASE("dead relu has zero output and gradient") {
    GradientTape tape;
    Var x = tape.input(Tensor::from({-5.0f}), true);
    Var y = tape.relu(x);
    CHECK(tape.val(y)[0] == 0.0f);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == 0.0f);
}

TEST_CASE("two-layer net gradient matches finite differences") {
    // 6 parameters: [2x2] tanh layer feeding a [2x1] readout
    Rng rng(21);
    Tensor xin = Tensor::uniform({1, 2}, rng, -1.0f, 1.0f);
    Tensor w2 = Tensor::uniform({2, 1}, rng, -1.0f, 1.0f);
    Tensor w1 = Tensor::uniform({2, 2}, rng, -1.0f, 1.0f);
    double err = gradcheck(w1, 1e-3, [&](GradientTape& t, Var p) {
        Var x = t.input(xin);
        Var c2 = t.input(w2);
        return t.sum_all(t.matmul(t.tanh_act(t.matmul(x, p)), c2));
    });
    CHECK(err < 1e-3);
}

TEST_CASE("per-primitive gradients match finite differences") {
    Rng rng(33);

    SUBCASE("matmul both sides") {
        Tensor a = Tensor::uniform({3, 4}, rng, -1.0f, 1.0f);
        Tensor b = Tensor::uniform({4, 5}, rng, -1.0f, 1.0f);
        CHECK(gradcheck(a, 1e-3, [&](GradientTape& t, Var p) {
                  return t.mean_all(t.matmul(p, t.input(b)));
              }) < 1e-3);
        CHECK(gradcheck(b, 1e-3, [&](GradientTape& t, Var p) {
                  return t.mean_all(t.matmul(t.input(a), p));
              }) < 1e-3);
    }

    SUBCASE("row bias") {
        Tensor a = Tensor::uniform({3, 4}, rng, -1.0f, 1.0f);
        Tensor b = Tensor::uniform({4}, rng, -1.0f, 1.0f);
        CHECK(gradcheck(b, 1e-3, [&](GradientTape& t, Var p) {
                  return t.mean_all(t.add_row_bias(t.input(a), p));
              }) < 1e-3);
    }

    SUBCASE("elementwise relu/tanh/sigmoid") {
        Tensor a = testutil::margin_uniform({17}, rng, 0.1f, 2.0f);
        CHECK(gradcheck(a, 1e-2, [&](GradientTape& t, Var p) { return t.mean_all(t.relu(p)); }) <
              1e-3);
        CHECK(gradcheck(a, 1e-3, [&](GradientTape& t, Var p) { return t.mean_all(t.tanh_act(p)); }) <
              1e-3);
        CHECK(gradcheck(a, 1e-3, [&](GradientTape& t, Var p) { return t.mean_all(t.sigmoid(p)); }) <
              1e-3);
    }

    SUBCASE("conv1d weights, bias and input") {
        int N = 2, T = 9, C = 3, klen = 5, F = 4;
        Tensor x = Tensor::uniform({N, T, C}, rng, -1.0f, 1.0f);
        Tensor w = Tensor::uniform({klen * C, F}, rng, -0.5f, 0.5f);
        Tensor b = Tensor::uniform({F}, rng, -0.5f, 0.5f);
        auto conv_loss = [&](GradientTape& t, Var xx, Var ww, Var bb) {
            return t.mean_all(t.conv1d_valid(xx, ww, bb, klen));
        };
        CHECK(gradcheck(w, 1e-3, [&](GradientTape& t, Var p) {
                  return conv_loss(t, t.input(x), p, t.input(b));
              }) < 1e-3);
        CHECK(gradcheck(b, 1e-3, [&](GradientTape& t, Var p) {
                  return conv_loss(t, t.input(x), t.input(w), p);
              }) < 1e-3);
        CHECK(gradcheck(x, 1e-3, [&](GradientTape& t, Var p) {
                  return conv_loss(t, p, t.input(w), t.input(b));
              }) < 1e-3);
    }

    SUBCASE("lstm step (T=1) and unrolled sequence") {
        for (int T : {1, 5}) {
            int N = 2, In = 3, H = 4;
            Tensor x = Tensor::uniform({N, T, In}, rng, -1.0f, 1.0f);
            Tensor wx = Tensor::uniform({In, 4 * H}, rng, -0.5f, 0.5f);
            Tensor wh = Tensor::uniform({H, 4 * H}, rng, -0.5f, 0.5f);
            Tensor b = Tensor::uniform({4 * H}, rng, -0.5f, 0.5f);
            auto loss = [&](GradientTape& t, Var xx, Var a, Var u, Var bb) {
                return t.mean_all(t.last_step(t.lstm(xx, a, u, bb)));
            };
            CHECK(gradcheck(wx, 1e-3, [&](GradientTape& t, Var p) {
                      return loss(t, t.input(x), p, t.input(wh), t.input(b));
                  }) < 1e-3);
            CHECK(gradcheck(wh, 1e-3, [&](GradientTape& t, Var p) {
                      return loss(t, t.input(x), t.input(wx), p, t.input(b));
                  }) < 1e-3);
            CHECK(gradcheck(b, 1e-3, [&](GradientTape& t, Var p) {
                      return loss(t, t.input(x), t.input(wx), t.input(wh), p);
                  }) < 1e-3);
            CHECK(gradcheck(x, 1e-3, [&](GradientTape& t, Var p) {
                      return loss(t, p, t.input(wx), t.input(wh), t.input(b));
                  }) < 1e-3);
        }
    }

    SUBCASE("softmax cross-entropy") {
        Tensor logits = Tensor::uniform({4, 3}, rng, -2.0f, 2.0f);
        std::vector<int> labels{0, 2, 1, 2};
        CHECK(gradcheck(logits, 1e-3, [&](GradientTape& t, Var p) {
                  return t.softmax_cross_entropy(p, labels);
              }) < 1e-3);
    }

    SUBCASE("softmax jacobian") {
        Tensor logits = Tensor::uniform({3, 4}, rng, -2.0f, 2.0f);
        Tensor mixing = Tensor::uniform({3, 4}, rng, -1.0f, 1.0f);
        CHECK(gradcheck(logits, 1e-3, [&](GradientTape& t, Var p) {
                  return t.sum_all(t.mul(t.softmax(p), t.input(mixing)));
              }) < 1e-3);
    }

    SUBCASE("reconstruction losses") {
        Tensor target = Tensor::uniform({3, 6}, rng, -0.8f, 0.8f);
        // keep pred - target away from the |.| kink for the MAE probe
        Tensor pred = target;
        Tensor offs = testutil::margin_uniform({3, 6}, rng, 0.05f, 0.15f);
        for (std::int64_t i = 0; i < pred.numel(); ++i) pred[i] += offs[i];
        CHECK(gradcheck(pred, 1e-2, [&](GradientTape& t, Var p) {
                  return t.mae_loss(t.input(target), p);
              }) < 1e-3);
        CHECK(gradcheck(pred, 1e-3, [&](GradientTape& t, Var p) {
                  return t.mse_loss(t.input(target), p);
              }) < 1e-3);
        CHECK(gradcheck(pred, 1e-3, [&](GradientTape& t, Var p) {
                  return t.msle_loss(t.input(target), p);
              }) < 1e-3);
        CHECK(gradcheck(pred, 1e-3, [&](GradientTape& t, Var p) {
                  return t.cosine_loss(t.input(target), p);
              }) < 1e-3);
    }

    SUBCASE("penalties") {
        Tensor w = testutil::margin_uniform({11}, rng, 0.1f, 1.0f);
        CHECK(gradcheck(w, 1e-2, [&](GradientTape& t, Var p) {
                  return t.l1_penalty({p});
              }) < 1e-3);
        CHECK(gradcheck(w, 1e-3, [&](GradientTape& t, Var p) {
                  return t.l2_penalty({p});
              }) < 1e-3);
    }

    SUBCASE("dropout with fixed mask") {
        Tensor a = Tensor::uniform({24}, rng, -1.0f, 1.0f);
        CHECK(gradcheck(a, 1e-3, [&](GradientTape& t, Var p) {
                  Rng mask_rng(77);
                  return t.mean_all(t.dropout(p, 0.5f, mask_rng));
              }) < 1e-3);
    }
}

TEST_CASE("tape replay is bit-identical") {
    Rng rng(9);
    Tensor x = Tensor::uniform({4, 7, 3}, rng, -1.0f, 1.0f);
    Tensor w = Tensor::uniform({15, 6}, rng, -0.5f, 0.5f);
    Tensor b = Tensor::uniform({6}, rng, -0.5f, 0.5f);
    auto run = [&](Tensor& grad_out) {
        GradientTape t;
        Var xv = t.input(x);
        Var wv = t.input(w, true);
        Var bv = t.input(b, true);
        Var loss = t.mean_all(t.relu(t.conv1d_valid(xv, wv, bv, 5)));
        t.backward(loss);
        grad_out = t.grad(wv);
        return t.val(loss)[0];
    };
    Tensor g1, g2;
    float l1 = run(g1), l2 = run(g2);
    CHECK(std::memcmp(&l1, &l2, sizeof(float)) == 0);
    CHECK(g1.shape() == w.shape());
    CHECK(std::memcmp(g1.data(), g2.data(), sizeof(float) * static_cast<std::size_t>(g1.numel())) == 0);
}

TEST_CASE("non-finite values are surfaced, not propagated") {
    GradientTape tape;
    Tensor big = Tensor::from({3e38f, 3e38f});
    Var a = tape.input(big);
    CHECK_THROWS_AS(tape.add(a, a), NumericError);
    Tensor nan = Tensor::from({1.0f});
    nan[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(tape.input(nan), NumericError);
}

TEST_CASE("rmsprop update rule") {
    SUBCASE("single step from the update equation") {
        RmspropState st(RmspropConfig{0.1f, 0.9f, 0.0f});
        Tensor p = Tensor::from({0.0f});
        Tensor g = Tensor::from({1.0f});
        st.step({&p}, {&g});
        CHECK(st.accumulators()[0][0] == doctest::Approx(0.1).epsilon(1e-6));
        CHECK(p[0] == doctest::Approx(-0.31623).epsilon(1e-4));
    }
    SUBCASE("zero gradient leaves parameters unchanged and decays s") {
        RmspropState st(RmspropConfig{0.1f, 0.9f, 1e-8f});
        Tensor p = Tensor::from({2.0f, -3.0f});
        Tensor g1 = Tensor::from({1.0f, 1.0f});
        st.step({&p}, {&g1});
        Tensor p_after = p;
        float s_after = st.accumulators()[0][0];
        Tensor g0 = Tensor::from({0.0f, 0.0f});
        st.step({&p}, {&g0});
        CHECK(p[0] == p_after[0]);
        CHECK(p[1] == p_after[1]);
        CHECK(st.accumulators()[0][0] == doctest::Approx(0.9f * s_after).epsilon(1e-6));
    }
    SUBCASE("two constant-gradient steps accumulate s = 0.19") {
        RmspropState st(RmspropConfig{0.1f, 0.9f, 0.0f});
        Tensor p = Tensor::from({0.0f});
        Tensor g = Tensor::from({1.0f});
        st.step({&p}, {&g});
        st.step({&p}, {&g});
        CHECK(st.accumulators()[0][0] == doctest::Approx(0.19).epsilon(1e-6));
    }
    SUBCASE("loss scaling preserves update sign pattern") {
        Rng rng(3);
        Tensor g = Tensor::uniform({32}, rng, -1.0f, 1.0f);
        Tensor gs = g;
        for (auto& x : gs.vec()) x *= 7.5f;
        Tensor p1 = Tensor::zeros({32}), p2 = Tensor::zeros({32});
        RmspropState s1(RmspropConfig{}), s2(RmspropConfig{});
        s1.step({&p1}, {&g});
        s2.step({&p2}, {&gs});
        for (int i = 0; i < 32; ++i) {
            auto sgn = [](float v) { return v > 0.0f ? 1 : (v < 0.0f ? -1 : 0); };
            CHECK(sgn(p1[i]) == sgn(p2[i]));
        }
    }
    SUBCASE("non-finite gradient rejected") {
        RmspropState st{RmspropConfig{}};
        Tensor p = Tensor::from({0.0f});
        Tensor g = Tensor::from({1.0f});
        g[0] = std::numeric_limits<float>::infinity();
        CHECK_THROWS_AS(st.step({&p}, {&g}), NumericError);
    }
}

TEST_CASE("finite differences on closed forms") {
    SUBCASE("quadratic") {
        Tensor x = Tensor::from({3.0f});
        Tensor g = finite_difference_gradient(
            [](const Tensor& t) { return static_cast<double>(t[0]) * t[0]; }, x, 1e-3);
        CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));
    }
    SUBCASE("constant") {
        Tensor x = Tensor::from({1.0f, -2.0f, 0.5f});
        Tensor g = finite_difference_gradient([](const Tensor&) { return 4.2; }, x, 1e-3);
        for (int i = 0; i < 3; ++i) CHECK(g[i] == 0.0f);
    }
    SUBCASE("invalid step size") {
        Tensor x = Tensor::from({1.0f});
        CHECK_THROWS_AS(
            finite_difference_gradient([](const Tensor&) { return 0.0; }, x, 0.0),
            NumericError);
    }
    SUBCASE("mae through a tiny embedder matches the tape") {
        Rng rng(17);
        Tensor target = Tensor::uniform({2, 3}, rng, -1.0f, 1.0f);
        Tensor xin = Tensor::uniform({2, 4}, rng, -1.0f, 1.0f);
        Tensor w = Tensor::uniform({4, 3}, rng, -0.5f, 0.5f);
        double err = gradcheck(w, 1e-4, [&](GradientTape& t, Var p) {
            return t.mae_loss(t.input(target), t.tanh_act(t.matmul(t.input(xin), p)));
        });
        CHECK(err < 1e-3);
    }
}

TEST_CASE("global norm clipping") {
    Tensor a = Tensor::from({3.0f, 4.0f});  // norm 5
    Tensor b = Tensor::zeros({2});
    double n = clip_global_norm({&a, &b}, 10.0);
    CHECK(n == doctest::Approx(5.0));
    CHECK(a[0] == 3.0f);  // under limit: untouched
    double n2 = clip_global_norm({&a, &b}, 1.0);
    CHECK(n2 == doctest::Approx(5.0));
    CHECK(a[0] == doctest::Approx(0.6f));
    CHECK(a[1] == doctest::Approx(0.8f));
}
