#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bodyadapt/gemm.hpp"
#include "bodyadapt/rng.hpp"
#include "bodyadapt/tensor.hpp"
#include "bodyadapt/threading.hpp"

namespace bodyadapt {

// Handle to a node on a GradientTape.
struct Var {
    int idx = -1;
};

// Reverse-mode differentiation over a dynamically recorded graph of the
// primitives the models need: matmul, convolution over time, LSTM layer,
// elementwise ops, softmax/cross-entropy, reductions, the embedding
// reconstruction losses and the L1/L2 penalties.
//
// A tape is single-use and single-context (internally ops may fan work out
// to the shared pool). Values are checked for NaN/Inf after every operation.
// Replaying the same computation on a fresh tape reproduces values and
// gradients bit-for-bit.
class GradientTape {
public:
    Var input(Tensor v, bool needs_grad = false) {
        v.require_finite("tape input");
        return push(std::move(v), needs_grad, nullptr);
    }

    const Tensor& val(Var v) const { return nodes_[check(v)].value; }

    bool needs_grad(Var v) const { return nodes_[check(v)].needs_grad; }

    // Valid after backward(); zero tensor if the node is off the loss path.
    const Tensor& grad(Var v) {
        ensure_grad(check(v));
        return nodes_[v.idx].grad;
    }

    std::size_t size() const { return nodes_.size(); }

    void backward(Var loss) {
        Node& ln = nodes_[check(loss)];
        if (ln.value.numel() != 1) throw ShapeError("backward expects a scalar loss node");
        if (!ln.needs_grad) throw ShapeError("loss does not depend on any differentiable input");
        if (ran_backward_) throw NumericError("tape is single-use: backward already ran");
        ran_backward_ = true;
        ensure_grad(loss.idx);
        nodes_[loss.idx].grad[0] = 1.0f;
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.backward || !n.needs_grad) continue;
            if (n.grad.numel() == 0) continue;  // not on the path to the loss
            n.backward(*this, n.value, n.grad);
        }
        for (auto& n : nodes_)
            if (n.grad.numel() != 0) n.grad.require_finite("gradient");
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        require_same_shape(val(a), val(b), "add");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
        return make("add", std::move(out), {a, b}, [a, b](GradientTape& t, const Tensor&, const Tensor& g) {
            t.accumulate(a, g);
            t.accumulate(b, g);
        });
    }

    Var sub(Var a, Var b) {
        require_same_shape(val(a), val(b), "sub");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
        return make("sub", std::move(out), {a, b}, [a, b](GradientTape& t, const Tensor&, const Tensor& g) {
            t.accumulate(a, g);
            if (t.nodes_[b.idx].needs_grad) {
                Tensor neg = g;
                for (auto& x : neg.vec()) x = -x;
                t.accumulate(b, neg);
            }
        });
    }

    Var mul(Var a, Var b) {
        require_same_shape(val(a), val(b), "mul");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
        return make("mul", std::move(out), {a, b}, [a, b](GradientTape& t, const Tensor&, const Tensor& g) {
            if (t.nodes_[a.idx].needs_grad) {
                Tensor da = g;
                const Tensor& tb2 = t.val(b);
                for (std::int64_t i = 0; i < da.numel(); ++i) da[i] *= tb2[i];
                t.accumulate(a, da);
            }
            if (t.nodes_[b.idx].needs_grad) {
                Tensor db = g;
                const Tensor& ta2 = t.val(a);
                for (std::int64_t i = 0; i < db.numel(); ++i) db[i] *= ta2[i];
                t.accumulate(b, db);
            }
        });
    }

    Var scale(Var a, float s) {
        Tensor out = val(a);
        for (auto& x : out.vec()) x *= s;
        return make("scale", std::move(out), {a}, [a, s](GradientTape& t, const Tensor&, const Tensor& g) {
            Tensor da = g;
            for (auto& x : da.vec()) x *= s;
            t.accumulate(a, da);
        });
    }

    Var relu(Var a) {
        Tensor out = val(a);
        for (auto& x : out.vec()) x = x > 0.0f ? x : 0.0f;
        return make("relu", std::move(out), {a}, [a](GradientTape& t, const Tensor&, const Tensor& g) {
            Tensor da = g;
            const Tensor& ta = t.val(a);
            for (std::int64_t i = 0; i < da.numel(); ++i)
                if (ta[i] <= 0.0f) da[i] = 0.0f;
            t.accumulate(a, da);
        });
    }

    Var tanh_act(Var a) {
        Tensor out = val(a);
        for (auto& x : out.vec()) x = std::tanh(x);
        return make("tanh", std::move(out), {a},
                    [a](GradientTape& t, const Tensor& y, const Tensor& g) {
                        Tensor da = g;
                        for (std::int64_t i = 0; i < da.numel(); ++i) da[i] *= 1.0f - y[i] * y[i];
                        t.accumulate(a, da);
                    });
    }

    Var sigmoid(Var a) {
        Tensor out = val(a);
        for (auto& x : out.vec()) x = 1.0f / (1.0f + std::exp(-x));
        return make("sigmoid", std::move(out), {a},
                    [a](GradientTape& t, const Tensor& y, const Tensor& g) {
                        Tensor da = g;
                        for (std::int64_t i = 0; i < da.numel(); ++i) da[i] *= y[i] * (1.0f - y[i]);
                        t.accumulate(a, da);
                    });
    }

    // Inverted dropout; mask drawn from the caller's RNG so training runs
    // stay reproducible. Keep probability 1-p.
    Var dropout(Var a, float p, Rng& rng) {
        if (p <= 0.0f) return a;
        if (p >= 1.0f) throw NumericError("dropout probability must be < 1");
        float keep_scale = 1.0f / (1.0f - p);
        auto mask = std::make_shared<Tensor>(val(a).shape());
        Tensor out = val(a);
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            float m = rng.uniform() >= p ? keep_scale : 0.0f;
            (*mask)[i] = m;
            out[i] *= m;
        }
        return make("dropout", std::move(out), {a},
                    [a, mask](GradientTape& t, const Tensor&, const Tensor& g) {
                        Tensor da = g;
                        for (std::int64_t i = 0; i < da.numel(); ++i) da[i] *= (*mask)[i];
                        t.accumulate(a, da);
                    });
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        Tensor out({1});
        out[0] = static_cast<float>(val(a).sum());
        return make("sum", std::move(out), {a}, [a](GradientTape& t, const Tensor&, const Tensor& g) {
            Tensor da(t.val(a).shape());
            for (auto& x : da.vec()) x = g[0];
            t.accumulate(a, da);
        });
    }

    Var mean_all(Var a) {
        std::int64_t n = val(a).numel();
        if (n == 0) throw ShapeError("mean of empty tensor");
        Tensor out({1});
        out[0] = static_cast<float>(val(a).sum() / static_cast<double>(n));
        return make("mean", std::move(out), {a}, [a, n](GradientTape& t, const Tensor&, const Tensor& g) {
            Tensor da(t.val(a).shape());
            float s = g[0] / static_cast<float>(n);
            for (auto& x : da.vec()) x = s;
            t.accumulate(a, da);
        });
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.ndim() != 2 || tb.ndim() != 2 || ta.dim(1) != tb.dim(0))
            throw ShapeError("matmul shape mismatch " + shape_str(ta.shape()) + " x " +
                             shape_str(tb.shape()));
        int M = ta.dim(0), K = ta.dim(1), N = tb.dim(1);
        Tensor out({M, N});
        gemm_nn(M, N, K, ta.data(), tb.data(), out.data(), false, M >= 32);
        return make("matmul", std::move(out), {a, b},
                    [a, b, M, K, N](GradientTape& t, const Tensor&, const Tensor& g) {
                        if (t.nodes_[a.idx].needs_grad) {
                            Tensor bt = transposed(t.val(b));
                            t.ensure_grad(a.idx);
                            gemm_nn(M, K, N, g.data(), bt.data(), t.nodes_[a.idx].grad.data(), true,
                                    M >= 32);
                        }
                        if (t.nodes_[b.idx].needs_grad) {
                            t.ensure_grad(b.idx);
                            gemm_tn(K, N, M, t.val(a).data(), g.data(), t.nodes_[b.idx].grad.data(),
                                    true, K >= 32);
                        }
                    });
    }

    // rows of a [M x N] plus bias [N]
    Var add_row_bias(Var a, Var bias) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(bias);
        if (ta.ndim() != 2 || tb.ndim() != 1 || tb.dim(0) != ta.dim(1))
            throw ShapeError("add_row_bias: bias " + shape_str(tb.shape()) + " vs " +
                             shape_str(ta.shape()));
        int M = ta.dim(0), N = ta.dim(1);
        Tensor out = ta;
        for (int i = 0; i < M; ++i) {
            float* row = out.data() + static_cast<std::ptrdiff_t>(i) * N;
            for (int j = 0; j < N; ++j) row[j] += tb[j];
        }
        return make("add_row_bias", std::move(out), {a, bias},
                    [a, bias, M, N](GradientTape& t, const Tensor&, const Tensor& g) {
                        t.accumulate(a, g);
                        if (t.nodes_[bias.idx].needs_grad) {
                            Tensor db({N});
                            for (int j = 0; j < N; ++j) {
                                double acc = 0.0;
                                for (int i = 0; i < M; ++i)
                                    acc += g[static_cast<std::ptrdiff_t>(i) * N + j];
                                db[j] = static_cast<float>(acc);
                            }
                            t.accumulate(bias, db);
                        }
                    });
    }

    // ---- temporal convolution ----
    //
    // x [N, T, C] -> out [N, T-klen+1, F], valid padding, stride 1.
    // w [klen*C, F] with row index k*C + c; b [F].
    Var conv1d_valid(Var x, Var w, Var b, int klen) {
        const Tensor& tx = val(x);
        const Tensor& tw = val(w);
        const Tensor& tb = val(b);
        if (tx.ndim() != 3) throw ShapeError("conv1d: input must be [N,T,C], got " + shape_str(tx.shape()));
        int N = tx.dim(0), T = tx.dim(1), C = tx.dim(2);
        if (tw.ndim() != 2 || tw.dim(0) != klen * C)
            throw ShapeError("conv1d: kernel rows " + shape_str(tw.shape()) + " != klen*C = " +
                             std::to_string(klen * C));
        int F = tw.dim(1);
        if (tb.ndim() != 1 || tb.dim(0) != F) throw ShapeError("conv1d: bias must be [F]");
        int To = T - klen + 1;
        if (To <= 0) throw ShapeError("conv1d: window too short for kernel");
        Tensor out({N, To, F});
        const float* xp = tx.data();
        const float* wp = tw.data();
        const float* bp = tb.data();
        float* op = out.data();
        parallel_for(static_cast<std::size_t>(N), [&](std::size_t nb, std::size_t ne) {
            for (std::size_t n = nb; n < ne; ++n) {
                float* on = op + n * static_cast<std::size_t>(To) * F;
                gemm(To, F, klen * C, xp + n * static_cast<std::size_t>(T) * C, C, 1, wp, F, on, F,
                     false, false);
                for (int t = 0; t < To; ++t) {
                    float* row = on + static_cast<std::ptrdiff_t>(t) * F;
                    for (int j = 0; j < F; ++j) row[j] += bp[j];
                }
            }
        });
        return make("conv1d", std::move(out), {x, w, b},
                    [x, w, b, klen, N, T, C, F, To](GradientTape& t, const Tensor&, const Tensor& g) {
                        t.conv1d_backward(g, x, w, b, klen, N, T, C, F, To);
                    });
    }

    // ---- LSTM layer ----
    //
    // x [N, T, In] -> full hidden sequence [N, T, H].
    // wx [In, 4H], wh [H, 4H], bias [4H]; gate order (input, forget, cell, output).
    Var lstm(Var x, Var wx, Var wh, Var b) {
        const Tensor& tx = val(x);
        const Tensor& twx = val(wx);
        const Tensor& twh = val(wh);
        const Tensor& tb = val(b);
        if (tx.ndim() != 3) throw ShapeError("lstm: input must be [N,T,In]");
        int N = tx.dim(0), T = tx.dim(1), In = tx.dim(2);
        if (twh.ndim() != 2 || twh.dim(1) != 4 * twh.dim(0))
            throw ShapeError("lstm: recurrent weights must be [H,4H], got " + shape_str(twh.shape()));
        int H = twh.dim(0);
        if (twx.ndim() != 2 || twx.dim(0) != In || twx.dim(1) != 4 * H)
            throw ShapeError("lstm: input weights must be [In,4H], got " + shape_str(twx.shape()));
        if (tb.ndim() != 1 || tb.dim(0) != 4 * H) throw ShapeError("lstm: bias must be [4H]");

        auto cache = std::make_shared<LstmCache>();
        cache->gates = Tensor({N, T, 4 * H});
        cache->c = Tensor({N, T, H});
        cache->tanh_c = Tensor({N, T, H});
        Tensor h({N, T, H});

        const float* xp = tx.data();
        float* gp = cache->gates.data();
        float* cp = cache->c.data();
        float* tcp = cache->tanh_c.data();
        float* hp = h.data();
        std::ptrdiff_t xrs = static_cast<std::ptrdiff_t>(T) * In;
        std::ptrdiff_t grs = static_cast<std::ptrdiff_t>(T) * 4 * H;
        std::ptrdiff_t hrs = static_cast<std::ptrdiff_t>(T) * H;

        for (int t = 0; t < T; ++t) {
            float* gt = gp + static_cast<std::ptrdiff_t>(t) * 4 * H;
            gemm(N, 4 * H, In, xp + static_cast<std::ptrdiff_t>(t) * In, xrs, 1, twx.data(), 4 * H,
                 gt, static_cast<int>(grs), false, N >= 16);
            if (t > 0)
                gemm(N, 4 * H, H, hp + static_cast<std::ptrdiff_t>(t - 1) * H, hrs, 1, twh.data(),
                     4 * H, gt, static_cast<int>(grs), true, N >= 16);
            const float* bias = tb.data();
            parallel_for(static_cast<std::size_t>(N), [&](std::size_t nb, std::size_t ne) {
                for (std::size_t n = nb; n < ne; ++n) {
                    float* gr = gp + n * grs + static_cast<std::ptrdiff_t>(t) * 4 * H;
                    float* cr = cp + n * hrs + static_cast<std::ptrdiff_t>(t) * H;
                    float* tcr = tcp + n * hrs + static_cast<std::ptrdiff_t>(t) * H;
                    float* hr = hp + n * hrs + static_cast<std::ptrdiff_t>(t) * H;
                    const float* cprev = t > 0 ? cr - H : nullptr;
                    for (int j = 0; j < H; ++j) {
                        float gi = 1.0f / (1.0f + std::exp(-(gr[j] + bias[j])));
                        float gf = 1.0f / (1.0f + std::exp(-(gr[H + j] + bias[H + j])));
                        float gg = std::tanh(gr[2 * H + j] + bias[2 * H + j]);
                        float go = 1.0f / (1.0f + std::exp(-(gr[3 * H + j] + bias[3 * H + j])));
                        gr[j] = gi;
                        gr[H + j] = gf;
                        gr[2 * H + j] = gg;
                        gr[3 * H + j] = go;
                        float c = gi * gg + (cprev ? gf * cprev[j] : 0.0f);
                        cr[j] = c;
                        float tc = std::tanh(c);
                        tcr[j] = tc;
                        hr[j] = go * tc;
                    }
                }
            });
        }
        return make("lstm", std::move(h), {x, wx, wh, b},
                    [x, wx, wh, b, cache, N, T, In, H](GradientTape& t, const Tensor& h_out,
                                                       const Tensor& g) {
                        t.lstm_backward(g, h_out, x, wx, wh, b, *cache, N, T, In, H);
                    });
    }

    // hseq [N, T, H] -> [N, H] at the final timestep
    Var last_step(Var hseq) {
        const Tensor& th = val(hseq);
        if (th.ndim() != 3) throw ShapeError("last_step expects [N,T,H]");
        int N = th.dim(0), T = th.dim(1), H = th.dim(2);
        Tensor out({N, H});
        for (int n = 0; n < N; ++n)
            std::memcpy(out.data() + static_cast<std::ptrdiff_t>(n) * H,
                        th.data() + (static_cast<std::ptrdiff_t>(n) * T + (T - 1)) * H,
                        sizeof(float) * static_cast<std::size_t>(H));
        return make("last_step", std::move(out), {hseq},
                    [hseq, N, T, H](GradientTape& t, const Tensor&, const Tensor& g) {
                        t.ensure_grad(hseq.idx);
                        Tensor& dh = t.nodes_[hseq.idx].grad;
                        for (int n = 0; n < N; ++n) {
                            float* dst = dh.data() + (static_cast<std::ptrdiff_t>(n) * T + (T - 1)) * H;
                            const float* src = g.data() + static_cast<std::ptrdiff_t>(n) * H;
                            for (int j = 0; j < H; ++j) dst[j] += src[j];
                        }
                    });
    }

    // ---- classification heads ----

    Var softmax(Var logits) {
        const Tensor& tl = val(logits);
        if (tl.ndim() != 2) throw ShapeError("softmax expects [N,K]");
        int N = tl.dim(0), K = tl.dim(1);
        Tensor out = tl;
        softmax_rows(out.data(), N, K);
        return make("softmax", std::move(out), {logits},
                    [logits, N, K](GradientTape& t, const Tensor& p, const Tensor& g) {
                        Tensor dl({N, K});
                        for (int i = 0; i < N; ++i) {
                            const float* pi = p.data() + static_cast<std::ptrdiff_t>(i) * K;
                            const float* gi = g.data() + static_cast<std::ptrdiff_t>(i) * K;
                            float* di = dl.data() + static_cast<std::ptrdiff_t>(i) * K;
                            double dot = 0.0;
                            for (int j = 0; j < K; ++j) dot += static_cast<double>(gi[j]) * pi[j];
                            for (int j = 0; j < K; ++j) di[j] = pi[j] * (gi[j] - static_cast<float>(dot));
                        }
                        t.accumulate(logits, dl);
                    });
    }

    // mean cross-entropy of softmax(logits) against integer labels
    Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
        const Tensor& tl = val(logits);
        if (tl.ndim() != 2) throw ShapeError("softmax_cross_entropy expects [N,K]");
        int N = tl.dim(0), K = tl.dim(1);
        if (static_cast<int>(labels.size()) != N)
            throw ShapeError("softmax_cross_entropy: label count mismatch");
        for (int y : labels)
            if (y < 0 || y >= K) throw ShapeError("softmax_cross_entropy: label out of range");
        auto probs = std::make_shared<Tensor>(tl);
        softmax_rows(probs->data(), N, K);
        double loss = 0.0;
        for (int i = 0; i < N; ++i) {
            float p = (*probs)[static_cast<std::ptrdiff_t>(i) * K + labels[i]];
            loss -= std::log(std::max(p, 1e-30f));
        }
        Tensor out({1});
        out[0] = static_cast<float>(loss / N);
        auto lab = std::make_shared<std::vector<int>>(labels);
        return make("softmax_cross_entropy", std::move(out), {logits},
                    [logits, probs, lab, N, K](GradientTape& t, const Tensor&, const Tensor& g) {
                        Tensor dl = *probs;
                        float s = g[0] / static_cast<float>(N);
                        for (int i = 0; i < N; ++i) {
                            float* row = dl.data() + static_cast<std::ptrdiff_t>(i) * K;
                            row[(*lab)[i]] -= 1.0f;
                            for (int j = 0; j < K; ++j) row[j] *= s;
                        }
                        t.accumulate(logits, dl);
                    });
    }

    // ---- embedding reconstruction losses (mean over every element / row) ----

    Var mae_loss(Var target, Var pred) {
        const Tensor& a = val(target);
        const Tensor& p = val(pred);
        require_same_shape(a, p, "mae_loss");
        std::int64_t n = a.numel();
        if (n == 0) throw ShapeError("mae_loss on empty tensors");
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) acc += std::fabs(static_cast<double>(a[i]) - p[i]);
        Tensor out({1});
        out[0] = static_cast<float>(acc / static_cast<double>(n));
        return make("mae_loss", std::move(out), {target, pred},
                    [target, pred, n](GradientTape& t, const Tensor&, const Tensor& g) {
                        const Tensor& ta = t.val(target);
                        const Tensor& tp = t.val(pred);
                        float s = g[0] / static_cast<float>(n);
                        if (t.nodes_[pred.idx].needs_grad) {
                            Tensor dp(tp.shape());
                            for (std::int64_t i = 0; i < n; ++i) {
                                float d = tp[i] - ta[i];
                                dp[i] = d > 0.0f ? s : (d < 0.0f ? -s : 0.0f);
                            }
                            t.accumulate(pred, dp);
                        }
                        if (t.nodes_[target.idx].needs_grad) {
                            Tensor da(ta.shape());
                            for (std::int64_t i = 0; i < n; ++i) {
                                float d = ta[i] - tp[i];
                                da[i] = d > 0.0f ? s : (d < 0.0f ? -s : 0.0f);
                            }
                            t.accumulate(target, da);
                        }
                    });
    }

    Var mse_loss(Var target, Var pred) {
        const Tensor& a = val(target);
        const Tensor& p = val(pred);
        require_same_shape(a, p, "mse_loss");
        std::int64_t n = a.numel();
        if (n == 0) throw ShapeError("mse_loss on empty tensors");
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            double d = static_cast<double>(a[i]) - p[i];
            acc += d * d;
        }
        Tensor out({1});
        out[0] = static_cast<float>(acc / static_cast<double>(n));
        return make("mse_loss", std::move(out), {target, pred},
                    [target, pred, n](GradientTape& t, const Tensor&, const Tensor& g) {
                        const Tensor& ta = t.val(target);
                        const Tensor& tp = t.val(pred);
                        float s = 2.0f * g[0] / static_cast<float>(n);
                        if (t.nodes_[pred.idx].needs_grad) {
                            Tensor dp(tp.shape());
                            for (std::int64_t i = 0; i < n; ++i) dp[i] = s * (tp[i] - ta[i]);
                            t.accumulate(pred, dp);
                        }
                        if (t.nodes_[target.idx].needs_grad) {
                            Tensor da(ta.shape());
                            for (std::int64_t i = 0; i < n; ++i) da[i] = s * (ta[i] - tp[i]);
                            t.accumulate(target, da);
                        }
                    });
    }

    // mean squared log1p error; inputs clamped to >= -1 + 1e-4 so the log
    // stays finite for tanh-bounded embeddings
    Var msle_loss(Var target, Var pred) {
        const Tensor& a = val(target);
        const Tensor& p = val(pred);
        require_same_shape(a, p, "msle_loss");
        std::int64_t n = a.numel();
        if (n == 0) throw ShapeError("msle_loss on empty tensors");
        constexpr float kFloor = -1.0f + 1e-4f;
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            double d = std::log1p(std::max(a[i], kFloor)) - std::log1p(std::max(p[i], kFloor));
            acc += d * d;
        }
        Tensor out({1});
        out[0] = static_cast<float>(acc / static_cast<double>(n));
        return make(
            "msle_loss", std::move(out), {target, pred},
            [target, pred, n](GradientTape& t, const Tensor&, const Tensor& g) {
                const Tensor& ta = t.val(target);
                const Tensor& tp = t.val(pred);
                constexpr float kF = -1.0f + 1e-4f;
                float s = 2.0f * g[0] / static_cast<float>(n);
                if (t.nodes_[pred.idx].needs_grad) {
                    Tensor dp(tp.shape());
                    for (std::int64_t i = 0; i < n; ++i) {
                        float ca = std::max(ta[i], kF), cp = std::max(tp[i], kF);
                        float d = std::log1p(ca) - std::log1p(cp);
                        dp[i] = tp[i] > kF ? -s * d / (1.0f + cp) : 0.0f;
                    }
                    t.accumulate(pred, dp);
                }
                if (t.nodes_[target.idx].needs_grad) {
                    Tensor da(ta.shape());
                    for (std::int64_t i = 0; i < n; ++i) {
                        float ca = std::max(ta[i], kF), cp = std::max(tp[i], kF);
                        float d = std::log1p(ca) - std::log1p(cp);
                        da[i] = ta[i] > kF ? s * d / (1.0f + ca) : 0.0f;
                    }
                    t.accumulate(target, da);
                }
            });
    }

    // mean over rows of (1 - cos(a_i, b_i)); a zero vector on either side
    // makes that pair contribute loss 1 with zero gradient
    Var cosine_loss(Var target, Var pred) {
        const Tensor& a = val(target);
        const Tensor& p = val(pred);
        require_same_shape(a, p, "cosine_loss");
        if (a.ndim() != 2) throw ShapeError("cosine_loss expects [N,D] batches");
        int N = a.dim(0), D = a.dim(1);
        if (N == 0) throw ShapeError("cosine_loss on empty batch");
        double total = 0.0;
        for (int i = 0; i < N; ++i) {
            const float* ai = a.data() + static_cast<std::ptrdiff_t>(i) * D;
            const float* pi = p.data() + static_cast<std::ptrdiff_t>(i) * D;
            double dot = 0.0, na = 0.0, np = 0.0;
            for (int j = 0; j < D; ++j) {
                dot += static_cast<double>(ai[j]) * pi[j];
                na += static_cast<double>(ai[j]) * ai[j];
                np += static_cast<double>(pi[j]) * pi[j];
            }
            total += (na == 0.0 || np == 0.0) ? 1.0 : 1.0 - dot / (std::sqrt(na) * std::sqrt(np));
        }
        Tensor out({1});
        out[0] = static_cast<float>(total / N);
        return make(
            "cosine_loss", std::move(out), {target, pred},
            [target, pred, N, D](GradientTape& t, const Tensor&, const Tensor& g) {
                const Tensor& ta = t.val(target);
                const Tensor& tp = t.val(pred);
                float s = g[0] / static_cast<float>(N);
                bool need_p = t.nodes_[pred.idx].needs_grad;
                bool need_a = t.nodes_[target.idx].needs_grad;
                Tensor dp = need_p ? Tensor(tp.shape()) : Tensor();
                Tensor da = need_a ? Tensor(ta.shape()) : Tensor();
                for (int i = 0; i < N; ++i) {
                    const float* ai = ta.data() + static_cast<std::ptrdiff_t>(i) * D;
                    const float* pi = tp.data() + static_cast<std::ptrdiff_t>(i) * D;
                    double dot = 0.0, na = 0.0, np = 0.0;
                    for (int j = 0; j < D; ++j) {
                        dot += static_cast<double>(ai[j]) * pi[j];
                        na += static_cast<double>(ai[j]) * ai[j];
                        np += static_cast<double>(pi[j]) * pi[j];
                    }
                    if (na == 0.0 || np == 0.0) continue;  // flat region, zero grad
                    double ra = std::sqrt(na), rp = std::sqrt(np);
                    double cosv = dot / (ra * rp);
                    if (need_p) {
                        float* d = dp.data() + static_cast<std::ptrdiff_t>(i) * D;
                        for (int j = 0; j < D; ++j)
                            d[j] = static_cast<float>(-s * (ai[j] / (ra * rp) - cosv * pi[j] / np));
                    }
                    if (need_a) {
                        float* d = da.data() + static_cast<std::ptrdiff_t>(i) * D;
                        for (int j = 0; j < D; ++j)
                            d[j] = static_cast<float>(-s * (pi[j] / (ra * rp) - cosv * ai[j] / na));
                    }
                }
                if (need_p) t.accumulate(pred, dp);
                if (need_a) t.accumulate(target, da);
            });
    }

    // sum of |w| over a set of tensors
    Var l1_penalty(const std::vector<Var>& vars) {
        double acc = 0.0;
        for (Var v : vars)
            for (float x : val(v).vec()) acc += std::fabs(static_cast<double>(x));
        Tensor out({1});
        out[0] = static_cast<float>(acc);
        auto vs = std::make_shared<std::vector<Var>>(vars);
        return make("l1_penalty", std::move(out), vars,
                    [vs](GradientTape& t, const Tensor&, const Tensor& g) {
                        for (Var v : *vs) {
                            if (!t.nodes_[v.idx].needs_grad) continue;
                            const Tensor& w = t.val(v);
                            Tensor d(w.shape());
                            for (std::int64_t i = 0; i < w.numel(); ++i)
                                d[i] = w[i] > 0.0f ? g[0] : (w[i] < 0.0f ? -g[0] : 0.0f);
                            t.accumulate(v, d);
                        }
                    });
    }

    // sum of squares over a set of tensors
    Var l2_penalty(const std::vector<Var>& vars) {
        double acc = 0.0;
        for (Var v : vars) acc += val(v).squared_norm();
        Tensor out({1});
        out[0] = static_cast<float>(acc);
        auto vs = std::make_shared<std::vector<Var>>(vars);
        return make("l2_penalty", std::move(out), vars,
                    [vs](GradientTape& t, const Tensor&, const Tensor& g) {
                        for (Var v : *vs) {
                            if (!t.nodes_[v.idx].needs_grad) continue;
                            const Tensor& w = t.val(v);
                            Tensor d(w.shape());
                            for (std::int64_t i = 0; i < w.numel(); ++i) d[i] = 2.0f * g[0] * w[i];
                            t.accumulate(v, d);
                        }
                    });
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(GradientTape&, const Tensor&, const Tensor&)> backward;
    };

    struct LstmCache {
        Tensor gates;   // activated (i,f,g,o) per step
        Tensor c;       // cell state per step
        Tensor tanh_c;  // tanh(cell state) per step
    };

    std::vector<Node> nodes_;
    bool ran_backward_ = false;

    int check(Var v) const {
        if (v.idx < 0 || v.idx >= static_cast<int>(nodes_.size()))
            throw ShapeError("invalid tape variable");
        return v.idx;
    }

    Var push(Tensor v, bool needs_grad, std::function<void(GradientTape&, const Tensor&, const Tensor&)> bw) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var make(const char* name, Tensor out, const std::vector<Var>& parents,
             std::function<void(GradientTape&, const Tensor&, const Tensor&)> bw) {
        out.require_finite(name);
        bool ng = false;
        for (Var p : parents)
            if (p.idx >= 0) ng = ng || nodes_[check(p)].needs_grad;
        return push(std::move(out), ng, ng ? std::move(bw) : nullptr);
    }

    void ensure_grad(int idx) {
        Node& n = nodes_[static_cast<std::size_t>(idx)];
        if (n.grad.numel() == 0 && n.value.numel() > 0) n.grad = Tensor(n.value.shape());
    }

    void accumulate(Var v, const Tensor& g) {
        Node& n = nodes_[static_cast<std::size_t>(check(v))];
        if (!n.needs_grad) return;
        ensure_grad(v.idx);
        float* dst = n.grad.data();
        const float* src = g.data();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) dst[i] += src[i];
    }

    static void softmax_rows(float* p, int N, int K) {
        for (int i = 0; i < N; ++i) {
            float* row = p + static_cast<std::ptrdiff_t>(i) * K;
            float m = row[0];
            for (int j = 1; j < K; ++j) m = std::max(m, row[j]);
            double z = 0.0;
            for (int j = 0; j < K; ++j) {
                row[j] = std::exp(row[j] - m);
                z += row[j];
            }
            float inv = static_cast<float>(1.0 / z);
            for (int j = 0; j < K; ++j) row[j] *= inv;
        }
    }

    void conv1d_backward(const Tensor& g, Var x, Var w, Var b, int klen, int N, int T, int C, int F,
                         int To) {
        const Tensor& tx = val(x);
        const Tensor& tw = val(w);
        const float* gp = g.data();
        if (nodes_[w.idx].needs_grad) {
            ensure_grad(w.idx);
            float* dw = nodes_[w.idx].grad.data();
            int KC = klen * C;
            parallel_for(static_cast<std::size_t>(KC), [&](std::size_t rb, std::size_t re) {
                for (int n = 0; n < N; ++n) {
                    gemm_detail::rows(static_cast<int>(rb), static_cast<int>(re), F, To,
                                      tx.data() + static_cast<std::size_t>(n) * T * C, 1, C,
                                      gp + static_cast<std::size_t>(n) * To * F, F, dw, F, true);
                }
            });
        }
        if (nodes_[b.idx].needs_grad) {
            ensure_grad(b.idx);
            float* db = nodes_[b.idx].grad.data();
            for (int j = 0; j < F; ++j) {
                double acc = 0.0;
                for (std::int64_t r = 0; r < static_cast<std::int64_t>(N) * To; ++r)
                    acc += gp[r * F + j];
                db[j] += static_cast<float>(acc);
            }
        }
        if (nodes_[x.idx].needs_grad) {
            ensure_grad(x.idx);
            Tensor wt = transposed(tw);  // [F, klen*C]
            float* dx = nodes_[x.idx].grad.data();
            const float* wtp = wt.data();
            int KC = klen * C;
            parallel_for(static_cast<std::size_t>(N), [&](std::size_t nb, std::size_t ne) {
                for (std::size_t n = nb; n < ne; ++n) {
                    float* dxn = dx + n * static_cast<std::size_t>(T) * C;
                    const float* gn = gp + n * static_cast<std::size_t>(To) * F;
                    // overlapping windows: keep t sequential within a recording
                    for (int t = 0; t < To; ++t) {
                        gemm(1, KC, F, gn + static_cast<std::ptrdiff_t>(t) * F, 0, 1, wtp, KC,
                             dxn + static_cast<std::ptrdiff_t>(t) * C, KC, true, false);
                    }
                }
            });
        }
    }

    void lstm_backward(const Tensor& g, const Tensor& h_out, Var x, Var wx, Var wh, Var b,
                       const LstmCache& cache, int N, int T, int In, int H) {
        const Tensor& tx = val(x);
        Tensor wxt = transposed(val(wx));  // [4H, In]
        Tensor wht = transposed(val(wh));  // [4H, H]
        bool need_x = nodes_[x.idx].needs_grad;
        bool need_wx = nodes_[wx.idx].needs_grad;
        bool need_wh = nodes_[wh.idx].needs_grad;
        bool need_b = nodes_[b.idx].needs_grad;
        if (need_x) ensure_grad(x.idx);
        if (need_wx) ensure_grad(wx.idx);
        if (need_wh) ensure_grad(wh.idx);
        if (need_b) ensure_grad(b.idx);

        Tensor dh_carry({N, H});
        Tensor dc({N, H});
        Tensor dgates({N, 4 * H});
        std::vector<double> db_acc(static_cast<std::size_t>(4) * H, 0.0);

        const float* gp = cache.gates.data();
        const float* cp = cache.c.data();
        const float* tcp = cache.tanh_c.data();
        std::ptrdiff_t grs = static_cast<std::ptrdiff_t>(T) * 4 * H;
        std::ptrdiff_t hrs = static_cast<std::ptrdiff_t>(T) * H;

        for (int t = T - 1; t >= 0; --t) {
            parallel_for(static_cast<std::size_t>(N), [&](std::size_t nb, std::size_t ne) {
                for (std::size_t n = nb; n < ne; ++n) {
                    const float* gr = gp + n * grs + static_cast<std::ptrdiff_t>(t) * 4 * H;
                    const float* cr = cp + n * hrs + static_cast<std::ptrdiff_t>(t) * H;
                    const float* tcr = tcp + n * hrs + static_cast<std::ptrdiff_t>(t) * H;
                    const float* gout = g.data() + n * hrs + static_cast<std::ptrdiff_t>(t) * H;
                    float* dhc = dh_carry.data() + n * H;
                    float* dcn = dc.data() + n * H;
                    float* dg = dgates.data() + n * 4 * H;
                    for (int j = 0; j < H; ++j) {
                        float gi = gr[j], gf = gr[H + j], gg = gr[2 * H + j], go = gr[3 * H + j];
                        float tc = tcr[j];
                        float dh = gout[j] + dhc[j];
                        float dct = dcn[j] + dh * go * (1.0f - tc * tc);
                        float cprev = t > 0 ? cr[j - H] : 0.0f;
                        dg[j] = dct * gg * gi * (1.0f - gi);
                        dg[H + j] = dct * cprev * gf * (1.0f - gf);
                        dg[2 * H + j] = dct * gi * (1.0f - gg * gg);
                        dg[3 * H + j] = dh * tc * go * (1.0f - go);
                        dcn[j] = dct * gf;
                    }
                }
            });
            if (need_wx)
                gemm(In, 4 * H, N, tx.data() + static_cast<std::ptrdiff_t>(t) * In, 1,
                     static_cast<std::ptrdiff_t>(T) * In, dgates.data(), 4 * H,
                     nodes_[wx.idx].grad.data(), 4 * H, true, In >= 16);
            if (need_wh && t > 0)
                gemm(H, 4 * H, N, h_out.data() + static_cast<std::ptrdiff_t>(t - 1) * H, 1, hrs,
                     dgates.data(), 4 * H, nodes_[wh.idx].grad.data(), 4 * H, true, H >= 16);
            if (need_b) {
                for (int j = 0; j < 4 * H; ++j) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) acc += dgates[static_cast<std::ptrdiff_t>(n) * 4 * H + j];
                    db_acc[static_cast<std::size_t>(j)] += acc;
                }
            }
            if (need_x)
                gemm(N, In, 4 * H, dgates.data(), 4 * H, 1, wxt.data(), In,
                     nodes_[x.idx].grad.data() + static_cast<std::ptrdiff_t>(t) * In,
                     static_cast<int>(static_cast<std::ptrdiff_t>(T) * In), true, N >= 16);
            // dh for step t-1
            gemm(N, H, 4 * H, dgates.data(), 4 * H, 1, wht.data(), H, dh_carry.data(), H, false,
                 N >= 16);
        }
        if (need_b) {
            float* db = nodes_[b.idx].grad.data();
            for (int j = 0; j < 4 * H; ++j) db[j] += static_cast<float>(db_acc[static_cast<std::size_t>(j)]);
        }
    }
};

}  // namespace bodyadapt
