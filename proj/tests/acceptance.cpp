// Acceptance suite: one pass/fail line per criterion. Criteria 1-8 run on
// synthetic data with no downloads; criteria 9-12 need the real datasets and
// are skipped (not failed) when BODYADAPT_DATA_ROOT does not provide them.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "bodyadapt/experiment.hpp"
#include "bodyadapt/finite_diff.hpp"
#include "bodyadapt/ingest.hpp"
#include "bodyadapt/metrics.hpp"
#include "bodyadapt/synthetic.hpp"
#include "bodyadapt/train.hpp"
#include "gradcheck_util.hpp"
#include "oracles.hpp"

using namespace bodyadapt;
namespace fs = std::filesystem;

namespace {

void announce(const char* id, const char* desc, bool ok) {
    std::printf("[%s] criterion %s: %s\n", ok ? "PASS" : "FAIL", id, desc);
    std::fflush(stdout);
}

void announce_skip(const char* id, const char* desc, const char* why) {
    std::printf("[SKIP] criterion %s: %s (%s)\n", id, desc, why);
    std::fflush(stdout);
}

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "bodyadapt_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.numel())) == 0;
}

bool models_equal(const ModelParams& a, const ModelParams& b) {
    for (int l = 0; l < kConvLayers; ++l)
        if (!tensors_equal(a.embedder.conv[l].w, b.embedder.conv[l].w) ||
            !tensors_equal(a.embedder.conv[l].b, b.embedder.conv[l].b))
            return false;
    for (int l = 0; l < kLstmLayers; ++l)
        if (!tensors_equal(a.embedder.lstm[l].wx, b.embedder.lstm[l].wx) ||
            !tensors_equal(a.embedder.lstm[l].wh, b.embedder.lstm[l].wh) ||
            !tensors_equal(a.embedder.lstm[l].b, b.embedder.lstm[l].b))
            return false;
    return tensors_equal(a.classifier.w, b.classifier.w) &&
           tensors_equal(a.classifier.b, b.classifier.b);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "<missing:" + p.string() + ">";
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// training and adaptation budgets used across the synthetic criteria
TrainConfig source_budget(std::uint64_t seed) {
    TrainConfig tc;
    tc.seed = seed;
    tc.max_epochs = 40;
    tc.patience = 12;
    tc.batch_size = 32;
    return tc;
}

TrainConfig adapt_budget(std::uint64_t seed) {
    TrainConfig ac;
    ac.seed = seed;
    ac.max_epochs = 45;
    ac.patience = 12;
    ac.batch_size = 32;
    ac.learning_rate = 2e-3f;
    ac.lr_decay = 0.96f;
    ac.dropout = 0.0f;
    ac.stop_below_loss = 0.045;
    return ac;
}

LossSpec default_adapt_loss() {
    return LossSpec{LossKind::Mae, RegKind::L2, RegTarget::EmbedderWeights, 1e-4f};
}

const char* data_root() { return std::getenv("BODYADAPT_DATA_ROOT"); }

bool have_dataset(const char* name) {
    const char* root = data_root();
    if (!root) return false;
    fs::path dir = fs::path(root) / name;
    if (!fs::exists(dir) || !fs::is_directory(dir)) return false;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) return true;
    return false;
}

std::string source_dir() { return BODYADAPT_SOURCE_DIR; }

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("criterion 1") {
    bool pass = true;
    int checked = 0;
    const char* family = "?";
    int instance = 0;
    auto expect = [&](double err, double tol) {
        if (!(err < tol))
            std::printf("        gradcheck failed: %s instance %d, rel error %.3e\n", family,
                        instance, err);
        pass = pass && err < tol;
        ++checked;
    };

    for (int inst = 0; inst < 20; ++inst) {
        Rng rng(1000 + static_cast<std::uint64_t>(inst));
        instance = inst;
        // dense (matmul + bias)
        {
            family = "dense";
            int m = 2 + inst % 3, k = 3 + inst % 4, n = 2 + inst % 5;
            Tensor a = Tensor::uniform({m, k}, rng, -1.0f, 1.0f);
            Tensor b = Tensor::uniform({k, n}, rng, -0.7f, 0.7f);
            Tensor bias = Tensor::uniform({n}, rng, -0.5f, 0.5f);
            expect(testutil::gradcheck(b, 1e-3,
                                       [&](GradientTape& t, Var p) {
                                           return t.mean_all(t.add_row_bias(
                                               t.matmul(t.input(a), p), t.input(bias)));
                                       }),
                   1e-3);
        }
        // relu
        {
            family = "relu";
            Tensor a = testutil::margin_uniform({13}, rng, 0.08f, 2.0f);
            expect(testutil::gradcheck(
                       a, 1e-2, [&](GradientTape& t, Var p) { return t.mean_all(t.relu(p)); }),
                   1e-3);
        }
        // temporal convolution
        {
            family = "conv1d";
            int C = 2 + inst % 3;
            Tensor x = Tensor::uniform({2, 9, C}, rng, -1.0f, 1.0f);
            Tensor w = Tensor::uniform({5 * C, 4}, rng, -0.5f, 0.5f);
            Tensor b = Tensor::uniform({4}, rng, -0.3f, 0.3f);
            expect(testutil::gradcheck(w, 1e-3,
                                       [&](GradientTape& t, Var p) {
                                           return t.mean_all(
                                               t.conv1d_valid(t.input(x), p, t.input(b), 5));
                                       }),
                   1e-3);
        }
        // lstm step (T=1) and short unroll (T=4); gradients here are small, so
        // the probe step must stay well above float32 rounding noise
        for (int T : {1, 4}) {
            family = T == 1 ? "lstm step" : "lstm unroll";
            int In = 2 + inst % 3, H = 3 + inst % 3;
            Tensor x = Tensor::uniform({2, T, In}, rng, -1.0f, 1.0f);
            Tensor wx = Tensor::uniform({In, 4 * H}, rng, -0.5f, 0.5f);
            Tensor wh = Tensor::uniform({H, 4 * H}, rng, -0.5f, 0.5f);
            Tensor b = Tensor::uniform({4 * H}, rng, -0.3f, 0.3f);
            expect(testutil::gradcheck_ladder(wx, {3e-3, 1e-2, 3e-2},
                                              [&](GradientTape& t, Var p) {
                                                  return t.mean_all(t.last_step(t.lstm(
                                                      t.input(x), p, t.input(wh), t.input(b))));
                                              }),
                   1e-3);
            expect(testutil::gradcheck_ladder(wh, {3e-3, 1e-2, 3e-2},
                                              [&](GradientTape& t, Var p) {
                                                  return t.mean_all(t.last_step(t.lstm(
                                                      t.input(x), t.input(wx), p, t.input(b))));
                                              }),
                   1e-3);
        }
        // softmax + cross-entropy
        {
            family = "softmax_xent";
            int n = 3 + inst % 4, k = 2 + inst % 4;
            Tensor logits = Tensor::uniform({n, k}, rng, -2.0f, 2.0f);
            std::vector<int> labels;
            for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.bounded(static_cast<std::uint32_t>(k))));
            expect(testutil::gradcheck(logits, 1e-3,
                                       [&](GradientTape& t, Var p) {
                                           return t.softmax_cross_entropy(p, labels);
                                       }),
                   1e-3);
        }
    }

    // every loss kind x {none, L1, L2} x both regularization targets, through
    // a small embedder, 20 instances each
    for (LossKind kind : {LossKind::Mae, LossKind::Mse, LossKind::Msle, LossKind::Cosine}) {
        for (auto [reg, target] : {std::pair{RegKind::None, RegTarget::EmbedderWeights},
                                   std::pair{RegKind::L1, RegTarget::EmbedderWeights},
                                   std::pair{RegKind::L2, RegTarget::EmbedderWeights},
                                   std::pair{RegKind::L1, RegTarget::EmbeddingActivations},
                                   std::pair{RegKind::L2, RegTarget::EmbeddingActivations}}) {
            LossSpec spec{kind, reg, target, reg == RegKind::None ? 0.0f : 1e-2f};
            static std::string fam;  // keeps the diagnostic label alive across checks
            fam = std::string(loss_kind_name(kind)) + "+" + reg_kind_name(reg) + "/" +
                  reg_target_name(target);
            family = fam.c_str();
            for (int inst = 0; inst < 20; ++inst) {
                instance = inst;
                int C = 2, F = 3, H = 4, T = 7;
                Tensor x, wconv, bconv, wx, wh, bl, e_src;
                // rejection-sample instances whose relu preactivations sit
                // outside the probe stencil's flip window: central
                // differences are only a valid oracle away from the kinks
                for (std::uint64_t salt = 0;; ++salt) {
                    Rng rng(5000 + 97 * static_cast<std::uint64_t>(inst) +
                            static_cast<std::uint64_t>(kind) * 17 +
                            static_cast<std::uint64_t>(reg) * 5 +
                            static_cast<std::uint64_t>(target) + 1000003ULL * salt);
                    x = Tensor::uniform({2, T, C}, rng, -1.0f, 1.0f);
                    wconv = testutil::margin_uniform({3 * C, F}, rng, 0.05f, 0.5f);
                    bconv = Tensor::uniform({F}, rng, -0.2f, 0.2f);
                    GradientTape probe;
                    const Tensor& pre = probe.val(probe.conv1d_valid(
                        probe.input(x), probe.input(wconv), probe.input(bconv), 3));
                    float min_abs = 1e30f;
                    for (std::int64_t i = 0; i < pre.numel(); ++i)
                        min_abs = std::min(min_abs, std::abs(pre[i]));
                    if (min_abs < 0.02f) continue;
                    wx = Tensor::uniform({F, 4 * H}, rng, -0.5f, 0.5f);
                    wh = Tensor::uniform({H, 4 * H}, rng, -0.5f, 0.5f);
                    bl = Tensor::uniform({4 * H}, rng, -0.2f, 0.2f);
                    // regression target = produced embedding plus a margin
                    // offset, keeping MAE's |.| kinks off the stencil too
                    GradientTape fwd;
                    Var conv = fwd.relu(fwd.conv1d_valid(fwd.input(x), fwd.input(wconv),
                                                         fwd.input(bconv), 3));
                    Tensor e_t0 = fwd.val(fwd.last_step(
                        fwd.lstm(conv, fwd.input(wx), fwd.input(wh), fwd.input(bl))));
                    if (reg == RegKind::L1 && target == RegTarget::EmbeddingActivations) {
                        // the activation penalty kinks at e_t = 0
                        float min_e = 1e30f;
                        for (std::int64_t i = 0; i < e_t0.numel(); ++i)
                            min_e = std::min(min_e, std::abs(e_t0[i]));
                        if (min_e < 0.02f) continue;
                    }
                    e_src = e_t0;
                    Tensor offs = testutil::margin_uniform({2, H}, rng, 0.1f, 0.3f);
                    for (std::int64_t i = 0; i < e_src.numel(); ++i) e_src[i] += offs[i];
                    break;
                }
                std::vector<double> ladder = kind == LossKind::Mae
                                                 ? std::vector<double>{3e-4, 1e-3, 3e-3}
                                                 : std::vector<double>{1e-3, 3e-3, 1e-2};
                expect(testutil::gradcheck_ladder(wconv, ladder,
                                                  [&](GradientTape& t, Var p) {
                                                      Var wxv = t.input(wx);
                                                      Var whv = t.input(wh);
                                                      Var conv = t.relu(t.conv1d_valid(
                                                          t.input(x), p, t.input(bconv), 3));
                                                      Var e_t = t.last_step(
                                                          t.lstm(conv, wxv, whv, t.input(bl)));
                                                      return replication_loss_on_tape(
                                                          t, t.input(e_src), e_t, spec,
                                                          {p, wxv, whv});
                                                  }),
                       1e-3);
            }
        }
    }

    std::printf("        %d gradient checks against central finite differences\n", checked);
    announce("1", "tape gradients match finite differences (rel. error < 1e-3)", pass);
    CHECK(pass);
}

TEST_CASE("criterion 2") {
    bool pass = true;
    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        int k = 2 + static_cast<int>(rng.bounded(5));
        int n = 1 + static_cast<int>(rng.bounded(64));
        std::vector<int> p, t;
        for (int i = 0; i < n; ++i) {
            p.push_back(static_cast<int>(rng.bounded(static_cast<std::uint32_t>(k))));
            t.push_back(static_cast<int>(rng.bounded(static_cast<std::uint32_t>(k))));
        }
        OvrMetrics ours = ovr_metrics(confusion(p, t, k));
        OvrMetrics brute = testutil::brute_force_ovr(p, t, k);
        pass = pass && ours.accuracy == brute.accuracy && ours.macro_f1 == brute.macro_f1 &&
               ours.macro_precision == brute.macro_precision &&
               ours.macro_recall == brute.macro_recall;
        for (int c = 0; c < k; ++c)
            pass = pass && ours.per_class[c].precision == brute.per_class[c].precision &&
                   ours.per_class[c].recall == brute.per_class[c].recall &&
                   ours.per_class[c].f1 == brute.per_class[c].f1;
    }
    for (int trial = 0; trial < 200; ++trial) {
        int n = 4 + static_cast<int>(rng.bounded(60));
        std::vector<float> s;
        std::vector<int> t;
        for (int i = 0; i < n; ++i) {
            float v = rng.uniform();
            if (trial % 2 == 0) v = std::round(v * 6.0f) / 6.0f;  // ties
            s.push_back(v);
            t.push_back(static_cast<int>(rng.bounded(2)));
        }
        double brute = testutil::pair_count_auc(s, t, 1);
        RocCurve r = roc_auc(s, t, 1);
        if (brute < 0.0)
            pass = pass && !r.defined;
        else
            pass = pass && r.defined && std::abs(r.auc - brute) <= 1e-9;
    }
    announce("2", "metrics match brute-force counting (exact) and pair-count AUC (1e-9)", pass);
    CHECK(pass);
}

namespace {

// shared artifacts of the degenerate identical-domain run (criteria 3 and 4)
struct DegenerateRun {
    bool loss_ok = false;
    bool agreement_ok = false;
    bool source_untouched = false;
    bool transplant_bitwise = false;
    double final_loss = 0.0;
    double agreement = 0.0;
};

DegenerateRun run_degenerate() {
    SynthConfig scfg;
    scfg.num_classes = 5;
    scfg.windows_per_class = 12;
    WindowDataset data = synth_paired_dataset(scfg, 303);
    for (auto& p : data.pairs) p.target = p.source;  // alpha_T == alpha_S
    ModelParams src = init_model({scfg.channels_per_site, kCanonicalWindowLen, scfg.num_classes,
                                  Domain::Source},
                                 881);
    ModelParams src_copy = src;
    TrainConfig ac = adapt_budget(7);
    ac.max_epochs = 4;
    ac.patience = 2;
    // the reconstruction minimum itself: no penalty term in the objective
    LossSpec pure{LossKind::Mae, RegKind::None, RegTarget::EmbedderWeights, 0.0f};
    auto [mt, rep] = adapt_unsupervised(src, strip_labels(data, all_indices(data)), pure, ac);
    DegenerateRun out;
    out.final_loss = rep.final_loss;
    out.loss_ok = rep.final_loss < 1e-3;
    Tensor src_batch = to_model_batch(data, all_indices(data), Site::Source);
    Tensor tgt_batch = to_model_batch(data, all_indices(data), Site::Target);
    auto ps = argmax_rows(classify(src, src_batch));
    auto pt = argmax_rows(classify(mt, tgt_batch));
    int agree = 0;
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (ps[i] == pt[i]) ++agree;
    out.agreement = static_cast<double>(agree) / static_cast<double>(ps.size());
    out.agreement_ok = out.agreement >= 0.99;
    out.source_untouched = models_equal(src, src_copy);
    out.transplant_bitwise = tensors_equal(mt.classifier.w, src.classifier.w) &&
                             tensors_equal(mt.classifier.b, src.classifier.b);
    return out;
}

const DegenerateRun& degenerate() {
    static DegenerateRun run = run_degenerate();
    return run;
}

template <typename T>
concept CarriesLabels = requires(T t) { t.labels; } || requires(T t) { t.label; };

}  // namespace

TEST_CASE("criterion 3") {
    bool pass = true;
    Rng rng(4);
    Tensor e = Tensor::uniform({6, 16}, rng, -0.9f, 0.9f);
    for (LossKind k : {LossKind::Mae, LossKind::Mse, LossKind::Msle, LossKind::Cosine}) {
        LossSpec spec{k, RegKind::None, RegTarget::EmbedderWeights, 0.0f};
        pass = pass && replication_loss(e, e, spec) < 1e-7;
    }
    const DegenerateRun& run = degenerate();
    pass = pass && run.loss_ok && run.agreement_ok;
    std::printf("        degenerate run: replication loss %.2e, prediction agreement %.1f%%\n",
                run.final_loss, 100.0 * run.agreement);
    announce("3", "every loss is 0 at e_T == e_S; degenerate adaptation converges and agrees",
             pass);
    CHECK(pass);
}

TEST_CASE("criterion 4") {
    static_assert(!CarriesLabels<PairedSignals>,
                  "adaptation input type must not carry labels");
    const DegenerateRun& run = degenerate();
    bool pass = run.transplant_bitwise && run.source_untouched;
    announce("4",
             "classifier transplant bitwise; source model untouched; adaptation input is "
             "label-free by type",
             pass);
    CHECK(pass);
}

TEST_CASE("criterion 5") {
    SynthConfig scfg;  // defaults: K=5, 200 windows/class, sigma 0.05
    const int kSeeds = 5;
    struct SeedResult {
        double ms_ds = 0, ms_dst = 0, mt_dst = 0;
    };
    std::vector<SeedResult> results(kSeeds);
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            int s = next.fetch_add(1);
            if (s >= kSeeds) return;
            std::uint64_t seed = static_cast<std::uint64_t>(s + 1);
            WindowDataset data = synth_paired_dataset(scfg, seed);
            WindowedSplit sp = split_default(data);
            ModelParams init = init_model({scfg.channels_per_site, kCanonicalWindowLen,
                                           scfg.num_classes, Domain::Source},
                                          derive_seed(seed, "init"));
            auto [ms, hist] = train_supervised(
                init, gather_labeled(data, sp.train, Site::Source), source_budget(derive_seed(seed, "train")));
            auto [mt, rep] = adapt_unsupervised(ms, strip_labels(data, sp.adapt),
                                                default_adapt_loss(),
                                                adapt_budget(derive_seed(seed, "adapt")));
            LabeledWindows test_src = gather_labeled(data, sp.test, Site::Source);
            LabeledWindows test_tgt = gather_labeled(data, sp.test, Site::Target);
            results[s].ms_ds = 100.0 * evaluate(ms, test_src).ovr.macro_f1;
            results[s].ms_dst = 100.0 * evaluate(ms, test_tgt).ovr.macro_f1;
            results[s].mt_dst = 100.0 * evaluate(mt, test_tgt).ovr.macro_f1;
        }
    };
    {
        std::thread other(worker);
        worker();
        other.join();
    }
    double mean_ms_ds = 0, mean_ms_dst = 0, mean_mt = 0;
    for (int s = 0; s < kSeeds; ++s) {
        std::printf("        seed %d: Ms/Ds %.1f  Ms/Dst %.1f  Mt/Dst %.1f\n", s + 1,
                    results[s].ms_ds, results[s].ms_dst, results[s].mt_dst);
        mean_ms_ds += results[s].ms_ds / kSeeds;
        mean_ms_dst += results[s].ms_dst / kSeeds;
        mean_mt += results[s].mt_dst / kSeeds;
    }
    bool gap_ok = mean_mt >= mean_ms_dst + 20.0;
    bool close_ok = mean_mt >= mean_ms_ds - 10.0;
    std::printf("        5-seed means: Ms/Ds %.1f  Ms/Dst %.1f  Mt/Dst %.1f (gap %.1f, closeness %.1f)\n",
                mean_ms_ds, mean_ms_dst, mean_mt, mean_mt - mean_ms_dst, mean_ms_ds - mean_mt);
    announce("5", "synthetic three-way ordering: Mt beats Ms-on-target by 20+, within 10 of Ms-on-source",
             gap_ok && close_ok);
    CHECK(gap_ok);
    CHECK(close_ok);
}

TEST_CASE("criterion 6") {
    fs::path dir = scratch("sweep");
    ExperimentConfig cfg;
    cfg.kind = "size_sweep";
    cfg.use_synthetic = true;
    cfg.synth.windows_per_class = 40;
    cfg.repetitions = 10;
    cfg.master_seed = 11;
    cfg.fractions = {0.15, 0.33, 0.66, 1.0};
    cfg.loss = default_adapt_loss();
    cfg.train = source_budget(0);
    cfg.adapt = adapt_budget(0);
    cfg.adapt.max_epochs = 20;
    cfg.adapt.batch_size = 16;
    cfg.adapt.stop_below_loss = 0.05;
    cfg.output_dir = dir.string();
    cfg.workers = 2;
    nlohmann::json summary = run_experiment(cfg);
    std::vector<double> means;
    for (const char* cond : {"frac_0.15", "frac_0.33", "frac_0.66", "frac_1.00"}) {
        double f1 = 100.0 * summary.at(cond).at("mt_on_dst").at("f1").at("mean").get<double>();
        means.push_back(f1);
        std::printf("        %s: mean F1 %.1f over 10 subsample seeds\n", cond, f1);
    }
    bool pass = true;
    for (std::size_t i = 1; i < means.size(); ++i) pass = pass && means[i] >= means[i - 1] - 1.0;
    announce("6", "10-seed mean F1 non-decreasing across fractions (tolerance 1 point)", pass);
    CHECK(pass);
}

TEST_CASE("criterion 7") {
    fs::path dir1 = scratch("det_a");
    fs::path dir2 = scratch("det_b");
    auto make = [&](const std::string& out) {
        ExperimentConfig cfg;
        cfg.kind = "three_way";
        cfg.use_synthetic = true;
        cfg.synth.num_classes = 3;
        cfg.synth.windows_per_class = 5;
        cfg.synth.channels_per_site = 2;
        cfg.repetitions = 2;
        cfg.master_seed = 31;
        cfg.train.max_epochs = 2;
        cfg.train.patience = 0;
        cfg.train.batch_size = 8;
        cfg.adapt.max_epochs = 2;
        cfg.adapt.patience = 0;
        cfg.adapt.batch_size = 8;
        cfg.adapt.dropout = 0.0f;
        cfg.output_dir = out;
        return cfg;
    };
    ExperimentConfig a = make(dir1.string());
    ExperimentConfig b = make(dir2.string());
    b.workers = 2;  // worker count must not leak into results
    run_experiment(a);
    run_experiment(b);
    bool pass = slurp(dir1 / "summary" / "summary.json") == slurp(dir2 / "summary" / "summary.json") &&
                slurp(dir1 / "summary" / "three_way.csv") == slurp(dir2 / "summary" / "three_way.csv");
    announce("7", "identical experiment configs produce byte-identical summary tables", pass);
    CHECK(pass);
}

TEST_CASE("criterion 8") {
    fs::path dir = scratch("roundtrip");
    bool pass = true;
    // checkpoint
    ModelParams m = init_model({9, kWindowLen, 5, Domain::Target}, 424);
    std::string ckpt = (dir / "model.ckpt").string();
    save_checkpoint(m, ckpt);
    pass = pass && models_equal(m, load_checkpoint(ckpt));
    // window archive
    SynthConfig scfg;
    scfg.windows_per_class = 6;
    WindowDataset data = synth_paired_dataset(scfg, 55);
    std::string arch = (dir / "windows.bwa").string();
    save_archive(data, arch);
    WindowDataset loaded = load_archive(arch);
    pass = pass && loaded.pairs.size() == data.pairs.size() &&
           loaded.split_seed == data.split_seed && loaded.class_names == data.class_names;
    for (std::size_t i = 0; pass && i < data.pairs.size(); ++i)
        pass = pass && tensors_equal(loaded.pairs[i].source, data.pairs[i].source) &&
               tensors_equal(loaded.pairs[i].target, data.pairs[i].target) &&
               loaded.pairs[i].label == data.pairs[i].label &&
               loaded.pairs[i].pairing_id == data.pairs[i].pairing_id;
    announce("8", "checkpoint and window-archive round trips are bit-exact", pass);
    CHECK(pass);
}

// ---------------------------------------------------------------------------
// Dataset-reproduction suite (optional): requires user-supplied raw datasets
// under BODYADAPT_DATA_ROOT/{opportunity,pamap2,mhealth}.

namespace {

struct RealRun {
    double ms_ds_f1 = 0, ms_dst_f1 = 0, mt_dst_f1 = 0;
};

RealRun run_real_three_way(const std::string& dataset, const std::string& descriptor,
                           LabelSchemeKind scheme, std::uint64_t seed, bool swap = false) {
    DatasetDescriptor desc = load_descriptor(source_dir() + "/descriptors/" + descriptor);
    WindowDataset data = harmonize_directory(desc, std::string(data_root()) + "/" + dataset,
                                             scheme, derive_seed(seed, "split"));
    if (swap) data = swap_sites(data);
    WindowedSplit sp = split_default(data);
    ModelParams init = init_model({data.source_channels, data.window_len, data.num_classes(),
                                   Domain::Source},
                                  derive_seed(seed, "init"));
    TrainConfig tc;
    tc.seed = derive_seed(seed, "train");
    tc.max_epochs = 80;
    tc.patience = 12;
    tc.batch_size = 64;
    auto [ms, hist] = train_supervised(init, gather_labeled(data, sp.train, Site::Source), tc);
    TrainConfig ac;
    ac.seed = derive_seed(seed, "adapt");
    ac.max_epochs = 60;
    ac.patience = 10;
    ac.batch_size = 64;
    ac.learning_rate = 2e-3f;
    ac.lr_decay = 0.96f;
    ac.dropout = 0.0f;
    auto [mt, rep] = adapt_unsupervised(ms, strip_labels(data, sp.adapt),
                                        LossSpec{LossKind::Mae, RegKind::L2,
                                                 RegTarget::EmbedderWeights, 1e-4f},
                                        ac);
    LabeledWindows test_src = gather_labeled(data, sp.test, Site::Source);
    LabeledWindows test_tgt = gather_labeled(data, sp.test, Site::Target);
    RealRun out;
    out.ms_ds_f1 = 100.0 * evaluate(ms, test_src).ovr.macro_f1;
    out.ms_dst_f1 = 100.0 * evaluate(ms, test_tgt).ovr.macro_f1;
    out.mt_dst_f1 = 100.0 * evaluate(mt, test_tgt).ovr.macro_f1;
    std::printf("        %s%s: Ms/Ds %.2f  Ms/Dst %.2f  Mt/Dst %.2f\n", dataset.c_str(),
                swap ? " (switched)" : "", out.ms_ds_f1, out.ms_dst_f1, out.mt_dst_f1);
    return out;
}

}  // namespace

TEST_CASE("criterion 9") {
    if (!have_dataset("opportunity")) {
        announce_skip("9", "Opportunity five-class reproduction", "dataset files not provided");
        return;
    }
    RealRun r = run_real_three_way("opportunity", "opportunity_wrist_back.json",
                                   LabelSchemeKind::FiveClass, 1);
    bool pass = std::abs(r.ms_ds_f1 - 76.31) <= 6.0 && std::abs(r.mt_dst_f1 - 67.19) <= 8.0 &&
                r.mt_dst_f1 > r.ms_dst_f1;
    announce("9", "Opportunity five-class F1 within published tolerances, ordering strict", pass);
    CHECK(pass);
}

TEST_CASE("criterion 10") {
    if (!have_dataset("pamap2") || !have_dataset("mhealth")) {
        announce_skip("10", "PAMAP2/MHEALTH five-class reproduction", "dataset files not provided");
        return;
    }
    RealRun p = run_real_three_way("pamap2", "pamap2_wrist_chest.json", LabelSchemeKind::FiveClass, 1);
    RealRun m = run_real_three_way("mhealth", "mhealth_wrist_chest.json", LabelSchemeKind::FiveClass, 1);
    bool pass = std::abs(p.ms_ds_f1 - 93.54) <= 6.0 && std::abs(p.mt_dst_f1 - 70.40) <= 8.0 &&
                p.mt_dst_f1 > p.ms_dst_f1 && std::abs(m.ms_ds_f1 - 80.00) <= 8.0 &&
                std::abs(m.mt_dst_f1 - 68.34) <= 8.0 && m.mt_dst_f1 > m.ms_dst_f1;
    announce("10", "PAMAP2/MHEALTH five-class F1 within published tolerances, ordering strict", pass);
    CHECK(pass);
}

TEST_CASE("criterion 11") {
    if (!have_dataset("opportunity")) {
        announce_skip("11", "Opportunity loss grid (MAE+L2 best in 3 of 5 seeds)",
                      "dataset files not provided");
        return;
    }
    DatasetDescriptor desc =
        load_descriptor(source_dir() + "/descriptors/opportunity_wrist_back.json");
    WindowDataset data = harmonize_directory(desc, std::string(data_root()) + "/opportunity",
                                             LabelSchemeKind::FiveClass, 17);
    fs::path arch = scratch("lossgrid") / "opportunity.bwa";
    save_archive(data, arch.string());
    ExperimentConfig cfg;
    cfg.kind = "loss_grid";
    cfg.use_synthetic = false;
    cfg.archive_path = arch.string();
    cfg.repetitions = 5;
    cfg.master_seed = 23;
    cfg.train.max_epochs = 60;
    cfg.train.patience = 10;
    cfg.train.batch_size = 64;
    cfg.adapt.max_epochs = 40;
    cfg.adapt.patience = 10;
    cfg.adapt.batch_size = 64;
    cfg.adapt.learning_rate = 2e-3f;
    cfg.adapt.lr_decay = 0.96f;
    cfg.adapt.dropout = 0.0f;
    cfg.output_dir = (scratch("lossgrid_out")).string();
    cfg.workers = 2;
    run_experiment(cfg);
    // per-seed winner from the run records
    int wins = 0;
    for (int rep = 0; rep < 5; ++rep) {
        double best = -1, mae_l2 = -1;
        for (const auto& e : fs::directory_iterator(fs::path(cfg.output_dir) / "records")) {
            std::ifstream in(e.path());
            nlohmann::json j;
            in >> j;
            if (j.at("seed").get<int>() != rep) continue;
            std::string cond = j.at("condition").get<std::string>();
            if (cond == "01_ms") continue;  // the source reference is not a grid condition
            double f1 = j.at("evals").at("score").at("f1").get<double>();
            if (cond == "12_mae_l2") mae_l2 = f1;
            best = std::max(best, f1);
        }
        if (mae_l2 >= best - 1e-12) ++wins;
    }
    std::printf("        mae+l2 ranked first in %d of 5 seeds\n", wins);
    bool pass = wins >= 3;
    announce("11", "MAE+L2 attains the best macro F1 in at least 3 of 5 seeds", pass);
    CHECK(pass);
}

TEST_CASE("criterion 12") {
    bool any = false;
    bool pass = true;
    if (have_dataset("pamap2")) {
        any = true;
        RealRun r = run_real_three_way("pamap2", "pamap2_wrist_chest.json",
                                       LabelSchemeKind::AllLabels, 3);
        pass = pass && r.mt_dst_f1 > r.ms_dst_f1;
        RealRun sw = run_real_three_way("pamap2", "pamap2_wrist_chest.json",
                                        LabelSchemeKind::FiveClass, 3, true);
        pass = pass && sw.mt_dst_f1 > sw.ms_dst_f1;
    }
    if (have_dataset("mhealth")) {
        any = true;
        RealRun r = run_real_three_way("mhealth", "mhealth_wrist_chest.json",
                                       LabelSchemeKind::AllLabels, 3);
        pass = pass && r.mt_dst_f1 > r.ms_dst_f1;
        RealRun sw = run_real_three_way("mhealth", "mhealth_wrist_chest.json",
                                        LabelSchemeKind::FiveClass, 3, true);
        pass = pass && sw.mt_dst_f1 > sw.ms_dst_f1;
    }
    if (have_dataset("opportunity")) {
        any = true;
        RealRun sw = run_real_three_way("opportunity", "opportunity_wrist_back.json",
                                        LabelSchemeKind::FiveClass, 3, true);
        pass = pass && sw.mt_dst_f1 > sw.ms_dst_f1;
    }
    if (!any) {
        announce_skip("12", "all-label and domain-switch runs", "dataset files not provided");
        return;
    }
    announce("12", "all-label and domain-switch runs preserve the Mt > Ms-on-target ordering", pass);
    CHECK(pass);
}
