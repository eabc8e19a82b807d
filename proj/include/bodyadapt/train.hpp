#pragma once

#include <cstdio>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include "bodyadapt/dataset.hpp"
#include "bodyadapt/loss.hpp"
#include "bodyadapt/model.hpp"
#include "bodyadapt/optimizer.hpp"

namespace bodyadapt {

struct TrainConfig {
    float learning_rate = 1e-3f;
    int batch_size = 64;
    int max_epochs = 100;
    int patience = 10;          // epochs without improvement before stopping; <=0 disables
    float clip_norm = 10.0f;    // global gradient-norm clip; <=0 disables
    float dropout = 0.5f;       // between the final LSTM layer and the head, supervised only
    float rmsprop_decay = 0.9f;
    float rmsprop_epsilon = 1e-8f;
    float lr_decay = 1.0f;      // per-epoch learning-rate multiplier; 1 = constant
    double min_delta = 1e-6;    // improvement below this does not reset patience
    double stop_below_loss = 0.0;  // adaptation only: stop once the epoch loss drops below this
    std::uint64_t seed = 0;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = -1;
    int epochs_run = 0;
};

struct AdaptReport {
    std::vector<double> loss_trajectory;  // mean replication loss per epoch
    double final_loss = 0.0;
    int epochs_run = 0;
    int best_epoch = -1;
};

// Model input gathered for supervised training/evaluation.
struct LabeledWindows {
    Tensor batch;             // [N, T, C]
    std::vector<int> labels;  // canonical class indices
    int count() const { return batch.ndim() == 3 ? batch.dim(0) : 0; }
};

// Simultaneous source/target signals with no label member: the adaptation
// path cannot read labels because its input type does not carry them.
struct PairedSignals {
    Tensor source;  // [N, T, Cs]
    Tensor target;  // [N, T, Ct]
    int count() const { return source.ndim() == 3 ? source.dim(0) : 0; }
};

inline LabeledWindows gather_labeled(const WindowDataset& data, const std::vector<std::size_t>& idx,
                                     Site site) {
    return LabeledWindows{to_model_batch(data, idx, site), gather_labels(data, idx)};
}

inline PairedSignals strip_labels(const WindowDataset& data, const std::vector<std::size_t>& idx) {
    return PairedSignals{to_model_batch(data, idx, Site::Source),
                         to_model_batch(data, idx, Site::Target)};
}

// Uniform random subset of round(fraction * N) elements, seeded; returned in
// ascending order.
inline std::vector<std::size_t> subsample(const std::vector<std::size_t>& idx, double fraction,
                                          std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw NumericError("subsample fraction must be in (0, 1]");
    std::size_t take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (take >= idx.size()) return idx;
    std::vector<std::size_t> pool = idx;
    Rng rng(seed, 0x5a);
    rng.shuffle(pool);
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    return pool;
}

namespace train_detail {

inline std::vector<Tensor*> trainable_tensors(ModelParams& m, bool embedder, bool classifier) {
    std::vector<Tensor*> v;
    if (embedder) {
        for (auto& c : m.embedder.conv) {
            v.push_back(&c.w);
            v.push_back(&c.b);
        }
        for (auto& s : m.embedder.lstm) {
            v.push_back(&s.wx);
            v.push_back(&s.wh);
            v.push_back(&s.b);
        }
    }
    if (classifier) {
        v.push_back(&m.classifier.w);
        v.push_back(&m.classifier.b);
    }
    return v;
}

inline Tensor slice_rows(const Tensor& batch, const std::vector<std::size_t>& order,
                         std::size_t begin, std::size_t end) {
    int T = batch.dim(1), C = batch.dim(2);
    Tensor out({static_cast<int>(end - begin), T, C});
    std::size_t row = static_cast<std::size_t>(T) * C;
    for (std::size_t i = begin; i < end; ++i)
        std::memcpy(out.data() + (i - begin) * row, batch.data() + order[i] * row,
                    sizeof(float) * row);
    return out;
}

// held-out validation rows: seeded 10% (at least 1) of the training windows
inline void validation_split(std::size_t n, std::uint64_t seed, std::vector<std::size_t>& train,
                             std::vector<std::size_t>& val) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed, 0x7e);
    rng.shuffle(order);
    std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.10 * n)));
    if (n_val >= n) n_val = n - 1;
    val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
}

inline double xent_eval(const ModelParams& m, const Tensor& batch, const std::vector<int>& labels) {
    GradientTape tape;
    ModelVars v = stage_model(tape, m, false, false);
    Var e = embed_on_tape(tape, v, tape.input(batch));
    Var loss = tape.softmax_cross_entropy(logits_on_tape(tape, v, e), labels);
    return static_cast<double>(tape.val(loss)[0]);
}

}  // namespace train_detail

// Supervised mini-batch training with cross-entropy + RMSprop, early
// stopping on a held-out 10% slice of the provided windows, returning the
// best-validation parameters. `train_embedder=false` trains the classifier
// head only (linear probing).
inline std::pair<ModelParams, TrainHistory> train_supervised(const ModelParams& init,
                                                             const LabeledWindows& data,
                                                             const TrainConfig& cfg,
                                                             bool train_embedder = true) {
    validate_model(init);
    int n = data.count();
    if (n == 0) throw NumericError("train_supervised: empty dataset");
    if (static_cast<int>(data.labels.size()) != n)
        throw NumericError("train_supervised: label count mismatch");
    check_batch_shape(init, data.batch);
    for (int y : data.labels)
        if (y < 0 || y >= init.meta.num_classes)
            throw NumericError("train_supervised: label out of range for model");
    {
        std::set<int> distinct(data.labels.begin(), data.labels.end());
        if (distinct.size() < 2)
            std::fprintf(stderr, "warning: training set contains a single class; proceeding\n");
    }
    if (cfg.batch_size < 1) throw NumericError("batch size must be >= 1");

    std::vector<std::size_t> train_rows, val_rows;
    train_detail::validation_split(static_cast<std::size_t>(n), derive_seed(cfg.seed, "valsplit"),
                                   train_rows, val_rows);
    Tensor val_batch = train_detail::slice_rows(data.batch, val_rows, 0, val_rows.size());
    std::vector<int> val_labels;
    for (std::size_t i : val_rows) val_labels.push_back(data.labels[i]);

    ModelParams cur = init;
    ModelParams best = init;
    TrainHistory hist;
    RmspropState opt(RmspropConfig{cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon});
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<std::size_t> order = train_rows;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (cfg.lr_decay != 1.0f)
            opt.set_learning_rate(cfg.learning_rate *
                                  std::pow(cfg.lr_decay, static_cast<float>(epoch)));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            Tensor xb = train_detail::slice_rows(data.batch, order, b, e);
            std::vector<int> yb;
            yb.reserve(e - b);
            for (std::size_t i = b; i < e; ++i) yb.push_back(data.labels[order[i]]);

            GradientTape tape;
            ModelVars mv = stage_model(tape, cur, train_embedder, true);
            Var emb = embed_on_tape(tape, mv, tape.input(xb));
            if (cfg.dropout > 0.0f) emb = tape.dropout(emb, cfg.dropout, dropout_rng);
            Var loss = tape.softmax_cross_entropy(logits_on_tape(tape, mv, emb), yb);
            tape.backward(loss);
            epoch_loss += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(e - b);
            seen += e - b;

            std::vector<Var> pvars = train_embedder ? mv.all_params()
                                                    : std::vector<Var>{mv.cls_w, mv.cls_b};
            std::vector<Tensor> grads;
            grads.reserve(pvars.size());
            for (Var pv : pvars) grads.push_back(tape.grad(pv));
            std::vector<Tensor*> gptrs;
            for (auto& g : grads) gptrs.push_back(&g);
            if (cfg.clip_norm > 0.0f) clip_global_norm(gptrs, cfg.clip_norm);
            std::vector<Tensor*> params = train_detail::trainable_tensors(cur, train_embedder, true);
            std::vector<const Tensor*> gconst(gptrs.begin(), gptrs.end());
            opt.step(params, gconst);
        }
        hist.train_loss.push_back(epoch_loss / static_cast<double>(seen));
        double vloss = train_detail::xent_eval(cur, val_batch, val_labels);
        hist.val_loss.push_back(vloss);
        hist.epochs_run = epoch + 1;
        if (vloss < best_val - cfg.min_delta) {
            best_val = vloss;
            best = cur;
            hist.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (cfg.patience > 0 && since_best >= cfg.patience) break;
        }
    }
    if (hist.best_epoch < 0) {
        best = cur;
        hist.best_epoch = hist.epochs_run - 1;
    }
    return {best, hist};
}

namespace train_detail {

// Source embedder carried over to the target channel count: every layer is
// copied except the first convolution, which is freshly initialized when the
// channel counts differ.
inline EmbedderParams carry_embedder(const ModelParams& src, int target_channels,
                                     std::uint64_t seed) {
    EmbedderParams e = src.embedder;
    if (target_channels != src.meta.channels) {
        Rng rng(derive_seed(seed, "first-conv"), 0x11);
        int fan_in = kConvKernel * target_channels;
        e.conv[0].w = model_detail::fanin_uniform({fan_in, kConvFeatures}, fan_in, rng);
        e.conv[0].b = Tensor::zeros({kConvFeatures});
    }
    return e;
}

}  // namespace train_detail

// Unsupervised adaptation: trains the target embedder to replicate frozen
// source embeddings on simultaneously recorded window pairs, then
// transplants the source classifier head. The source model is never
// mutated and the input type carries no labels.
inline std::pair<ModelParams, AdaptReport> adapt_unsupervised(const ModelParams& source,
                                                              const PairedSignals& pairs,
                                                              const LossSpec& spec,
                                                              const TrainConfig& cfg) {
    validate_model(source);
    spec.validate();
    int n = pairs.count();
    if (n == 0) throw NumericError("adapt_unsupervised: no window pairs");
    if (pairs.target.ndim() != 3 || pairs.target.dim(0) != n)
        throw NumericError("adapt_unsupervised: unpaired windows (source/target counts differ)");
    if (pairs.source.dim(1) != source.meta.window_len ||
        pairs.source.dim(2) != source.meta.channels)
        throw ShapeError("adapt_unsupervised: source windows do not match the source model");
    if (pairs.target.dim(1) != source.meta.window_len)
        throw ShapeError("adapt_unsupervised: target window length mismatch");
    if (cfg.batch_size < 1) throw NumericError("batch size must be >= 1");

    int target_channels = pairs.target.dim(2);
    ModelParams target;
    target.meta = ModelMeta{target_channels, source.meta.window_len, source.meta.num_classes,
                            Domain::Target};
    target.embedder = train_detail::carry_embedder(source, target_channels, cfg.seed);
    target.classifier = source.classifier;  // W_T = W_S
    validate_model(target);

    // frozen regression targets, computed once
    Tensor source_emb({n, kEmbeddingDim});
    {
        std::vector<std::size_t> ids(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        for (std::size_t b = 0; b < ids.size(); b += 256) {
            std::size_t e = std::min(ids.size(), b + 256);
            Tensor xb = train_detail::slice_rows(pairs.source, ids, b, e);
            Tensor emb = embed(source, xb);
            std::memcpy(source_emb.data() + b * kEmbeddingDim, emb.data(),
                        sizeof(float) * (e - b) * kEmbeddingDim);
        }
    }

    ModelParams best = target;
    AdaptReport report;
    RmspropState opt(RmspropConfig{cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon});
    Rng shuffle_rng(derive_seed(cfg.seed, "adapt-shuffle"));
    double best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (cfg.lr_decay != 1.0f)
            opt.set_learning_rate(cfg.learning_rate *
                                  std::pow(cfg.lr_decay, static_cast<float>(epoch)));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            Tensor xb = train_detail::slice_rows(pairs.target, order, b, e);
            Tensor eb({static_cast<int>(e - b), kEmbeddingDim});
            for (std::size_t i = b; i < e; ++i)
                std::memcpy(eb.data() + (i - b) * kEmbeddingDim,
                            source_emb.data() + order[i] * kEmbeddingDim,
                            sizeof(float) * kEmbeddingDim);

            GradientTape tape;
            ModelVars mv = stage_model(tape, target, true, false);
            Var e_t = embed_on_tape(tape, mv, tape.input(xb));
            Var loss = replication_loss_on_tape(tape, tape.input(eb), e_t, spec,
                                                mv.embedder_weights());
            tape.backward(loss);
            epoch_loss += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(e - b);
            seen += e - b;

            std::vector<Var> pvars = mv.embedder_params();
            std::vector<Tensor> grads;
            grads.reserve(pvars.size());
            for (Var pv : pvars) grads.push_back(tape.grad(pv));
            std::vector<Tensor*> gptrs;
            for (auto& g : grads) gptrs.push_back(&g);
            if (cfg.clip_norm > 0.0f) clip_global_norm(gptrs, cfg.clip_norm);
            std::vector<Tensor*> params = train_detail::trainable_tensors(target, true, false);
            std::vector<const Tensor*> gconst(gptrs.begin(), gptrs.end());
            opt.step(params, gconst);
        }
        double mean_loss = epoch_loss / static_cast<double>(seen);
        report.loss_trajectory.push_back(mean_loss);
        report.epochs_run = epoch + 1;
        if (mean_loss < best_loss - cfg.min_delta) {
            best_loss = mean_loss;
            best = target;
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (cfg.patience > 0 && since_best >= cfg.patience) break;
        }
        if (cfg.stop_below_loss > 0.0 && mean_loss < cfg.stop_below_loss) break;
    }
    if (report.best_epoch < 0) {
        best = target;
        report.best_epoch = report.epochs_run - 1;
    }
    best.classifier = source.classifier;  // transplant survives any update path
    report.final_loss = report.loss_trajectory.empty() ? 0.0 : best_loss;
    return {best, report};
}

// Linear probing: embedder frozen from the source model, head retrained on
// labeled target windows. Embeddings are computed once through the frozen
// embedder; dropout still applies between embedding and head.
inline std::pair<ModelParams, TrainHistory> linear_probe(const ModelParams& source,
                                                         const LabeledWindows& data,
                                                         const TrainConfig& cfg) {
    validate_model(source);
    int n = data.count();
    if (n == 0) throw NumericError("linear_probe: no labeled windows");
    int channels = data.batch.dim(2);
    ModelParams probe;
    probe.meta = ModelMeta{channels, source.meta.window_len, source.meta.num_classes,
                           Domain::Target};
    probe.embedder = train_detail::carry_embedder(source, channels, cfg.seed);
    probe.classifier = source.classifier;
    validate_model(probe);

    // cache embeddings through the frozen embedder
    Tensor emb({n, kEmbeddingDim});
    {
        std::vector<std::size_t> ids(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        for (std::size_t b = 0; b < ids.size(); b += 256) {
            std::size_t e = std::min(ids.size(), b + 256);
            Tensor xb = train_detail::slice_rows(data.batch, ids, b, e);
            Tensor eb = embed(probe, xb);
            std::memcpy(emb.data() + b * kEmbeddingDim, eb.data(),
                        sizeof(float) * (e - b) * kEmbeddingDim);
        }
    }

    std::vector<std::size_t> train_rows, val_rows;
    train_detail::validation_split(static_cast<std::size_t>(n), derive_seed(cfg.seed, "valsplit"),
                                   train_rows, val_rows);

    auto slice_emb = [&](const std::vector<std::size_t>& rows, std::size_t b, std::size_t e) {
        Tensor out({static_cast<int>(e - b), kEmbeddingDim});
        for (std::size_t i = b; i < e; ++i)
            std::memcpy(out.data() + (i - b) * kEmbeddingDim, emb.data() + rows[i] * kEmbeddingDim,
                        sizeof(float) * kEmbeddingDim);
        return out;
    };
    Tensor val_emb = slice_emb(val_rows, 0, val_rows.size());
    std::vector<int> val_labels;
    for (std::size_t i : val_rows) val_labels.push_back(data.labels[i]);

    ClassifierParams head = source.classifier;
    ClassifierParams best_head = head;
    TrainHistory hist;
    RmspropState opt(RmspropConfig{cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon});
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<std::size_t> order = train_rows;

    auto head_val_loss = [&]() {
        GradientTape tape;
        Var w = tape.input(head.w);
        Var b = tape.input(head.b);
        Var logits = tape.add_row_bias(tape.matmul(tape.input(val_emb), w), b);
        return static_cast<double>(tape.val(tape.softmax_cross_entropy(logits, val_labels))[0]);
    };

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (cfg.lr_decay != 1.0f)
            opt.set_learning_rate(cfg.learning_rate *
                                  std::pow(cfg.lr_decay, static_cast<float>(epoch)));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            Tensor xb = slice_emb(order, b, e);
            std::vector<int> yb;
            for (std::size_t i = b; i < e; ++i) yb.push_back(data.labels[order[i]]);
            GradientTape tape;
            Var w = tape.input(head.w, true);
            Var bias = tape.input(head.b, true);
            Var x = tape.input(xb);
            if (cfg.dropout > 0.0f) x = tape.dropout(x, cfg.dropout, dropout_rng);
            Var loss = tape.softmax_cross_entropy(tape.add_row_bias(tape.matmul(x, w), bias), yb);
            tape.backward(loss);
            epoch_loss += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(e - b);
            seen += e - b;
            Tensor gw = tape.grad(w), gb = tape.grad(bias);
            std::vector<Tensor*> gptrs{&gw, &gb};
            if (cfg.clip_norm > 0.0f) clip_global_norm(gptrs, cfg.clip_norm);
            opt.step({&head.w, &head.b}, {&gw, &gb});
        }
        hist.train_loss.push_back(epoch_loss / static_cast<double>(seen));
        double vloss = head_val_loss();
        hist.val_loss.push_back(vloss);
        hist.epochs_run = epoch + 1;
        if (vloss < best_val - cfg.min_delta) {
            best_val = vloss;
            best_head = head;
            hist.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (cfg.patience > 0 && since_best >= cfg.patience) break;
        }
    }
    if (hist.best_epoch < 0) {
        best_head = head;
        hist.best_epoch = hist.epochs_run - 1;
    }
    probe.classifier = best_head;
    return {probe, hist};
}

// Full fine-tuning: every parameter trains, initialized from the source
// model (first conv reshaped if the channel counts differ).
inline std::pair<ModelParams, TrainHistory> fine_tune(const ModelParams& source,
                                                      const LabeledWindows& data,
                                                      const TrainConfig& cfg) {
    validate_model(source);
    if (data.count() == 0) throw NumericError("fine_tune: no labeled windows");
    int channels = data.batch.dim(2);
    ModelParams init;
    init.meta = ModelMeta{channels, source.meta.window_len, source.meta.num_classes,
                          Domain::Target};
    init.embedder = train_detail::carry_embedder(source, channels, cfg.seed);
    init.classifier = source.classifier;
    validate_model(init);
    return train_supervised(init, data, cfg, true);
}

// Linear probe first, then full fine-tuning of the probed model; seeds for
// the two stages derive from cfg.seed.
inline std::pair<ModelParams, TrainHistory> lp_ft(const ModelParams& source,
                                                  const LabeledWindows& data,
                                                  const TrainConfig& cfg) {
    TrainConfig lp_cfg = cfg;
    lp_cfg.seed = derive_seed(cfg.seed, "lpft-lp");
    auto [probed, lp_hist] = linear_probe(source, data, lp_cfg);
    TrainConfig ft_cfg = cfg;
    ft_cfg.seed = derive_seed(cfg.seed, "lpft-ft");
    auto [tuned, ft_hist] = fine_tune(probed, data, ft_cfg);
    TrainHistory hist = ft_hist;
    hist.train_loss.insert(hist.train_loss.begin(), lp_hist.train_loss.begin(),
                           lp_hist.train_loss.end());
    hist.val_loss.insert(hist.val_loss.begin(), lp_hist.val_loss.begin(), lp_hist.val_loss.end());
    hist.epochs_run += lp_hist.epochs_run;
    return {tuned, hist};
}

}  // namespace bodyadapt
