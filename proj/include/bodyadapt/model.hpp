#pragma once

#include <array>
#include <string>

#include "bodyadapt/tape.hpp"
#include "bodyadapt/tensor.hpp"

namespace bodyadapt {

// DeepConvLSTM dimensions: 4 temporal conv layers with 64 feature maps and
// kernel length 5 (valid padding), 2 LSTM layers with 128 cells, dense
// softmax head. The embedder is everything up to and including the final
// LSTM layer; its last-step hidden state is the 128-dim embedding.
constexpr int kConvLayers = 4;
constexpr int kConvFeatures = 64;
constexpr int kConvKernel = 5;
constexpr int kLstmLayers = 2;
constexpr int kLstmHidden = 128;
constexpr int kEmbeddingDim = kLstmHidden;
constexpr int kWindowLen = 100;

enum class Domain : std::uint8_t { Source = 0, Target = 1 };

inline const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

struct ModelMeta {
    int channels = 0;
    int window_len = kWindowLen;
    int num_classes = 0;
    Domain domain = Domain::Source;
};

struct ConvLayer {
    Tensor w;  // [kernel*in_channels, features]
    Tensor b;  // [features]
};

struct LstmLayer {
    Tensor wx;  // [in, 4H], gate order (input, forget, cell, output)
    Tensor wh;  // [H, 4H]
    Tensor b;   // [4H]
};

struct EmbedderParams {
    std::array<ConvLayer, kConvLayers> conv;
    std::array<LstmLayer, kLstmLayers> lstm;
};

struct ClassifierParams {
    Tensor w;  // [embedding_dim, num_classes] (transposed storage for row-major batch products)
    Tensor b;  // [num_classes]
};

struct ModelParams {
    ModelMeta meta;
    EmbedderParams embedder;
    ClassifierParams classifier;
};

inline int conv_output_len(int window_len) {
    return window_len - kConvLayers * (kConvKernel - 1);
}

inline void validate_model(const ModelParams& m) {
    const ModelMeta& meta = m.meta;
    if (meta.channels <= 0 || meta.window_len <= 0 || meta.num_classes <= 0)
        throw ShapeError("model meta not initialized");
    if (conv_output_len(meta.window_len) <= 0)
        throw ShapeError("window too short for the convolution stack");
    int in_ch = meta.channels;
    for (int l = 0; l < kConvLayers; ++l) {
        const ConvLayer& c = m.embedder.conv[static_cast<std::size_t>(l)];
        if (c.w.shape() != Shape{kConvKernel * in_ch, kConvFeatures} ||
            c.b.shape() != Shape{kConvFeatures})
            throw ShapeError("conv layer " + std::to_string(l + 1) + " has unexpected shape " +
                             shape_str(c.w.shape()));
        in_ch = kConvFeatures;
    }
    int lstm_in = kConvFeatures;
    for (int l = 0; l < kLstmLayers; ++l) {
        const LstmLayer& s = m.embedder.lstm[static_cast<std::size_t>(l)];
        if (s.wx.shape() != Shape{lstm_in, 4 * kLstmHidden} ||
            s.wh.shape() != Shape{kLstmHidden, 4 * kLstmHidden} ||
            s.b.shape() != Shape{4 * kLstmHidden})
            throw ShapeError("lstm layer " + std::to_string(l + 1) + " has unexpected shape");
        lstm_in = kLstmHidden;
    }
    if (m.classifier.w.shape() != Shape{kEmbeddingDim, meta.num_classes} ||
        m.classifier.b.shape() != Shape{meta.num_classes})
        throw ShapeError("classifier head has unexpected shape " + shape_str(m.classifier.w.shape()));
}

namespace model_detail {

inline Tensor fanin_uniform(Shape shape, int fan_in, Rng& rng) {
    float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

}  // namespace model_detail

inline EmbedderParams init_embedder(int channels, std::uint64_t seed) {
    Rng rng(seed, 0x9d);
    EmbedderParams e;
    int in_ch = channels;
    for (auto& c : e.conv) {
        int fan_in = kConvKernel * in_ch;
        c.w = model_detail::fanin_uniform({fan_in, kConvFeatures}, fan_in, rng);
        c.b = Tensor::zeros({kConvFeatures});
        in_ch = kConvFeatures;
    }
    int lstm_in = kConvFeatures;
    for (auto& s : e.lstm) {
        s.wx = model_detail::fanin_uniform({lstm_in, 4 * kLstmHidden}, lstm_in, rng);
        s.wh = model_detail::fanin_uniform({kLstmHidden, 4 * kLstmHidden}, kLstmHidden, rng);
        s.b = Tensor::zeros({4 * kLstmHidden});
        // forget-gate bias starts at +1 for stable early training
        for (int j = kLstmHidden; j < 2 * kLstmHidden; ++j) s.b[j] = 1.0f;
        lstm_in = kLstmHidden;
    }
    return e;
}

inline ClassifierParams init_classifier(int num_classes, std::uint64_t seed) {
    Rng rng(seed, 0xc1);
    ClassifierParams c;
    c.w = model_detail::fanin_uniform({kEmbeddingDim, num_classes}, kEmbeddingDim, rng);
    c.b = Tensor::zeros({num_classes});
    return c;
}

inline ModelParams init_model(ModelMeta meta, std::uint64_t seed) {
    ModelParams m;
    m.meta = meta;
    m.embedder = init_embedder(meta.channels, derive_seed(seed, "embedder"));
    m.classifier = init_classifier(meta.num_classes, derive_seed(seed, "classifier"));
    validate_model(m);
    return m;
}

// Parameter nodes of one model staged onto a tape.
struct ModelVars {
    std::array<std::pair<Var, Var>, kConvLayers> conv;  // (w, b)
    std::array<std::array<Var, 3>, kLstmLayers> lstm;   // (wx, wh, b)
    Var cls_w, cls_b;

    std::vector<Var> embedder_params() const {
        std::vector<Var> v;
        for (const auto& c : conv) {
            v.push_back(c.first);
            v.push_back(c.second);
        }
        for (const auto& s : lstm) {
            v.push_back(s[0]);
            v.push_back(s[1]);
            v.push_back(s[2]);
        }
        return v;
    }

    std::vector<Var> embedder_weights() const {
        std::vector<Var> v;
        for (const auto& c : conv) v.push_back(c.first);
        for (const auto& s : lstm) {
            v.push_back(s[0]);
            v.push_back(s[1]);
        }
        return v;
    }

    std::vector<Var> all_params() const {
        std::vector<Var> v = embedder_params();
        v.push_back(cls_w);
        v.push_back(cls_b);
        return v;
    }
};

inline ModelVars stage_model(GradientTape& tape, const ModelParams& m, bool embedder_grad,
                             bool classifier_grad) {
    ModelVars v;
    for (int l = 0; l < kConvLayers; ++l) {
        v.conv[static_cast<std::size_t>(l)] = {
            tape.input(m.embedder.conv[static_cast<std::size_t>(l)].w, embedder_grad),
            tape.input(m.embedder.conv[static_cast<std::size_t>(l)].b, embedder_grad)};
    }
    for (int l = 0; l < kLstmLayers; ++l) {
        const LstmLayer& s = m.embedder.lstm[static_cast<std::size_t>(l)];
        v.lstm[static_cast<std::size_t>(l)] = {tape.input(s.wx, embedder_grad),
                                               tape.input(s.wh, embedder_grad),
                                               tape.input(s.b, embedder_grad)};
    }
    v.cls_w = tape.input(m.classifier.w, classifier_grad);
    v.cls_b = tape.input(m.classifier.b, classifier_grad);
    return v;
}

// windows [N, T, C] -> embeddings [N, 128]
inline Var embed_on_tape(GradientTape& tape, const ModelVars& v, Var windows) {
    Var x = windows;
    for (const auto& c : v.conv) x = tape.relu(tape.conv1d_valid(x, c.first, c.second, kConvKernel));
    for (const auto& s : v.lstm) x = tape.lstm(x, s[0], s[1], s[2]);
    return tape.last_step(x);
}

inline Var logits_on_tape(GradientTape& tape, const ModelVars& v, Var embeddings) {
    return tape.add_row_bias(tape.matmul(embeddings, v.cls_w), v.cls_b);
}

inline void check_batch_shape(const ModelParams& m, const Tensor& batch) {
    if (batch.ndim() != 3 || batch.dim(1) != m.meta.window_len || batch.dim(2) != m.meta.channels)
        throw ShapeError("window batch " + shape_str(batch.shape()) + " does not match model input [" +
                         std::to_string(m.meta.window_len) + " x " + std::to_string(m.meta.channels) +
                         "]");
}

// windows [N, T, C] -> [N, 128]; inference only, no dropout
inline Tensor embed(const ModelParams& m, const Tensor& batch) {
    validate_model(m);
    check_batch_shape(m, batch);
    GradientTape tape;
    ModelVars v = stage_model(tape, m, false, false);
    Var e = embed_on_tape(tape, v, tape.input(batch));
    return tape.val(e);
}

// windows [N, T, C] -> class probabilities [N, K]
inline Tensor classify(const ModelParams& m, const Tensor& batch) {
    validate_model(m);
    check_batch_shape(m, batch);
    GradientTape tape;
    ModelVars v = stage_model(tape, m, false, false);
    Var e = embed_on_tape(tape, v, tape.input(batch));
    Var p = tape.softmax(logits_on_tape(tape, v, e));
    return tape.val(p);
}

inline std::vector<int> argmax_rows(const Tensor& probs) {
    int n = probs.dim(0), k = probs.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* row = probs.data() + static_cast<std::ptrdiff_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

// Target model keeps its embedder; the source classifier head is copied
// verbatim so source-trained decision boundaries apply to replicated
// embeddings.
inline ModelParams transplant_classifier(const ModelParams& source, const ModelParams& target) {
    if (source.meta.num_classes != target.meta.num_classes)
        throw ShapeError("transplant: class counts differ (" +
                         std::to_string(source.meta.num_classes) + " vs " +
                         std::to_string(target.meta.num_classes) + ")");
    if (source.classifier.w.shape() != target.classifier.w.shape())
        throw ShapeError("transplant: classifier shapes differ");
    ModelParams out = target;
    out.classifier = source.classifier;
    return out;
}

}  // namespace bodyadapt
