#pragma once

#include <string>
#include <vector>

#include "bodyadapt/tape.hpp"

namespace bodyadapt {

// Embedding reconstruction loss selection: the four reconstruction losses
// crossed with optional L1/L2 regularization applied either to the target
// embedder weights (weight decay) or to the produced embedding activations.
enum class LossKind : std::uint8_t { Mae = 0, Mse = 1, Msle = 2, Cosine = 3 };
enum class RegKind : std::uint8_t { None = 0, L1 = 1, L2 = 2 };
enum class RegTarget : std::uint8_t { EmbedderWeights = 0, EmbeddingActivations = 1 };

struct LossSpec {
    LossKind kind = LossKind::Mae;
    RegKind reg = RegKind::None;
    RegTarget reg_target = RegTarget::EmbedderWeights;
    float lambda = 0.0f;

    void validate() const {
        if ((reg == RegKind::None) != (lambda == 0.0f))
            throw NumericError("loss spec: lambda must be zero exactly when regularization is none");
        if (lambda < 0.0f) throw NumericError("loss spec: lambda must be non-negative");
    }
};

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::Mae: return "mae";
        case LossKind::Mse: return "mse";
        case LossKind::Msle: return "msle";
        case LossKind::Cosine: return "cosine";
    }
    return "?";
}

inline const char* reg_kind_name(RegKind r) {
    switch (r) {
        case RegKind::None: return "none";
        case RegKind::L1: return "l1";
        case RegKind::L2: return "l2";
    }
    return "?";
}

inline const char* reg_target_name(RegTarget t) {
    return t == RegTarget::EmbedderWeights ? "embedder_weights" : "embedding_activations";
}

inline LossKind loss_kind_from(const std::string& s) {
    if (s == "mae") return LossKind::Mae;
    if (s == "mse") return LossKind::Mse;
    if (s == "msle") return LossKind::Msle;
    if (s == "cosine") return LossKind::Cosine;
    throw NumericError("unknown loss kind '" + s + "' (mae|mse|msle|cosine)");
}

inline RegKind reg_kind_from(const std::string& s) {
    if (s == "none") return RegKind::None;
    if (s == "l1") return RegKind::L1;
    if (s == "l2") return RegKind::L2;
    throw NumericError("unknown regularization '" + s + "' (none|l1|l2)");
}

inline RegTarget reg_target_from(const std::string& s) {
    if (s == "embedder_weights" || s == "weights") return RegTarget::EmbedderWeights;
    if (s == "embedding_activations" || s == "activations") return RegTarget::EmbeddingActivations;
    throw NumericError("unknown regularization target '" + s + "'");
}

inline std::string loss_condition_name(const LossSpec& s) {
    std::string name = loss_kind_name(s.kind);
    if (s.reg != RegKind::None) name += std::string("+") + reg_kind_name(s.reg);
    return name;
}

// Reconstruction term on the tape. `source_emb` is the regression target
// (frozen source embeddings), `target_emb` the differentiable prediction.
inline Var reconstruction_term(GradientTape& tape, Var source_emb, Var target_emb, LossKind kind) {
    switch (kind) {
        case LossKind::Mae: return tape.mae_loss(source_emb, target_emb);
        case LossKind::Mse: return tape.mse_loss(source_emb, target_emb);
        case LossKind::Msle: return tape.msle_loss(source_emb, target_emb);
        case LossKind::Cosine: return tape.cosine_loss(source_emb, target_emb);
    }
    throw NumericError("bad loss kind");
}

// Full replication loss: reconstruction + lambda * penalty on either the
// embedder weights or the embedding activations.
inline Var replication_loss_on_tape(GradientTape& tape, Var source_emb, Var target_emb,
                                    const LossSpec& spec, const std::vector<Var>& embedder_weights) {
    spec.validate();
    Var loss = reconstruction_term(tape, source_emb, target_emb, spec.kind);
    if (spec.reg == RegKind::None) return loss;
    std::vector<Var> targets = spec.reg_target == RegTarget::EmbedderWeights
                                   ? embedder_weights
                                   : std::vector<Var>{target_emb};
    if (targets.empty()) throw NumericError("replication loss: no regularization targets staged");
    Var pen = spec.reg == RegKind::L1 ? tape.l1_penalty(targets) : tape.l2_penalty(targets);
    return tape.add(loss, tape.scale(pen, spec.lambda));
}

// Scalar convenience for tests and reports. `reg_weights` supplies the
// weight tensors when the spec penalizes embedder weights.
inline double replication_loss(const Tensor& source_emb, const Tensor& target_emb,
                               const LossSpec& spec,
                               const std::vector<const Tensor*>& reg_weights = {}) {
    GradientTape tape;
    Var a = tape.input(source_emb);
    Var b = tape.input(target_emb);
    std::vector<Var> wvars;
    for (const Tensor* w : reg_weights) wvars.push_back(tape.input(*w));
    Var loss = replication_loss_on_tape(tape, a, b, spec, wvars);
    return static_cast<double>(tape.val(loss)[0]);
}

}  // namespace bodyadapt
