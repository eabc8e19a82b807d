#pragma once

#include <cmath>
#include <vector>

#include "bodyadapt/tensor.hpp"

namespace bodyadapt {

// RMSprop: s <- rho*s + (1-rho)*g^2 ; p <- p - lr*g/sqrt(s + eps)
struct RmspropConfig {
    float learning_rate = 1e-3f;
    float decay = 0.9f;
    float epsilon = 1e-8f;
};

class RmspropState {
public:
    RmspropState() = default;

    explicit RmspropState(RmspropConfig cfg) : cfg_(cfg) {}

    const RmspropConfig& config() const { return cfg_; }

    void set_learning_rate(float lr) { cfg_.learning_rate = lr; }

    // One elementwise update; accumulators are created on first sight of
    // each parameter slot and stay non-negative by construction.
    void step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads) {
        if (params.size() != grads.size()) throw ShapeError("rmsprop: param/grad count mismatch");
        if (accum_.empty()) {
            accum_.reserve(params.size());
            for (const Tensor* p : params) accum_.emplace_back(Tensor::zeros(p->shape()));
        }
        if (accum_.size() != params.size()) throw ShapeError("rmsprop: state size mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = *grads[i];
            Tensor& s = accum_[i];
            require_same_shape(p, g, "rmsprop step");
            require_same_shape(p, s, "rmsprop state");
            g.require_finite("rmsprop gradient");
            float* pd = p.data();
            const float* gd = g.data();
            float* sd = s.data();
            for (std::int64_t k = 0; k < p.numel(); ++k) {
                float sk = cfg_.decay * sd[k] + (1.0f - cfg_.decay) * gd[k] * gd[k];
                sd[k] = sk;
                pd[k] -= cfg_.learning_rate * gd[k] / std::sqrt(sk + cfg_.epsilon);
            }
            p.require_finite("rmsprop parameter");
        }
    }

    const std::vector<Tensor>& accumulators() const { return accum_; }

private:
    RmspropConfig cfg_;
    std::vector<Tensor> accum_;
};

// Scales gradients in place so their global L2 norm does not exceed
// max_norm. Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor*> grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor* g : grads) sq += g->squared_norm();
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        float s = static_cast<float>(max_norm / norm);
        for (Tensor* g : grads)
            for (auto& x : g->vec()) x *= s;
    }
    return norm;
}

}  // namespace bodyadapt
