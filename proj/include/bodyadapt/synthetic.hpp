#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bodyadapt/dataset.hpp"

namespace bodyadapt {

// Paired-signal generator for download-free experiments. Each window pair is
// one shared latent trajectory pushed through two distinct fixed site-mixing
// maps, plus a per-class DC pattern and independent per-site noise. Classes
// are separable from either site by construction: per channel, the class DC
// levels sit on a grid spaced by mean_gap.
struct SynthConfig {
    int num_classes = 5;
    int windows_per_class = 200;
    int channels_per_site = 3;
    float noise_sigma = 0.05f;
    float mean_gap = 1.0f;   // class-to-class DC spacing per channel
    float osc_amp_lo = 0.3f;  // latent oscillation amplitude range
    float osc_amp_hi = 0.8f;
    int latent_dim = 6;
    int window_len = kCanonicalWindowLen;
};

struct SynthDebug {
    Tensor mix_source;  // [Cs, L]
    Tensor mix_target;  // [Ct, L]
    std::vector<Tensor> latents;  // one [L, T] per window pair
};

inline WindowDataset synth_paired_dataset(const SynthConfig& cfg, std::uint64_t seed,
                                          SynthDebug* debug = nullptr) {
    if (cfg.num_classes < 2 || cfg.windows_per_class < 1 || cfg.channels_per_site < 1 ||
        cfg.latent_dim < 1)
        throw IoError("synthetic config out of range");
    const int K = cfg.num_classes;
    const int C = cfg.channels_per_site;
    const int L = cfg.latent_dim;
    const int T = cfg.window_len;

    Rng setup(derive_seed(seed, "synth-setup"));
    float mix_scale = 1.0f / std::sqrt(static_cast<float>(L));
    Tensor mix_s = Tensor::normal({C, L}, setup, 0.0f, mix_scale);
    Tensor mix_t = Tensor::normal({C, L}, setup, 0.0f, mix_scale);

    // one oscillator bank shared by all classes: class identity lives in the
    // per-site DC patterns alone, so it cannot ride the shared oscillations
    // across sites
    std::vector<float> freq(static_cast<std::size_t>(L));
    std::vector<float> amp(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        freq[static_cast<std::size_t>(l)] = setup.uniform(0.5f, 3.0f);
        amp[static_cast<std::size_t>(l)] = setup.uniform(cfg.osc_amp_lo, cfg.osc_amp_hi);
    }
    // per-channel class sign pattern; DC level of class k on channel c is
    // sign[c] * (level+1) * mean_gap, so any two classes differ by >= mean_gap.
    // The target site assigns DC levels under a rotated class order, so the
    // two sites stay individually separable while a source-trained decision
    // rule does not transfer to target signals untrained.
    std::vector<float> sign_s(static_cast<std::size_t>(C)), sign_t(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        sign_s[static_cast<std::size_t>(c)] = setup.uniform() < 0.5f ? -1.0f : 1.0f;
        sign_t[static_cast<std::size_t>(c)] = setup.uniform() < 0.5f ? -1.0f : 1.0f;
    }
    auto target_level = [K](int k) { return (k + 1) % K; };

    WindowDataset data;
    data.scheme = LabelSchemeKind::FiveClass;
    if (K == 5) {
        data.class_names = five_class_names();
    } else {
        for (int k = 0; k < K; ++k) data.class_names.push_back("class" + std::to_string(k));
    }
    data.source_channels = C;
    data.target_channels = C;
    data.window_len = T;
    data.dataset_id = "synthetic";
    data.split_seed = derive_seed(seed, "synth-split");

    if (debug) {
        debug->mix_source = mix_s;
        debug->mix_target = mix_t;
        debug->latents.clear();
    }

    const double dt = 1.0 / kCanonicalRateHz;
    std::int64_t next_id = 0;
    Tensor latent({L, T});
    for (int k = 0; k < K; ++k) {
        for (int w = 0; w < cfg.windows_per_class; ++w) {
            Rng wrng(derive_seed(seed, "synth-window",
                                 static_cast<std::uint64_t>(k) * 1000003ULL +
                                     static_cast<std::uint64_t>(w)));
            for (int l = 0; l < L; ++l) {
                float phase = wrng.uniform(0.0f, 6.2831853f);
                float f = freq[static_cast<std::size_t>(l)];
                float a = amp[static_cast<std::size_t>(l)];
                for (int t = 0; t < T; ++t)
                    latent[static_cast<std::ptrdiff_t>(l) * T + t] =
                        a * std::sin(6.2831853f * f * static_cast<float>(t * dt) + phase);
            }
            WindowPair p;
            p.source = Tensor({C, T});
            p.target = Tensor({C, T});
            for (int c = 0; c < C; ++c) {
                float dc_s = sign_s[static_cast<std::size_t>(c)] * static_cast<float>(k + 1) *
                             cfg.mean_gap;
                float dc_t = sign_t[static_cast<std::size_t>(c)] *
                             static_cast<float>(target_level(k) + 1) * cfg.mean_gap;
                for (int t = 0; t < T; ++t) {
                    float vs = dc_s, vt = dc_t;
                    for (int l = 0; l < L; ++l) {
                        float z = latent[static_cast<std::ptrdiff_t>(l) * T + t];
                        vs += mix_s[static_cast<std::ptrdiff_t>(c) * L + l] * z;
                        vt += mix_t[static_cast<std::ptrdiff_t>(c) * L + l] * z;
                    }
                    p.source[static_cast<std::ptrdiff_t>(c) * T + t] = vs;
                    p.target[static_cast<std::ptrdiff_t>(c) * T + t] = vt;
                }
            }
            if (cfg.noise_sigma > 0.0f) {
                for (std::int64_t i = 0; i < p.source.numel(); ++i)
                    p.source[i] += cfg.noise_sigma * wrng.normal();
                for (std::int64_t i = 0; i < p.target.numel(); ++i)
                    p.target[i] += cfg.noise_sigma * wrng.normal();
            }
            p.label = k;
            p.subject = 0;
            p.pairing_id = next_id;
            p.t0 = static_cast<double>(next_id) * (T * dt);
            ++next_id;
            if (debug) debug->latents.push_back(latent);
            data.pairs.push_back(std::move(p));
        }
    }
    return data;
}

}  // namespace bodyadapt
