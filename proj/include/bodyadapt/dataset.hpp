#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bodyadapt/rng.hpp"
#include "bodyadapt/tensor.hpp"

namespace bodyadapt {

// Canonical activity rate and window geometry shared by every dataset.
constexpr double kCanonicalRateHz = 30.0;
constexpr int kCanonicalWindowLen = 100;

// Canonical five-class label indices.
enum FiveClass : int {
    kClassOther = 0,
    kClassSit = 1,
    kClassStand = 2,
    kClassLie = 3,
    kClassWalk = 4,
};

inline const std::vector<std::string>& five_class_names() {
    static const std::vector<std::string> names{"other", "sit", "stand", "lie", "walk"};
    return names;
}

enum class LabelSchemeKind : std::uint8_t { FiveClass = 0, AllLabels = 1 };

// One sensor site inside a raw file: which columns to read and how to scale
// them into canonical units (m/s^2, deg/s, uT).
struct SiteSpec {
    std::string name;
    std::vector<int> columns;        // 1-based raw file columns
    std::vector<double> unit_scale;  // per-channel multiplier
};

struct LabelEntry {
    int native = 0;              // raw label code
    std::string name;            // human-readable native activity name
    std::string five_class;      // one of other/sit/stand/lie/walk
};

// Everything needed to read one dataset + site pair; shipped as an auditable
// JSON file rather than hard-coded column numbers.
struct DatasetDescriptor {
    std::string dataset_id;
    double native_rate_hz = 0.0;
    std::string delimiter = "whitespace";  // "whitespace" or "comma"
    int time_column = 0;                   // 1-based; 0 = synthesize from native rate
    double time_scale = 1.0;               // raw time -> seconds
    int label_column = 0;                  // 1-based
    std::string missing_token = "NaN";
    SiteSpec source_site;
    SiteSpec target_site;
    std::vector<LabelEntry> label_map;
    std::string subject_regex;             // optional, one digit-group capture

    void validate() const {
        if (dataset_id.empty()) throw IoError("descriptor: dataset id missing");
        if (native_rate_hz <= 0.0) throw IoError("descriptor: native rate must be positive");
        if (label_column <= 0) throw IoError("descriptor: label column missing");
        if (source_site.columns.empty() || target_site.columns.empty())
            throw IoError("descriptor: both sites need channel columns");
        if (source_site.columns.size() != source_site.unit_scale.size() ||
            target_site.columns.size() != target_site.unit_scale.size())
            throw IoError("descriptor: unit scale count must match channel count");
        for (int c : source_site.columns)
            for (int d : target_site.columns)
                if (c == d)
                    throw IoError("descriptor: source and target channel columns overlap at column " +
                                  std::to_string(c));
        if (label_map.empty()) throw IoError("descriptor: label map missing");
        for (const auto& e : label_map) {
            const auto& names = five_class_names();
            if (std::find(names.begin(), names.end(), e.five_class) == names.end())
                throw IoError("descriptor: label '" + e.name + "' maps to unknown class '" +
                              e.five_class + "'");
        }
    }
};

// Maps native label codes to canonical class indices under one of the two
// schemes. five_class: other=0, sit=1, stand=2, lie=3, walk=4. all_labels:
// every native activity keeps its own index, ordered by native code.
struct LabelScheme {
    LabelSchemeKind kind = LabelSchemeKind::FiveClass;
    std::vector<std::string> class_names;
    std::map<int, int> native_to_index;

    int num_classes() const { return static_cast<int>(class_names.size()); }

    int map_native(int native) const {
        auto it = native_to_index.find(native);
        if (it == native_to_index.end())
            throw IoError("unknown native label code " + std::to_string(native));
        return it->second;
    }
};

inline LabelScheme make_label_scheme(const DatasetDescriptor& d, LabelSchemeKind kind) {
    LabelScheme s;
    s.kind = kind;
    if (kind == LabelSchemeKind::FiveClass) {
        s.class_names = five_class_names();
        const auto& names = five_class_names();
        for (const auto& e : d.label_map) {
            int idx = static_cast<int>(
                std::find(names.begin(), names.end(), e.five_class) - names.begin());
            s.native_to_index[e.native] = idx;
        }
    } else {
        std::vector<LabelEntry> sorted = d.label_map;
        std::sort(sorted.begin(), sorted.end(),
                  [](const LabelEntry& a, const LabelEntry& b) { return a.native < b.native; });
        for (const auto& e : sorted) {
            s.native_to_index[e.native] = static_cast<int>(s.class_names.size());
            s.class_names.push_back(e.name);
        }
    }
    return s;
}

inline int map_labels(int native, const LabelScheme& scheme) { return scheme.map_native(native); }

// One contiguous multichannel recording with both sites sample-aligned on a
// shared time axis. Missing samples carry explicit per-channel masks, never
// sentinel values inside the data.
struct Recording {
    std::vector<double> timestamps;          // seconds
    Tensor source;                           // [source channels, samples]
    Tensor target;                           // [target channels, samples]
    std::vector<std::uint8_t> source_missing;  // [channels * samples], 1 = missing
    std::vector<std::uint8_t> target_missing;
    std::vector<int> labels;                 // per-sample native label codes
    int subject = 0;
    double rate_hz = 0.0;
    bool units_converted = false;

    int samples() const { return static_cast<int>(timestamps.size()); }
    int source_channels() const { return source.ndim() == 2 ? source.dim(0) : 0; }
    int target_channels() const { return target.ndim() == 2 ? target.dim(0) : 0; }

    bool src_missing(int c, int s) const {
        return source_missing[static_cast<std::size_t>(c) * timestamps.size() +
                              static_cast<std::size_t>(s)] != 0;
    }
    bool tgt_missing(int c, int s) const {
        return target_missing[static_cast<std::size_t>(c) * timestamps.size() +
                              static_cast<std::size_t>(s)] != 0;
    }
};

// One aligned pair of 100-sample windows; `label` is a canonical class index.
struct WindowPair {
    Tensor source;  // [source channels, 100]
    Tensor target;  // [target channels, 100]
    int label = -1;
    std::int64_t pairing_id = -1;
    int subject = 0;
    double t0 = 0.0;
};

struct WindowDataset {
    std::vector<WindowPair> pairs;
    std::vector<std::string> class_names;
    LabelSchemeKind scheme = LabelSchemeKind::FiveClass;
    int source_channels = 0;
    int target_channels = 0;
    int window_len = kCanonicalWindowLen;
    std::string dataset_id;
    std::uint64_t split_seed = 0;

    int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct WindowedSplit {
    std::vector<std::size_t> train;  // supervised source training (30%)
    std::vector<std::size_t> adapt;  // unsupervised adaptation (50%)
    std::vector<std::size_t> test;   // held-out evaluation (20%)
};

// ---- harmonization operations ----

// Linear fill of missing runs up to max_gap samples, both ends anchored on
// present samples. Leading/trailing runs are left missing.
inline Recording interpolate_missing(const Recording& rec, int max_gap) {
    Recording out = rec;
    int S = rec.samples();
    auto repair = [&](Tensor& data, std::vector<std::uint8_t>& missing, int channels) {
        for (int c = 0; c < channels; ++c) {
            float* row = data.data() + static_cast<std::ptrdiff_t>(c) * S;
            std::uint8_t* miss = missing.data() + static_cast<std::size_t>(c) * S;
            int s = 0;
            while (s < S) {
                if (!miss[s]) {
                    ++s;
                    continue;
                }
                int run_start = s;
                while (s < S && miss[s]) ++s;
                int run_end = s;  // one past
                bool bounded = run_start > 0 && run_end < S;
                if (bounded && run_end - run_start <= max_gap) {
                    float lo = row[run_start - 1];
                    float hi = row[run_end];
                    int span = run_end - run_start + 1;
                    for (int i = run_start; i < run_end; ++i) {
                        float frac = static_cast<float>(i - run_start + 1) / static_cast<float>(span);
                        row[i] = lo + (hi - lo) * frac;
                        miss[i] = 0;
                    }
                }
            }
        }
    };
    repair(out.source, out.source_missing, rec.source_channels());
    repair(out.target, out.target_missing, rec.target_channels());
    return out;
}

// Multiplies each channel by its descriptor unit scale. A recording can be
// converted once; a second attempt is an error rather than silent double
// scaling.
inline Recording convert_units(const Recording& rec, const DatasetDescriptor& desc) {
    if (rec.units_converted) throw IoError("recording units already converted");
    Recording out = rec;
    int S = rec.samples();
    auto apply = [&](Tensor& data, const std::vector<double>& scales, int channels) {
        for (int c = 0; c < channels; ++c) {
            float s = static_cast<float>(scales[static_cast<std::size_t>(c)]);
            float* row = data.data() + static_cast<std::ptrdiff_t>(c) * S;
            for (int i = 0; i < S; ++i) row[i] *= s;
        }
    };
    apply(out.source, desc.source_site.unit_scale, rec.source_channels());
    apply(out.target, desc.target_site.unit_scale, rec.target_channels());
    out.units_converted = true;
    return out;
}

// Linear resample of every channel onto a uniform target-rate grid spanning
// the original time range; labels move by nearest neighbor (earlier sample
// wins ties). A sample is missing on the new grid if either bracketing
// native sample is missing.
inline Recording resample(const Recording& rec, double target_rate = kCanonicalRateHz) {
    if (rec.rate_hz <= 0.0) throw IoError("resample: recording has no sample rate");
    if (rec.samples() < 2) throw IoError("resample: recording too short");
    if (rec.rate_hz < target_rate - 1e-9)
        throw IoError("resample: refusing to upsample " + std::to_string(rec.rate_hz) + " Hz to " +
                      std::to_string(target_rate) + " Hz");
    if (std::abs(rec.rate_hz - target_rate) < 1e-9) return rec;  // bitwise identity

    int S = rec.samples();
    double t0 = rec.timestamps.front();
    double t_end = rec.timestamps.back();
    int out_n = static_cast<int>(std::floor((t_end - t0) * target_rate + 1e-9)) + 1;

    Recording out;
    out.subject = rec.subject;
    out.units_converted = rec.units_converted;
    out.rate_hz = target_rate;
    out.timestamps.resize(static_cast<std::size_t>(out_n));
    out.labels.resize(static_cast<std::size_t>(out_n));
    int cs = rec.source_channels(), ct = rec.target_channels();
    out.source = Tensor({cs, out_n});
    out.target = Tensor({ct, out_n});
    out.source_missing.assign(static_cast<std::size_t>(cs) * out_n, 0);
    out.target_missing.assign(static_cast<std::size_t>(ct) * out_n, 0);

    int hint = 0;
    for (int k = 0; k < out_n; ++k) {
        double t = t0 + static_cast<double>(k) / target_rate;
        out.timestamps[static_cast<std::size_t>(k)] = t;
        while (hint + 2 < S && rec.timestamps[static_cast<std::size_t>(hint + 1)] <= t) ++hint;
        int lo = hint, hi = hint + 1;
        double tl = rec.timestamps[static_cast<std::size_t>(lo)];
        double th = rec.timestamps[static_cast<std::size_t>(hi)];
        double frac = th > tl ? (t - tl) / (th - tl) : 0.0;
        frac = std::clamp(frac, 0.0, 1.0);
        // nearest label, earlier sample on ties
        out.labels[static_cast<std::size_t>(k)] =
            rec.labels[static_cast<std::size_t>(frac <= 0.5 ? lo : hi)];
        for (int c = 0; c < cs; ++c) {
            bool miss = rec.src_missing(c, lo) || rec.src_missing(c, hi);
            out.source_missing[static_cast<std::size_t>(c) * out_n + static_cast<std::size_t>(k)] =
                miss ? 1 : 0;
            float vl = rec.source[static_cast<std::ptrdiff_t>(c) * S + lo];
            float vh = rec.source[static_cast<std::ptrdiff_t>(c) * S + hi];
            out.source[static_cast<std::ptrdiff_t>(c) * out_n + k] =
                miss ? 0.0f : static_cast<float>(vl + (vh - vl) * frac);
        }
        for (int c = 0; c < ct; ++c) {
            bool miss = rec.tgt_missing(c, lo) || rec.tgt_missing(c, hi);
            out.target_missing[static_cast<std::size_t>(c) * out_n + static_cast<std::size_t>(k)] =
                miss ? 1 : 0;
            float vl = rec.target[static_cast<std::ptrdiff_t>(c) * S + lo];
            float vh = rec.target[static_cast<std::ptrdiff_t>(c) * S + hi];
            out.target[static_cast<std::ptrdiff_t>(c) * out_n + k] =
                miss ? 0.0f : static_cast<float>(vl + (vh - vl) * frac);
        }
    }
    return out;
}

// Cuts a 30 Hz recording into consecutive non-overlapping 100-sample paired
// windows. Windows containing unrepaired missing samples on either site are
// dropped; the trailing remainder is dropped; the window label is the
// majority vote over per-sample labels with ties going to the smaller class
// index.
inline std::vector<WindowPair> windowize(const Recording& rec, const LabelScheme& scheme,
                                         int window_len = kCanonicalWindowLen) {
    if (std::abs(rec.rate_hz - kCanonicalRateHz) > 1e-9)
        throw IoError("windowize: recording must be resampled to 30 Hz first");
    if (!rec.units_converted) throw IoError("windowize: recording must be in canonical units");
    std::vector<WindowPair> out;
    int S = rec.samples();
    int cs = rec.source_channels(), ct = rec.target_channels();
    int K = scheme.num_classes();
    std::vector<int> votes(static_cast<std::size_t>(K));
    for (int w0 = 0; w0 + window_len <= S; w0 += window_len) {
        bool missing = false;
        for (int c = 0; c < cs && !missing; ++c)
            for (int s = w0; s < w0 + window_len; ++s)
                if (rec.src_missing(c, s)) {
                    missing = true;
                    break;
                }
        for (int c = 0; c < ct && !missing; ++c)
            for (int s = w0; s < w0 + window_len; ++s)
                if (rec.tgt_missing(c, s)) {
                    missing = true;
                    break;
                }
        if (missing) continue;
        std::fill(votes.begin(), votes.end(), 0);
        for (int s = w0; s < w0 + window_len; ++s)
            ++votes[static_cast<std::size_t>(scheme.map_native(rec.labels[static_cast<std::size_t>(s)]))];
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (votes[static_cast<std::size_t>(k)] > votes[static_cast<std::size_t>(best)]) best = k;

        WindowPair p;
        p.source = Tensor({cs, window_len});
        p.target = Tensor({ct, window_len});
        for (int c = 0; c < cs; ++c)
            for (int s = 0; s < window_len; ++s)
                p.source[static_cast<std::ptrdiff_t>(c) * window_len + s] =
                    rec.source[static_cast<std::ptrdiff_t>(c) * S + w0 + s];
        for (int c = 0; c < ct; ++c)
            for (int s = 0; s < window_len; ++s)
                p.target[static_cast<std::ptrdiff_t>(c) * window_len + s] =
                    rec.target[static_cast<std::ptrdiff_t>(c) * S + w0 + s];
        p.label = best;
        p.subject = rec.subject;
        p.t0 = rec.timestamps[static_cast<std::size_t>(w0)];
        p.pairing_id = -1;  // assigned after all recordings are collected
        out.push_back(std::move(p));
    }
    return out;
}

// Seeded uniform 30/50/20 partition at window granularity. Windows are
// ordered by (subject, t0) before shuffling so the split does not depend on
// parse order.
inline WindowedSplit split(const WindowDataset& data, double p_train, double p_adapt,
                           double p_test, std::uint64_t seed) {
    if (std::abs(p_train + p_adapt + p_test - 1.0) > 1e-9)
        throw IoError("split proportions must sum to 1");
    std::size_t n = data.pairs.size();
    if (n < 3) throw IoError("split needs at least 3 windows");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const WindowPair& wa = data.pairs[a];
        const WindowPair& wb = data.pairs[b];
        if (wa.subject != wb.subject) return wa.subject < wb.subject;
        if (wa.t0 != wb.t0) return wa.t0 < wb.t0;
        return wa.pairing_id < wb.pairing_id;
    });
    Rng rng(seed, 0x5b);
    rng.shuffle(order);
    auto round_count = [n](double p) {
        return static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
    };
    std::size_t n_train = round_count(p_train);
    std::size_t n_adapt = round_count(p_adapt);
    if (n_train + n_adapt > n) n_adapt = n - n_train;
    WindowedSplit s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.adapt.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                   order.begin() + static_cast<std::ptrdiff_t>(n_train + n_adapt));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_adapt), order.end());
    return s;
}

inline WindowedSplit split_default(const WindowDataset& data) {
    return split(data, 0.30, 0.50, 0.20, data.split_seed);
}

// ---- batch staging for the models ----

enum class Site { Source, Target };

// Gathers [N, window_len, channels] model input (time major) from [C, T]
// window storage.
inline Tensor to_model_batch(const WindowDataset& data, const std::vector<std::size_t>& idx,
                             Site site) {
    int C = site == Site::Source ? data.source_channels : data.target_channels;
    int T = data.window_len;
    Tensor batch({static_cast<int>(idx.size()), T, C});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const WindowPair& p = data.pairs[idx[i]];
        const Tensor& w = site == Site::Source ? p.source : p.target;
        float* dst = batch.data() + static_cast<std::ptrdiff_t>(i) * T * C;
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                dst[static_cast<std::ptrdiff_t>(t) * C + c] = w[static_cast<std::ptrdiff_t>(c) * T + t];
    }
    return batch;
}

inline std::vector<int> gather_labels(const WindowDataset& data, const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = data.pairs[idx[i]].label;
    return out;
}

inline std::vector<std::size_t> all_indices(const WindowDataset& data) {
    std::vector<std::size_t> idx(data.pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

inline std::vector<int> class_histogram(const WindowDataset& data) {
    std::vector<int> hist(static_cast<std::size_t>(data.num_classes()), 0);
    for (const auto& p : data.pairs) ++hist[static_cast<std::size_t>(p.label)];
    return hist;
}

}  // namespace bodyadapt
