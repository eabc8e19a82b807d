#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bodyadapt/dataset.hpp"
#include "bodyadapt/model.hpp"
#include "bodyadapt/train.hpp"

namespace bodyadapt {

struct ConfusionMatrix {
    int k = 0;
    std::vector<std::int64_t> counts;  // row = true class, column = predicted

    explicit ConfusionMatrix(int classes = 0)
        : k(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}

    std::int64_t& at(int truth, int pred) {
        return counts[static_cast<std::size_t>(truth) * k + static_cast<std::size_t>(pred)];
    }
    std::int64_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * k + static_cast<std::size_t>(pred)];
    }
    std::int64_t total() const {
        std::int64_t t = 0;
        for (auto v : counts) t += v;
        return t;
    }
    std::int64_t trace() const {
        std::int64_t t = 0;
        for (int i = 0; i < k; ++i) t += at(i, i);
        return t;
    }
};

inline ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& truths,
                                 int k) {
    if (preds.size() != truths.size())
        throw NumericError("confusion: prediction/truth lengths differ");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (truths[i] < 0 || truths[i] >= k || preds[i] < 0 || preds[i] >= k)
            throw NumericError("confusion: class index out of range at row " + std::to_string(i));
        ++cm.at(truths[i], preds[i]);
    }
    return cm;
}

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct OvrMetrics {
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    // support-weighted alternatives, for sensitivity analysis only
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
};

// One-vs-rest precision/recall/F1 per class plus unweighted macro averages
// (the reported numbers). Empty denominators yield 0 and such classes still
// count in the macro mean.
inline OvrMetrics ovr_metrics(const ConfusionMatrix& cm) {
    if (cm.total() <= 0) throw NumericError("ovr_metrics: empty confusion matrix");
    OvrMetrics m;
    m.per_class.resize(static_cast<std::size_t>(cm.k));
    double total = static_cast<double>(cm.total());
    for (int k = 0; k < cm.k; ++k) {
        std::int64_t tp = cm.at(k, k);
        std::int64_t col = 0, row = 0;
        for (int i = 0; i < cm.k; ++i) {
            col += cm.at(i, k);
            row += cm.at(k, i);
        }
        ClassMetrics& c = m.per_class[static_cast<std::size_t>(k)];
        c.precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        c.recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        c.f1 = (c.precision + c.recall) > 0.0
                   ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                   : 0.0;
        m.macro_precision += c.precision;
        m.macro_recall += c.recall;
        m.macro_f1 += c.f1;
        double support = static_cast<double>(row) / total;
        m.weighted_precision += support * c.precision;
        m.weighted_recall += support * c.recall;
        m.weighted_f1 += support * c.f1;
    }
    m.macro_precision /= cm.k;
    m.macro_recall /= cm.k;
    m.macro_f1 /= cm.k;
    m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    return m;
}

struct RocCurve {
    bool defined = false;  // class absent from truths (or no negatives): AUC is missing
    double auc = 0.0;
    std::vector<std::pair<double, double>> points;  // (fpr, tpr), threshold-descending
};

// One-vs-rest ROC for class k from per-window probability scores; thresholds
// at distinct score values, ties grouped; AUC by trapezoid.
inline RocCurve roc_auc(const std::vector<float>& scores, const std::vector<int>& truths, int k) {
    if (scores.size() != truths.size()) throw NumericError("roc_auc: length mismatch");
    std::int64_t pos = 0, neg = 0;
    for (int t : truths) (t == k) ? ++pos : ++neg;
    RocCurve out;
    if (pos == 0 || neg == 0) return out;  // undefined, reported missing
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    out.defined = true;
    out.points.emplace_back(0.0, 0.0);
    double auc = 0.0;
    std::int64_t tp = 0, fp = 0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        float thresh = scores[order[i]];
        while (i < order.size() && scores[order[i]] == thresh) {
            if (truths[order[i]] == k)
                ++tp;
            else
                ++fp;
            ++i;
        }
        double tpr = static_cast<double>(tp) / static_cast<double>(pos);
        double fpr = static_cast<double>(fp) / static_cast<double>(neg);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        out.points.emplace_back(fpr, tpr);
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    out.auc = auc;
    return out;
}

struct MetricsReport {
    OvrMetrics ovr;
    ConfusionMatrix cm;
    std::vector<RocCurve> roc;  // per class
    std::vector<std::string> class_names;
    std::int64_t window_count = 0;
};

// classify -> argmax -> confusion / one-vs-rest / ROC, over the whole set.
inline MetricsReport evaluate(const ModelParams& m, const LabeledWindows& data) {
    int n = data.count();
    if (n == 0) throw NumericError("evaluate: empty test set");
    int k = m.meta.num_classes;
    Tensor scores({n, k});
    std::vector<std::size_t> ids(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    for (std::size_t b = 0; b < ids.size(); b += 256) {
        std::size_t e = std::min(ids.size(), b + 256);
        Tensor xb = train_detail::slice_rows(data.batch, ids, b, e);
        Tensor probs = classify(m, xb);
        std::memcpy(scores.data() + b * static_cast<std::size_t>(k), probs.data(),
                    sizeof(float) * (e - b) * static_cast<std::size_t>(k));
    }
    std::vector<int> preds = argmax_rows(scores);
    MetricsReport report;
    report.cm = confusion(preds, data.labels, k);
    report.ovr = ovr_metrics(report.cm);
    report.window_count = n;
    for (int c = 0; c < k; ++c) {
        std::vector<float> class_scores(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            class_scores[static_cast<std::size_t>(i)] =
                scores[static_cast<std::ptrdiff_t>(i) * k + c];
        report.roc.push_back(roc_auc(class_scores, data.labels, c));
    }
    return report;
}

// ---- serialization ----

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["window_count"] = r.window_count;
    j["accuracy"] = r.ovr.accuracy;
    j["macro"] = {{"precision", r.ovr.macro_precision},
                  {"recall", r.ovr.macro_recall},
                  {"f1", r.ovr.macro_f1}};
    j["weighted"] = {{"precision", r.ovr.weighted_precision},
                     {"recall", r.ovr.weighted_recall},
                     {"f1", r.ovr.weighted_f1}};
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t k = 0; k < r.ovr.per_class.size(); ++k) {
        nlohmann::json c;
        c["class"] = r.class_names.size() == r.ovr.per_class.size() ? r.class_names[k]
                                                                    : std::to_string(k);
        c["precision"] = r.ovr.per_class[k].precision;
        c["recall"] = r.ovr.per_class[k].recall;
        c["f1"] = r.ovr.per_class[k].f1;
        if (k < r.roc.size() && r.roc[k].defined)
            c["auc"] = r.roc[k].auc;
        else
            c["auc"] = nullptr;
        per.push_back(c);
    }
    j["per_class"] = per;
    nlohmann::json rows = nlohmann::json::array();
    for (int t = 0; t < r.cm.k; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int p = 0; p < r.cm.k; ++p) row.push_back(r.cm.at(t, p));
        rows.push_back(row);
    }
    j["confusion"] = rows;
    return j;
}

inline void write_confusion_csv(const MetricsReport& r, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << "true\\pred";
    for (int p = 0; p < r.cm.k; ++p)
        os << ',' << (static_cast<int>(r.class_names.size()) == r.cm.k ? r.class_names[static_cast<std::size_t>(p)]
                                                                        : std::to_string(p));
    os << '\n';
    for (int t = 0; t < r.cm.k; ++t) {
        os << (static_cast<int>(r.class_names.size()) == r.cm.k ? r.class_names[static_cast<std::size_t>(t)]
                                                                 : std::to_string(t));
        for (int p = 0; p < r.cm.k; ++p) os << ',' << r.cm.at(t, p);
        os << '\n';
    }
}

inline void write_roc_csv(const MetricsReport& r, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << "class,fpr,tpr\n";
    char buf[64];
    for (std::size_t k = 0; k < r.roc.size(); ++k) {
        if (!r.roc[k].defined) continue;
        const std::string& name =
            r.class_names.size() == r.roc.size() ? r.class_names[k] : std::to_string(k);
        for (const auto& [fpr, tpr] : r.roc[k].points) {
            std::snprintf(buf, sizeof(buf), "%.9g,%.9g", fpr, tpr);
            os << name << ',' << buf << '\n';
        }
    }
}

// One row per window: pairing id, domain tag, label (blank when absent),
// then the 128 embedding values printed with 9 significant digits so float32
// round-trips exactly.
inline void export_embeddings(const ModelParams& m, const WindowDataset& data,
                              const std::vector<std::size_t>& idx, Site site,
                              const std::string& path, bool with_labels = true) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << "pairing_id,domain,label";
    for (int j = 0; j < kEmbeddingDim; ++j) os << ",e" << j;
    os << '\n';
    const char* domain = site == Site::Source ? "source" : "target";
    char buf[32];
    for (std::size_t b = 0; b < idx.size(); b += 256) {
        std::size_t e = std::min(idx.size(), b + 256);
        std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(b),
                                       idx.begin() + static_cast<std::ptrdiff_t>(e));
        Tensor batch = to_model_batch(data, chunk, site);
        Tensor emb = embed(m, batch);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const WindowPair& p = data.pairs[chunk[i]];
            os << p.pairing_id << ',' << domain << ',';
            if (with_labels && p.label >= 0) os << p.label;
            for (int j = 0; j < kEmbeddingDim; ++j) {
                std::snprintf(buf, sizeof(buf), "%.9g",
                              static_cast<double>(emb[static_cast<std::ptrdiff_t>(i) * kEmbeddingDim + j]));
                os << ',' << buf;
            }
            os << '\n';
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace bodyadapt
