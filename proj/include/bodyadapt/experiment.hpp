#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bodyadapt/archive.hpp"
#include "bodyadapt/checkpoint.hpp"
#include "bodyadapt/metrics.hpp"
#include "bodyadapt/synthetic.hpp"
#include "bodyadapt/train.hpp"

namespace bodyadapt {

// One declarative config drives a whole study: the three-way comparison,
// adaptation-set size sweep, switched domains, the loss-function grid, the
// supervised transfer baselines, or all-label runs. Every reported number is
// reproducible from (config hash, seed).
struct ExperimentConfig {
    int version = 1;
    std::string kind;  // three_way | size_sweep | domain_switch | loss_grid | baseline_compare | all_labels
    bool use_synthetic = true;
    SynthConfig synth;
    std::string archive_path;
    LossSpec loss{LossKind::Mae, RegKind::L2, RegTarget::EmbedderWeights, 1e-4f};
    std::vector<double> fractions{0.15, 0.33, 0.66, 1.0};
    int repetitions = 1;
    std::uint64_t master_seed = 0;
    TrainConfig train;
    TrainConfig adapt;
    std::string output_dir;
    int workers = 1;
    float lambda_l1 = 1e-5f;  // loss-grid penalties
    float lambda_l2 = 1e-4f;

    void validate() const {
        static const std::vector<std::string> kinds{"three_way",  "size_sweep",       "domain_switch",
                                                    "loss_grid",  "baseline_compare", "all_labels"};
        if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
            throw IoError("experiment kind '" + kind + "' unknown");
        if (repetitions < 1) throw IoError("repetitions must be >= 1");
        if (!use_synthetic && archive_path.empty())
            throw IoError("experiment needs either a synthetic block or an archive path");
        if (output_dir.empty()) throw IoError("output_dir missing");
        for (double f : fractions)
            if (!(f > 0.0) || f > 1.0) throw IoError("fractions must lie in (0, 1]");
        loss.validate();
    }
};

namespace experiment_detail {

inline nlohmann::json train_cfg_to_json(const TrainConfig& c) {
    return nlohmann::json{{"learning_rate", c.learning_rate},
                          {"batch_size", c.batch_size},
                          {"max_epochs", c.max_epochs},
                          {"patience", c.patience},
                          {"clip_norm", c.clip_norm},
                          {"dropout", c.dropout},
                          {"rmsprop_decay", c.rmsprop_decay},
                          {"rmsprop_epsilon", c.rmsprop_epsilon},
                          {"lr_decay", c.lr_decay},
                          {"min_delta", c.min_delta}};
}

inline TrainConfig train_cfg_from_json(const nlohmann::json& j, TrainConfig base = {}) {
    TrainConfig c = base;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.dropout = j.value("dropout", c.dropout);
    c.rmsprop_decay = j.value("rmsprop_decay", c.rmsprop_decay);
    c.rmsprop_epsilon = j.value("rmsprop_epsilon", c.rmsprop_epsilon);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.min_delta = j.value("min_delta", c.min_delta);
    return c;
}

inline nlohmann::json loss_to_json(const LossSpec& s) {
    return nlohmann::json{{"kind", loss_kind_name(s.kind)},
                          {"reg", reg_kind_name(s.reg)},
                          {"reg_target", reg_target_name(s.reg_target)},
                          {"lambda", s.lambda}};
}

inline LossSpec loss_from_json(const nlohmann::json& j, LossSpec base = {}) {
    LossSpec s = base;
    if (j.contains("kind")) s.kind = loss_kind_from(j.at("kind").get<std::string>());
    if (j.contains("reg")) s.reg = reg_kind_from(j.at("reg").get<std::string>());
    if (j.contains("reg_target")) s.reg_target = reg_target_from(j.at("reg_target").get<std::string>());
    s.lambda = j.value("lambda", s.lambda);
    s.validate();
    return s;
}

}  // namespace experiment_detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["version"] = c.version;
    j["kind"] = c.kind;
    if (c.use_synthetic) {
        j["data"]["synthetic"] = {{"classes", c.synth.num_classes},
                                  {"windows_per_class", c.synth.windows_per_class},
                                  {"channels_per_site", c.synth.channels_per_site},
                                  {"noise_sigma", c.synth.noise_sigma},
                                  {"mean_gap", c.synth.mean_gap},
                                  {"latent_dim", c.synth.latent_dim}};
    } else {
        j["data"]["archive"] = c.archive_path;
    }
    j["loss"] = experiment_detail::loss_to_json(c.loss);
    j["fractions"] = c.fractions;
    j["repetitions"] = c.repetitions;
    j["master_seed"] = c.master_seed;
    j["train"] = experiment_detail::train_cfg_to_json(c.train);
    j["adapt"] = experiment_detail::train_cfg_to_json(c.adapt);
    j["lambda_l1"] = c.lambda_l1;
    j["lambda_l2"] = c.lambda_l2;
    j["output_dir"] = c.output_dir;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.version = j.value("version", 1);
    c.kind = j.at("kind").get<std::string>();
    const auto& data = j.at("data");
    if (data.contains("synthetic")) {
        c.use_synthetic = true;
        const auto& s = data.at("synthetic");
        c.synth.num_classes = s.value("classes", c.synth.num_classes);
        c.synth.windows_per_class = s.value("windows_per_class", c.synth.windows_per_class);
        c.synth.channels_per_site = s.value("channels_per_site", c.synth.channels_per_site);
        c.synth.noise_sigma = s.value("noise_sigma", c.synth.noise_sigma);
        c.synth.mean_gap = s.value("mean_gap", c.synth.mean_gap);
        c.synth.latent_dim = s.value("latent_dim", c.synth.latent_dim);
    } else {
        c.use_synthetic = false;
        c.archive_path = data.at("archive").get<std::string>();
    }
    if (j.contains("loss")) c.loss = experiment_detail::loss_from_json(j.at("loss"), c.loss);
    if (j.contains("fractions")) c.fractions = j.at("fractions").get<std::vector<double>>();
    c.repetitions = j.value("repetitions", 1);
    c.master_seed = j.value("master_seed", std::uint64_t(0));
    // adaptation defaults: no dropout, decaying rate, shorter run
    c.adapt.dropout = 0.0f;
    c.adapt.learning_rate = 2e-3f;
    c.adapt.lr_decay = 0.95f;
    c.adapt.max_epochs = 30;
    c.adapt.patience = 8;
    c.adapt.batch_size = 32;
    c.train.batch_size = 32;
    c.train.max_epochs = 35;
    if (j.contains("train")) c.train = experiment_detail::train_cfg_from_json(j.at("train"), c.train);
    if (j.contains("adapt")) c.adapt = experiment_detail::train_cfg_from_json(j.at("adapt"), c.adapt);
    c.lambda_l1 = j.value("lambda_l1", c.lambda_l1);
    c.lambda_l2 = j.value("lambda_l2", c.lambda_l2);
    c.output_dir = j.value("output_dir", std::string());
    c.validate();
    return c;
}

// Identifies the experiment content; where it runs (output_dir) and how
// wide (workers) are execution details and do not participate.
inline std::string config_hash(const ExperimentConfig& c) {
    nlohmann::json j = experiment_config_to_json(c);
    j.erase("output_dir");
    std::uint64_t h = fnv1a64(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Swaps the roles of the two sites (domain-switch experiments).
inline WindowDataset swap_sites(const WindowDataset& in) {
    WindowDataset out = in;
    std::swap(out.source_channels, out.target_channels);
    for (auto& p : out.pairs) std::swap(p.source, p.target);
    return out;
}

struct EvalSummary {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct RunRecord {
    std::string condition;
    std::uint64_t seed = 0;
    double fraction = -1.0;  // <0 when not applicable
    std::map<std::string, EvalSummary> evals;
    std::map<std::string, std::string> checkpoints;
    nlohmann::json extra;  // adapt trajectory, windows used, full reports
    double wall_seconds = 0.0;
};

namespace experiment_detail {

inline EvalSummary summarize_report(const MetricsReport& r) {
    return EvalSummary{r.ovr.accuracy, r.ovr.macro_precision, r.ovr.macro_recall, r.ovr.macro_f1};
}

inline nlohmann::json record_to_json(const RunRecord& r, const std::string& hash) {
    nlohmann::json j;
    j["config_hash"] = hash;
    j["condition"] = r.condition;
    j["seed"] = r.seed;
    if (r.fraction >= 0.0) j["fraction"] = r.fraction;
    for (const auto& [name, e] : r.evals)
        j["evals"][name] = {{"accuracy", e.accuracy},
                            {"precision", e.precision},
                            {"recall", e.recall},
                            {"f1", e.f1}};
    for (const auto& [stage, path] : r.checkpoints) j["checkpoints"][stage] = path;
    if (!r.extra.is_null()) j["extra"] = r.extra;
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.condition = j.at("condition").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.fraction = j.value("fraction", -1.0);
    if (j.contains("evals"))
        for (auto it = j.at("evals").begin(); it != j.at("evals").end(); ++it) {
            EvalSummary e;
            e.accuracy = it.value().value("accuracy", 0.0);
            e.precision = it.value().value("precision", 0.0);
            e.recall = it.value().value("recall", 0.0);
            e.f1 = it.value().value("f1", 0.0);
            r.evals[it.key()] = e;
        }
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
}

struct Agg {
    std::vector<double> values;
    double mean() const {
        double s = 0.0;
        for (double v : values) s += v;
        return values.empty() ? 0.0 : s / static_cast<double>(values.size());
    }
    double sd() const {
        if (values.size() < 2) return 0.0;
        double m = mean(), s = 0.0;
        for (double v : values) s += (v - m) * (v - m);
        return std::sqrt(s / static_cast<double>(values.size() - 1));
    }
    double min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }
    double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace experiment_detail

// Aggregated tables rebuilt deterministically from run records: records are
// sorted by (condition, seed) and floats printed with fixed precision, so a
// re-run with identical config produces byte-identical files.
inline nlohmann::json summarize_records(std::vector<RunRecord> records) {
    std::sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
        if (a.condition != b.condition) return a.condition < b.condition;
        return a.seed < b.seed;
    });
    // (condition, eval name, metric) -> aggregate over seeds
    std::map<std::string, std::map<std::string, std::map<std::string, experiment_detail::Agg>>> agg;
    std::map<std::string, double> fractions;
    for (const auto& r : records) {
        for (const auto& [name, e] : r.evals) {
            auto& slot = agg[r.condition][name];
            slot["accuracy"].values.push_back(e.accuracy);
            slot["precision"].values.push_back(e.precision);
            slot["recall"].values.push_back(e.recall);
            slot["f1"].values.push_back(e.f1);
        }
        if (r.fraction >= 0.0) fractions[r.condition] = r.fraction;
    }
    nlohmann::json out;
    for (const auto& [cond, evals] : agg) {
        nlohmann::json jc;
        for (const auto& [name, metrics] : evals) {
            nlohmann::json jm;
            for (const auto& [metric, a] : metrics) {
                jm[metric] = {{"mean", a.mean()},
                              {"sd", a.sd()},
                              {"min", a.min()},
                              {"max", a.max()},
                              {"n", a.values.size()}};
            }
            jc[name] = jm;
        }
        if (fractions.count(cond)) jc["fraction"] = fractions[cond];
        out[cond] = jc;
    }
    return out;
}

// Three-column table in the layout of the paper's comparison tables: rows
// accuracy/precision/recall/F1, columns Ms-on-Ds, Ms-on-Dst, Mt-on-Dst.
inline std::string three_way_csv(const nlohmann::json& summary, const std::string& condition) {
    using experiment_detail::fmt;
    static const std::vector<std::pair<std::string, std::string>> cols{
        {"ms_on_ds", "Ms_on_Ds"}, {"ms_on_dst", "Ms_on_Dst"}, {"mt_on_dst", "Mt_on_Dst"}};
    static const std::vector<std::pair<std::string, std::string>> rows{{"accuracy", "Accuracy"},
                                                                       {"precision", "Precision"},
                                                                       {"recall", "Recall"},
                                                                       {"f1", "F1"}};
    std::string csv = "Metric";
    for (const auto& [key, label] : cols) csv += "," + label + "_mean," + label + "_sd";
    csv += "\n";
    const auto& jc = summary.at(condition);
    for (const auto& [rkey, rlabel] : rows) {
        csv += rlabel;
        for (const auto& [ckey, clabel] : cols) {
            (void)clabel;
            const auto& cell = jc.at(ckey).at(rkey);
            csv += "," + fmt(100.0 * cell.at("mean").get<double>()) + "," +
                   fmt(100.0 * cell.at("sd").get<double>());
        }
        csv += "\n";
    }
    return csv;
}

// Runs every unit of the experiment (repetition x condition), writes one
// record per unit plus summary tables, and returns the summary JSON.
class ExperimentRunner {
public:
    ExperimentRunner(ExperimentConfig cfg) : cfg_(std::move(cfg)), hash_(config_hash(cfg_)) {
        cfg_.validate();
    }

    const std::string& hash() const { return hash_; }

    nlohmann::json run() {
        namespace fs = std::filesystem;
        fs::path dir(cfg_.output_dir);
        fs::create_directories(dir / "records");
        fs::create_directories(dir / "checkpoints");
        fs::create_directories(dir / "summary");

        fs::path cfg_path = dir / "config.json";
        if (fs::exists(cfg_path)) {
            std::ifstream in(cfg_path);
            nlohmann::json prev;
            in >> prev;
            if (prev.value("config_hash", std::string()) != hash_)
                throw IoError("output directory " + cfg_.output_dir +
                              " holds results for a different config (hash mismatch); refusing to overwrite");
        }
        {
            nlohmann::json j = experiment_config_to_json(cfg_);
            j["config_hash"] = hash_;
            std::ofstream out(cfg_path, std::ios::trunc);
            out << j.dump(2) << "\n";
        }

        std::vector<std::function<std::vector<RunRecord>()>> units = build_units();
        std::vector<std::vector<RunRecord>> unit_records(units.size());
        std::atomic<std::size_t> next{0};
        int workers = std::max(1, cfg_.workers);
        auto worker = [&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= units.size()) return;
                auto t0 = std::chrono::steady_clock::now();
                unit_records[i] = units[i]();
                double wall =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                for (auto& r : unit_records[i])
                    if (r.wall_seconds == 0.0) r.wall_seconds = wall;
            }
        };
        if (workers == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }

        std::vector<RunRecord> records;
        for (auto& bundle : unit_records)
            for (auto& r : bundle) records.push_back(std::move(r));

        for (const auto& r : records) {
            char name[160];
            std::snprintf(name, sizeof(name), "%s_%llu.json", r.condition.c_str(),
                          static_cast<unsigned long long>(r.seed));
            std::ofstream out(dir / "records" / name, std::ios::trunc);
            out << experiment_detail::record_to_json(r, hash_).dump(2) << "\n";
        }

        nlohmann::json summary = summarize_records(records);
        write_summary(summary);
        return summary;
    }

    // rebuilds summaries from the records directory (the `summarize` verb)
    static nlohmann::json summarize_dir(const std::string& output_dir) {
        namespace fs = std::filesystem;
        fs::path rec_dir = fs::path(output_dir) / "records";
        if (!fs::exists(rec_dir)) throw IoError("no records directory under " + output_dir);
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(rec_dir))
            if (e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IoError("no run records under " + output_dir);
        std::vector<RunRecord> records;
        for (const auto& f : files) {
            std::ifstream in(f);
            nlohmann::json j;
            in >> j;
            records.push_back(experiment_detail::record_from_json(j));
        }
        return summarize_records(records);
    }

private:
    ExperimentConfig cfg_;
    std::string hash_;
    std::mutex io_mu_;

    WindowDataset make_data(std::uint64_t rep) const {
        if (cfg_.use_synthetic)
            return synth_paired_dataset(cfg_.synth, derive_seed(cfg_.master_seed, "synth-data", rep));
        return load_archive(cfg_.archive_path);
    }

    WindowedSplit make_split(const WindowDataset& data, std::uint64_t rep) const {
        return split(data, 0.30, 0.50, 0.20, derive_seed(cfg_.master_seed, "split", rep));
    }

    ModelParams train_source(const WindowDataset& data, const WindowedSplit& sp,
                             std::uint64_t rep) const {
        ModelParams init = init_model({data.source_channels, data.window_len, data.num_classes(),
                                       Domain::Source},
                                      derive_seed(cfg_.master_seed, "init", rep));
        TrainConfig tc = cfg_.train;
        tc.seed = derive_seed(cfg_.master_seed, "train", rep);
        LabeledWindows train_set = gather_labeled(data, sp.train, Site::Source);
        return train_supervised(init, train_set, tc).first;
    }

    std::string save_ckpt(const ModelParams& m, const std::string& name) {
        namespace fs = std::filesystem;
        fs::path p = fs::path(cfg_.output_dir) / "checkpoints" / (name + ".ckpt");
        std::lock_guard<std::mutex> lk(io_mu_);
        save_checkpoint(m, p.string());
        return p.string();
    }

    RunRecord three_way_unit(const WindowDataset& data, std::uint64_t rep,
                             const std::string& condition) {
        WindowedSplit sp = make_split(data, rep);
        ModelParams ms = train_source(data, sp, rep);
        LabeledWindows test_src = gather_labeled(data, sp.test, Site::Source);
        LabeledWindows test_tgt = gather_labeled(data, sp.test, Site::Target);
        if (data.source_channels != data.target_channels)
            throw IoError("three-way comparison needs equal channel counts on both sites");
        TrainConfig ac = cfg_.adapt;
        ac.seed = derive_seed(cfg_.master_seed, "adapt", rep);
        auto [mt, rep_report] = adapt_unsupervised(ms, strip_labels(data, sp.adapt), cfg_.loss, ac);

        RunRecord r;
        r.condition = condition;
        r.seed = rep;
        r.evals["ms_on_ds"] = experiment_detail::summarize_report(evaluate(ms, test_src));
        r.evals["ms_on_dst"] = experiment_detail::summarize_report(evaluate(ms, test_tgt));
        r.evals["mt_on_dst"] = experiment_detail::summarize_report(evaluate(mt, test_tgt));
        char tag[64];
        std::snprintf(tag, sizeof(tag), "%s_%llu", condition.c_str(),
                      static_cast<unsigned long long>(rep));
        r.checkpoints["ms"] = save_ckpt(ms, std::string(tag) + "_ms");
        r.checkpoints["mt"] = save_ckpt(mt, std::string(tag) + "_mt");
        r.extra["adapt_epochs"] = rep_report.epochs_run;
        r.extra["adapt_final_loss"] = rep_report.final_loss;
        r.extra["adapt_trajectory"] = rep_report.loss_trajectory;
        return r;
    }

    std::vector<std::function<std::vector<RunRecord>()>> build_units() {
        std::vector<std::function<std::vector<RunRecord>()>> units;
        auto single = [](RunRecord r) { return std::vector<RunRecord>{std::move(r)}; };
        if (cfg_.kind == "three_way" || cfg_.kind == "all_labels") {
            for (int rep = 0; rep < cfg_.repetitions; ++rep)
                units.push_back([this, rep, single] {
                    WindowDataset data = make_data(static_cast<std::uint64_t>(rep));
                    return single(three_way_unit(data, static_cast<std::uint64_t>(rep), cfg_.kind));
                });
        } else if (cfg_.kind == "domain_switch") {
            for (int rep = 0; rep < cfg_.repetitions; ++rep)
                units.push_back([this, rep, single] {
                    WindowDataset data = swap_sites(make_data(static_cast<std::uint64_t>(rep)));
                    return single(three_way_unit(data, static_cast<std::uint64_t>(rep), cfg_.kind));
                });
        } else if (cfg_.kind == "size_sweep") {
            // one source model; repetitions vary only the random subsample
            auto shared = std::make_shared<SweepShared>();
            for (int rep = 0; rep < cfg_.repetitions; ++rep)
                for (std::size_t fi = 0; fi < cfg_.fractions.size(); ++fi)
                    units.push_back([this, rep, fi, shared, single] {
                        return single(sweep_unit(*shared, static_cast<std::uint64_t>(rep), fi));
                    });
        } else if (cfg_.kind == "baseline_compare") {
            auto shared = std::make_shared<SweepShared>();
            std::vector<std::string> methods{"unsupervised", "lp", "ft", "lpft"};
            for (const auto& method : methods)
                for (int rep = 0; rep < cfg_.repetitions; ++rep) {
                    units.push_back([this, method, rep, shared, single] {
                        return single(
                            baseline_zero_unit(*shared, method, static_cast<std::uint64_t>(rep)));
                    });
                    for (std::size_t fi = 0; fi < cfg_.fractions.size(); ++fi)
                        units.push_back([this, method, rep, fi, shared, single] {
                            return single(baseline_unit(*shared, method,
                                                        static_cast<std::uint64_t>(rep), fi));
                        });
                }
        } else if (cfg_.kind == "loss_grid") {
            // all grid conditions of one repetition share a single source model
            for (int rep = 0; rep < cfg_.repetitions; ++rep)
                units.push_back(
                    [this, rep] { return loss_grid_rep(static_cast<std::uint64_t>(rep)); });
        }
        return units;
    }

    // data and source model shared across sweep/baseline units, built once
    struct SweepShared {
        std::once_flag once;
        WindowDataset data;
        WindowedSplit split;
        ModelParams ms;
        LabeledWindows test_tgt;
        EvalSummary ms_on_dst;
    };

    void ensure_shared(SweepShared& s) {
        std::call_once(s.once, [&] {
            s.data = make_data(0);
            s.split = make_split(s.data, 0);
            s.ms = train_source(s.data, s.split, 0);
            s.test_tgt = gather_labeled(s.data, s.split.test, Site::Target);
            s.ms_on_dst = experiment_detail::summarize_report(evaluate(s.ms, s.test_tgt));
        });
    }

    RunRecord sweep_unit(SweepShared& s, std::uint64_t rep, std::size_t fraction_idx) {
        ensure_shared(s);
        double fraction = cfg_.fractions[fraction_idx];
        auto subset = subsample(s.split.adapt, fraction,
                                derive_seed(cfg_.master_seed, "subsample",
                                            rep * 1000 + fraction_idx));
        TrainConfig ac = cfg_.adapt;
        ac.seed = derive_seed(cfg_.master_seed, "adapt", rep * 1000 + fraction_idx);
        auto [mt, rep_report] = adapt_unsupervised(s.ms, strip_labels(s.data, subset), cfg_.loss, ac);
        RunRecord r;
        char cond[48];
        std::snprintf(cond, sizeof(cond), "frac_%.2f", fraction);
        r.condition = cond;
        r.seed = rep;
        r.fraction = fraction;
        r.evals["mt_on_dst"] = experiment_detail::summarize_report(evaluate(mt, s.test_tgt));
        r.extra["windows_used"] = subset.size();
        r.extra["adapt_final_loss"] = rep_report.final_loss;
        return r;
    }

    RunRecord baseline_zero_unit(SweepShared& s, const std::string& method, std::uint64_t rep) {
        ensure_shared(s);
        // 0% of the data: no retraining of any kind, the source model applied
        // directly to target windows
        RunRecord r;
        r.condition = method + "@0.00";
        r.seed = rep;
        r.fraction = 0.0;
        r.evals["target_test"] = s.ms_on_dst;
        r.extra["windows_used"] = 0;
        return r;
    }

    RunRecord baseline_unit(SweepShared& s, const std::string& method, std::uint64_t rep,
                            std::size_t fraction_idx) {
        ensure_shared(s);
        double fraction = cfg_.fractions[fraction_idx];
        auto subset = subsample(s.split.adapt, fraction,
                                derive_seed(cfg_.master_seed, "subsample",
                                            rep * 1000 + fraction_idx));
        TrainConfig tc = cfg_.adapt;  // baselines reuse the adaptation budget
        tc.seed = derive_seed(cfg_.master_seed, "baseline-" + method,
                              rep * 1000 + fraction_idx);
        tc.dropout = cfg_.train.dropout;
        ModelParams model;
        if (method == "unsupervised") {
            TrainConfig ac = cfg_.adapt;
            ac.seed = tc.seed;
            model = adapt_unsupervised(s.ms, strip_labels(s.data, subset), cfg_.loss, ac).first;
        } else {
            LabeledWindows labeled = gather_labeled(s.data, subset, Site::Target);
            if (method == "lp")
                model = linear_probe(s.ms, labeled, tc).first;
            else if (method == "ft")
                model = fine_tune(s.ms, labeled, tc).first;
            else if (method == "lpft")
                model = lp_ft(s.ms, labeled, tc).first;
            else
                throw IoError("unknown baseline method " + method);
        }
        RunRecord r;
        char cond[64];
        std::snprintf(cond, sizeof(cond), "%s@%.2f", method.c_str(), fraction);
        r.condition = cond;
        r.seed = rep;
        r.fraction = fraction;
        r.evals["target_test"] = experiment_detail::summarize_report(evaluate(model, s.test_tgt));
        r.extra["windows_used"] = subset.size();
        return r;
    }

    struct GridCondition {
        std::string name;
        enum Kind { MsOnSource, RandomEmbedder, Untrained, Adapt } kind;
        LossSpec spec;
    };

    std::vector<GridCondition> loss_grid_conditions() const {
        auto spec = [&](LossKind k, RegKind r) {
            float lam = r == RegKind::L1 ? cfg_.lambda_l1 : (r == RegKind::L2 ? cfg_.lambda_l2 : 0.0f);
            return LossSpec{k, r, RegTarget::EmbedderWeights, lam};
        };
        // column order follows the loss-comparison table layout
        return {
            {"01_ms", GridCondition::MsOnSource, {}},
            {"02_random_samp", GridCondition::RandomEmbedder, {}},
            {"03_untrained", GridCondition::Untrained, {}},
            {"04_mse", GridCondition::Adapt, spec(LossKind::Mse, RegKind::None)},
            {"05_msle", GridCondition::Adapt, spec(LossKind::Msle, RegKind::None)},
            {"06_mae", GridCondition::Adapt, spec(LossKind::Mae, RegKind::None)},
            {"07_cosine", GridCondition::Adapt, spec(LossKind::Cosine, RegKind::None)},
            {"08_cosine_l1", GridCondition::Adapt, spec(LossKind::Cosine, RegKind::L1)},
            {"09_mae_l1", GridCondition::Adapt, spec(LossKind::Mae, RegKind::L1)},
            {"10_mse_l1", GridCondition::Adapt, spec(LossKind::Mse, RegKind::L1)},
            {"11_cosine_l2", GridCondition::Adapt, spec(LossKind::Cosine, RegKind::L2)},
            {"12_mae_l2", GridCondition::Adapt, spec(LossKind::Mae, RegKind::L2)},
            {"13_mse_l2", GridCondition::Adapt, spec(LossKind::Mse, RegKind::L2)},
        };
    }

    std::vector<RunRecord> loss_grid_rep(std::uint64_t rep) {
        WindowDataset data = make_data(rep);
        WindowedSplit sp = make_split(data, rep);
        ModelParams ms = train_source(data, sp, rep);
        LabeledWindows test_src = gather_labeled(data, sp.test, Site::Source);
        LabeledWindows test_tgt = gather_labeled(data, sp.test, Site::Target);
        PairedSignals adapt_pairs = strip_labels(data, sp.adapt);

        std::vector<RunRecord> out;
        for (const GridCondition& gc : loss_grid_conditions()) {
            auto t0 = std::chrono::steady_clock::now();
            RunRecord r;
            r.condition = gc.name;
            r.seed = rep;
            switch (gc.kind) {
                case GridCondition::MsOnSource:
                    r.evals["score"] = experiment_detail::summarize_report(evaluate(ms, test_src));
                    break;
                case GridCondition::RandomEmbedder: {
                    // untrained target embedder with the transplanted source head
                    ModelParams random_mt =
                        init_model({data.target_channels, data.window_len, data.num_classes(),
                                    Domain::Target},
                                   derive_seed(cfg_.master_seed, "random-samp", rep));
                    random_mt = transplant_classifier(ms, random_mt);
                    r.evals["score"] =
                        experiment_detail::summarize_report(evaluate(random_mt, test_tgt));
                    break;
                }
                case GridCondition::Untrained:
                    r.evals["score"] = experiment_detail::summarize_report(evaluate(ms, test_tgt));
                    break;
                case GridCondition::Adapt: {
                    TrainConfig ac = cfg_.adapt;
                    ac.seed = derive_seed(cfg_.master_seed, "adapt-" + gc.name, rep);
                    auto [mt, rep_report] = adapt_unsupervised(ms, adapt_pairs, gc.spec, ac);
                    r.evals["score"] = experiment_detail::summarize_report(evaluate(mt, test_tgt));
                    r.extra["adapt_final_loss"] = rep_report.final_loss;
                    break;
                }
            }
            r.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            out.push_back(std::move(r));
        }
        return out;
    }

    void write_summary(const nlohmann::json& summary) {
        namespace fs = std::filesystem;
        fs::path dir = fs::path(cfg_.output_dir) / "summary";
        {
            nlohmann::json j;
            j["config_hash"] = hash_;
            j["kind"] = cfg_.kind;
            j["conditions"] = summary;
            std::ofstream out(dir / "summary.json", std::ios::trunc);
            out << j.dump(2) << "\n";
        }
        if (cfg_.kind == "three_way" || cfg_.kind == "domain_switch" || cfg_.kind == "all_labels") {
            std::ofstream out(dir / (cfg_.kind + ".csv"), std::ios::trunc);
            out << three_way_csv(summary, cfg_.kind);
        } else {
            // generic per-condition table: condition, eval, f1 mean/sd/min/max
            std::ofstream out(dir / (cfg_.kind + ".csv"), std::ios::trunc);
            out << "condition,eval,f1_mean,f1_sd,f1_min,f1_max,n\n";
            for (auto it = summary.begin(); it != summary.end(); ++it) {
                for (auto ev = it.value().begin(); ev != it.value().end(); ++ev) {
                    if (!ev.value().is_object() || !ev.value().contains("f1")) continue;
                    const auto& f1 = ev.value().at("f1");
                    out << it.key() << ',' << ev.key() << ','
                        << experiment_detail::fmt(100.0 * f1.at("mean").get<double>()) << ','
                        << experiment_detail::fmt(100.0 * f1.at("sd").get<double>()) << ','
                        << experiment_detail::fmt(100.0 * f1.at("min").get<double>()) << ','
                        << experiment_detail::fmt(100.0 * f1.at("max").get<double>()) << ','
                        << f1.at("n").get<std::size_t>() << "\n";
                }
            }
        }
    }
};

inline nlohmann::json run_experiment(const ExperimentConfig& cfg) {
    ExperimentRunner runner(cfg);
    return runner.run();
}

}  // namespace bodyadapt
