#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bodyadapt/archive.hpp"
#include "bodyadapt/checkpoint.hpp"
#include "bodyadapt/experiment.hpp"
#include "bodyadapt/ingest.hpp"
#include "bodyadapt/metrics.hpp"
#include "bodyadapt/synthetic.hpp"
#include "bodyadapt/train.hpp"

namespace fs = std::filesystem;
using namespace bodyadapt;

namespace {

std::string resolve_raw_dir(const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) return path;
    if (const char* root = std::getenv("BODYADAPT_DATA_ROOT")) return (fs::path(root) / p).string();
    return path;
}

std::vector<std::size_t> split_part(const WindowDataset& data, const std::string& part) {
    if (part == "all") return all_indices(data);
    WindowedSplit sp = split_default(data);
    if (part == "train") return sp.train;
    if (part == "adapt") return sp.adapt;
    if (part == "test") return sp.test;
    throw IoError("unknown split '" + part + "' (train|adapt|test|all)");
}

Site site_from(const std::string& s) {
    if (s == "source") return Site::Source;
    if (s == "target") return Site::Target;
    throw IoError("unknown site '" + s + "' (source|target)");
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

void print_histogram(const WindowDataset& data) {
    auto hist = class_histogram(data);
    std::printf("class distribution over %zu windows:\n", data.pairs.size());
    for (std::size_t k = 0; k < hist.size(); ++k)
        std::printf("  %-24s %d\n", data.class_names[k].c_str(), hist[k]);
}

struct TrainCliOpts {
    float lr = 1e-3f;
    int batch = 32;
    int epochs = 100;
    int patience = 10;
    float dropout = 0.5f;
    float clip = 10.0f;
    float lr_decay = 1.0f;
    std::uint64_t seed = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--batch", batch, "mini-batch size");
        cmd->add_option("--epochs", epochs, "maximum epochs");
        cmd->add_option("--patience", patience, "early-stop patience (0 disables)");
        cmd->add_option("--dropout", dropout, "dropout between embedding and head");
        cmd->add_option("--clip-norm", clip, "global gradient norm clip (0 disables)");
        cmd->add_option("--lr-decay", lr_decay, "per-epoch learning rate multiplier");
        cmd->add_option("--seed", seed, "training seed");
    }

    TrainConfig to_config() const {
        TrainConfig c;
        c.learning_rate = lr;
        c.batch_size = batch;
        c.max_epochs = epochs;
        c.patience = patience;
        c.dropout = dropout;
        c.clip_norm = clip;
        c.lr_decay = lr_decay;
        c.seed = seed;
        return c;
    }
};

nlohmann::json history_json(const TrainHistory& h) {
    return nlohmann::json{{"epochs_run", h.epochs_run},
                          {"best_epoch", h.best_epoch},
                          {"train_loss", h.train_loss},
                          {"val_loss", h.val_loss}};
}

int run_ingest(const std::string& dataset, const std::string& raw_dir, const std::string& descriptor,
               const std::string& out, const std::string& scheme_name, std::uint64_t seed,
               int max_gap) {
    LabelSchemeKind kind =
        scheme_name == "all" ? LabelSchemeKind::AllLabels : LabelSchemeKind::FiveClass;
    WindowDataset data;
    if (dataset == "synthetic") {
        SynthConfig cfg;
        if (!descriptor.empty()) {
            std::ifstream in(descriptor);
            if (!in) throw IoError("cannot open synthetic config: " + descriptor);
            nlohmann::json j;
            in >> j;
            cfg.num_classes = j.value("classes", cfg.num_classes);
            cfg.windows_per_class = j.value("windows_per_class", cfg.windows_per_class);
            cfg.channels_per_site = j.value("channels_per_site", cfg.channels_per_site);
            cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
            cfg.mean_gap = j.value("mean_gap", cfg.mean_gap);
            cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
        }
        data = synth_paired_dataset(cfg, seed);
        data.split_seed = derive_seed(seed, "split");
    } else {
        DatasetDescriptor desc = load_descriptor(descriptor);
        if (desc.dataset_id != dataset)
            throw IoError("descriptor is for dataset '" + desc.dataset_id + "', not '" + dataset +
                          "'");
        data = harmonize_directory(desc, resolve_raw_dir(raw_dir), kind, seed, max_gap, true);
    }
    save_archive(data, out);
    print_histogram(data);
    std::printf("wrote %zu paired windows to %s\n", data.pairs.size(), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"activity-recognition domain adaptation toolkit"};
    app.require_subcommand(1);

    // ---- ingest ----
    std::string in_dataset, in_raw, in_desc, in_out, in_scheme = "five_class";
    std::uint64_t in_seed = 0;
    int in_max_gap = 15;
    auto* ingest = app.add_subcommand("ingest", "harmonize raw recordings into a window archive");
    ingest->add_option("--dataset", in_dataset, "dataset id (opportunity|pamap2|mhealth|synthetic)")
        ->required();
    ingest->add_option("--raw-dir", in_raw, "directory of raw files (resolved under BODYADAPT_DATA_ROOT)");
    ingest->add_option("--descriptor", in_desc, "descriptor JSON (synthetic: generator config)");
    ingest->add_option("--out", in_out, "output archive path")->required();
    ingest->add_option("--scheme", in_scheme, "label scheme: five_class|all")
        ->check(CLI::IsMember({"five_class", "all"}));
    ingest->add_option("--seed", in_seed, "split seed stored in the archive");
    ingest->add_option("--max-gap", in_max_gap, "longest missing run repaired by interpolation");

    // ---- train-source ----
    std::string ts_archive, ts_out, ts_report;
    TrainCliOpts ts_opts;
    auto* train_cmd = app.add_subcommand("train-source", "supervised training on the source site");
    train_cmd->add_option("--archive", ts_archive)->required();
    train_cmd->add_option("--out", ts_out, "checkpoint path")->required();
    train_cmd->add_option("--report", ts_report, "training report JSON");
    ts_opts.attach(train_cmd);

    // ---- adapt ----
    std::string ad_archive, ad_source, ad_out, ad_report;
    std::string ad_loss = "mae", ad_reg = "l2", ad_target = "embedder_weights";
    double ad_lambda = 1e-4, ad_fraction = 1.0;
    TrainCliOpts ad_opts;
    ad_opts.lr = 2e-3f;
    ad_opts.dropout = 0.0f;
    ad_opts.epochs = 30;
    ad_opts.patience = 8;
    ad_opts.lr_decay = 0.95f;
    auto* adapt_cmd =
        app.add_subcommand("adapt", "train the target embedder to replicate source embeddings");
    adapt_cmd->add_option("--archive", ad_archive)->required();
    adapt_cmd->add_option("--source", ad_source, "source model checkpoint")->required();
    adapt_cmd->add_option("--out", ad_out, "target checkpoint path")->required();
    adapt_cmd->add_option("--report", ad_report, "adaptation report JSON");
    adapt_cmd->add_option("--loss", ad_loss, "mae|mse|msle|cosine");
    adapt_cmd->add_option("--reg", ad_reg, "none|l1|l2");
    adapt_cmd->add_option("--lambda", ad_lambda, "regularization strength");
    adapt_cmd->add_option("--reg-target", ad_target, "embedder_weights|embedding_activations");
    adapt_cmd->add_option("--fraction", ad_fraction, "fraction of the adaptation split to use");
    ad_opts.attach(adapt_cmd);

    // ---- baseline ----
    std::string bl_archive, bl_source, bl_out, bl_report, bl_method = "lp";
    double bl_fraction = 1.0;
    TrainCliOpts bl_opts;
    auto* baseline_cmd = app.add_subcommand("baseline", "supervised transfer baselines (LP/FT/LPFT)");
    baseline_cmd->add_option("--method", bl_method)->check(CLI::IsMember({"lp", "ft", "lpft"}));
    baseline_cmd->add_option("--archive", bl_archive)->required();
    baseline_cmd->add_option("--source", bl_source)->required();
    baseline_cmd->add_option("--out", bl_out)->required();
    baseline_cmd->add_option("--report", bl_report);
    baseline_cmd->add_option("--fraction", bl_fraction, "labeled fraction of the adaptation split");
    bl_opts.attach(baseline_cmd);

    // ---- evaluate ----
    std::string ev_archive, ev_model, ev_report, ev_csv_dir, ev_split = "test", ev_site = "target";
    auto* eval_cmd = app.add_subcommand("evaluate", "metrics of a checkpoint on archive windows");
    eval_cmd->add_option("--archive", ev_archive)->required();
    eval_cmd->add_option("--model", ev_model)->required();
    eval_cmd->add_option("--split", ev_split, "train|adapt|test|all");
    eval_cmd->add_option("--site", ev_site, "source|target");
    eval_cmd->add_option("--report", ev_report, "metrics JSON path");
    eval_cmd->add_option("--csv-dir", ev_csv_dir, "directory for confusion/ROC CSVs");

    // ---- export-embeddings ----
    std::string ex_archive, ex_model, ex_out, ex_split = "all", ex_site = "source";
    bool ex_no_labels = false;
    auto* export_cmd = app.add_subcommand("export-embeddings", "embedding vectors as delimited text");
    export_cmd->add_option("--archive", ex_archive)->required();
    export_cmd->add_option("--model", ex_model)->required();
    export_cmd->add_option("--out", ex_out)->required();
    export_cmd->add_option("--split", ex_split, "train|adapt|test|all");
    export_cmd->add_option("--site", ex_site, "source|target");
    export_cmd->add_flag("--no-labels", ex_no_labels, "leave the label column empty");

    // ---- experiment ----
    auto* exp_cmd = app.add_subcommand("experiment", "run or summarize declarative experiments");
    exp_cmd->require_subcommand(1);
    std::string er_config;
    int er_workers = 1;
    auto* run_cmd = exp_cmd->add_subcommand("run", "execute an experiment config");
    run_cmd->add_option("config", er_config, "experiment config JSON")->required();
    run_cmd->add_option("--workers", er_workers, "parallel repetition workers");
    std::string es_dir;
    auto* sum_cmd = exp_cmd->add_subcommand("summarize", "rebuild summary tables from run records");
    sum_cmd->add_option("dir", es_dir, "experiment output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest)
            return run_ingest(in_dataset, in_raw, in_desc, in_out, in_scheme, in_seed, in_max_gap);

        if (*train_cmd) {
            WindowDataset data = load_archive(ts_archive);
            WindowedSplit sp = split_default(data);
            ModelParams init = init_model({data.source_channels, data.window_len,
                                           data.num_classes(), Domain::Source},
                                          derive_seed(ts_opts.seed, "init"));
            auto [model, hist] =
                train_supervised(init, gather_labeled(data, sp.train, Site::Source),
                                 ts_opts.to_config());
            save_checkpoint(model, ts_out);
            std::printf("trained %d epochs (best %d), checkpoint at %s\n", hist.epochs_run,
                        hist.best_epoch, ts_out.c_str());
            if (!ts_report.empty()) write_json(history_json(hist), ts_report);
            return 0;
        }

        if (*adapt_cmd) {
            WindowDataset data = load_archive(ad_archive);
            WindowedSplit sp = split_default(data);
            ModelParams source = load_checkpoint(ad_source);
            LossSpec spec{loss_kind_from(ad_loss), reg_kind_from(ad_reg), reg_target_from(ad_target),
                          static_cast<float>(ad_lambda)};
            spec.validate();
            auto subset = ad_fraction >= 1.0
                              ? sp.adapt
                              : subsample(sp.adapt, ad_fraction, derive_seed(ad_opts.seed, "subsample"));
            auto [target, report] =
                adapt_unsupervised(source, strip_labels(data, subset), spec, ad_opts.to_config());
            save_checkpoint(target, ad_out);
            std::printf("adapted on %zu pairs, %d epochs, final replication loss %.6f\n",
                        subset.size(), report.epochs_run, report.final_loss);
            if (!ad_report.empty())
                write_json(nlohmann::json{{"epochs_run", report.epochs_run},
                                          {"best_epoch", report.best_epoch},
                                          {"final_loss", report.final_loss},
                                          {"loss_trajectory", report.loss_trajectory},
                                          {"pairs_used", subset.size()},
                                          {"loss", experiment_detail::loss_to_json(spec)}},
                           ad_report);
            return 0;
        }

        if (*baseline_cmd) {
            WindowDataset data = load_archive(bl_archive);
            WindowedSplit sp = split_default(data);
            ModelParams source = load_checkpoint(bl_source);
            auto subset = bl_fraction >= 1.0
                              ? sp.adapt
                              : subsample(sp.adapt, bl_fraction, derive_seed(bl_opts.seed, "subsample"));
            LabeledWindows labeled = gather_labeled(data, subset, Site::Target);
            TrainConfig cfg = bl_opts.to_config();
            std::pair<ModelParams, TrainHistory> out;
            if (bl_method == "lp")
                out = linear_probe(source, labeled, cfg);
            else if (bl_method == "ft")
                out = fine_tune(source, labeled, cfg);
            else
                out = lp_ft(source, labeled, cfg);
            save_checkpoint(out.first, bl_out);
            std::printf("%s trained on %zu labeled target windows, %d epochs\n", bl_method.c_str(),
                        subset.size(), out.second.epochs_run);
            if (!bl_report.empty()) write_json(history_json(out.second), bl_report);
            return 0;
        }

        if (*eval_cmd) {
            WindowDataset data = load_archive(ev_archive);
            ModelParams model = load_checkpoint(ev_model);
            auto idx = split_part(data, ev_split);
            LabeledWindows windows = gather_labeled(data, idx, site_from(ev_site));
            MetricsReport report = evaluate(model, windows);
            report.class_names = data.class_names;
            std::printf("%s on %s/%s: accuracy %.2f%%, macro F1 %.2f%%\n", ev_model.c_str(),
                        ev_split.c_str(), ev_site.c_str(), 100.0 * report.ovr.accuracy,
                        100.0 * report.ovr.macro_f1);
            if (!ev_report.empty()) write_json(report_to_json(report), ev_report);
            if (!ev_csv_dir.empty()) {
                fs::create_directories(ev_csv_dir);
                write_confusion_csv(report, (fs::path(ev_csv_dir) / "confusion.csv").string());
                write_roc_csv(report, (fs::path(ev_csv_dir) / "roc.csv").string());
            }
            return 0;
        }

        if (*export_cmd) {
            WindowDataset data = load_archive(ex_archive);
            ModelParams model = load_checkpoint(ex_model);
            auto idx = split_part(data, ex_split);
            export_embeddings(model, data, idx, site_from(ex_site), ex_out, !ex_no_labels);
            std::printf("wrote %zu embedding rows to %s\n", idx.size(), ex_out.c_str());
            return 0;
        }

        if (*run_cmd) {
            std::ifstream in(er_config);
            if (!in) throw IoError("cannot open experiment config: " + er_config);
            nlohmann::json j;
            in >> j;
            ExperimentConfig cfg = experiment_config_from_json(j);
            cfg.workers = er_workers;
            ExperimentRunner runner(cfg);
            nlohmann::json summary = runner.run();
            std::printf("experiment %s (config %s) complete; summaries under %s/summary\n",
                        cfg.kind.c_str(), runner.hash().c_str(), cfg.output_dir.c_str());
            return 0;
        }

        if (*sum_cmd) {
            nlohmann::json summary = ExperimentRunner::summarize_dir(es_dir);
            std::cout << summary.dump(2) << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
