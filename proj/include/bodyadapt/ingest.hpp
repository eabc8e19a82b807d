#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "bodyadapt/dataset.hpp"
#include "bodyadapt/descriptor_io.hpp"
#include "bodyadapt/parser.hpp"

namespace bodyadapt {

// Full harmonization of a directory of raw recordings: parse, repair short
// missing runs, convert units, resample to 30 Hz, windowize, pair. Files are
// processed in name order; window pairing ids are assigned globally.
inline WindowDataset harmonize_directory(const DatasetDescriptor& desc, const std::string& raw_dir,
                                         LabelSchemeKind scheme_kind, std::uint64_t split_seed,
                                         int max_gap = 15, bool verbose = false) {
    namespace fs = std::filesystem;
    LabelScheme scheme = make_label_scheme(desc, scheme_kind);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(raw_dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no raw files under " + raw_dir);

    WindowDataset data;
    data.scheme = scheme_kind;
    data.class_names = scheme.class_names;
    data.dataset_id = desc.dataset_id;
    data.split_seed = split_seed;
    data.source_channels = static_cast<int>(desc.source_site.columns.size());
    data.target_channels = static_cast<int>(desc.target_site.columns.size());
    std::int64_t next_id = 0;
    for (const auto& f : files) {
        if (verbose) std::printf("parsing %s\n", f.string().c_str());
        Recording rec = parse_recording(f.string(), desc);
        rec = interpolate_missing(rec, max_gap);
        rec = convert_units(rec, desc);
        rec = resample(rec);
        auto windows = windowize(rec, scheme);
        for (auto& w : windows) {
            w.pairing_id = next_id++;
            data.pairs.push_back(std::move(w));
        }
    }
    if (data.pairs.empty()) throw IoError("ingest produced no windows from " + raw_dir);

    // imbalance sanity check on real ingests: the 'other' bucket dominates
    // PAMAP2 and MHEALTH under the five-class scheme
    if (scheme_kind == LabelSchemeKind::FiveClass &&
        (desc.dataset_id == "pamap2" || desc.dataset_id == "mhealth")) {
        auto hist = class_histogram(data);
        int max_k = 0;
        for (std::size_t k = 1; k < hist.size(); ++k)
            if (hist[k] > hist[static_cast<std::size_t>(max_k)]) max_k = static_cast<int>(k);
        if (max_k != kClassOther)
            std::fprintf(stderr,
                         "warning: %s ingest: expected the 'other' class to dominate but '%s' does; "
                         "check the raw file set\n",
                         desc.dataset_id.c_str(), data.class_names[static_cast<std::size_t>(max_k)].c_str());
    }
    return data;
}

}  // namespace bodyadapt
