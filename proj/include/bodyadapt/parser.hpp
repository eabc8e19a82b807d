#pragma once

#include <charconv>
#include <fstream>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "bodyadapt/dataset.hpp"

namespace bodyadapt {

namespace parse_detail {

inline void split_fields(const std::string& line, bool comma, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t i = 0;
    const std::size_t n = line.size();
    if (comma) {
        std::size_t start = 0;
        for (i = 0; i <= n; ++i) {
            if (i == n || line[i] == ',') {
                out.emplace_back(line.data() + start, i - start);
                start = i + 1;
            }
        }
    } else {
        while (i < n) {
            while (i < n && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
            std::size_t start = i;
            while (i < n && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
            if (i > start) out.emplace_back(line.data() + start, i - start);
        }
    }
}

inline bool parse_float(std::string_view s, float& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last;
}

inline bool parse_int(std::string_view s, int& out) {
    // label columns in some raw files carry a decimal point (e.g. "4.0")
    float f;
    if (!parse_float(s, f)) return false;
    out = static_cast<int>(f);
    return static_cast<float>(out) == f;
}

inline int subject_from_filename(const std::string& path, const std::string& pattern) {
    if (pattern.empty()) return 0;
    std::smatch m;
    std::string name = path;
    std::size_t slash = name.find_last_of('/');
    if (slash != std::string::npos) name = name.substr(slash + 1);
    if (std::regex_search(name, m, std::regex(pattern)) && m.size() >= 2)
        return std::stoi(m[1].str());
    return 0;
}

}  // namespace parse_detail

// Reads one raw delimited-text file into a Recording at native rate and
// native units. Missing sentinels become explicit missing marks; malformed
// rows and unknown native labels are reported with their line number.
inline Recording parse_recording(const std::string& path, const DatasetDescriptor& desc) {
    desc.validate();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open raw file: " + path);

    LabelScheme coverage = make_label_scheme(desc, LabelSchemeKind::AllLabels);
    bool comma = desc.delimiter == "comma";

    int max_col = std::max(desc.time_column, desc.label_column);
    for (int c : desc.source_site.columns) max_col = std::max(max_col, c);
    for (int c : desc.target_site.columns) max_col = std::max(max_col, c);

    Recording rec;
    rec.subject = parse_detail::subject_from_filename(path, desc.subject_regex);
    rec.rate_hz = desc.native_rate_hz;
    int cs = static_cast<int>(desc.source_site.columns.size());
    int ct = static_cast<int>(desc.target_site.columns.size());

    std::vector<float> src_data, tgt_data;  // sample-major while streaming
    std::vector<std::uint8_t> src_miss, tgt_miss;
    std::string line;
    std::vector<std::string_view> fields;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        parse_detail::split_fields(line, comma, fields);
        if (fields.empty()) continue;
        if (static_cast<int>(fields.size()) < max_col)
            throw IoError(path + ":" + std::to_string(line_no) + ": expected at least " +
                          std::to_string(max_col) + " columns, got " +
                          std::to_string(fields.size()));

        double t;
        if (desc.time_column > 0) {
            float tv;
            if (!parse_detail::parse_float(fields[static_cast<std::size_t>(desc.time_column - 1)], tv))
                throw IoError(path + ":" + std::to_string(line_no) + ": unparseable time value");
            t = static_cast<double>(tv) * desc.time_scale;
        } else {
            t = static_cast<double>(rec.timestamps.size()) / desc.native_rate_hz;
        }
        if (!rec.timestamps.empty() && t <= rec.timestamps.back())
            throw IoError(path + ":" + std::to_string(line_no) + ": timestamps not increasing");
        rec.timestamps.push_back(t);

        int native_label;
        if (!parse_detail::parse_int(fields[static_cast<std::size_t>(desc.label_column - 1)],
                                     native_label))
            throw IoError(path + ":" + std::to_string(line_no) + ": unparseable label");
        if (coverage.native_to_index.find(native_label) == coverage.native_to_index.end())
            throw IoError(path + ":" + std::to_string(line_no) + ": unknown native label " +
                          std::to_string(native_label));
        rec.labels.push_back(native_label);

        auto read_site = [&](const SiteSpec& site, std::vector<float>& data,
                             std::vector<std::uint8_t>& miss) {
            for (int col : site.columns) {
                std::string_view f = fields[static_cast<std::size_t>(col - 1)];
                float v = 0.0f;
                bool is_missing = (f == desc.missing_token) || f.empty();
                if (!is_missing && !parse_detail::parse_float(f, v)) {
                    throw IoError(path + ":" + std::to_string(line_no) + ": unparseable value '" +
                                  std::string(f) + "' in column " + std::to_string(col));
                }
                if (!is_missing && !std::isfinite(v)) is_missing = true;
                data.push_back(is_missing ? 0.0f : v);
                miss.push_back(is_missing ? 1 : 0);
            }
        };
        read_site(desc.source_site, src_data, src_miss);
        read_site(desc.target_site, tgt_data, tgt_miss);
    }
    int S = rec.samples();
    if (S == 0) throw IoError(path + ": no samples");

    // transpose sample-major stream into [channels, samples]
    auto to_channel_major = [S](const std::vector<float>& data, const std::vector<std::uint8_t>& miss,
                                int C, Tensor& out_t, std::vector<std::uint8_t>& out_m) {
        out_t = Tensor({C, S});
        out_m.assign(static_cast<std::size_t>(C) * S, 0);
        for (int s = 0; s < S; ++s)
            for (int c = 0; c < C; ++c) {
                out_t[static_cast<std::ptrdiff_t>(c) * S + s] =
                    data[static_cast<std::size_t>(s) * C + static_cast<std::size_t>(c)];
                out_m[static_cast<std::size_t>(c) * S + static_cast<std::size_t>(s)] =
                    miss[static_cast<std::size_t>(s) * C + static_cast<std::size_t>(c)];
            }
    };
    to_channel_major(src_data, src_miss, cs, rec.source, rec.source_missing);
    to_channel_major(tgt_data, tgt_miss, ct, rec.target, rec.target_missing);
    return rec;
}

// JSON descriptor loader lives next to the parser so the CLI and tests share
// one implementation; defined in descriptor_io.hpp to keep the json
// dependency out of this header's users.

}  // namespace bodyadapt
