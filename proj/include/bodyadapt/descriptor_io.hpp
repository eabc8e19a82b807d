#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "bodyadapt/dataset.hpp"

namespace bodyadapt {

inline SiteSpec site_from_json(const nlohmann::json& j) {
    SiteSpec s;
    s.name = j.at("name").get<std::string>();
    s.columns = j.at("columns").get<std::vector<int>>();
    if (j.contains("unit_scale"))
        s.unit_scale = j.at("unit_scale").get<std::vector<double>>();
    else
        s.unit_scale.assign(s.columns.size(), 1.0);
    return s;
}

inline DatasetDescriptor descriptor_from_json(const nlohmann::json& j) {
    DatasetDescriptor d;
    d.dataset_id = j.at("dataset_id").get<std::string>();
    d.native_rate_hz = j.at("native_rate_hz").get<double>();
    d.delimiter = j.value("delimiter", std::string("whitespace"));
    d.time_column = j.value("time_column", 0);
    d.time_scale = j.value("time_scale", 1.0);
    d.label_column = j.at("label_column").get<int>();
    d.missing_token = j.value("missing_token", std::string("NaN"));
    d.source_site = site_from_json(j.at("source_site"));
    d.target_site = site_from_json(j.at("target_site"));
    d.subject_regex = j.value("subject_regex", std::string());
    for (const auto& e : j.at("label_map")) {
        LabelEntry le;
        le.native = e.at("native").get<int>();
        le.name = e.at("name").get<std::string>();
        le.five_class = e.at("five_class").get<std::string>();
        d.label_map.push_back(std::move(le));
    }
    d.validate();
    return d;
}

inline DatasetDescriptor load_descriptor(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open descriptor: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("descriptor " + path + " is not valid JSON: " + e.what());
    }
    try {
        return descriptor_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("descriptor " + path + " is missing fields: " + e.what());
    }
}

}  // namespace bodyadapt
