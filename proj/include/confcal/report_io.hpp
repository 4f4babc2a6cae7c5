#pragma once

// File formats for evaluation output. Every real number is rounded to six
// decimals so artifacts diff cleanly between runs.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "confcal/harness.hpp"

namespace confcal {

inline double round6(double x) {
    if (!std::isfinite(x)) return x;
    const double r = std::round(x * 1e6) / 1e6;
    return r == 0.0 ? 0.0 : r;  // no "-0"
}

inline std::string fixed6(double x) { return fmt::format("{:.6f}", round6(x)); }

inline json optional_number(const std::optional<double>& x) { return x ? json(round6(*x)) : json(nullptr); }

inline json to_json(const EvalRecord& r) {
    json j = {{"id", r.id},
              {"task_id", r.task_id},
              {"prediction", r.prediction},
              {"gold", r.gold.size() == 1 ? json(r.gold.front()) : json(r.gold)},
              {"correct", r.correct},
              {"confidence", round6(r.confidence)},
              {"method", to_string(r.method)},
              {"flags", r.flags}};
    if (r.raw_confidence) j["raw_confidence"] = round6(*r.raw_confidence);
    return j;
}

inline json to_json(const CalibrationReport& rep) {
    json bins = json::array();
    for (const auto& b : rep.bins) {
        bins.push_back({{"count", b.count},
                        {"mean_confidence", round6(b.mean_confidence)},
                        {"mean_accuracy", round6(b.mean_accuracy)}});
    }
    json j = {{"task_id", rep.task_id},
              {"n", rep.n},
              {"accuracy", round6(rep.accuracy)},
              {"auroc", optional_number(rep.auroc)},
              {"ece", round6(rep.ece)},
              {"bins", bins},
              {"metadata",
               {{"fallback_neutral", rep.metadata.fallback_neutral},
                {"errored", rep.metadata.errored},
                {"skipped", rep.metadata.skipped},
                {"no_number_found", rep.metadata.no_number_found}}}};
    if (rep.raw_auroc) j["raw_auroc"] = round6(*rep.raw_auroc);
    return j;
}

inline CalibrationReport report_from_json(const json& j) {
    try {
        CalibrationReport rep;
        rep.task_id = j.at("task_id").get<std::string>();
        rep.n = j.at("n").get<std::size_t>();
        rep.accuracy = j.at("accuracy").get<double>();
        if (!j.at("auroc").is_null()) rep.auroc = j.at("auroc").get<double>();
        rep.ece = j.at("ece").get<double>();
        for (const auto& b : j.at("bins")) {
            rep.bins.push_back({b.at("count").get<std::size_t>(), b.at("mean_confidence").get<double>(),
                                b.at("mean_accuracy").get<double>()});
        }
        if (j.contains("raw_auroc") && !j.at("raw_auroc").is_null()) rep.raw_auroc = j.at("raw_auroc").get<double>();
        if (j.contains("metadata")) {
            const auto& m = j.at("metadata");
            rep.metadata = {m.value("fallback_neutral", std::size_t{0}), m.value("errored", std::size_t{0}),
                            m.value("skipped", std::size_t{0}), m.value("no_number_found", std::size_t{0})};
        }
        return rep;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("report JSON: ") + e.what());
    }
}

/// Bin index, count, and the (mean_confidence, mean_accuracy) calibration-curve point.
inline std::string calibration_curve_csv(const CalibrationReport& rep) {
    std::string out = "bin,count,mean_confidence,mean_accuracy\n";
    for (std::size_t i = 0; i < rep.bins.size(); ++i) {
        const auto& b = rep.bins[i];
        out += fmt::format("{},{},{},{}\n", i + 1, b.count, fixed6(b.mean_confidence), fixed6(b.mean_accuracy));
    }
    return out;
}

inline std::string records_jsonl(std::span<const EvalRecord> records) {
    std::string out;
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    return out;
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::file_not_found, "cannot write " + path.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::file_not_found, path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Parses "count,mean_accuracy,mean_confidence" rows (header optional,
/// accuracy and confidence as fractions in [0,1]).
inline std::vector<CalibrationBin> parse_bin_csv(std::string_view text) {
    std::vector<CalibrationBin> bins;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos || line.front() == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
        auto fail = [&](const std::string& why) {
            return Error(ErrorCode::schema_violation, "bin CSV line " + std::to_string(line_no) + ": " + why);
        };
        if (cells.size() != 3) throw fail("expected 3 columns: count,mean_accuracy,mean_confidence");
        if (line_no == 1 && std::none_of(cells.begin(), cells.end(), [](const std::string& c) {
                return c.find_first_of("0123456789") != std::string::npos;
            })) {
            continue;  // header
        }
        double count = 0, acc = 0, conf = 0;
        try {
            count = std::stod(cells[0]);
            acc = std::stod(cells[1]);
            conf = std::stod(cells[2]);
        } catch (const std::exception&) {
            throw fail("non-numeric cell");
        }
        if (count < 0 || count != std::floor(count)) throw fail("count must be a non-negative integer");
        if (acc < 0 || acc > 1 || conf < 0 || conf > 1) throw fail("accuracy and confidence must lie in [0,1]");
        bins.push_back({static_cast<std::size_t>(count), conf, acc});
    }
    return bins;
}

} // namespace confcal
