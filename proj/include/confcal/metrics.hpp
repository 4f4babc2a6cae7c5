#pragma once

// Confidence-quality metrics: AUROC (midrank Mann-Whitney), equal-mass
// binning, expected calibration error, and retrieval efficiency.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <ranges>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "confcal/confidence.hpp"
#include "confcal/error.hpp"

namespace confcal {

inline constexpr std::size_t kDefaultBinCount = 10;

struct EvalRecord {
    std::string id;
    std::string task_id;
    std::string prediction;
    std::vector<std::string> gold;
    bool correct = false;
    double confidence = 0.0;
    ConfidenceMethod method = ConfidenceMethod::raw;
    std::set<std::string> flags;
    // unnormalized counterpart, filled when both confidence modes are requested
    std::optional<double> raw_confidence;

    bool operator==(const EvalRecord&) const = default;
};

struct CalibrationBin {
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;

    bool operator==(const CalibrationBin&) const = default;
};

/// Counts of records whose confidence did not come from a clean readout.
struct ReportMetadata {
    std::size_t fallback_neutral = 0;
    std::size_t errored = 0;
    std::size_t skipped = 0;
    std::size_t no_number_found = 0;

    bool operator==(const ReportMetadata&) const = default;
};

struct CalibrationReport {
    std::string task_id;
    std::size_t n = 0;
    double accuracy = 0.0;
    std::optional<double> auroc;  // nullopt when only one correctness class is present
    double ece = 0.0;
    std::vector<CalibrationBin> bins;
    std::optional<double> raw_auroc;
    ReportMetadata metadata;

    bool operator==(const CalibrationReport&) const = default;
};

/// Area under the ROC curve of `score` for separating `positive` items,
/// with tied scores counted as half (midrank convention).
template <std::ranges::forward_range R, class ScoreProj, class PositiveProj>
double auroc(const R& items, ScoreProj score, PositiveProj positive) {
    std::vector<std::pair<double, bool>> xs;
    for (const auto& item : items) {
        xs.emplace_back(static_cast<double>(std::invoke(score, item)),
                        static_cast<bool>(std::invoke(positive, item)));
    }
    const auto n_pos = static_cast<std::size_t>(
        std::count_if(xs.begin(), xs.end(), [](const auto& x) { return x.second; }));
    const std::size_t n_neg = xs.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw Error(ErrorCode::degenerate_classes, "AUROC needs at least one correct and one incorrect record");
    }
    std::sort(xs.begin(), xs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    // Sum of 1-based midranks over the positive class.
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < xs.size();) {
        std::size_t j = i;
        std::size_t pos_in_group = 0;
        while (j < xs.size() && xs[j].first == xs[i].first) {
            if (xs[j].second) ++pos_in_group;
            ++j;
        }
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        rank_sum += midrank * static_cast<double>(pos_in_group);
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double u = rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(n_neg));
}

inline double auroc(std::span<const EvalRecord> records) {
    return auroc(records, &EvalRecord::confidence, &EvalRecord::correct);
}

/// Throws unless every confidence lies in [0,1] and ids are unique.
inline void validate_records(std::span<const EvalRecord> records) {
    std::unordered_set<std::string_view> ids;
    for (const auto& r : records) {
        if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
            throw Error(ErrorCode::invalid_input,
                        "record '" + r.id + "' confidence " + std::to_string(r.confidence) + " outside [0,1]");
        }
        if (!ids.insert(r.id).second) throw Error(ErrorCode::invalid_input, "duplicate record id '" + r.id + "'");
    }
}

/// Record indices split into `n_bins` groups of near-equal size. Records are
/// ordered by ascending confidence, ties by ascending id; the first
/// (n mod n_bins) groups take one extra record.
inline std::vector<std::vector<std::size_t>> equal_mass_partition(std::span<const EvalRecord> records,
                                                                  std::size_t n_bins = kDefaultBinCount) {
    if (records.empty()) throw Error(ErrorCode::empty_input, "no records to bin");
    if (n_bins == 0) throw Error(ErrorCode::invalid_argument, "bin count must be >= 1");

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].confidence != records[b].confidence) return records[a].confidence < records[b].confidence;
        return records[a].id < records[b].id;
    });

    const std::size_t base = records.size() / n_bins;
    const std::size_t extra = records.size() % n_bins;
    std::vector<std::vector<std::size_t>> groups(n_bins);
    auto it = order.begin();
    for (std::size_t b = 0; b < n_bins; ++b) {
        const std::size_t take = base + (b < extra ? 1 : 0);
        groups[b].assign(it, it + static_cast<std::ptrdiff_t>(take));
        it += static_cast<std::ptrdiff_t>(take);
    }
    return groups;
}

inline std::vector<CalibrationBin> equal_mass_bins(std::span<const EvalRecord> records,
                                                   std::size_t n_bins = kDefaultBinCount) {
    std::vector<CalibrationBin> bins;
    for (const auto& group : equal_mass_partition(records, n_bins)) {
        CalibrationBin bin{group.size(), 0.0, 0.0};
        if (!group.empty()) {
            double conf = 0.0;
            double acc = 0.0;
            for (std::size_t i : group) {
                conf += records[i].confidence;
                acc += records[i].correct ? 1.0 : 0.0;
            }
            bin.mean_confidence = conf / static_cast<double>(group.size());
            bin.mean_accuracy = acc / static_cast<double>(group.size());
        }
        bins.push_back(bin);
    }
    return bins;
}

namespace detail {

inline double total_count(std::span<const CalibrationBin> bins) {
    double total = 0.0;
    for (const auto& b : bins) total += static_cast<double>(b.count);
    if (total <= 0.0) throw Error(ErrorCode::all_empty_bins, "every bin is empty");
    return total;
}

} // namespace detail

/// Count-weighted mean of |accuracy - confidence| over bins.
inline double ece_from_bins(std::span<const CalibrationBin> bins) {
    const double total = detail::total_count(bins);
    double acc = 0.0;
    for (const auto& b : bins) {
        acc += static_cast<double>(b.count) * std::abs(b.mean_accuracy - b.mean_confidence);
    }
    return acc / total;
}

inline double accuracy_from_bins(std::span<const CalibrationBin> bins) {
    const double total = detail::total_count(bins);
    double acc = 0.0;
    for (const auto& b : bins) acc += static_cast<double>(b.count) * b.mean_accuracy;
    return acc / total;
}

inline double ece(std::span<const EvalRecord> records, std::size_t n_bins = kDefaultBinCount) {
    const auto bins = equal_mass_bins(records, n_bins);
    return ece_from_bins(bins);
}

/// Accuracy gain (percentage points) per percent of queries that triggered retrieval.
inline double retrieval_efficiency(double accuracy_gain_pp, double retrieval_rate_pct) {
    if (retrieval_rate_pct == 0.0) throw Error(ErrorCode::zero_retrieval, "efficiency undefined at 0% retrieval");
    if (!(retrieval_rate_pct > 0.0) || !std::isfinite(accuracy_gain_pp)) {
        throw Error(ErrorCode::invalid_argument, "retrieval rate must be a positive percentage");
    }
    return accuracy_gain_pp / retrieval_rate_pct;
}

} // namespace confcal
