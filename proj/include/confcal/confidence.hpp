#pragma once

// Confidence arithmetic over truncated top-K token log-probabilities.
//
// Every product of probabilities is carried as a sum of logs and normalized
// with log-sum-exp, so candidate sets far below the smallest normal double
// in linear space still produce exact ratios.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "confcal/error.hpp"

namespace confcal {

inline constexpr std::size_t kDefaultTopK = 20;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct TokenLogprob {
    std::string token;
    double logprob = 0.0;

    bool operator==(const TokenLogprob&) const = default;
};

/// Truncated next-token distribution at one generated position. Tokens that
/// are not listed have probability zero.
class TokenDistribution {
public:
    TokenDistribution() = default;

    explicit TokenDistribution(std::vector<TokenLogprob> entries, std::size_t position = 0,
                               std::size_t max_entries = kDefaultTopK)
        : entries_(std::move(entries)), position_(position) {
        if (entries_.size() > max_entries) {
            throw Error(ErrorCode::too_many_entries,
                        std::to_string(entries_.size()) + " entries exceed truncation K=" +
                            std::to_string(max_entries));
        }
        std::unordered_set<std::string_view> seen;
        for (const auto& e : entries_) {
            if (std::isnan(e.logprob) || e.logprob > 0.0) {
                throw Error(ErrorCode::invalid_logprob,
                            "token '" + e.token + "' has logprob " + std::to_string(e.logprob));
            }
            if (!seen.insert(e.token).second) {
                throw Error(ErrorCode::duplicate_token, "token '" + e.token + "' listed twice");
            }
        }
    }

    /// Keeps the k most probable entries (ties by token) and validates the rest.
    static TokenDistribution top_k(std::vector<TokenLogprob> entries, std::size_t k,
                                   std::size_t position = 0) {
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            if (a.logprob != b.logprob) return a.logprob > b.logprob;
            return a.token < b.token;
        });
        if (entries.size() > k) entries.resize(k);
        return TokenDistribution(std::move(entries), position, k);
    }

    std::span<const TokenLogprob> entries() const noexcept { return entries_; }
    std::size_t position() const noexcept { return position_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    std::optional<double> logprob(std::string_view token) const {
        for (const auto& e : entries_) {
            if (e.token == token) return e.logprob;
        }
        return std::nullopt;
    }

    double probability(std::string_view token) const {
        auto lp = logprob(token);
        return lp ? std::exp(*lp) : 0.0;
    }

    bool operator==(const TokenDistribution&) const = default;

private:
    std::vector<TokenLogprob> entries_;
    std::size_t position_ = 0;
};

struct CandidateScore {
    std::string candidate_id;
    double sequence_logprob = 0.0;
};

enum class ConfidenceMethod { classification_normalized, self_eval, raw };

constexpr std::string_view to_string(ConfidenceMethod m) noexcept {
    switch (m) {
        case ConfidenceMethod::classification_normalized: return "classification_normalized";
        case ConfidenceMethod::self_eval: return "self_eval";
        case ConfidenceMethod::raw: return "raw";
    }
    return "raw";
}

enum class ConfidenceFlag : std::uint8_t {
    anchor_missing_yes = 1u << 0,
    anchor_missing_no = 1u << 1,
    fallback_neutral = 1u << 2,
};

constexpr std::string_view to_string(ConfidenceFlag f) noexcept {
    switch (f) {
        case ConfidenceFlag::anchor_missing_yes: return "anchor_missing_yes";
        case ConfidenceFlag::anchor_missing_no: return "anchor_missing_no";
        case ConfidenceFlag::fallback_neutral: return "fallback_neutral";
    }
    return "";
}

class ConfidenceFlags {
public:
    constexpr ConfidenceFlags() = default;

    constexpr void insert(ConfidenceFlag f) noexcept { bits_ |= static_cast<std::uint8_t>(f); }
    constexpr bool contains(ConfidenceFlag f) const noexcept {
        return (bits_ & static_cast<std::uint8_t>(f)) != 0;
    }
    constexpr bool empty() const noexcept { return bits_ == 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (auto f : {ConfidenceFlag::anchor_missing_yes, ConfidenceFlag::anchor_missing_no,
                       ConfidenceFlag::fallback_neutral}) {
            if (contains(f)) out.emplace_back(to_string(f));
        }
        return out;
    }

    constexpr bool operator==(const ConfidenceFlags&) const = default;

private:
    std::uint8_t bits_ = 0;
};

struct ConfidenceScore {
    double value = 0.0;
    ConfidenceMethod method = ConfidenceMethod::raw;
    ConfidenceFlags flags;
};

/// log(sum(exp(x))). Returns -inf for an empty input or when every term is -inf.
inline double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) return kNegInf;
    const double hi = *std::max_element(xs.begin(), xs.end());
    if (hi == kNegInf) return kNegInf;
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - hi);
    return hi + std::log(acc);
}

/// Log of the product of per-token probabilities.
inline double sequence_logprob(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) throw Error(ErrorCode::empty_sequence, "no token logprobs");
    double total = 0.0;
    for (double lp : token_logprobs) {
        if (std::isnan(lp) || lp > 0.0) {
            throw Error(ErrorCode::invalid_logprob, "token logprob " + std::to_string(lp) + " > 0");
        }
        total += lp;
    }
    return total;
}

namespace detail {

inline void check_candidates(std::span<const CandidateScore> candidates) {
    if (candidates.empty()) throw Error(ErrorCode::empty_input, "no candidates");
    std::unordered_set<std::string_view> seen;
    for (const auto& c : candidates) {
        if (!seen.insert(c.candidate_id).second) {
            throw Error(ErrorCode::duplicate_candidate, "candidate '" + c.candidate_id + "'");
        }
        if (std::isnan(c.sequence_logprob) || c.sequence_logprob > 0.0) {
            throw Error(ErrorCode::invalid_logprob, "candidate '" + c.candidate_id + "' has logprob " +
                                                        std::to_string(c.sequence_logprob));
        }
    }
}

inline double candidate_log_mass(std::span<const CandidateScore> candidates) {
    std::vector<double> lps;
    lps.reserve(candidates.size());
    for (const auto& c : candidates) lps.push_back(c.sequence_logprob);
    const double lse = log_sum_exp(lps);
    if (lse == kNegInf) throw Error(ErrorCode::zero_candidate_mass, "every candidate has probability 0");
    return lse;
}

} // namespace detail

/// Probability of `selected` renormalized over the candidate set.
inline ConfidenceScore normalized_confidence(std::span<const CandidateScore> candidates,
                                             std::string_view selected) {
    detail::check_candidates(candidates);
    auto it = std::find_if(candidates.begin(), candidates.end(),
                           [&](const auto& c) { return c.candidate_id == selected; });
    if (it == candidates.end()) {
        throw Error(ErrorCode::unknown_candidate, "'" + std::string(selected) + "' not among candidates");
    }
    const double lse = detail::candidate_log_mass(candidates);
    const double value = std::clamp(std::exp(it->sequence_logprob - lse), 0.0, 1.0);
    return {value, ConfidenceMethod::classification_normalized, {}};
}

/// Normalized confidence of every candidate, in input order.
inline std::vector<double> normalized_distribution(std::span<const CandidateScore> candidates) {
    detail::check_candidates(candidates);
    const double lse = detail::candidate_log_mass(candidates);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back(std::exp(c.sequence_logprob - lse));
    return out;
}

struct AnchorAliases {
    std::set<std::string> yes;
    std::set<std::string> no;

    static AnchorAliases defaults() {
        return {{"Yes", " Yes", "yes", " yes"}, {"No", " No", "no", " no"}};
    }
};

enum class MissingPolicy { error, neutral, skip };

constexpr std::string_view to_string(MissingPolicy p) noexcept {
    switch (p) {
        case MissingPolicy::error: return "error";
        case MissingPolicy::neutral: return "neutral";
        case MissingPolicy::skip: return "skip";
    }
    return "neutral";
}

namespace detail {

inline void check_aliases(const AnchorAliases& aliases) {
    if (aliases.yes.empty() || aliases.no.empty()) {
        throw Error(ErrorCode::invalid_argument, "anchor alias sets must be non-empty");
    }
    for (const auto& y : aliases.yes) {
        if (aliases.no.contains(y)) throw Error(ErrorCode::alias_overlap, "'" + y + "' is both Yes and No");
    }
}

} // namespace detail

/// Log of the summed probability of every alias present in `dist`; -inf if none is.
inline double alias_log_mass(const TokenDistribution& dist, const std::set<std::string>& aliases) {
    std::vector<double> present;
    for (const auto& e : dist.entries()) {
        if (aliases.contains(e.token)) present.push_back(e.logprob);
    }
    return log_sum_exp(present);
}

/// Yes/No self-evaluation confidence c(Yes) / (c(Yes) + c(No)). Anchors missing
/// from the top-K count as probability zero; when both are missing the result
/// follows `policy` (nullopt means the caller should skip the example).
inline std::optional<ConfidenceScore> self_eval_confidence(const TokenDistribution& dist,
                                                           const AnchorAliases& aliases,
                                                           MissingPolicy policy = MissingPolicy::neutral) {
    detail::check_aliases(aliases);
    const double log_yes = alias_log_mass(dist, aliases.yes);
    const double log_no = alias_log_mass(dist, aliases.no);

    ConfidenceScore score{0.0, ConfidenceMethod::self_eval, {}};
    if (log_yes == kNegInf) score.flags.insert(ConfidenceFlag::anchor_missing_yes);
    if (log_no == kNegInf) score.flags.insert(ConfidenceFlag::anchor_missing_no);

    if (log_yes == kNegInf && log_no == kNegInf) {
        switch (policy) {
            case MissingPolicy::error:
                throw Error(ErrorCode::anchor_tokens_absent, "neither Yes nor No aliases in top-K");
            case MissingPolicy::skip:
                return std::nullopt;
            case MissingPolicy::neutral:
                score.value = 0.5;
                score.flags.insert(ConfidenceFlag::fallback_neutral);
                return score;
        }
    }
    if (log_no == kNegInf) {
        score.value = 1.0;
    } else if (log_yes == kNegInf) {
        score.value = 0.0;
    } else {
        // logistic of the log-odds, stable for either sign
        const double d = log_yes - log_no;
        score.value = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
    }
    return score;
}

/// Unnormalized summed Yes probability, the raw counterpart of self_eval_confidence.
inline ConfidenceScore raw_yes_confidence(const TokenDistribution& dist, const AnchorAliases& aliases) {
    detail::check_aliases(aliases);
    const double log_yes = alias_log_mass(dist, aliases.yes);
    ConfidenceScore score{std::clamp(std::exp(log_yes), 0.0, 1.0), ConfidenceMethod::raw, {}};
    if (log_yes == kNegInf) score.flags.insert(ConfidenceFlag::anchor_missing_yes);
    if (alias_log_mass(dist, aliases.no) == kNegInf) score.flags.insert(ConfidenceFlag::anchor_missing_no);
    return score;
}

} // namespace confcal
