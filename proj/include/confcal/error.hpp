#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace confcal {

enum class ErrorCode {
    // confidence arithmetic
    empty_sequence,
    invalid_logprob,
    duplicate_token,
    too_many_entries,
    unknown_candidate,
    duplicate_candidate,
    zero_candidate_mass,
    anchor_tokens_absent,
    alias_overlap,
    // metrics
    degenerate_classes,
    empty_input,
    all_empty_bins,
    zero_retrieval,
    // model client
    endpoint_unreachable,
    endpoint_error,
    malformed_response,
    rate_limited,
    mock_script_exhausted,
    unsupported_readout,
    no_label_token_present,
    unmappable_label,
    invalid_input,
    // data
    file_not_found,
    schema_violation,
    retrieval_miss,
    // configuration
    config_invalid,
    invalid_argument,
};

/// Coarse grouping used for process exit codes.
enum class ErrorCategory { config, endpoint, data };

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::empty_sequence: return "EmptySequence";
        case ErrorCode::invalid_logprob: return "InvalidLogProb";
        case ErrorCode::duplicate_token: return "DuplicateToken";
        case ErrorCode::too_many_entries: return "TooManyEntries";
        case ErrorCode::unknown_candidate: return "UnknownCandidate";
        case ErrorCode::duplicate_candidate: return "DuplicateCandidate";
        case ErrorCode::zero_candidate_mass: return "ZeroCandidateMass";
        case ErrorCode::anchor_tokens_absent: return "AnchorTokensAbsent";
        case ErrorCode::alias_overlap: return "AliasOverlap";
        case ErrorCode::degenerate_classes: return "DegenerateClasses";
        case ErrorCode::empty_input: return "EmptyInput";
        case ErrorCode::all_empty_bins: return "AllEmptyBins";
        case ErrorCode::zero_retrieval: return "ZeroRetrieval";
        case ErrorCode::endpoint_unreachable: return "EndpointUnreachable";
        case ErrorCode::endpoint_error: return "EndpointError";
        case ErrorCode::malformed_response: return "MalformedResponse";
        case ErrorCode::rate_limited: return "RateLimited";
        case ErrorCode::mock_script_exhausted: return "MockScriptExhausted";
        case ErrorCode::unsupported_readout: return "UnsupportedReadout";
        case ErrorCode::no_label_token_present: return "NoLabelTokenPresent";
        case ErrorCode::unmappable_label: return "UnmappableLabel";
        case ErrorCode::invalid_input: return "InvalidInput";
        case ErrorCode::file_not_found: return "FileNotFound";
        case ErrorCode::schema_violation: return "SchemaViolation";
        case ErrorCode::retrieval_miss: return "RetrievalMiss";
        case ErrorCode::config_invalid: return "ConfigInvalid";
        case ErrorCode::invalid_argument: return "InvalidArgument";
    }
    return "Unknown";
}

constexpr ErrorCategory category_of(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::endpoint_unreachable:
        case ErrorCode::endpoint_error:
        case ErrorCode::malformed_response:
        case ErrorCode::rate_limited:
        case ErrorCode::mock_script_exhausted:
        case ErrorCode::unsupported_readout:
            return ErrorCategory::endpoint;
        case ErrorCode::config_invalid:
        case ErrorCode::invalid_argument:
            return ErrorCategory::config;
        default:
            return ErrorCategory::data;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }
    ErrorCategory category() const noexcept { return category_of(code_); }

private:
    ErrorCode code_;
    std::string detail_;
};

} // namespace confcal
