#pragma once

// Chat-completion request/response types, their canonical JSON forms, and the
// stable request digest used by the cache and the scripted mock backend.

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "confcal/confidence.hpp"
#include "confcal/error.hpp"

namespace confcal {

using json = nlohmann::json;

enum class Role { system, user, assistant };

constexpr std::string_view to_string(Role r) noexcept {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

inline Role role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw Error(ErrorCode::malformed_response, "unknown role '" + std::string(s) + "'");
}

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
    std::vector<ChatMessage> messages;
    int max_tokens = 1;
    double temperature = 0.0;
    int top_logprobs = static_cast<int>(kDefaultTopK);
    std::string model_name;

    bool operator==(const CompletionRequest&) const = default;
};

enum class FinishReason { stop, length, other };

constexpr std::string_view to_string(FinishReason f) noexcept {
    switch (f) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::other: return "other";
    }
    return "other";
}

inline FinishReason finish_reason_from_string(std::string_view s) {
    if (s == "stop") return FinishReason::stop;
    if (s == "length") return FinishReason::length;
    return FinishReason::other;
}

struct CompletionResponse {
    std::vector<std::string> generated_tokens;
    std::vector<TokenDistribution> token_distributions;
    FinishReason finish_reason = FinishReason::stop;

    std::string text() const {
        std::string out;
        for (const auto& t : generated_tokens) out += t;
        return out;
    }

    bool operator==(const CompletionResponse&) const = default;
};

/// Canonical JSON of the fields that identify a request.
inline json canonical_json(const CompletionRequest& req) {
    json messages = json::array();
    for (const auto& m : req.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return {{"model", req.model_name},
            {"messages", messages},
            {"max_tokens", req.max_tokens},
            {"temperature", req.temperature},
            {"top_logprobs", req.top_logprobs}};
}

inline std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0x0f]);
    }
    return out;
}

/// Hex SHA-256 of the canonical request JSON; changes iff an identifying field changes.
inline std::string request_digest(const CompletionRequest& req) {
    return sha256_hex(canonical_json(req).dump());
}

// -inf logprobs have no JSON literal; they travel as null.
inline json logprob_to_json(double lp) { return std::isinf(lp) ? json(nullptr) : json(lp); }

inline double logprob_from_json(const json& j) {
    if (j.is_null()) return kNegInf;
    if (!j.is_number()) throw Error(ErrorCode::malformed_response, "logprob is not a number");
    return j.get<double>();
}

inline json to_json(const TokenDistribution& dist) {
    json entries = json::array();
    for (const auto& e : dist.entries()) entries.push_back(json::array({e.token, logprob_to_json(e.logprob)}));
    return {{"position", dist.position()}, {"entries", entries}};
}

inline TokenDistribution distribution_from_json(const json& j) {
    std::vector<TokenLogprob> entries;
    for (const auto& e : j.at("entries")) {
        entries.push_back({e.at(0).get<std::string>(), logprob_from_json(e.at(1))});
    }
    const auto n = entries.size();
    return TokenDistribution(std::move(entries), j.value("position", std::size_t{0}), std::max(n, kDefaultTopK));
}

inline json to_json(const CompletionResponse& resp) {
    json dists = json::array();
    for (const auto& d : resp.token_distributions) dists.push_back(to_json(d));
    return {{"tokens", resp.generated_tokens},
            {"distributions", dists},
            {"finish_reason", to_string(resp.finish_reason)}};
}

inline CompletionResponse response_from_json(const json& j) {
    try {
        CompletionResponse resp;
        resp.generated_tokens = j.at("tokens").get<std::vector<std::string>>();
        for (const auto& d : j.at("distributions")) resp.token_distributions.push_back(distribution_from_json(d));
        resp.finish_reason = finish_reason_from_string(j.value("finish_reason", "stop"));
        return resp;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::malformed_response, e.what());
    }
}

} // namespace confcal
