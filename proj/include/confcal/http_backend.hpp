#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>

#include "confcal/backend.hpp"

namespace confcal {

struct BaseUrl {
    std::string scheme_host_port;  // "https://api.example.com:443"
    std::string path_prefix;       // "/v1", may be empty
};

inline BaseUrl split_base_url(std::string_view url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) {
        throw Error(ErrorCode::config_invalid, "base url '" + std::string(url) + "' lacks a scheme");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string_view::npos) return {std::string(url), ""};
    std::string prefix(url.substr(path_start));
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {std::string(url.substr(0, path_start)), prefix};
}

/// Request body in the de-facto chat-completions wire format.
inline json chat_request_body(const CompletionRequest& req) {
    json messages = json::array();
    for (const auto& m : req.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return {{"model", req.model_name},
            {"messages", messages},
            {"max_tokens", req.max_tokens},
            {"temperature", req.temperature},
            {"logprobs", true},
            {"top_logprobs", req.top_logprobs}};
}

/// Parses a chat-completions response body. Every generated position must
/// carry `top_logprobs`; surface-identical tokens are merged by summing
/// probability, and distributions are truncated to the `k` most probable.
inline CompletionResponse parse_chat_response(std::string_view body, std::size_t k = kDefaultTopK) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::malformed_response, std::string("invalid JSON: ") + e.what());
    }
    try {
        const auto& choice = j.at("choices").at(0);
        const auto& lp = choice.at("logprobs");
        if (!lp.is_object() || !lp.contains("content") || !lp.at("content").is_array()) {
            throw Error(ErrorCode::malformed_response, "response carries no logprobs");
        }
        CompletionResponse resp;
        std::size_t pos = 0;
        for (const auto& item : lp.at("content")) {
            resp.generated_tokens.push_back(item.at("token").get<std::string>());
            if (!item.contains("top_logprobs") || !item.at("top_logprobs").is_array()) {
                throw Error(ErrorCode::malformed_response, "position " + std::to_string(pos) + " lacks top_logprobs");
            }
            std::vector<TokenLogprob> entries;
            for (const auto& alt : item.at("top_logprobs")) {
                auto tok = alt.at("token").get<std::string>();
                double value = logprob_from_json(alt.at("logprob"));
                // servers occasionally emit rounding noise just above zero
                if (value > 0.0 && value <= 1e-6) value = 0.0;
                auto same = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.token == tok; });
                if (same == entries.end()) {
                    entries.push_back({std::move(tok), value});
                } else {
                    const double pair[] = {same->logprob, value};
                    same->logprob = std::min(0.0, log_sum_exp(pair));
                }
            }
            resp.token_distributions.push_back(TokenDistribution::top_k(std::move(entries), k, pos));
            ++pos;
        }
        resp.finish_reason = finish_reason_from_string(choice.value("finish_reason", "stop"));
        return resp;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::malformed_response, e.what());
    }
}

struct HttpBackendOptions {
    std::string base_url;
    std::string api_key;
    std::chrono::milliseconds timeout{60'000};
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::size_t truncation = kDefaultTopK;
};

/// Chat-completions endpoint over HTTP(S). Rate limits, server errors and
/// connection failures are retried with exponential backoff.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendOptions options)
        : options_(std::move(options)), url_(split_base_url(options_.base_url)) {}

    CompletionResponse complete(const CompletionRequest& request) override {
        const std::string body = chat_request_body(request).dump();
        const std::string path = url_.path_prefix + "/chat/completions";
        Error last(ErrorCode::endpoint_unreachable, options_.base_url);

        for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(options_.initial_backoff * (1 << (attempt - 1)));

            httplib::Client client(url_.scheme_host_port);
            client.set_connection_timeout(options_.timeout);
            client.set_read_timeout(options_.timeout);
            httplib::Headers headers;
            if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

            auto res = client.Post(path, headers, body, "application/json");
            if (!res) {
                last = Error(ErrorCode::endpoint_unreachable,
                             options_.base_url + ": " + httplib::to_string(res.error()));
                continue;
            }
            if (res->status == 429) {
                last = Error(ErrorCode::rate_limited, options_.base_url + " returned 429");
                continue;
            }
            if (res->status >= 500) {
                last = Error(ErrorCode::endpoint_error, options_.base_url + " returned " + std::to_string(res->status));
                continue;
            }
            if (res->status != 200) {
                throw Error(ErrorCode::endpoint_error,
                            options_.base_url + " returned " + std::to_string(res->status) + ": " + res->body);
            }
            return parse_chat_response(res->body, options_.truncation);
        }
        throw last;
    }

private:
    HttpBackendOptions options_;
    BaseUrl url_;
};

} // namespace confcal
