#pragma once

#include <algorithm>
#include <atomic>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "confcal/completion.hpp"

namespace confcal {

/// Anything that answers chat-completion requests with per-token top-K log-probabilities.
class Backend {
public:
    virtual ~Backend() = default;

    virtual CompletionResponse complete(const CompletionRequest& request) = 0;

    /// Per-token logprobs of `continuation` forced after `prompt`. Only some
    /// endpoints can do this; the default reports it as unsupported.
    virtual std::vector<double> score_continuation(const CompletionRequest& prompt, std::string_view continuation) {
        (void)prompt;
        throw Error(ErrorCode::unsupported_readout,
                    "backend cannot score forced continuation '" + std::string(continuation) + "'");
    }

    /// False when responses depend on call order, which forces sequential use.
    virtual bool order_independent() const { return true; }
};

/// Deterministic scripted backend. Entries keyed by request digest are
/// reusable; entries without a digest are handed out once each, in `index`
/// order (file order when absent).
///
/// Script JSONL, one object per line:
///   {"digest"?: str, "index"?: int, "tokens": [str...],
///    "distributions": [{token: logprob, ...}, ...], "finish_reason"?: str}
///   {"digest"?: str, "continuation": str, "token_logprobs": [real...]}
class MockBackend : public Backend {
public:
    MockBackend() = default;

    static MockBackend from_jsonl(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::file_not_found, "mock script " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return from_jsonl_string(ss.str(), path.string());
    }

    static MockBackend from_jsonl_string(std::string_view text, const std::string& origin = "<script>") {
        MockBackend mock;
        std::vector<std::pair<long long, CompletionResponse>> ordered;
        std::istringstream in{std::string(text)};
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                const auto j = nlohmann::ordered_json::parse(line);
                const std::string digest = j.value("digest", std::string{});
                if (j.contains("continuation")) {
                    mock.continuations_[{digest, j.at("continuation").get<std::string>()}] =
                        j.at("token_logprobs").get<std::vector<double>>();
                    continue;
                }
                auto resp = parse_entry(j);
                if (!digest.empty()) {
                    mock.by_digest_[digest] = std::move(resp);
                } else {
                    const long long index = j.value("index", static_cast<long long>(ordered.size()));
                    ordered.emplace_back(index, std::move(resp));
                }
            } catch (const Error& e) {
                throw Error(e.code(), origin + ":" + std::to_string(line_no) + ": " + e.detail());
            } catch (const std::exception& e) {
                throw Error(ErrorCode::schema_violation, origin + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        std::stable_sort(ordered.begin(), ordered.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto& [_, resp] : ordered) mock.queue_.push_back(std::move(resp));
        return mock;
    }

    MockBackend(MockBackend&& other) noexcept
        : by_digest_(std::move(other.by_digest_)),
          queue_(std::move(other.queue_)),
          continuations_(std::move(other.continuations_)),
          calls_(other.calls_.load()) {}

    void add(const std::string& digest, CompletionResponse response) {
        std::lock_guard lock(mutex_);
        by_digest_[digest] = std::move(response);
    }

    void add(const CompletionRequest& request, CompletionResponse response) {
        add(request_digest(request), std::move(response));
    }

    void add_ordered(CompletionResponse response) {
        std::lock_guard lock(mutex_);
        queue_.push_back(std::move(response));
    }

    void add_continuation(const std::string& digest, std::string continuation, std::vector<double> token_logprobs) {
        std::lock_guard lock(mutex_);
        continuations_[{digest, std::move(continuation)}] = std::move(token_logprobs);
    }

    CompletionResponse complete(const CompletionRequest& request) override {
        ++calls_;
        const auto digest = request_digest(request);
        std::lock_guard lock(mutex_);
        if (auto it = by_digest_.find(digest); it != by_digest_.end()) return it->second;
        if (queue_.empty()) {
            throw Error(ErrorCode::mock_script_exhausted, "no scripted response for digest " + digest);
        }
        auto resp = std::move(queue_.front());
        queue_.pop_front();
        return resp;
    }

    std::vector<double> score_continuation(const CompletionRequest& prompt, std::string_view continuation) override {
        ++calls_;
        const auto digest = request_digest(prompt);
        std::lock_guard lock(mutex_);
        for (const auto& key : {std::pair{digest, std::string(continuation)}, std::pair{std::string{}, std::string(continuation)}}) {
            if (auto it = continuations_.find(key); it != continuations_.end()) return it->second;
        }
        throw Error(ErrorCode::mock_script_exhausted, "no scripted continuation '" + std::string(continuation) + "'");
    }

    bool order_independent() const override {
        std::lock_guard lock(mutex_);
        return queue_.empty();
    }

    std::size_t calls() const noexcept { return calls_.load(); }

    /// A response of the given tokens, each with a single-entry distribution at logprob 0.
    static CompletionResponse echo(const std::vector<std::string>& tokens) {
        CompletionResponse resp;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            resp.generated_tokens.push_back(tokens[i]);
            resp.token_distributions.emplace_back(std::vector<TokenLogprob>{{tokens[i], 0.0}}, i);
        }
        return resp;
    }

    /// One script line answering `digest` (empty digest: an ordered entry).
    static std::string script_line(const std::string& digest, const CompletionResponse& resp) {
        nlohmann::ordered_json j;
        if (!digest.empty()) j["digest"] = digest;
        j["tokens"] = resp.generated_tokens;
        j["distributions"] = nlohmann::ordered_json::array();
        for (const auto& d : resp.token_distributions) {
            nlohmann::ordered_json entries = nlohmann::ordered_json::object();
            for (const auto& e : d.entries()) {
                entries[e.token] = std::isinf(e.logprob) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(e.logprob);
            }
            j["distributions"].push_back(std::move(entries));
        }
        j["finish_reason"] = std::string(to_string(resp.finish_reason));
        return j.dump();
    }

private:
    static CompletionResponse parse_entry(const nlohmann::ordered_json& j) {
        CompletionResponse resp;
        resp.generated_tokens = j.at("tokens").get<std::vector<std::string>>();
        std::size_t pos = 0;
        for (const auto& d : j.at("distributions")) {
            std::vector<TokenLogprob> entries;
            for (const auto& [tok, lp] : d.items()) {
                if (!lp.is_null() && !lp.is_number()) throw Error(ErrorCode::schema_violation, "logprob of '" + tok + "'");
                entries.push_back({tok, lp.is_null() ? kNegInf : lp.get<double>()});
            }
            const auto n = entries.size();
            resp.token_distributions.emplace_back(std::move(entries), pos++, std::max(n, kDefaultTopK));
        }
        if (resp.token_distributions.size() != resp.generated_tokens.size()) {
            throw Error(ErrorCode::schema_violation, "distributions must match tokens one-to-one");
        }
        resp.finish_reason = finish_reason_from_string(j.value("finish_reason", "stop"));
        return resp;
    }

    mutable std::mutex mutex_;
    std::map<std::string, CompletionResponse> by_digest_;
    std::deque<CompletionResponse> queue_;
    std::map<std::pair<std::string, std::string>, std::vector<double>> continuations_;
    std::atomic<std::size_t> calls_{0};
};

} // namespace confcal
