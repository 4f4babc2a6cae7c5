#pragma once

// Run configuration shared by the command-line subcommands, plus the
// factories that turn it into a backend, cache and client.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "confcal/adaptive_rag.hpp"
#include "confcal/backend.hpp"
#include "confcal/cache.hpp"
#include "confcal/client.hpp"
#include "confcal/http_backend.hpp"
#include "confcal/sandbox.hpp"

namespace confcal {

inline constexpr std::uint64_t kDefaultSeed = 20240917;

inline MissingPolicy missing_policy_from_string(std::string_view s) {
    if (s == "error") return MissingPolicy::error;
    if (s == "neutral") return MissingPolicy::neutral;
    if (s == "skip") return MissingPolicy::skip;
    throw Error(ErrorCode::config_invalid, "missing_policy: unknown value '" + std::string(s) + "'");
}

inline ReadoutMode readout_from_string(std::string_view s) {
    if (s == "first_token") return ReadoutMode::first_token;
    if (s == "full_sequence") return ReadoutMode::full_sequence;
    throw Error(ErrorCode::config_invalid, "readout: unknown value '" + std::string(s) + "'");
}

struct RunConfig {
    // endpoint, or a mock script; exactly one
    std::string base_url;
    std::string api_key_env = "CONFCAL_API_KEY";
    std::string model_name = "mock";
    std::string mock_script;
    int max_retries = 3;
    long timeout_ms = 60'000;
    long backoff_ms = 500;

    std::string task_path;
    std::string dataset_path;
    std::string confidence_mode = "normalized";
    std::size_t bins = kDefaultBinCount;
    std::string missing_policy = "neutral";
    std::string readout = "first_token";
    std::size_t concurrency = 8;
    std::string cache_path;
    std::string output_dir = "out";
    std::uint64_t seed = kDefaultSeed;

    // retrieval: "static" serves dataset contexts, anything else is a retriever URL
    std::string retriever = "static";
    std::size_t retrieval_top_k = 5;
    std::size_t max_documents = 5;
    std::size_t max_doc_tokens = 2000;
    std::vector<double> taus;

    sandbox::SandboxConfig sandbox;
};

namespace detail {

[[noreturn]] inline void config_error(std::string_view field, std::string_view what) {
    throw Error(ErrorCode::config_invalid, std::string(field) + ": " + std::string(what));
}

} // namespace detail

inline void validate_backend(const RunConfig& cfg) {
    if (cfg.base_url.empty() == cfg.mock_script.empty()) {
        detail::config_error("endpoint", "configure exactly one of base_url or mock_script");
    }
    if (!cfg.base_url.empty()) {
        if (cfg.model_name.empty()) detail::config_error("model_name", "required with base_url");
        if (cfg.api_key_env.empty()) detail::config_error("api_key_env", "required with base_url");
        if (cfg.max_retries < 0) detail::config_error("max_retries", "must be >= 0");
        if (cfg.timeout_ms <= 0) detail::config_error("timeout_ms", "must be > 0");
        if (cfg.backoff_ms < 0) detail::config_error("backoff_ms", "must be >= 0");
    }
    if (cfg.concurrency == 0) detail::config_error("concurrency", "must be >= 1");
    missing_policy_from_string(cfg.missing_policy);
    readout_from_string(cfg.readout);
}

inline void validate_eval(const RunConfig& cfg) {
    validate_backend(cfg);
    if (cfg.task_path.empty()) detail::config_error("task path (task)", "required");
    if (cfg.dataset_path.empty()) detail::config_error("dataset path (dataset)", "required");
    if (cfg.output_dir.empty()) detail::config_error("output directory (out)", "required");
    if (cfg.bins == 0) detail::config_error("bins", "must be >= 1");
    confidence_mode_from_string(cfg.confidence_mode);
}

inline void validate_sweep(const RunConfig& cfg) {
    validate_backend(cfg);
    if (cfg.task_path.empty()) detail::config_error("task path (task)", "required");
    if (cfg.dataset_path.empty()) detail::config_error("dataset path (dataset)", "required");
    if (cfg.output_dir.empty()) detail::config_error("output directory (out)", "required");
    if (cfg.taus.empty()) detail::config_error("taus", "at least one threshold is required");
    for (double t : cfg.taus) {
        if (!(t >= 0.0)) detail::config_error("taus", "thresholds must be >= 0");
    }
    if (cfg.retriever.empty()) detail::config_error("retriever", "use 'static' or a retriever URL");
}

inline void validate_sandbox(const RunConfig& cfg) {
    const auto& s = cfg.sandbox;
    if (s.data_distribution.size() < 2) detail::config_error("sandbox.data_distribution", "needs at least 2 options");
    if (s.steps == 0) detail::config_error("sandbox.steps", "must be >= 1");
    if (!(s.lr > 0.0)) detail::config_error("sandbox.lr", "must be > 0");
    if (s.batch_size == 0) detail::config_error("sandbox.batch_size", "must be >= 1");
    if (!(s.clip_eps > 0.0 && s.clip_eps < 1.0)) detail::config_error("sandbox.clip_eps", "must lie in (0,1)");
    if (!(s.kl_coef >= 0.0)) detail::config_error("sandbox.kl_coef", "must be >= 0");
    if (!(s.dpo_beta > 0.0)) detail::config_error("sandbox.dpo_beta", "must be > 0");
    if (s.trace_every == 0) detail::config_error("sandbox.trace_every", "must be >= 1");
    if (s.rewards && s.rewards->size() != s.data_distribution.size()) {
        detail::config_error("sandbox.rewards", "one reward per option is required");
    }
    if (cfg.output_dir.empty()) detail::config_error("output directory (out)", "required");
}

inline std::shared_ptr<Backend> make_backend(const RunConfig& cfg) {
    validate_backend(cfg);
    if (!cfg.mock_script.empty()) return std::make_shared<MockBackend>(MockBackend::from_jsonl(cfg.mock_script));
    HttpBackendOptions opts;
    opts.base_url = cfg.base_url;
    if (const char* key = std::getenv(cfg.api_key_env.c_str())) opts.api_key = key;
    opts.timeout = std::chrono::milliseconds(cfg.timeout_ms);
    opts.max_retries = cfg.max_retries;
    opts.initial_backoff = std::chrono::milliseconds(cfg.backoff_ms);
    return std::make_shared<HttpBackend>(std::move(opts));
}

inline ClientOptions client_options(const RunConfig& cfg) {
    ClientOptions opts;
    opts.model_name = cfg.model_name;
    opts.max_in_flight = cfg.concurrency;
    opts.missing_policy = missing_policy_from_string(cfg.missing_policy);
    opts.readout = readout_from_string(cfg.readout);
    return opts;
}

inline ModelClient make_client(const RunConfig& cfg) {
    auto backend = make_backend(cfg);
    std::shared_ptr<ResponseCache> cache;
    if (!cfg.cache_path.empty()) cache = std::make_shared<ResponseCache>(cfg.cache_path);
    return ModelClient(std::move(backend), client_options(cfg), std::move(cache));
}

inline ContextBudget context_budget(const RunConfig& cfg) { return {cfg.max_documents, cfg.max_doc_tokens}; }

inline std::unique_ptr<Retriever> make_retriever(const RunConfig& cfg) {
    if (cfg.retriever == "static") return std::make_unique<StaticRetriever>();
    return std::make_unique<HttpRetriever>(HttpRetrieverOptions{cfg.retriever, cfg.retrieval_top_k, context_budget(cfg)});
}

} // namespace confcal
