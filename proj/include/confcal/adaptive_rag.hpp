#pragma once

// Confidence-gated retrieval: answer without context, retrieve only when the
// self-evaluated confidence falls below a threshold, and keep the
// second-pass answer only if it is strictly more confident.

#include <algorithm>
#include <atomic>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "confcal/harness.hpp"
#include "confcal/http_backend.hpp"
#include "confcal/report_io.hpp"

namespace confcal {

inline constexpr std::string_view kFlagRetrievalMiss = "retrieval_miss";

class Retriever {
public:
    virtual ~Retriever() = default;
    /// Context for `example`; throws RetrievalMiss when none can be produced.
    virtual std::string retrieve(const DatasetExample& example) = 0;
};

/// Serves contexts shipped with the dataset, or from an explicit id -> context table.
class StaticRetriever : public Retriever {
public:
    StaticRetriever() = default;
    explicit StaticRetriever(std::map<std::string, std::string> contexts) : contexts_(std::move(contexts)) {}

    std::string retrieve(const DatasetExample& example) override {
        if (auto it = contexts_.find(example.id); it != contexts_.end()) return it->second;
        if (example.context) return *example.context;
        throw Error(ErrorCode::retrieval_miss, "no static context for '" + example.id + "'");
    }

private:
    std::map<std::string, std::string> contexts_;
};

struct HttpRetrieverOptions {
    std::string url;  // full endpoint, e.g. http://localhost:8080/retrieve
    std::size_t top_k = 5;
    ContextBudget budget;
    std::chrono::seconds timeout{30};
};

/// POST {"query", "top_k"} -> {"passages": [{"text"}]}.
class HttpRetriever : public Retriever {
public:
    explicit HttpRetriever(HttpRetrieverOptions options)
        : options_(std::move(options)), url_(split_base_url(options_.url)) {}

    std::string retrieve(const DatasetExample& example) override {
        httplib::Client client(url_.scheme_host_port);
        client.set_connection_timeout(options_.timeout);
        client.set_read_timeout(options_.timeout);
        const json body = {{"query", example.input}, {"top_k", options_.top_k}};
        auto res = client.Post(url_.path_prefix.empty() ? "/" : url_.path_prefix, body.dump(), "application/json");
        if (!res) throw Error(ErrorCode::endpoint_unreachable, options_.url + ": " + httplib::to_string(res.error()));
        if (res->status != 200) {
            throw Error(ErrorCode::endpoint_error, options_.url + " returned " + std::to_string(res->status));
        }
        try {
            std::vector<std::string> docs;
            const auto reply = json::parse(res->body);
            for (const auto& p : reply.at("passages")) docs.push_back(p.at("text").get<std::string>());
            return join_documents(docs, options_.budget);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::malformed_response, std::string("retriever: ") + e.what());
        }
    }

private:
    HttpRetrieverOptions options_;
    BaseUrl url_;
};

struct PassResult {
    std::string answer;
    double confidence = 0.0;
    std::set<std::string> flags;
};

struct AdaptiveOutcome {
    std::string id;
    std::string first_answer;
    double first_conf = 0.0;
    bool retrieved = false;
    std::optional<std::string> second_answer;
    std::optional<double> second_conf;
    std::string final_answer;
    double final_conf = 0.0;
    std::set<std::string> flags;
};

/// Answer plus self-evaluated confidence, with or without context. A skipped
/// self-evaluation (both anchors missing under the skip policy) counts as 0.5.
inline PassResult answer_pass(const DatasetExample& example, ModelClient& client,
                              const std::optional<std::string>& context) {
    PassResult out;
    out.answer = client.generate_answer(example.input, context).text;
    if (auto conf = client.self_evaluate(example.input, out.answer, context)) {
        out.confidence = conf->value;
        for (const auto& f : conf->flags.names()) out.flags.insert(f);
    } else {
        out.confidence = 0.5;
        out.flags.insert(std::string(kFlagSkipped));
    }
    return out;
}

/// Second pass with retrieved context; nullopt (flagged) on a retrieval miss.
inline std::optional<PassResult> retrieval_pass(const DatasetExample& example, ModelClient& client,
                                                Retriever& retriever) {
    std::string context;
    try {
        context = retriever.retrieve(example);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::retrieval_miss) throw;
        return std::nullopt;
    }
    return answer_pass(example, client, context);
}

/// Combines the passes: retrieve iff first_conf < tau; switch iff second_conf > first_conf.
inline AdaptiveOutcome resolve_outcome(const std::string& id, const PassResult& first, double tau,
                                       const std::optional<PassResult>& second) {
    AdaptiveOutcome out;
    out.id = id;
    out.first_answer = first.answer;
    out.first_conf = first.confidence;
    out.flags = first.flags;
    out.retrieved = first.confidence < tau;
    out.final_answer = first.answer;
    out.final_conf = first.confidence;
    if (!out.retrieved) return out;
    if (!second) {
        out.flags.insert(std::string(kFlagRetrievalMiss));
        return out;
    }
    out.second_answer = second->answer;
    out.second_conf = second->confidence;
    if (second->confidence > first.confidence) {
        out.final_answer = second->answer;
        out.final_conf = second->confidence;
    }
    return out;
}

inline AdaptiveOutcome answer_adaptive(const DatasetExample& example, double tau, ModelClient& client,
                                       Retriever& retriever) {
    if (!(tau >= 0.0)) throw Error(ErrorCode::invalid_argument, "tau must be >= 0");
    const auto first = answer_pass(example, client, std::nullopt);
    std::optional<PassResult> second;
    if (first.confidence < tau) second = retrieval_pass(example, client, retriever);
    return resolve_outcome(example.id, first, tau, second);
}

struct SweepRow {
    double tau = 0.0;
    double retrieval_rate_pct = 0.0;
    double accuracy_pct = 0.0;
    double gain_pp = 0.0;
    std::optional<double> efficiency;  // undefined at 0% retrieval
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::vector<AdaptiveOutcome>> outcomes;  // per tau, in example order
    double baseline_accuracy_pct = 0.0;                  // never-retrieve accuracy of this run
    std::size_t first_passes = 0;
    std::size_t second_passes = 0;
};

/// Threshold sweep. First passes run once per example and are shared by every
/// tau; second passes run once per example that any tau sends to retrieval.
inline SweepResult sweep(std::span<const DatasetExample> examples, std::span<const double> taus, ModelClient& client,
                         Retriever& retriever, Matcher matcher) {
    if (taus.empty()) throw Error(ErrorCode::config_invalid, "taus: at least one threshold is required");
    for (double t : taus) {
        if (!(t >= 0.0)) throw Error(ErrorCode::config_invalid, "taus: thresholds must be >= 0");
    }
    SweepResult result;
    const std::size_t workers = client.parallelism();
    const auto firsts = parallel_map(examples.size(), workers, [&](std::size_t i) {
        return answer_pass(examples[i], client, std::nullopt);
    });
    result.first_passes = firsts.size();

    const double max_tau = *std::max_element(taus.begin(), taus.end());
    std::vector<std::size_t> need;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (firsts[i].confidence < max_tau) need.push_back(i);
    }
    const auto seconds_needed = parallel_map(need.size(), workers, [&](std::size_t k) {
        return retrieval_pass(examples[need[k]], client, retriever);
    });
    result.second_passes = need.size();
    std::vector<std::optional<PassResult>> seconds(examples.size());
    for (std::size_t k = 0; k < need.size(); ++k) seconds[need[k]] = seconds_needed[k];

    auto correct = [&](std::size_t i, const std::string& answer) {
        return match_answer(answer, examples[i].gold, matcher).correct;
    };
    const double n = static_cast<double>(examples.size());
    std::size_t baseline_hits = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) baseline_hits += correct(i, firsts[i].answer) ? 1 : 0;
    result.baseline_accuracy_pct = n > 0 ? 100.0 * static_cast<double>(baseline_hits) / n : 0.0;

    for (double tau : taus) {
        std::vector<AdaptiveOutcome> outcomes;
        std::size_t retrieved = 0;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            auto o = resolve_outcome(examples[i].id, firsts[i], tau, seconds[i]);
            retrieved += o.retrieved ? 1 : 0;
            hits += correct(i, o.final_answer) ? 1 : 0;
            outcomes.push_back(std::move(o));
        }
        SweepRow row;
        row.tau = tau;
        row.retrieval_rate_pct = n > 0 ? 100.0 * static_cast<double>(retrieved) / n : 0.0;
        row.accuracy_pct = n > 0 ? 100.0 * static_cast<double>(hits) / n : 0.0;
        row.gain_pp = row.accuracy_pct - result.baseline_accuracy_pct;
        if (row.retrieval_rate_pct > 0.0) row.efficiency = retrieval_efficiency(row.gain_pp, row.retrieval_rate_pct);
        result.rows.push_back(row);
        result.outcomes.push_back(std::move(outcomes));
    }
    return result;
}

inline std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "tau,retrieval_pct,accuracy_pct,gain_pp,efficiency\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{}\n", fixed6(r.tau), fixed6(r.retrieval_rate_pct), fixed6(r.accuracy_pct),
                           fixed6(r.gain_pp), r.efficiency ? fixed6(*r.efficiency) : std::string("NA"));
    }
    return out;
}

} // namespace confcal
