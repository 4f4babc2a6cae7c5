#pragma once

#include <atomic>
#include <cctype>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "confcal/backend.hpp"
#include "confcal/cache.hpp"
#include "confcal/confidence.hpp"

namespace confcal {

inline constexpr std::string_view kSelfEvalPrompt = "Is this answer correct? Answer only Yes/No.";

/// Prompt templates. Placeholders: {input} {options} for classification;
/// {context} {question} for the context-bearing user turn.
struct PromptTemplates {
    std::string classification = "{input}\n\n{options}\n\nAnswer with exactly one option label.";
    std::string question_with_context = "Context:\n{context}\n\nQuestion: {question}";
    std::string self_eval = std::string(kSelfEvalPrompt);
    std::string system;  // empty: no system turn
};

inline std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    for (std::size_t i = 0; i < tmpl.size();) {
        if (tmpl[i] == '{') {
            const auto close = tmpl.find('}', i);
            if (close != std::string_view::npos) {
                auto it = vars.find(std::string(tmpl.substr(i + 1, close - i - 1)));
                if (it != vars.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

/// A classification label and the answer tokens that count as choosing it.
struct Label {
    std::string name;
    std::vector<std::string> aliases;  // empty: {name, " " + name}

    std::vector<std::string> effective_aliases() const {
        if (!aliases.empty()) return aliases;
        return {name, " " + name};
    }

    bool operator==(const Label&) const = default;
};

/// True if `alias` can plausibly be a single token: non-empty, no whitespace
/// except one optional leading space.
inline bool is_single_token_alias(std::string_view alias) {
    if (!alias.empty() && alias.front() == ' ') alias.remove_prefix(1);
    if (alias.empty()) return false;
    for (unsigned char c : alias) {
        if (std::isspace(c)) return false;
    }
    return true;
}

enum class ReadoutMode { first_token, full_sequence };

struct ClientOptions {
    std::string model_name = "mock";
    int top_logprobs = static_cast<int>(kDefaultTopK);
    std::size_t truncation = kDefaultTopK;
    double answer_temperature = 0.0;
    int answer_max_tokens = 512;
    std::size_t max_in_flight = 8;
    AnchorAliases anchors = AnchorAliases::defaults();
    MissingPolicy missing_policy = MissingPolicy::neutral;
    ReadoutMode readout = ReadoutMode::first_token;
    PromptTemplates templates;
};

struct Classification {
    std::string label;
    ConfidenceScore confidence;
    double raw_probability = 0.0;        // unnormalized probability of the chosen label
    std::vector<CandidateScore> scores;  // per label, input order
};

struct GeneratedAnswer {
    std::string text;
    std::vector<std::string> tokens;
};

class ModelClient {
public:
    ModelClient(std::shared_ptr<Backend> backend, ClientOptions options,
                std::shared_ptr<ResponseCache> cache = nullptr)
        : backend_(std::move(backend)),
          options_(std::move(options)),
          cache_(std::move(cache)),
          slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options_.max_in_flight))) {
        if (!backend_) throw Error(ErrorCode::config_invalid, "model client needs a backend");
    }

    const ClientOptions& options() const noexcept { return options_; }

    /// Workers callers may usefully run in parallel against this client.
    std::size_t parallelism() const {
        return backend_->order_independent() ? std::max<std::size_t>(1, options_.max_in_flight) : 1;
    }

    CompletionResponse complete(const CompletionRequest& request) {
        const auto digest = request_digest(request);
        if (cache_) {
            if (auto hit = cache_->lookup(digest)) {
                ++cache_hits_;
                return *hit;
            }
        }
        CompletionResponse resp;
        {
            slots_.acquire();
            struct Release {
                std::counting_semaphore<>& s;
                ~Release() { s.release(); }
            } release{slots_};
            ++backend_calls_;
            resp = backend_->complete(request);
        }
        if (request.top_logprobs > 0 && resp.token_distributions.size() != resp.generated_tokens.size()) {
            throw Error(ErrorCode::malformed_response, "token distributions do not cover every generated token");
        }
        for (auto& d : resp.token_distributions) {
            if (d.size() > options_.truncation) {
                d = TokenDistribution::top_k(std::vector<TokenLogprob>(d.entries().begin(), d.entries().end()),
                                             options_.truncation, d.position());
            }
        }
        if (cache_) cache_->store(digest, resp);
        return resp;
    }

    // Request builders are public so scripts and caches can be keyed ahead of time.

    CompletionRequest classification_request(std::string_view input, std::span<const Label> labels,
                                             std::span<const std::string> choices = {}) const {
        if (!choices.empty() && choices.size() != labels.size()) {
            throw Error(ErrorCode::invalid_input, "choices must pair one-to-one with labels");
        }
        std::string options;
        if (choices.empty()) {
            options = "Options: ";
            for (std::size_t i = 0; i < labels.size(); ++i) options += (i ? ", " : "") + labels[i].name;
        } else {
            for (std::size_t i = 0; i < labels.size(); ++i) {
                options += (i ? "\n" : "") + labels[i].name + ". " + choices[i];
            }
        }
        auto messages = preamble();
        messages.push_back({Role::user, render_template(options_.templates.classification,
                                                        {{"input", std::string(input)}, {"options", options}})});
        return {std::move(messages), 1, 0.0, options_.top_logprobs, options_.model_name};
    }

    CompletionRequest answer_request(std::string_view question, const std::optional<std::string>& context) const {
        auto messages = preamble();
        messages.push_back({Role::user, user_turn(question, context)});
        return {std::move(messages), options_.answer_max_tokens, options_.answer_temperature, 1, options_.model_name};
    }

    CompletionRequest self_eval_request(std::string_view question, std::string_view answer,
                                        const std::optional<std::string>& context) const {
        auto messages = preamble();
        messages.push_back({Role::user, user_turn(question, context)});
        messages.push_back({Role::assistant, std::string(answer)});
        messages.push_back({Role::user, options_.templates.self_eval});
        return {std::move(messages), 1, 0.0, options_.top_logprobs, options_.model_name};
    }

    /// Picks a label and its confidence normalized over the label set. Ties in
    /// score go to the alphabetically first label.
    Classification classify(std::string_view input, std::span<const Label> labels,
                            std::span<const std::string> choices = {}) {
        check_labels(labels);
        const auto request = classification_request(input, labels, choices);

        Classification out;
        if (options_.readout == ReadoutMode::full_sequence) {
            for (const auto& label : labels) {
                const auto lps = backend_->score_continuation(request, label.name);
                out.scores.push_back({label.name, sequence_logprob(lps)});
            }
        } else {
            const auto resp = complete(request);
            if (resp.token_distributions.empty()) {
                throw Error(ErrorCode::malformed_response, "classification response has no token distribution");
            }
            const auto& dist = resp.token_distributions.front();
            for (const auto& label : labels) {
                const auto aliases = label.effective_aliases();
                out.scores.push_back({label.name, alias_log_mass(dist, {aliases.begin(), aliases.end()})});
            }
        }

        const CandidateScore* best = nullptr;
        for (const auto& s : out.scores) {
            if (s.sequence_logprob == kNegInf) continue;
            if (!best || s.sequence_logprob > best->sequence_logprob ||
                (s.sequence_logprob == best->sequence_logprob && s.candidate_id < best->candidate_id)) {
                best = &s;
            }
        }
        if (!best) throw Error(ErrorCode::no_label_token_present, "no label alias in the top-K distribution");
        out.label = best->candidate_id;
        out.raw_probability = std::exp(best->sequence_logprob);
        out.confidence = normalized_confidence(out.scores, out.label);
        return out;
    }

    GeneratedAnswer generate_answer(std::string_view question, const std::optional<std::string>& context = std::nullopt) {
        if (question.find_first_not_of(" \t\r\n") == std::string_view::npos) {
            throw Error(ErrorCode::invalid_input, "empty question");
        }
        auto resp = complete(answer_request(question, context));
        return {resp.text(), std::move(resp.generated_tokens)};
    }

    /// First-position distribution of the Yes/No self-evaluation turn.
    TokenDistribution self_eval_distribution(std::string_view question, std::string_view answer,
                                             const std::optional<std::string>& context = std::nullopt) {
        const auto resp = complete(self_eval_request(question, answer, context));
        if (resp.token_distributions.empty()) {
            throw Error(ErrorCode::malformed_response, "self-evaluation response has no token distribution");
        }
        return resp.token_distributions.front();
    }

    /// Normalized Yes/No confidence; nullopt when both anchors are missing under the skip policy.
    std::optional<ConfidenceScore> self_evaluate(std::string_view question, std::string_view answer,
                                                 const std::optional<std::string>& context = std::nullopt) {
        return self_eval_confidence(self_eval_distribution(question, answer, context), options_.anchors,
                                    options_.missing_policy);
    }

    std::size_t backend_calls() const noexcept { return backend_calls_.load(); }
    std::size_t cache_hits() const noexcept { return cache_hits_.load(); }

private:
    std::vector<ChatMessage> preamble() const {
        if (options_.templates.system.empty()) return {};
        return {{Role::system, options_.templates.system}};
    }

    std::string user_turn(std::string_view question, const std::optional<std::string>& context) const {
        if (!context || context->empty()) return std::string(question);
        return render_template(options_.templates.question_with_context,
                               {{"context", *context}, {"question", std::string(question)}});
    }

    void check_labels(std::span<const Label> labels) const {
        if (labels.empty()) throw Error(ErrorCode::invalid_input, "empty label set");
        std::map<std::string, std::string> owner;
        for (const auto& label : labels) {
            const auto aliases = label.effective_aliases();
            if (options_.readout == ReadoutMode::first_token &&
                std::none_of(aliases.begin(), aliases.end(), [](const auto& a) { return is_single_token_alias(a); })) {
                throw Error(ErrorCode::unmappable_label, "label '" + label.name + "' has no single-token alias");
            }
            for (const auto& a : aliases) {
                auto [it, inserted] = owner.emplace(a, label.name);
                if (!inserted && it->second != label.name) {
                    throw Error(ErrorCode::alias_overlap,
                                "alias '" + a + "' shared by '" + it->second + "' and '" + label.name + "'");
                }
            }
        }
    }

    std::shared_ptr<Backend> backend_;
    ClientOptions options_;
    std::shared_ptr<ResponseCache> cache_;
    std::counting_semaphore<> slots_;
    std::atomic<std::size_t> backend_calls_{0};
    std::atomic<std::size_t> cache_hits_{0};
};

} // namespace confcal
