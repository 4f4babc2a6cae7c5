#pragma once

// Deterministic synthetic scenarios with digest-keyed mock scripts: an
// arithmetic QA task with retrievable contexts (generation + self-evaluation)
// and a four-way multiple-choice task (label readout). Used by the demo
// samples and the end-to-end tests.

#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "confcal/backend.hpp"
#include "confcal/client.hpp"
#include "confcal/harness.hpp"

namespace confcal::synthetic {

struct Scenario {
    json task;
    std::string dataset_jsonl;
    std::string script_jsonl;
    std::vector<DatasetExample> examples;
};

/// Plan for one arithmetic question: the closed-book and with-context answers and their self-evaluated confidences.
struct QaPlan {
    long long gold = 0;
    long long first_answer = 0;
    double first_conf = 0.0;
    long long second_answer = 0;
    double second_conf = 0.0;
};

inline QaPlan qa_plan(std::size_t i, std::size_t n) {
    QaPlan p;
    const long long a = 3 + static_cast<long long>((i * 7) % 41);
    const long long b = 5 + static_cast<long long>((i * 13) % 37);
    p.gold = a + b;
    // distinct confidences spread over [0.02, 0.98]
    p.first_conf = std::round((0.02 + 0.96 * static_cast<double>((i * 17) % n) / static_cast<double>(n)) * 1000) / 1000;
    const bool first_right = static_cast<double>((i * 29) % n) / static_cast<double>(n) < p.first_conf;
    p.first_answer = first_right ? p.gold : p.gold + 1 + static_cast<long long>(i % 3);
    p.second_answer = i % 10 == 3 ? p.gold - 2 : p.gold;
    if (i % 10 == 7) {
        p.second_conf = p.first_conf;  // tie keeps the first answer
    } else if (i % 4 == 1) {
        p.second_conf = std::max(0.005, p.first_conf - 0.01);
    } else {
        p.second_conf = 0.97;
    }
    return p;
}

inline std::vector<std::string> answer_tokens(long long value) {
    return {"The", " sum", " is", " " + std::to_string(value), "."};
}

inline CompletionResponse yes_no(double p_yes) {
    CompletionResponse resp;
    resp.generated_tokens = {p_yes >= 0.5 ? "Yes" : "No"};
    std::vector<TokenLogprob> entries{{"Yes", std::log(p_yes)}, {"No", std::log1p(-p_yes)}};
    resp.token_distributions.emplace_back(std::move(entries), 0);
    return resp;
}

inline std::string qa_question(std::size_t i, std::size_t n) {
    const auto p = qa_plan(i, n);
    const long long a = 3 + static_cast<long long>((i * 7) % 41);
    return fmt::format("What is {} + {}?", a, p.gold - a);
}

/// Arithmetic QA with one retrievable context per question.
inline Scenario arithmetic_qa(std::size_t n, const ClientOptions& options = {}) {
    Scenario s;
    s.task = {{"task_id", "arith_qa"}, {"kind", "generation"}, {"matcher", "numeric"}, {"context_field", "context"}};
    const auto task = task_from_json(s.task);
    ModelClient client(std::make_shared<MockBackend>(), options);

    for (std::size_t i = 0; i < n; ++i) {
        const auto plan = qa_plan(i, n);
        DatasetExample ex;
        ex.id = fmt::format("q{:03}", i + 1);
        ex.input = qa_question(i, n);
        ex.gold = {std::to_string(plan.gold)};
        ex.context = fmt::format("Worked example: {} evaluates to {}.", ex.input.substr(8, ex.input.size() - 9),
                                 plan.second_answer);
        s.dataset_jsonl += json{{"id", ex.id}, {"input", ex.input}, {"gold", ex.gold.front()}, {"context", *ex.context}}
                               .dump() +
                           "\n";

        const auto question = render_template(task.prompt_template, {{"input", ex.input}});
        auto add = [&](const CompletionRequest& req, const CompletionResponse& resp) {
            s.script_jsonl += MockBackend::script_line(request_digest(req), resp) + "\n";
        };
        const auto first = MockBackend::echo(answer_tokens(plan.first_answer));
        add(client.answer_request(question, std::nullopt), first);
        add(client.self_eval_request(question, first.text(), std::nullopt), yes_no(plan.first_conf));
        const auto second = MockBackend::echo(answer_tokens(plan.second_answer));
        add(client.answer_request(question, ex.context), second);
        add(client.self_eval_request(question, second.text(), ex.context), yes_no(plan.second_conf));
        s.examples.push_back(std::move(ex));
    }
    return s;
}

/// Four-way multiple choice answered through the first-token label distribution.
inline Scenario multiple_choice(std::size_t n, const ClientOptions& options = {}) {
    Scenario s;
    s.task = {{"task_id", "mc4"}, {"kind", "classification"}, {"label_set", {"A", "B", "C", "D"}}};
    const auto task = task_from_json(s.task);
    ModelClient client(std::make_shared<MockBackend>(), options);
    const std::vector<std::string> colors{"red", "green", "blue", "yellow"};

    for (std::size_t i = 0; i < n; ++i) {
        DatasetExample ex;
        ex.id = fmt::format("m{:03}", i + 1);
        const std::size_t gold = (i * 3) % 4;
        ex.input = fmt::format("Item {} is painted {}. Which color is item {}?", i + 1, colors[gold], i + 1);
        ex.choices = colors;
        ex.gold = {task.label_set[gold].name};
        s.dataset_jsonl += json{{"id", ex.id}, {"input", ex.input}, {"choices", ex.choices}, {"gold", ex.gold.front()}}
                               .dump() +
                           "\n";

        // the model leans to the right label with varying sharpness and errs on every fifth item
        const std::size_t picked = i % 5 == 4 ? (gold + 1) % 4 : gold;
        const double top = 0.4 + 0.5 * static_cast<double>((i * 7) % n) / static_cast<double>(n);
        std::vector<TokenLogprob> entries;
        for (std::size_t k = 0; k < 4; ++k) {
            const double p = k == picked ? top : (1.0 - top - 0.02) / 3.0;
            entries.push_back({(k % 2 == 0 ? "" : " ") + task.label_set[k].name, std::log(p)});
        }
        entries.push_back({"The", std::log(0.02)});
        CompletionResponse resp;
        resp.generated_tokens = {task.label_set[picked].name};
        resp.token_distributions.emplace_back(TokenDistribution::top_k(std::move(entries), kDefaultTopK, 0));

        const auto input = render_template(task.prompt_template, {{"input", ex.input}});
        const auto req = client.classification_request(input, task.label_set, ex.choices);
        s.script_jsonl += MockBackend::script_line(request_digest(req), resp) + "\n";
        s.examples.push_back(std::move(ex));
    }
    return s;
}

} // namespace confcal::synthetic
