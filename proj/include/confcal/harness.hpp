#pragma once

// Task definitions, dataset ingestion, answer matching, and end-to-end
// evaluation runs producing EvalRecords and CalibrationReports.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "confcal/client.hpp"
#include "confcal/metrics.hpp"
#include "confcal/parallel.hpp"

namespace confcal {

enum class TaskKind { classification, generation };
enum class Matcher { exact, numeric, substring };

constexpr std::string_view to_string(TaskKind k) noexcept {
    return k == TaskKind::classification ? "classification" : "generation";
}

constexpr std::string_view to_string(Matcher m) noexcept {
    switch (m) {
        case Matcher::exact: return "exact";
        case Matcher::numeric: return "numeric";
        case Matcher::substring: return "substring";
    }
    return "exact";
}

inline Matcher matcher_from_string(std::string_view s) {
    if (s == "exact") return Matcher::exact;
    if (s == "numeric") return Matcher::numeric;
    if (s == "substring") return Matcher::substring;
    throw Error(ErrorCode::schema_violation, "unknown matcher '" + std::string(s) + "'");
}

/// Last-number extraction pattern: optional sign, digits with optional
/// thousands separators, optional decimal part.
inline constexpr std::string_view kDefaultNumberPattern = R"([-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?)";

struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::classification;
    std::vector<Label> label_set;
    Matcher matcher = Matcher::exact;
    std::string prompt_template = "{input}";
    std::string context_field = "context";  // empty: examples carry no context
    std::string number_pattern = std::string(kDefaultNumberPattern);

    void validate() const {
        if (task_id.empty()) throw Error(ErrorCode::schema_violation, "task_id is required");
        if (kind == TaskKind::classification && label_set.empty()) {
            throw Error(ErrorCode::schema_violation, "classification task '" + task_id + "' needs a label_set");
        }
        if (kind == TaskKind::generation && matcher == Matcher::exact) {
            throw Error(ErrorCode::schema_violation, "generation task '" + task_id + "' needs a numeric or substring matcher");
        }
    }
};

/// Task spec JSON:
///   {"task_id", "kind": "classification"|"generation",
///    "label_set"?: ["A", ...] | [{"label", "aliases"?}],
///    "matcher"?, "prompt_template"?, "context_field"?, "number_pattern"?}
inline TaskSpec task_from_json(const json& j) {
    try {
        TaskSpec t;
        t.task_id = j.at("task_id").get<std::string>();
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "classification") {
            t.kind = TaskKind::classification;
        } else if (kind == "generation") {
            t.kind = TaskKind::generation;
        } else {
            throw Error(ErrorCode::schema_violation, "unknown task kind '" + kind + "'");
        }
        if (j.contains("label_set")) {
            for (const auto& l : j.at("label_set")) {
                if (l.is_string()) {
                    t.label_set.push_back({l.get<std::string>(), {}});
                } else {
                    t.label_set.push_back({l.at("label").get<std::string>(),
                                           l.value("aliases", std::vector<std::string>{})});
                }
            }
        }
        t.matcher = matcher_from_string(
            j.value("matcher", std::string(t.kind == TaskKind::classification ? "exact" : "substring")));
        t.prompt_template = j.value("prompt_template", t.prompt_template);
        t.context_field = j.value("context_field", t.context_field);
        t.number_pattern = j.value("number_pattern", t.number_pattern);
        t.validate();
        return t;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("task spec: ") + e.what());
    }
}

inline TaskSpec load_task_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::file_not_found, "task spec " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_violation, path.string() + ": " + e.what());
    }
    return task_from_json(j);
}

struct ContextBudget {
    std::size_t max_documents = 5;
    std::size_t max_tokens_per_document = 2000;  // whitespace-delimited tokens
};

/// Keeps the first `max_tokens` whitespace-delimited tokens of `doc`.
inline std::string truncate_tokens(std::string_view doc, std::size_t max_tokens) {
    std::size_t count = 0;
    std::size_t i = 0;
    while (i < doc.size()) {
        while (i < doc.size() && std::isspace(static_cast<unsigned char>(doc[i]))) ++i;
        if (i == doc.size()) break;
        if (count == max_tokens) return std::string(doc.substr(0, i));
        while (i < doc.size() && !std::isspace(static_cast<unsigned char>(doc[i]))) ++i;
        ++count;
    }
    return std::string(doc);
}

inline std::string join_documents(std::span<const std::string> docs, const ContextBudget& budget) {
    std::string out;
    const auto n = std::min(docs.size(), budget.max_documents);
    for (std::size_t i = 0; i < n; ++i) {
        auto doc = truncate_tokens(docs[i], budget.max_tokens_per_document);
        while (!doc.empty() && std::isspace(static_cast<unsigned char>(doc.back()))) doc.pop_back();
        if (!out.empty()) out += "\n\n";
        out += doc;
    }
    return out;
}

struct DatasetExample {
    std::string id;
    std::string input;
    std::vector<std::string> choices;
    std::vector<std::string> gold;
    std::optional<std::string> context;

    bool operator==(const DatasetExample&) const = default;
};

namespace detail {

inline std::vector<std::string> string_or_list(const json& j, const char* field) {
    if (j.is_string()) return {j.get<std::string>()};
    if (j.is_array()) {
        std::vector<std::string> out;
        for (const auto& x : j) {
            if (!x.is_string()) throw std::runtime_error(std::string(field) + " entries must be strings");
            out.push_back(x.get<std::string>());
        }
        return out;
    }
    throw std::runtime_error(std::string(field) + " must be a string or a list of strings");
}

} // namespace detail

/// Reads a JSONL dataset: {"id", "input", "choices"?, "gold", <context_field>?}.
/// All malformed lines are reported together; the message leads with the first.
inline std::vector<DatasetExample> load_dataset(const std::filesystem::path& path, const TaskSpec& task,
                                                const ContextBudget& budget = {}) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::file_not_found, "dataset " + path.string());

    std::vector<DatasetExample> out;
    std::vector<std::string> problems;
    std::unordered_set<std::string> ids;
    std::unordered_set<std::string> label_names;
    for (const auto& l : task.label_set) label_names.insert(l.name);

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            DatasetExample ex;
            ex.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            ex.input = j.at("input").get<std::string>();
            if (!j.contains("gold")) throw std::runtime_error("missing gold");
            ex.gold = detail::string_or_list(j.at("gold"), "gold");
            if (ex.gold.empty() || std::all_of(ex.gold.begin(), ex.gold.end(), [](const auto& g) { return g.empty(); })) {
                throw std::runtime_error("empty gold");
            }
            if (j.contains("choices")) ex.choices = j.at("choices").get<std::vector<std::string>>();
            if (!task.context_field.empty() && j.contains(task.context_field) && !j.at(task.context_field).is_null()) {
                const auto docs = detail::string_or_list(j.at(task.context_field), task.context_field.c_str());
                ex.context = join_documents(docs, budget);
            }
            if (task.kind == TaskKind::classification) {
                for (const auto& g : ex.gold) {
                    if (!label_names.contains(g)) throw std::runtime_error("gold '" + g + "' is not in the label set");
                }
                if (!ex.choices.empty() && ex.choices.size() != task.label_set.size()) {
                    throw std::runtime_error("choices must pair one-to-one with the label set");
                }
            }
            if (!ids.insert(ex.id).second) throw std::runtime_error("duplicate id '" + ex.id + "'");
            out.push_back(std::move(ex));
        } catch (const std::exception& e) {
            problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = path.string() + " " + problems.front();
        if (problems.size() > 1) {
            msg += " (" + std::to_string(problems.size() - 1) + " more:";
            for (std::size_t i = 1; i < problems.size(); ++i) msg += " [" + problems[i] + "]";
            msg += ")";
        }
        throw Error(ErrorCode::schema_violation, msg);
    }
    return out;
}

/// Lowercase, collapse whitespace runs, and strip surrounding punctuation/whitespace.
inline std::string normalize_text(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(c));
    }
    auto edge = [](unsigned char c) { return std::ispunct(c) || std::isspace(c); };
    std::size_t b = 0;
    std::size_t e = out.size();
    while (b < e && edge(static_cast<unsigned char>(out[b]))) ++b;
    while (e > b && edge(static_cast<unsigned char>(out[e - 1]))) --e;
    return out.substr(b, e - b);
}

/// Value of the last numeric literal in `text`, thousands separators removed.
inline std::optional<double> last_number(std::string_view text, const std::string& pattern = std::string(kDefaultNumberPattern)) {
    const std::regex re(pattern);
    const std::string s(text);
    std::optional<std::string> last;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) last = it->str();
    if (!last) return std::nullopt;
    std::string digits;
    for (char c : *last) {
        if (c != ',') digits += c;
    }
    try {
        return std::stod(digits);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

struct MatchResult {
    bool correct = false;
    bool no_number_found = false;

    explicit operator bool() const noexcept { return correct; }
};

inline MatchResult match_answer(std::string_view prediction, std::span<const std::string> gold, Matcher matcher,
                                const std::string& number_pattern = std::string(kDefaultNumberPattern)) {
    switch (matcher) {
        case Matcher::exact: {
            const auto p = normalize_text(prediction);
            for (const auto& g : gold) {
                if (normalize_text(g) == p) return {true, false};
            }
            return {};
        }
        case Matcher::numeric: {
            const auto p = last_number(prediction, number_pattern);
            if (!p) return {false, true};
            for (const auto& g : gold) {
                const auto v = last_number(g, number_pattern);
                if (!v) continue;
                if (*p == *v || std::abs(*p - *v) <= 1e-9 * std::max(std::abs(*p), std::abs(*v))) return {true, false};
            }
            return {};
        }
        case Matcher::substring: {
            const auto p = normalize_text(prediction);
            for (const auto& g : gold) {
                const auto ref = normalize_text(g);
                if (!ref.empty() && p.find(ref) != std::string::npos) return {true, false};
            }
            return {};
        }
    }
    return {};
}

inline MatchResult match_answer(std::string_view prediction, std::string_view gold, Matcher matcher) {
    const std::string g(gold);
    return match_answer(prediction, std::span<const std::string>(&g, 1), matcher);
}

enum class ConfidenceMode { normalized, raw, both };

inline ConfidenceMode confidence_mode_from_string(std::string_view s) {
    if (s == "normalized") return ConfidenceMode::normalized;
    if (s == "raw") return ConfidenceMode::raw;
    if (s == "both") return ConfidenceMode::both;
    throw Error(ErrorCode::config_invalid, "confidence mode: unknown value '" + std::string(s) + "'");
}

inline constexpr std::string_view kFlagSkipped = "skipped";
inline constexpr std::string_view kFlagNoNumber = "no_number_found";
inline constexpr std::string_view kErrorFlagPrefix = "error:";

namespace detail {

inline bool has_error_flag(const EvalRecord& r) {
    return std::any_of(r.flags.begin(), r.flags.end(),
                       [](const auto& f) { return f.starts_with(kErrorFlagPrefix); });
}

inline void apply_confidence(EvalRecord& rec, ConfidenceMode mode, const ConfidenceScore& normalized, double raw) {
    for (const auto& f : normalized.flags.names()) rec.flags.insert(f);
    if (mode == ConfidenceMode::raw) {
        rec.confidence = raw;
        rec.method = ConfidenceMethod::raw;
    } else {
        rec.confidence = normalized.value;
        rec.method = normalized.method;
        if (mode == ConfidenceMode::both) rec.raw_confidence = raw;
    }
}

inline EvalRecord evaluate_one(const TaskSpec& task, const DatasetExample& ex, ModelClient& client,
                               ConfidenceMode mode) {
    EvalRecord rec;
    rec.id = ex.id;
    rec.task_id = task.task_id;
    rec.gold = ex.gold;
    const std::string input = render_template(task.prompt_template, {{"input", ex.input}});
    const auto matcher = task.kind == TaskKind::classification ? Matcher::exact : task.matcher;
    try {
        if (task.kind == TaskKind::classification) {
            const auto result = client.classify(input, task.label_set, ex.choices);
            rec.prediction = result.label;
            apply_confidence(rec, mode, result.confidence, result.raw_probability);
        } else {
            const auto answer = client.generate_answer(input, ex.context);
            rec.prediction = answer.text;
            const auto dist = client.self_eval_distribution(input, answer.text, ex.context);
            const auto& opts = client.options();
            const double raw = raw_yes_confidence(dist, opts.anchors).value;
            if (auto norm = self_eval_confidence(dist, opts.anchors, opts.missing_policy)) {
                apply_confidence(rec, mode, *norm, raw);
            } else {
                ConfidenceScore placeholder{0.5, ConfidenceMethod::self_eval, {}};
                placeholder.flags.insert(ConfidenceFlag::anchor_missing_yes);
                placeholder.flags.insert(ConfidenceFlag::anchor_missing_no);
                apply_confidence(rec, mode, placeholder, raw);
                rec.flags.insert(std::string(kFlagSkipped));
            }
        }
    } catch (const Error& e) {
        // Errored examples stay in the run as incorrect at the neutral fallback.
        rec.prediction.clear();
        rec.flags.insert(std::string(kErrorFlagPrefix) + std::string(to_string(e.code())));
        ConfidenceScore fallback{0.5, task.kind == TaskKind::classification ? ConfidenceMethod::classification_normalized
                                                                            : ConfidenceMethod::self_eval, {}};
        fallback.flags.insert(ConfidenceFlag::fallback_neutral);
        apply_confidence(rec, mode, fallback, 0.5);
    }
    const auto match = match_answer(rec.prediction, rec.gold, matcher, task.number_pattern);
    rec.correct = match.correct;
    if (match.no_number_found && !has_error_flag(rec)) rec.flags.insert(std::string(kFlagNoNumber));
    return rec;
}

} // namespace detail

/// Evaluates every example; per-example failures are recorded as flags and
/// never abort the run. Records come back sorted by id.
inline std::vector<EvalRecord> run_eval(const TaskSpec& task, std::span<const DatasetExample> examples,
                                        ModelClient& client, ConfidenceMode mode = ConfidenceMode::normalized) {
    task.validate();
    auto records = parallel_map(examples.size(), client.parallelism(),
                                [&](std::size_t i) { return detail::evaluate_one(task, examples[i], client, mode); });
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return records;
}

/// Ids of records whose correct flag disagrees with re-matching the prediction.
inline std::vector<std::string> reverify(std::span<const EvalRecord> records, const TaskSpec& task) {
    const auto matcher = task.kind == TaskKind::classification ? Matcher::exact : task.matcher;
    std::vector<std::string> bad;
    for (const auto& r : records) {
        if (match_answer(r.prediction, r.gold, matcher, task.number_pattern).correct != r.correct) bad.push_back(r.id);
    }
    return bad;
}

/// Accuracy, AUROC, ECE and the per-bin table. Records flagged as skipped
/// are left out of the metrics and counted in the metadata.
inline CalibrationReport build_report(std::span<const EvalRecord> records, std::size_t n_bins = kDefaultBinCount) {
    if (records.empty()) throw Error(ErrorCode::empty_input, "no records to report on");
    validate_records(records);

    CalibrationReport report;
    report.task_id = records.front().task_id;
    std::vector<EvalRecord> scored;
    for (const auto& r : records) {
        if (r.flags.contains("fallback_neutral")) ++report.metadata.fallback_neutral;
        if (r.flags.contains(std::string(kFlagNoNumber))) ++report.metadata.no_number_found;
        if (detail::has_error_flag(r)) ++report.metadata.errored;
        if (r.flags.contains(std::string(kFlagSkipped))) {
            ++report.metadata.skipped;
            continue;
        }
        scored.push_back(r);
    }
    if (scored.empty()) throw Error(ErrorCode::empty_input, "every record was skipped");

    report.n = scored.size();
    report.accuracy = static_cast<double>(std::count_if(scored.begin(), scored.end(), [](const auto& r) { return r.correct; })) /
                      static_cast<double>(scored.size());
    try {
        report.auroc = auroc(scored);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_classes) throw;
    }
    report.bins = equal_mass_bins(scored, n_bins);
    report.ece = ece_from_bins(report.bins);

    if (std::all_of(scored.begin(), scored.end(), [](const auto& r) { return r.raw_confidence.has_value(); })) {
        try {
            report.raw_auroc = auroc(scored, [](const EvalRecord& r) { return *r.raw_confidence; }, &EvalRecord::correct);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::degenerate_classes) throw;
        }
    }
    return report;
}

} // namespace confcal
