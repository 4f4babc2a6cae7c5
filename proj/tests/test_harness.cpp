#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "confcal/harness.hpp"
#include "confcal/report_io.hpp"
#include "confcal/synthetic.hpp"

using namespace confcal;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
    auto dir = std::filesystem::temp_directory_path() / "confcal_tests";
    std::filesystem::create_directories(dir);
    auto p = dir / name;
    std::ofstream(p, std::ios::trunc) << text;
    return p;
}

TaskSpec qa_task() {
    TaskSpec t;
    t.task_id = "qa";
    t.kind = TaskKind::generation;
    t.matcher = Matcher::numeric;
    return t;
}

TaskSpec letter_task() {
    TaskSpec t;
    t.task_id = "mc";
    t.kind = TaskKind::classification;
    t.label_set = {{"A", {}}, {"B", {}}, {"C", {}}, {"D", {}}};
    return t;
}

CompletionResponse one_position(std::string token, std::vector<TokenLogprob> entries) {
    CompletionResponse r;
    r.generated_tokens = {std::move(token)};
    r.token_distributions.emplace_back(std::move(entries), 0);
    return r;
}

} // namespace

TEST(TaskSpec, Validation) {
    EXPECT_THROW(task_from_json(json{{"task_id", "x"}, {"kind", "classification"}}), Error);
    EXPECT_THROW(task_from_json(json{{"task_id", "x"}, {"kind", "generation"}, {"matcher", "exact"}}), Error);
    EXPECT_THROW(task_from_json(json{{"task_id", "x"}, {"kind", "ranking"}}), Error);
    const auto t = task_from_json(json{{"task_id", "boolq"},
                                       {"kind", "classification"},
                                       {"label_set", json::array({"yes", json{{"label", "no"}, {"aliases", {"No", " no"}}}})}});
    ASSERT_EQ(t.label_set.size(), 2u);
    EXPECT_EQ(t.label_set[1].aliases, (std::vector<std::string>{"No", " no"}));
    EXPECT_EQ(t.matcher, Matcher::exact);
    EXPECT_EQ(task_from_json(json{{"task_id", "g"}, {"kind", "generation"}}).matcher, Matcher::substring);
}

TEST(LoadDataset, ValidLines) {
    const auto p = write_temp("ok.jsonl",
                              "{\"id\":\"1\",\"input\":\"a\",\"gold\":\"4\"}\n"
                              "\n"
                              "{\"id\":\"2\",\"input\":\"b\",\"gold\":[\"5\",\"five\"],\"context\":[\"d1\",\"d2\"]}\n"
                              "{\"id\":3,\"input\":\"c\",\"gold\":\"6\"}\n");
    const auto xs = load_dataset(p, qa_task());
    ASSERT_EQ(xs.size(), 3u);
    EXPECT_EQ(xs[1].gold, (std::vector<std::string>{"5", "five"}));
    EXPECT_EQ(xs[1].context, std::optional<std::string>("d1\n\nd2"));
    EXPECT_EQ(xs[2].id, "3");
    EXPECT_FALSE(xs[0].context);
}

TEST(LoadDataset, MissingGoldNamesLine) {
    const auto p = write_temp("nogold.jsonl",
                              "{\"id\":\"1\",\"input\":\"a\",\"gold\":\"4\"}\n"
                              "{\"id\":\"2\",\"input\":\"b\"}\n");
    try {
        load_dataset(p, qa_task());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::schema_violation);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}

TEST(LoadDataset, DuplicateIdNamed) {
    const auto p = write_temp("dup.jsonl",
                              "{\"id\":\"q7\",\"input\":\"a\",\"gold\":\"4\"}\n"
                              "{\"id\":\"q7\",\"input\":\"b\",\"gold\":\"4\"}\n");
    try {
        load_dataset(p, qa_task());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::schema_violation);
        EXPECT_NE(std::string(e.what()).find("q7"), std::string::npos);
    }
}

TEST(LoadDataset, AllProblemsCollected) {
    const auto p = write_temp("many.jsonl",
                              "not json\n"
                              "{\"id\":\"1\",\"input\":\"a\",\"gold\":\"E\"}\n"
                              "{\"id\":\"2\",\"input\":\"b\",\"gold\":\"\"}\n");
    try {
        load_dataset(p, letter_task());
        FAIL();
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 1"), std::string::npos);
        EXPECT_NE(msg.find("line 2"), std::string::npos);
        EXPECT_NE(msg.find("line 3"), std::string::npos);
    }
    try {
        load_dataset("/nonexistent.jsonl", qa_task());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::file_not_found);
    }
}

TEST(ContextBudget, TruncatesPerDocumentAndCount) {
    const std::vector<std::string> docs{"one two three four", "five six", "seven", "eight"};
    EXPECT_EQ(join_documents(docs, {2, 3}), "one two three\n\nfive six");
    EXPECT_EQ(truncate_tokens("  a  b c ", 2), "  a  b ");
    EXPECT_EQ(truncate_tokens("a b", 5), "a b");
}

TEST(MatchAnswer, Matchers) {
    EXPECT_TRUE(match_answer("The answer is 42.", "42", Matcher::numeric).correct);
    EXPECT_TRUE(match_answer("Sinclair Lewis won the Nobel Prize for Literature in 1930",
                             std::vector<std::string>{"Sinclair Lewis"}, Matcher::substring)
                    .correct);
    EXPECT_TRUE(match_answer("B", "B", Matcher::exact).correct);
    EXPECT_TRUE(match_answer(" b. ", "B", Matcher::exact).correct);
    EXPECT_FALSE(match_answer("C", "B", Matcher::exact).correct);

    EXPECT_TRUE(match_answer("so 3 + 4 = 1,234", "1234", Matcher::numeric).correct);
    EXPECT_TRUE(match_answer("total: -2.50", "-2.5", Matcher::numeric).correct);
    EXPECT_FALSE(match_answer("42 then 43", "42", Matcher::numeric).correct);
    const auto none = match_answer("no idea", "42", Matcher::numeric);
    EXPECT_FALSE(none.correct);
    EXPECT_TRUE(none.no_number_found);

    EXPECT_TRUE(match_answer("It was  PARIS,  France", "paris", Matcher::substring).correct);
    EXPECT_FALSE(match_answer("Lyon", std::vector<std::string>{"Paris", "City of Light"}, Matcher::substring).correct);
}

TEST(RunEval, ClassificationRecordsAreHandCheckable) {
    auto mock = std::make_shared<MockBackend>();
    ModelClient client(mock, ClientOptions{});
    const auto task = letter_task();
    const std::vector<DatasetExample> xs{{"e1", "q1", {}, {"B"}, {}},
                                         {"e2", "q2", {}, {"A"}, {}},
                                         {"e3", "q3", {}, {"C"}, {}},
                                         {"e4", "q4", {}, {"D"}, {}}};
    const double l6 = std::log(0.6), l2 = std::log(0.2), l1 = std::log(0.1);
    mock->add(client.classification_request("q1", task.label_set), one_position("B", {{"B", l6}, {"A", l2}, {"C", l1}, {"D", l1}}));
    mock->add(client.classification_request("q2", task.label_set), one_position("B", {{"B", l6}, {"A", l2}, {"C", l1}, {"D", l1}}));
    mock->add(client.classification_request("q3", task.label_set), one_position("C", {{"C", std::log(0.3)}, {"x", -0.5}}));
    mock->add(client.classification_request("q4", task.label_set), one_position("x", {{"x", -0.01}}));

    const auto rs = run_eval(task, xs, client, ConfidenceMode::both);
    ASSERT_EQ(rs.size(), 4u);
    EXPECT_EQ(rs[0].prediction, "B");
    EXPECT_TRUE(rs[0].correct);
    EXPECT_NEAR(rs[0].confidence, 0.6, 1e-12);
    EXPECT_NEAR(*rs[0].raw_confidence, 0.6, 1e-12);
    EXPECT_FALSE(rs[1].correct);
    EXPECT_NEAR(rs[1].confidence, 0.6, 1e-12);
    EXPECT_TRUE(rs[2].correct);
    EXPECT_DOUBLE_EQ(rs[2].confidence, 1.0);
    EXPECT_NEAR(*rs[2].raw_confidence, 0.3, 1e-12);
    // no label token: recorded, incorrect, neutral, flagged
    EXPECT_FALSE(rs[3].correct);
    EXPECT_DOUBLE_EQ(rs[3].confidence, 0.5);
    EXPECT_TRUE(rs[3].flags.contains("error:NoLabelTokenPresent"));
    EXPECT_TRUE(rs[3].flags.contains("fallback_neutral"));
    EXPECT_TRUE(reverify(rs, task).empty());

    const auto report = build_report(rs);
    EXPECT_EQ(report.metadata.errored, 1u);
    EXPECT_EQ(report.metadata.fallback_neutral, 1u);
    EXPECT_EQ(report.n, 4u);
    ASSERT_TRUE(report.raw_auroc);
    ASSERT_TRUE(report.auroc);
}

TEST(RunEval, GenerationWithYesHeavySelfEval) {
    auto mock = std::make_shared<MockBackend>();
    ModelClient client(mock, ClientOptions{});
    const auto task = qa_task();
    mock->add(client.answer_request("What is 6*7?", std::nullopt), MockBackend::echo({"It", " is", " 42"}));
    mock->add(client.self_eval_request("What is 6*7?", "It is 42", std::nullopt),
              one_position("Yes", {{"Yes", std::log(0.9)}, {"No", std::log(0.05)}}));
    const std::vector<DatasetExample> xs{{"g1", "What is 6*7?", {}, {"42"}, {}}};
    const auto rs = run_eval(task, xs, client);
    ASSERT_EQ(rs.size(), 1u);
    EXPECT_TRUE(rs[0].correct);
    EXPECT_GT(rs[0].confidence, 0.5);
    EXPECT_NEAR(rs[0].confidence, 0.9 / 0.95, 1e-12);
    EXPECT_EQ(rs[0].method, ConfidenceMethod::self_eval);
}

TEST(RunEval, EmptyExampleList) {
    ModelClient client(std::make_shared<MockBackend>(), ClientOptions{});
    EXPECT_TRUE(run_eval(qa_task(), {}, client).empty());
}

TEST(RunEval, SkipPolicyKeepsRecordsButExcludesThemFromMetrics) {
    auto mock = std::make_shared<MockBackend>();
    ClientOptions opts;
    opts.missing_policy = MissingPolicy::skip;
    ModelClient client(mock, opts);
    const auto task = qa_task();
    std::vector<DatasetExample> xs;
    for (int i = 0; i < 3; ++i) {
        const auto q = "q" + std::to_string(i);
        xs.push_back({q, q, {}, {"1"}, {}});
        mock->add(client.answer_request(q, std::nullopt), MockBackend::echo({i == 1 ? "2" : "1"}));
        mock->add(client.self_eval_request(q, i == 1 ? "2" : "1", std::nullopt),
                  i == 2 ? one_position("Hmm", {{"Hmm", -0.1}}) : one_position("Yes", {{"Yes", std::log(0.7)}, {"No", std::log(0.3)}}));
    }
    const auto rs = run_eval(task, xs, client);
    ASSERT_EQ(rs.size(), 3u);
    EXPECT_TRUE(rs[2].flags.contains("skipped"));
    const auto report = build_report(rs);
    EXPECT_EQ(report.n, 2u);
    EXPECT_EQ(report.metadata.skipped, 1u);
}

TEST(RunEval, DeterministicAcrossRepeatedRuns) {
    const auto scenario = synthetic::arithmetic_qa(30);
    const auto task = task_from_json(scenario.task);
    auto run = [&] {
        auto mock = std::make_shared<MockBackend>(MockBackend::from_jsonl_string(scenario.script_jsonl));
        ModelClient client(mock, ClientOptions{});
        return records_jsonl(run_eval(task, scenario.examples, client, ConfidenceMode::both));
    };
    EXPECT_EQ(run(), run());
}

TEST(BuildReport, Invariants) {
    const auto scenario = synthetic::multiple_choice(23);
    const auto task = task_from_json(scenario.task);
    ModelClient client(std::make_shared<MockBackend>(MockBackend::from_jsonl_string(scenario.script_jsonl)),
                       ClientOptions{});
    const auto rs = run_eval(task, scenario.examples, client, ConfidenceMode::both);
    const auto report = build_report(rs);
    std::size_t total = 0;
    std::size_t lo = rs.size(), hi = 0;
    double weighted = 0.0;
    for (const auto& b : report.bins) {
        total += b.count;
        lo = std::min(lo, b.count);
        hi = std::max(hi, b.count);
        weighted += static_cast<double>(b.count) / static_cast<double>(report.n) * std::abs(b.mean_accuracy - b.mean_confidence);
    }
    EXPECT_EQ(report.bins.size(), 10u);
    EXPECT_EQ(total, report.n);
    EXPECT_LE(hi - lo, 1u);
    EXPECT_NEAR(report.ece, weighted, 1e-12);
    EXPECT_TRUE(report.raw_auroc.has_value());
}

TEST(BuildReport, SeparableAndCalibrated) {
    std::vector<EvalRecord> rs;
    for (int i = 0; i < 20; ++i) {
        EvalRecord r;
        r.id = fmt::format("r{:02}", i);
        r.task_id = "t";
        r.correct = i >= 10;
        r.confidence = r.correct ? 1.0 : 0.0;
        rs.push_back(r);
    }
    const auto report = build_report(rs);
    EXPECT_DOUBLE_EQ(*report.auroc, 1.0);
    EXPECT_NEAR(report.ece, 0.0, 1e-12);

    for (auto& r : rs) r.correct = true;
    EXPECT_FALSE(build_report(rs).auroc.has_value());
}

TEST(ReportIo, RoundTripAndFormats) {
    std::vector<EvalRecord> rs;
    for (int i = 0; i < 12; ++i) {
        EvalRecord r;
        r.id = fmt::format("r{:02}", i);
        r.task_id = "t";
        r.correct = i % 3 != 0;
        r.confidence = (i + 1) / 13.0;
        r.raw_confidence = r.confidence / 2;
        rs.push_back(r);
    }
    const auto report = build_report(rs);
    const auto j = to_json(report);
    EXPECT_TRUE(j.contains("raw_auroc"));
    const auto back = report_from_json(json::parse(j.dump()));
    EXPECT_EQ(back.n, report.n);
    EXPECT_NEAR(back.ece, report.ece, 1e-6);
    EXPECT_EQ(calibration_curve_csv(back), calibration_curve_csv(report));
    const auto csv = calibration_curve_csv(report);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "bin,count,mean_confidence,mean_accuracy");

    const auto line = json::parse(records_jsonl(std::span(rs).first(1)));
    for (const char* key : {"id", "task_id", "prediction", "gold", "correct", "confidence", "method", "flags"}) {
        EXPECT_TRUE(line.contains(key)) << key;
    }
}
