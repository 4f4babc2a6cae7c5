#include <cmath>
#include <thread>

#include <gtest/gtest.h>

#include "confcal/adaptive_rag.hpp"
#include "confcal/synthetic.hpp"

using namespace confcal;

namespace {

CompletionResponse yes_no(double p) {
    CompletionResponse r;
    r.generated_tokens = {"Yes"};
    r.token_distributions.emplace_back(std::vector<TokenLogprob>{{"Yes", std::log(p)}, {"No", std::log1p(-p)}}, 0);
    return r;
}

struct Scripted {
    std::shared_ptr<MockBackend> mock = std::make_shared<MockBackend>();
    ModelClient client{mock, ClientOptions{}};

    void pass(const std::string& q, const std::optional<std::string>& ctx, const std::string& answer, double conf) {
        mock->add(client.answer_request(q, ctx), MockBackend::echo({answer}));
        mock->add(client.self_eval_request(q, answer, ctx), yes_no(conf));
    }
};

PassResult pr(std::string answer, double conf) { return {std::move(answer), conf, {}}; }

// q1, q2 right and confident; q3, q4 wrong and unsure until given context.
struct FourExamples : Scripted {
    std::vector<DatasetExample> xs;
    StaticRetriever retriever;

    FourExamples() {
        const std::vector<std::tuple<std::string, std::string, std::string, double>> firsts{
            {"q1", "10", "10", 0.9}, {"q2", "20", "20", 0.8}, {"q3", "30", "31", 0.3}, {"q4", "40", "44", 0.2}};
        for (const auto& [id, gold, first, conf] : firsts) {
            const std::string ctx = "Reference: the answer is " + gold + ".";
            xs.push_back({id, "Question " + id + "?", {}, {gold}, ctx});
            pass(xs.back().input, std::nullopt, first, conf);
            pass(xs.back().input, ctx, gold, 0.9);
        }
    }
};

class PassageServer {
public:
    explicit PassageServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server_.Post("/retrieve", [this, handler](const httplib::Request& req, httplib::Response& res) {
            last_body_ = req.body;
            handler(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~PassageServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/retrieve"; }
    std::string last_body() const { return last_body_; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::string last_body_;
};

} // namespace

TEST(ResolveOutcome, Examples) {
    auto o = resolve_outcome("a", pr("x", 0.3), 0.5, pr("y", 0.8));
    EXPECT_TRUE(o.retrieved);
    EXPECT_EQ(o.final_answer, "y");
    EXPECT_DOUBLE_EQ(o.final_conf, 0.8);

    o = resolve_outcome("a", pr("x", 0.3), 0.5, pr("y", 0.2));
    EXPECT_TRUE(o.retrieved);
    EXPECT_EQ(o.final_answer, "x");
    EXPECT_EQ(o.second_answer, std::optional<std::string>("y"));

    o = resolve_outcome("a", pr("x", 0.3), 0.5, pr("y", 0.3));
    EXPECT_EQ(o.final_answer, "x");

    o = resolve_outcome("a", pr("x", 0.5), 0.5, pr("y", 0.99));
    EXPECT_FALSE(o.retrieved);
    EXPECT_EQ(o.final_answer, "x");
    EXPECT_FALSE(o.second_answer);

    o = resolve_outcome("a", pr("x", 0.1), 0.5, std::nullopt);
    EXPECT_TRUE(o.flags.contains("retrieval_miss"));
    EXPECT_EQ(o.final_answer, "x");
}

TEST(ResolveOutcome, FinalConfidenceIsMaxOfPasses) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const double c1 = u(rng), c2 = u(rng), tau = 1.1 * u(rng);
        const auto o = resolve_outcome("a", pr("x", c1), tau, pr("y", c2));
        if (c1 < tau) {
            ASSERT_DOUBLE_EQ(o.final_conf, std::max(c1, c2));
        } else {
            ASSERT_DOUBLE_EQ(o.final_conf, c1);
        }
    }
}

TEST(AnswerAdaptive, RetrievesOnlyBelowThreshold) {
    FourExamples s;
    auto o = answer_adaptive(s.xs[2], 0.5, s.client, s.retriever);
    EXPECT_TRUE(o.retrieved);
    EXPECT_EQ(o.final_answer, "30");
    const auto before = s.mock->calls();
    o = answer_adaptive(s.xs[0], 0.5, s.client, s.retriever);
    EXPECT_FALSE(o.retrieved);
    EXPECT_EQ(s.mock->calls() - before, 2u);
    EXPECT_THROW(answer_adaptive(s.xs[0], -0.1, s.client, s.retriever), Error);
}

TEST(Sweep, FourExampleScript) {
    FourExamples s;
    const std::vector<double> taus{0.5};
    const auto r = sweep(s.xs, taus, s.client, s.retriever, Matcher::numeric);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_DOUBLE_EQ(r.baseline_accuracy_pct, 50.0);
    EXPECT_DOUBLE_EQ(r.rows[0].retrieval_rate_pct, 50.0);
    EXPECT_DOUBLE_EQ(r.rows[0].accuracy_pct, 100.0);
    EXPECT_DOUBLE_EQ(r.rows[0].gain_pp, 50.0);
    ASSERT_TRUE(r.rows[0].efficiency);
    EXPECT_DOUBLE_EQ(*r.rows[0].efficiency, 1.0);
    EXPECT_EQ(r.first_passes, 4u);
    EXPECT_EQ(r.second_passes, 2u);
}

TEST(Sweep, ThresholdEdges) {
    FourExamples s;
    const std::vector<double> taus{0.0, 1.01};
    const auto r = sweep(s.xs, taus, s.client, s.retriever, Matcher::numeric);
    EXPECT_DOUBLE_EQ(r.rows[0].retrieval_rate_pct, 0.0);
    EXPECT_DOUBLE_EQ(r.rows[0].gain_pp, 0.0);
    EXPECT_FALSE(r.rows[0].efficiency);
    EXPECT_DOUBLE_EQ(r.rows[1].retrieval_rate_pct, 100.0);
    for (const auto& o : r.outcomes[1]) EXPECT_TRUE(o.retrieved);
    const auto csv = sweep_csv(r.rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "tau,retrieval_pct,accuracy_pct,gain_pp,efficiency");
    EXPECT_NE(csv.find(",NA\n"), std::string::npos);
}

TEST(Sweep, RejectsBadThresholds) {
    FourExamples s;
    for (const std::vector<double>& taus : {std::vector<double>{}, std::vector<double>{0.3, -0.1}}) {
        try {
            sweep(s.xs, taus, s.client, s.retriever, Matcher::numeric);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::config_invalid);
        }
    }
}

TEST(Sweep, FirstPassRunsOncePerExample) {
    FourExamples s;
    const std::vector<double> taus{0.0};
    const auto r = sweep(s.xs, taus, s.client, s.retriever, Matcher::numeric);
    EXPECT_EQ(r.first_passes, s.xs.size());
    EXPECT_EQ(r.second_passes, 0u);
    EXPECT_EQ(s.mock->calls(), 2 * s.xs.size());
}

TEST(Sweep, RetrievalRateMonotoneInThreshold) {
    const auto scenario = synthetic::arithmetic_qa(50);
    const auto task = task_from_json(scenario.task);
    ModelClient client(std::make_shared<MockBackend>(MockBackend::from_jsonl_string(scenario.script_jsonl)),
                       ClientOptions{});
    StaticRetriever retriever;
    std::vector<double> taus;
    for (int i = 0; i <= 22; ++i) taus.push_back(i * 0.05);
    const auto r = sweep(scenario.examples, taus, client, retriever, task.matcher);
    for (std::size_t i = 1; i < r.rows.size(); ++i) {
        EXPECT_LE(r.rows[i - 1].retrieval_rate_pct, r.rows[i].retrieval_rate_pct);
    }
    EXPECT_DOUBLE_EQ(r.rows.front().retrieval_rate_pct, 0.0);
    EXPECT_DOUBLE_EQ(r.rows.back().retrieval_rate_pct, 100.0);
    for (const auto& per_tau : r.outcomes) {
        for (const auto& o : per_tau) {
            if (o.second_conf) {
                EXPECT_DOUBLE_EQ(o.final_conf, std::max(o.first_conf, *o.second_conf));
            }
        }
    }
}

TEST(Sweep, UselessContextLeavesBaselineAccuracy) {
    Scripted s;
    std::vector<DatasetExample> xs;
    for (int i = 0; i < 6; ++i) {
        const auto q = "Q" + std::to_string(i) + "?";
        const auto answer = std::to_string(i % 2 == 0 ? i : i + 100);
        xs.push_back({"e" + std::to_string(i), q, {}, {std::to_string(i)}, {}});
        s.pass(q, std::nullopt, answer, 0.1 + 0.1 * i);
        s.pass(q, std::string("nothing relevant"), answer, 0.95);
    }
    StaticRetriever useless(std::map<std::string, std::string>{
        {"e0", "nothing relevant"}, {"e1", "nothing relevant"}, {"e2", "nothing relevant"},
        {"e3", "nothing relevant"}, {"e4", "nothing relevant"}, {"e5", "nothing relevant"}});
    const std::vector<double> taus{0.0, 0.25, 0.45, 0.65, 1.01};
    const auto r = sweep(xs, taus, s.client, useless, Matcher::numeric);
    for (const auto& row : r.rows) {
        EXPECT_DOUBLE_EQ(row.accuracy_pct, r.baseline_accuracy_pct);
        EXPECT_DOUBLE_EQ(row.gain_pp, 0.0);
    }
}

TEST(Sweep, MissingContextIsFlaggedNotFatal) {
    Scripted s;
    std::vector<DatasetExample> xs{{"m1", "Q?", {}, {"1"}, {}}};
    s.pass("Q?", std::nullopt, "2", 0.2);
    StaticRetriever empty;
    const std::vector<double> taus{0.5};
    const auto r = sweep(xs, taus, s.client, empty, Matcher::numeric);
    ASSERT_EQ(r.outcomes[0].size(), 1u);
    EXPECT_TRUE(r.outcomes[0][0].retrieved);
    EXPECT_TRUE(r.outcomes[0][0].flags.contains("retrieval_miss"));
    EXPECT_EQ(r.outcomes[0][0].final_answer, "2");
    EXPECT_DOUBLE_EQ(r.rows[0].gain_pp, 0.0);
}

TEST(HttpRetriever, JoinsPassagesWithinBudget) {
    PassageServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"passages":[{"text":"alpha beta gamma"},{"text":"delta"},{"text":"omega"}]})",
                        "application/json");
    });
    HttpRetrieverOptions opts;
    opts.url = server.url();
    opts.top_k = 3;
    opts.budget = {2, 2};
    HttpRetriever retriever(opts);
    const DatasetExample ex{"x", "who?", {}, {"a"}, {}};
    EXPECT_EQ(retriever.retrieve(ex), "alpha beta\n\ndelta");
    const auto body = json::parse(server.last_body());
    EXPECT_EQ(body.at("query"), "who?");
    EXPECT_EQ(body.at("top_k"), 3);
}

TEST(HttpRetriever, Failures) {
    PassageServer server([](const httplib::Request& req, httplib::Response& res) {
        if (req.body.find("broken") != std::string::npos) {
            res.set_content("{\"docs\":[]}", "application/json");
        } else {
            res.status = 503;
        }
    });
    HttpRetriever retriever({server.url(), 5, {}, std::chrono::seconds(2)});
    try {
        retriever.retrieve({"x", "plain", {}, {"a"}, {}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::endpoint_error);
    }
    try {
        retriever.retrieve({"x", "broken", {}, {"a"}, {}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::malformed_response);
    }
}
