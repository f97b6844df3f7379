#include "vpkit/bench_runner.hpp"

#include "../support/mock_chat_server.hpp"
#include "../support/temp_dir.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace vpkit;
using vpkit::testing::fixture;
using vpkit::testing::MockChatServer;
using vpkit::testing::slurp;
using vpkit::testing::TempDir;

namespace {

std::filesystem::path mini() { return fixture("bench/mini.jsonl"); }

const CellResult& cell(const EvalReport& r, const std::string& key) {
    const auto it = r.cells.find(key);
    if (it == r.cells.end())
        throw std::runtime_error("no cell " + key);
    return it->second;
}

InstructionSample label_sample(const std::string& id) {
    InstructionSample s;
    s.sample_id = id;
    s.image_path = "x.png";
    s.prompts = {BoxPrompt{0.1, 0.1, 0.5, 0.5}};
    s.turns = {{TurnRole::User, "What is <Mark 1>?"}, {TurnRole::Assistant, "<Mark 1>: red car"}};
    s.provenance = {"t", Generator::Rule};
    return s;
}

} // namespace

TEST(Bench, EchoPredictorHitsCeiling) {
    const auto r = run_eval(mini(), fixture("bench/echo_preds.jsonl"), {});
    EXPECT_EQ(r.model, "echo");
    EXPECT_EQ(r.benchmark_size, 12u);
    EXPECT_TRUE(r.missing.empty());
    for (const auto& item : r.items) {
        EXPECT_FALSE(item.error) << item.sample_id << " " << *item.error;
        if (auto it = item.values.find(metric::kSemanticIou); it != item.values.end())
            EXPECT_DOUBLE_EQ(it->second, 1.0) << item.sample_id;
        if (auto it = item.values.find(metric::kSemanticSimilarity); it != item.values.end())
            EXPECT_NEAR(it->second, 1.0, 1e-12) << item.sample_id;
        if (auto it = item.values.find(metric::kCider); it != item.values.end())
            EXPECT_NEAR(it->second, 10.0, 1e-9) << item.sample_id;
        if (auto it = item.values.find(metric::kAccuracy); it != item.values.end())
            EXPECT_DOUBLE_EQ(it->second, 1.0) << item.sample_id;
    }
    EXPECT_DOUBLE_EQ(cell(r, "natural|box|stage1-label").metrics.at(metric::kSemanticIou).mean(), 1.0);
    EXPECT_DOUBLE_EQ(cell(r, "natural|point|binary-choice").metrics.at(metric::kAccuracy).mean(), 1.0);
    EXPECT_NEAR(cell(r, "natural|box|brief-caption").metrics.at(metric::kCider).mean(), 10.0, 1e-9);
    // judge tasks without a judge are counted, not scored
    EXPECT_EQ(cell(r, "natural|box|qa").unscored, 1u);
    EXPECT_TRUE(cell(r, "natural|box|qa").metrics.empty());
}

TEST(Bench, ConservationAndMissingIds) {
    auto bench = load_jsonl(mini());
    bench.resize(10);
    auto preds = echo_predictions(bench);
    preds.erase(preds.begin() + 3);
    preds.erase(preds.begin() + 6);
    const auto r = run_eval(bench, "h", preds, {});
    EXPECT_EQ(r.missing, (std::vector<std::string>{"mini/04", "mini/08"}));
    EXPECT_EQ(accounted_samples(r), 10u);
    std::size_t support = 0;
    for (const auto& [_, c] : r.cells)
        support += c.support;
    EXPECT_EQ(support, 8u);
}

TEST(Bench, EmptyPredictionsSurfaceAsEmptyText) {
    auto bench = load_jsonl(mini());
    auto preds = echo_predictions(bench, "blank");
    for (auto& p : preds)
        p.response = "  ";
    const auto r = run_eval(bench, "h", preds, {});
    EXPECT_EQ(accounted_samples(r), bench.size());
    for (const auto& [key, c] : r.cells) {
        EXPECT_EQ(c.errors.at("EmptyText"), c.support) << key;
        EXPECT_TRUE(c.metrics.empty()) << key;
    }
}

TEST(Bench, CellMeanIsMeanOfItems) {
    auto bench = load_jsonl(mini());
    auto preds = echo_predictions(bench);
    preds[0].response = "<Mark 1>: man\n<Mark 2>: red ball\n<Mark 3>: cat";
    preds[3].response = "A woman in a red shirt";
    const auto r = run_eval(bench, "h", preds, {});
    for (const auto& [key, c] : r.cells)
        for (const auto& [name, agg] : c.metrics) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& it : r.items)
                if (it.cell == key && it.values.count(name)) {
                    sum += it.values.at(name);
                    ++n;
                }
            EXPECT_EQ(n, agg.count);
            EXPECT_NEAR(sum / static_cast<double>(n), agg.mean(), 1e-12) << key << " " << name;
        }
    // mark 1 exact, mark 2 {red,ball} vs {ball} = 1/2, mark 3 wrong
    EXPECT_NEAR(r.items[0].values.at(metric::kSemanticIou), (1.0 + 0.5 + 0.0) / 3.0, 1e-12);
    EXPECT_LT(r.items[3].values.at(metric::kCider), 10.0);
}

TEST(Bench, MissingMarkScoresZero) {
    const std::vector<InstructionSample> bench{label_sample("a")};
    const auto r = run_eval(bench, "h", {{"a", "m", "<Mark 2>: red car"}}, {});
    EXPECT_DOUBLE_EQ(r.items[0].values.at(metric::kSemanticIou), 0.0);
    // single-mark sample accepts a bare label
    const auto r2 = run_eval(bench, "h", {{"a", "m", "a red car"}}, {});
    EXPECT_NEAR(r2.items[0].values.at(metric::kSemanticIou), 2.0 / 3.0, 1e-12);
}

TEST(Bench, Errors) {
    const std::vector<InstructionSample> bench{label_sample("a")};
    try {
        run_eval(bench, "h", {{"zzz", "m", "car"}}, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoOverlap);
    }
    try {
        run_eval(bench, "h", {{"a", "m1", "car"}, {"b", "m2", "car"}}, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
    }
    EvalConfig judge_without_client;
    judge_without_client.use_judge = true;
    EXPECT_THROW(run_eval(bench, "h", {{"a", "m", "car"}}, judge_without_client), Error);

    TempDir dir;
    std::string line = slurp(mini()).substr(0, slurp(mini()).find('\n'));
    line.replace(line.find("stage1-label"), 12, "captioning");
    const auto bad = dir.write("bad.jsonl", line + "\n");
    const auto preds = dir.write("p.jsonl", R"({"sample_id":"mini/01","model":"m","response":"x"})" "\n");
    try {
        run_eval(bad, preds, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownTask);
    }
    const auto dup = dir.write("d.jsonl", R"({"sample_id":"a","model":"m","response":"x"})" "\n"
                                          R"({"sample_id":"a","model":"m","response":"y"})" "\n");
    try {
        load_predictions(dup);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DuplicateId);
    }
}

TEST(Bench, UnmatchedPredictionsListed) {
    const std::vector<InstructionSample> bench{label_sample("a")};
    const auto r = run_eval(bench, "h", {{"a", "m", "car"}, {"ghost", "m", "car"}}, {});
    EXPECT_EQ(r.unmatched, std::vector<std::string>{"ghost"});
    EXPECT_EQ(accounted_samples(r), 1u);
}

TEST(Bench, ReportRoundTripAndDeterministicBytes) {
    auto bench = load_jsonl(mini());
    auto preds = echo_predictions(bench);
    preds.pop_back();
    preds[4].response = "";
    const auto r = run_eval(mini(), fixture("bench/echo_preds.jsonl"), {});
    const auto r2 = run_eval(bench, "h", preds, {});
    for (const auto* rep : {&r, &r2}) {
        const auto text = render_report(*rep, ReportFormat::Json);
        const auto back = report_from_json(text);
        EXPECT_EQ(back, *rep);
        EXPECT_EQ(render_report(back, ReportFormat::Json), text);
    }
    EXPECT_EQ(render_report(run_eval(mini(), fixture("bench/echo_preds.jsonl"), {}), ReportFormat::Json),
              render_report(r, ReportFormat::Json));
    EXPECT_EQ(r.benchmark_sha256, sha256_hex(slurp(mini())));
}

TEST(Bench, TableHasColumnPairPerDomain) {
    const auto r = run_eval(mini(), fixture("bench/echo_preds.jsonl"), {});
    const auto table = render_report(r, ReportFormat::Table);
    std::istringstream is(table);
    std::string line, header, sub;
    while (std::getline(is, line))
        if (line.rfind("task (metric)", 0) == 0) {
            header = line;
            std::getline(is, sub);
            break;
        }
    ASSERT_FALSE(header.empty()) << table;
    std::size_t domains = 0, boxes = 0, points = 0;
    for (std::size_t p = 0; (p = header.find(" | ", p)) != std::string::npos; p += 3)
        ++domains;
    for (std::size_t p = 0; (p = sub.find("box", p)) != std::string::npos; ++p)
        ++boxes;
    for (std::size_t p = 0; (p = sub.find("point", p)) != std::string::npos; ++p)
        ++points;
    EXPECT_EQ(domains, 3u); // natural, ocr, document
    EXPECT_EQ(boxes, domains);
    EXPECT_EQ(points, domains);
    EXPECT_NE(table.find("natural"), std::string::npos);
    EXPECT_NE(table.find("unscored"), std::string::npos);
    EXPECT_EQ(render_report(r, ReportFormat::Table), table);
}

TEST(Bench, JudgedCellsWithMockService) {
    MockChatServer server;
    server.set_fallback([](const std::string& body) {
        // the model answer is graded lower than the reference
        return MockChatServer::Reply{200, body.find("A: WRONG") != std::string::npos ? "Score: 4\nmeh" : "Score: 8\nok"};
    });
    TempDir dir;
    ::setenv("VPKIT_TEST_KEY", "sk-test", 1);
    JudgeConfig jc;
    jc.base_url = server.base_url();
    jc.model = "mock-vision";
    jc.api_key_env = "VPKIT_TEST_KEY";
    jc.cache_dir = dir / "cache";
    jc.timeout = std::chrono::seconds(10);
    JudgeClient judge(jc);

    auto bench = load_jsonl(mini());
    auto preds = echo_predictions(bench, "m");
    for (std::size_t i = 0; i < bench.size(); ++i)
        if (bench[i].task == TaskTag::Qa)
            preds[i].response = "WRONG";
    const auto pred_path = dir / "p.jsonl";
    write_predictions(preds, pred_path);

    EvalConfig cfg;
    cfg.use_judge = true;
    cfg.judge = &judge;
    cfg.rubric = "Q: {question}\nA: {answer}\nRef: {reference}";
    const auto r = run_eval(mini(), pred_path, cfg);
    const auto& qa = cell(r, "natural|box|qa");
    EXPECT_EQ(qa.unscored, 0u);
    EXPECT_DOUBLE_EQ(qa.metrics.at(metric::kJudgeRaw).mean(), 40.0);
    ASSERT_TRUE(qa.judge_ratio);
    EXPECT_DOUBLE_EQ(*qa.judge_ratio, 50.0);
    const auto& rel = cell(r, "natural|box|inter-relationship");
    EXPECT_DOUBLE_EQ(rel.metrics.at(metric::kJudgeRaw).mean(), 80.0);
    EXPECT_DOUBLE_EQ(*rel.judge_ratio, 100.0);

    // warmed cache: identical report, no new requests
    const auto before = judge.stats().network_requests;
    const auto again = run_eval(mini(), pred_path, cfg);
    EXPECT_EQ(judge.stats().network_requests, before);
    EXPECT_EQ(render_report(again, ReportFormat::Json), render_report(r, ReportFormat::Json));
}
