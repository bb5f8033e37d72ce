#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"

#include "m2s/dataset.hpp"
#include "m2s/eval.hpp"
#include "m2s/mock_guard.hpp"
#include "m2s/tokenizer.hpp"

using namespace m2s;

namespace {

const std::string kFixture = std::string(M2S_TEST_DATA_DIR) + "/ingest_fixture.jsonl";

// Minimal scriptable chat-completions stand-in for failure-path tests.
class ScriptedServer {
 public:
  explicit ScriptedServer(httplib::Server::Handler handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    REQUIRE(port_ > 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~ScriptedServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

std::string completion_body(const std::string& content) {
  return std::string(R"({"choices":[{"message":{"role":"assistant","content":")") +
         content + R"("}}]})";
}

GuardEndpoint fast_endpoint(const std::string& url, int max_retries = 2) {
  GuardEndpoint endpoint;
  endpoint.base_url = url;
  endpoint.model_name = "test-guard";
  endpoint.max_retries = max_retries;
  endpoint.retry_backoff = std::chrono::milliseconds(5);
  return endpoint;
}

MockPolicy fixture_policy() {
  MockPolicy policy;
  policy.blocked_keywords = {"grenade", "ransomware"};
  return policy;
}

}  // namespace

TEST_CASE("verdict parsing is a case-insensitive substring check") {
  CHECK(parse_verdict("unsafe") == SafetyLabel::Unsafe);
  CHECK(parse_verdict("UNSAFE") == SafetyLabel::Unsafe);
  CHECK(parse_verdict("This request is Unsafe.") == SafetyLabel::Unsafe);
  CHECK(parse_verdict("safe") == SafetyLabel::Safe);
  CHECK(parse_verdict("safety first") == SafetyLabel::Safe);
  CHECK(parse_verdict("") == SafetyLabel::Safe);
  CHECK(parse_verdict("uns afe") == SafetyLabel::Safe);
  // "safe" embedded in "unsafe" must not flip the verdict back.
  CHECK(parse_verdict("Verdict: unSAFE") == SafetyLabel::Unsafe);
}

TEST_CASE("mean and sample standard deviation") {
  const auto stats = mean_and_sample_std({92.5, 93.2, 95.8});
  CHECK(stats.mean == doctest::Approx(93.8333333333).epsilon(1e-9));
  CHECK(stats.std_dev == doctest::Approx(1.7387735141).epsilon(1e-9));

  const auto single = mean_and_sample_std({7.0});
  CHECK(single.mean == 7.0);
  CHECK(single.std_dev == 0.0);
}

TEST_CASE("formatting rounds mean and spread to one decimal") {
  CHECK(format_mean_std(93.8333333, 1.7387735) == "93.8 ± 1.7");
  CHECK(format_mean_std(54.9, 0.0) == "54.9 ± 0.0");
  CHECK(format_mean_std(100.0, 0.04) == "100.0 ± 0.0");
}

TEST_CASE("seed aggregation averages the per-run metrics") {
  auto make_report = [](double recall, double fpr, double tokens, std::uint64_t seed) {
    RunReport report;
    report.recall = recall;
    report.fpr = fpr;
    report.mean_input_tokens = tokens;
    report.seed = seed;
    return report;
  };

  const auto agg = aggregate_seeds({make_report(0.925, 0.10, 20.0, 42),
                                    make_report(0.932, 0.12, 22.0, 123),
                                    make_report(0.958, 0.08, 24.0, 456)});
  REQUIRE(agg.recall_mean.has_value());
  REQUIRE(agg.recall_std.has_value());
  CHECK(*agg.recall_mean == doctest::Approx(0.938333333).epsilon(1e-9));
  CHECK(*agg.recall_std == doctest::Approx(0.017387735).epsilon(1e-6));
  CHECK(format_mean_std(*agg.recall_mean * 100.0, *agg.recall_std * 100.0) ==
        "93.8 ± 1.7");
  CHECK(*agg.fpr_mean == doctest::Approx(0.10));
  CHECK(agg.mean_input_tokens == doctest::Approx(22.0));
  CHECK(agg.per_seed.size() == 3);

  const auto flat = aggregate_seeds(
      {make_report(0.549, 0.0, 1.0, 1), make_report(0.549, 0.0, 1.0, 2),
       make_report(0.549, 0.0, 1.0, 3)});
  CHECK(*flat.recall_std == doctest::Approx(0.0));

  CHECK_THROWS_AS(aggregate_seeds({make_report(0.5, 0.5, 1.0, 1)}),
                  InsufficientSeedsError);
  CHECK_THROWS_AS(aggregate_seeds({}), InsufficientSeedsError);
}

TEST_CASE("seed aggregation tolerates absent metrics") {
  RunReport with_recall;
  with_recall.recall = 1.0;
  RunReport without;
  const auto agg = aggregate_seeds({with_recall, without});
  REQUIRE(agg.recall_mean.has_value());
  CHECK(*agg.recall_mean == doctest::Approx(1.0));
  CHECK_FALSE(agg.recall_std.has_value());  // only one run defined it
  CHECK_FALSE(agg.fpr_mean.has_value());
  CHECK_FALSE(agg.fpr_std.has_value());
}

TEST_CASE("paired t-test matches a frozen reference") {
  const std::vector<double> a = {120, 122, 130, 110, 115};
  const std::vector<double> b = {128, 121, 139, 112, 120};
  const auto result = paired_t_test(a, b);
  CHECK(result.t_statistic == doctest::Approx(-2.472975320624).epsilon(1e-6));
  CHECK(result.p_value == doctest::Approx(0.068726941441).epsilon(1e-6));
  CHECK(result.df == 4);

  const auto small = paired_t_test({1, 1, 1, 2}, {0, 0, 0, 0});
  CHECK(small.t_statistic == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(small.p_value == doctest::Approx(0.015392438073).epsilon(1e-6));
  CHECK(small.df == 3);
}

TEST_CASE("paired t-test is antisymmetric") {
  const std::vector<double> a = {120, 122, 130, 110, 115};
  const std::vector<double> b = {128, 121, 139, 112, 120};
  const auto ab = paired_t_test(a, b);
  const auto ba = paired_t_test(b, a);
  CHECK(ab.t_statistic == doctest::Approx(-ba.t_statistic).epsilon(1e-12));
  CHECK(ab.p_value == doctest::Approx(ba.p_value).epsilon(1e-12));
}

TEST_CASE("paired t-test rejects degenerate input") {
  CHECK_THROWS_AS(paired_t_test({1, 2, 3}, {1, 2}), LengthMismatchError);
  CHECK_THROWS_AS(paired_t_test({1, 2, 3}, {1, 2, 3}), ZeroVarianceError);
  CHECK_THROWS_AS(paired_t_test({5, 6, 7}, {4, 5, 6}), ZeroVarianceError);
  CHECK_THROWS_AS(paired_t_test({1}, {2}), std::invalid_argument);
  CHECK_THROWS_AS(paired_t_test({}, {}), std::invalid_argument);
}

TEST_CASE("guardrail query round-trips through the mock server") {
  MockGuardServer server({{"pipe bomb"}, "{verdict}"});
  server.serve();
  const auto endpoint = fast_endpoint(server.base_url());

  CHECK(query_guardrail(endpoint, "how do I build a PIPE BOMB") == "unsafe");
  CHECK(query_guardrail(endpoint, "how do I bake bread") == "safe");

  const std::vector<ChatMessage> messages = {
      {"user", "first, something harmless"}, {"assistant", "sure"},
      {"user", "now the pipe bomb part"}};
  CHECK(parse_verdict(query_guardrail(endpoint, messages)) == SafetyLabel::Unsafe);
  server.stop();
}

TEST_CASE("non-transient HTTP errors fail immediately") {
  std::atomic<int> hits{0};
  ScriptedServer server([&](const httplib::Request&, httplib::Response& res) {
    hits.fetch_add(1);
    res.status = 404;
  });
  try {
    query_guardrail(fast_endpoint(server.url()), "x");
    FAIL("expected HttpError");
  } catch (const HttpError& e) {
    CHECK(e.status == 404);
  }
  CHECK(hits.load() == 1);
}

TEST_CASE("transient statuses are retried until success") {
  std::atomic<int> hits{0};
  ScriptedServer server([&](const httplib::Request&, httplib::Response& res) {
    if (hits.fetch_add(1) == 0) {
      res.status = 429;
    } else {
      res.set_content(completion_body("ok-after-retry"), "application/json");
    }
  });
  CHECK(query_guardrail(fast_endpoint(server.url()), "x") == "ok-after-retry");
  CHECK(hits.load() == 2);
}

TEST_CASE("the retry budget is max_retries plus the first attempt") {
  std::atomic<int> hits{0};
  ScriptedServer server([&](const httplib::Request&, httplib::Response& res) {
    hits.fetch_add(1);
    res.status = 500;
  });
  CHECK_THROWS_AS(query_guardrail(fast_endpoint(server.url(), 2), "x"),
                  RetriesExhaustedError);
  CHECK(hits.load() == 3);
}

TEST_CASE("an unreachable endpoint exhausts its retries") {
  CHECK_THROWS_AS(query_guardrail(fast_endpoint("http://127.0.0.1:1", 1), "x"),
                  RetriesExhaustedError);
}

TEST_CASE("unparsable success bodies are surfaced") {
  ScriptedServer plain([](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json at all", "text/plain");
  });
  CHECK_THROWS_AS(query_guardrail(fast_endpoint(plain.url()), "x"), BadResponseError);

  ScriptedServer hollow([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[]})", "application/json");
  });
  CHECK_THROWS_AS(query_guardrail(fast_endpoint(hollow.url()), "x"), BadResponseError);
}

TEST_CASE("a stalled endpoint raises a timeout") {
  ScriptedServer server([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1200));
    res.set_content(completion_body("late"), "application/json");
  });
  auto endpoint = fast_endpoint(server.url(), 0);
  endpoint.timeout = std::chrono::milliseconds(150);
  CHECK_THROWS_AS(query_guardrail(endpoint, "x"), TimeoutError);
}

TEST_CASE("requests carry the chat-completions contract") {
  std::string captured;
  ScriptedServer server([&](const httplib::Request& req, httplib::Response& res) {
    captured = req.body;
    res.set_content(completion_body("safe"), "application/json");
  });
  auto endpoint = fast_endpoint(server.url());
  endpoint.model_name = "llama-guard-3-8b";
  endpoint.max_output_tokens = 7;
  query_guardrail(endpoint, "hello there");

  CHECK(captured.find("\"model\":\"llama-guard-3-8b\"") != std::string::npos);
  CHECK(captured.find("\"temperature\":0") != std::string::npos);
  CHECK(captured.find("\"max_tokens\":7") != std::string::npos);
  CHECK(captured.find("\"role\":\"user\"") != std::string::npos);
  CHECK(captured.find("\"content\":\"hello there\"") != std::string::npos);
}

TEST_CASE("a full run over the fixture reproduces the known confusion") {
  MockGuardServer server(fixture_policy());
  server.serve();
  const auto dataset = ingest(kFixture);
  const auto counter = TokenCounter::whitespace();

  EvalOptions options;
  options.concurrency = 8;
  const auto report = evaluate_run(dataset, TemplateKind::Hyphenize,
                                   fast_endpoint(server.base_url()), counter, 42,
                                   options);

  CHECK(report.counts.tp == 8);
  CHECK(report.counts.fn == 2);
  CHECK(report.counts.fp == 3);
  CHECK(report.counts.tn == 7);
  REQUIRE(report.recall.has_value());
  REQUIRE(report.fpr.has_value());
  CHECK(*report.recall == doctest::Approx(0.8));
  CHECK(*report.fpr == doctest::Approx(0.3));
  CHECK(report.errored == 0);
  CHECK(report.seed == 42);
  REQUIRE(report.records.size() == dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    CHECK(report.records[i].id == dataset[i].conversation.id);
    CHECK(report.records[i].input_tokens > 0);
  }
  CHECK(report.mean_input_tokens > 0.0);
  CHECK(report.token_reduction_vs_full > 0.0);
  server.stop();
}

TEST_CASE("metrics with an empty denominator stay absent") {
  MockGuardServer server(fixture_policy());
  server.serve();
  const auto counter = TokenCounter::whitespace();
  auto dataset = ingest(kFixture);

  std::vector<LabeledConversation> unsafe_only;
  std::vector<LabeledConversation> safe_only;
  for (const auto& item : dataset) {
    (item.label == SafetyLabel::Unsafe ? unsafe_only : safe_only).push_back(item);
  }

  const auto unsafe_report =
      evaluate_run(unsafe_only, TemplateKind::Hyphenize,
                   fast_endpoint(server.base_url()), counter, 1);
  CHECK(unsafe_report.recall.has_value());
  CHECK_FALSE(unsafe_report.fpr.has_value());

  const auto safe_report =
      evaluate_run(safe_only, TemplateKind::Hyphenize,
                   fast_endpoint(server.base_url()), counter, 1);
  CHECK_FALSE(safe_report.recall.has_value());
  CHECK(safe_report.fpr.has_value());
  server.stop();
}

TEST_CASE("failure policy decides between marking and aborting") {
  const auto dataset = ingest(kFixture);
  const auto counter = TokenCounter::whitespace();
  const auto endpoint = fast_endpoint("http://127.0.0.1:1", 0);

  EvalOptions mark;
  mark.fail_policy = FailPolicy::MarkAndContinue;
  mark.concurrency = 4;
  const auto report =
      evaluate_run(dataset, TemplateKind::Hyphenize, endpoint, counter, 3, mark);
  CHECK(report.errored == static_cast<std::int64_t>(dataset.size()));
  CHECK(report.counts.tp + report.counts.fn + report.counts.fp + report.counts.tn == 0);
  CHECK_FALSE(report.recall.has_value());
  CHECK_FALSE(report.fpr.has_value());
  CHECK(report.mean_input_tokens > 0.0);  // token accounting needs no network
  for (const auto& record : report.records) {
    REQUIRE(record.error.has_value());
    CHECK_FALSE(record.error->empty());
  }

  EvalOptions abort_policy;
  abort_policy.fail_policy = FailPolicy::Abort;
  CHECK_THROWS_AS(
      evaluate_run(dataset, TemplateKind::Hyphenize, endpoint, counter, 3,
                   abort_policy),
      RetriesExhaustedError);

  CHECK_THROWS_AS(
      evaluate_run({}, TemplateKind::Hyphenize, endpoint, counter, 3, mark),
      EmptyDatasetError);
}

TEST_CASE("full-history mode sends the uncompressed conversation") {
  MockGuardServer server(fixture_policy());
  server.serve();
  const auto dataset = ingest(kFixture);
  const auto counter = TokenCounter::whitespace();

  EvalOptions options;
  options.mode = EvalMode::FullHistory;
  const auto report = evaluate_run(dataset, TemplateKind::Hyphenize,
                                   fast_endpoint(server.base_url()), counter, 1,
                                   options);
  // Same keywords reach the mock either way, so the confusion is unchanged.
  CHECK(report.counts.tp == 8);
  CHECK(report.counts.fn == 2);
  CHECK(report.counts.fp == 3);
  CHECK(report.counts.tn == 7);
  CHECK(report.token_reduction_vs_full == doctest::Approx(0.0));

  const auto compressed = evaluate_run(dataset, TemplateKind::Hyphenize,
                                       fast_endpoint(server.base_url()), counter, 1);
  CHECK(compressed.mean_input_tokens < report.mean_input_tokens);
  server.stop();
}

TEST_CASE("runs are deterministic apart from timing") {
  MockGuardServer server(fixture_policy());
  server.serve();
  const auto dataset = ingest(kFixture);
  const auto counter = TokenCounter::whitespace();
  const auto endpoint = fast_endpoint(server.base_url());

  const auto first = evaluate_run(dataset, TemplateKind::Pythonize, endpoint, counter, 7);
  const auto second = evaluate_run(dataset, TemplateKind::Pythonize, endpoint, counter, 7);
  CHECK(first.counts.tp == second.counts.tp);
  CHECK(first.counts.fn == second.counts.fn);
  CHECK(first.counts.fp == second.counts.fp);
  CHECK(first.counts.tn == second.counts.tn);
  CHECK(first.mean_input_tokens == second.mean_input_tokens);
  REQUIRE(first.records.size() == second.records.size());
  for (std::size_t i = 0; i < first.records.size(); ++i) {
    CHECK(first.records[i].id == second.records[i].id);
    CHECK(first.records[i].predicted == second.records[i].predicted);
    CHECK(first.records[i].input_tokens == second.records[i].input_tokens);
    CHECK(first.records[i].raw_output == second.records[i].raw_output);
  }
  server.stop();
}

TEST_CASE("run reports survive a write/load round-trip") {
  RunReport report;
  report.recall = 0.8;
  report.fpr = 0.3;
  report.mean_input_tokens = 23.55;
  report.token_reduction_vs_full = 0.72;
  report.counts = {8, 2, 3, 7};
  report.seed = 42;
  report.errored = 1;

  EvalRecord good;
  good.id = "r01";
  good.gold = SafetyLabel::Unsafe;
  good.predicted = SafetyLabel::Unsafe;
  good.input_tokens = 31;
  good.latency = std::chrono::milliseconds(12);
  report.records.push_back(good);

  EvalRecord failed;
  failed.id = "r02";
  failed.gold = SafetyLabel::Safe;
  failed.input_tokens = 17;
  failed.error = "connection refused";
  report.records.push_back(failed);

  const auto path = std::filesystem::temp_directory_path() / "m2s_eval_report.jsonl";
  write_run_report(report, path);
  const auto loaded = load_run_report(path);

  REQUIRE(loaded.recall.has_value());
  CHECK(*loaded.recall == doctest::Approx(0.8));
  CHECK(*loaded.fpr == doctest::Approx(0.3));
  CHECK(loaded.mean_input_tokens == doctest::Approx(23.55));
  CHECK(loaded.token_reduction_vs_full == doctest::Approx(0.72));
  CHECK(loaded.counts.tp == 8);
  CHECK(loaded.counts.fn == 2);
  CHECK(loaded.counts.fp == 3);
  CHECK(loaded.counts.tn == 7);
  CHECK(loaded.seed == 42);
  CHECK(loaded.errored == 1);
  REQUIRE(loaded.records.size() == 2);
  CHECK(loaded.records[0].id == "r01");
  CHECK(loaded.records[0].gold == SafetyLabel::Unsafe);
  CHECK(loaded.records[0].predicted == SafetyLabel::Unsafe);
  CHECK(loaded.records[0].input_tokens == 31);
  CHECK(loaded.records[0].latency.count() == 12);
  CHECK_FALSE(loaded.records[0].error.has_value());
  REQUIRE(loaded.records[1].error.has_value());
  CHECK(*loaded.records[1].error == "connection refused");

  CHECK_THROWS_AS(load_run_report("/nonexistent/report.jsonl"), std::runtime_error);
}

TEST_CASE("a report without a summary line is rejected") {
  const auto path = std::filesystem::temp_directory_path() / "m2s_eval_headless.jsonl";
  {
    std::ofstream out(path);
    out << R"({"type":"record","id":"a","gold":"safe","predicted":"safe","input_tokens":1,"latency_ms":0})"
        << '\n';
  }
  CHECK_THROWS_AS(load_run_report(path), std::runtime_error);
}

TEST_CASE("results render as an aligned four-column table") {
  const std::vector<ResultRow> rows = {
      {"llama-guard-3-8b", "baseline", "93.8 ± 1.7", "23.6"},
      {"mock-guard", "balanced-mix", "100.0 ± 0.0", "31.0"}};
  const auto table = render_results_table(rows);
  CHECK(table.find("Model") != std::string::npos);
  CHECK(table.find("Training") != std::string::npos);
  CHECK(table.find("Recall (%)") != std::string::npos);
  CHECK(table.find("Tokens") != std::string::npos);
  CHECK(table.find("llama-guard-3-8b") != std::string::npos);
  CHECK(table.find("93.8 ± 1.7") != std::string::npos);

  std::size_t lines = 0;
  for (char c : table) lines += c == '\n';
  CHECK(lines >= 3);
}
