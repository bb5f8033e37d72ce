#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "m2s/core.hpp"
#include "m2s/tokenizer.hpp"

namespace m2s {

struct HttpError : std::runtime_error {
  HttpError(int status, const std::string& detail);
  int status;
};

struct TimeoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RetriesExhaustedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BadResponseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroVarianceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LengthMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientSeedsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GuardEndpoint {
  std::string base_url;     // e.g. "http://127.0.0.1:8441"
  std::string model_name;
  std::chrono::milliseconds timeout{10000};
  int max_retries = 2;      // retries after the first attempt
  std::optional<std::string> auth_token;
  int max_output_tokens = 64;
  std::chrono::milliseconds retry_backoff{200};  // doubles per retry
};

struct ChatMessage {
  std::string role;
  std::string content;
};

// One POST to <base_url>/v1/chat/completions with a single user message.
// Retries transient failures (connection errors, timeouts, HTTP 429/5xx)
// with exponential backoff; other HTTP statuses raise HttpError at once.
// After the retry budget: TimeoutError if the last failure was a timeout,
// RetriesExhaustedError otherwise. BadResponseError on unparsable success.
std::string query_guardrail(const GuardEndpoint& endpoint, const std::string& prompt);

/// Same contract with a caller-built message list (full-history pass-through).
std::string query_guardrail(const GuardEndpoint& endpoint,
                            const std::vector<ChatMessage>& messages);

/// Unsafe iff the lowercased output contains "unsafe". Total.
SafetyLabel parse_verdict(std::string_view raw);

struct EvalRecord {
  std::string id;
  SafetyLabel gold = SafetyLabel::Safe;
  SafetyLabel predicted = SafetyLabel::Safe;
  std::int64_t input_tokens = 0;
  std::string raw_output;
  std::chrono::milliseconds latency{0};
  std::optional<std::string> error;  // set when the query failed
};

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fn = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
};

// recall/fpr are absent (not 0) when their denominator is empty. Errored
// records never enter the confusion counts; token statistics cover every
// record since input tokens are known before the query is made.
struct RunReport {
  std::optional<double> recall;
  std::optional<double> fpr;
  double mean_input_tokens = 0.0;
  double token_reduction_vs_full = 0.0;
  ConfusionCounts counts;
  std::uint64_t seed = 0;
  std::int64_t errored = 0;
  std::vector<EvalRecord> records;
};

enum class FailPolicy { Abort, MarkAndContinue };
enum class EvalMode { Compressed, FullHistory };

struct EvalOptions {
  std::size_t concurrency = 8;
  FailPolicy fail_policy = FailPolicy::MarkAndContinue;
  EvalMode mode = EvalMode::Compressed;
};

// Compress each conversation with template_kind (or serialize the full
// message list in FullHistory mode), query the endpoint under a bounded
// in-flight limit, parse verdicts, and reduce to metrics. Record order
// matches dataset order regardless of completion order.
// Throws EmptyDatasetError; endpoint errors follow options.fail_policy.
RunReport evaluate_run(const std::vector<LabeledConversation>& dataset,
                       TemplateKind template_kind, const GuardEndpoint& endpoint,
                       const TokenCounter& counter, std::uint64_t seed,
                       const EvalOptions& options = {});

struct AggregateReport {
  std::vector<RunReport> per_seed;
  std::optional<double> recall_mean;
  std::optional<double> recall_std;
  std::optional<double> fpr_mean;
  std::optional<double> fpr_std;
  double mean_input_tokens = 0.0;
};

// Mean and sample standard deviation (n-1 denominator) of recall and fpr
// across runs. A metric's std is absent when fewer than two runs define it.
// Throws InsufficientSeedsError for fewer than 2 reports.
AggregateReport aggregate_seeds(std::vector<RunReport> reports);

struct MeanStd {
  double mean = 0.0;
  double std_dev = 0.0;  // sample std, n-1 denominator; 0 when n == 1
};

MeanStd mean_and_sample_std(const std::vector<double>& values);

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  std::int64_t df = 0;
};

// Standard paired t-test: t = mean(d) / (std(d)/sqrt(n)), df = n-1,
// two-sided p. Throws LengthMismatchError, ZeroVarianceError (all
// differences equal), std::invalid_argument for fewer than 2 pairs.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Line-delimited report: one record line per evaluated conversation
// (raw_output deliberately dropped; verdicts can be re-derived) and a
// trailing summary line.
void write_run_report(const RunReport& report, const std::filesystem::path& path);
RunReport load_run_report(const std::filesystem::path& path);

/// "93.8 ± 1.7" at one-decimal rounding.
std::string format_mean_std(double mean, double std_dev);

struct ResultRow {
  std::string model;
  std::string training;
  std::string recall;
  std::string tokens;
};

/// Four-column text table: Model / Training / Recall (%) / Tokens.
std::string render_results_table(const std::vector<ResultRow>& rows);

}  // namespace m2s
