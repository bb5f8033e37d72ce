#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "m2s/core.hpp"
#include "m2s/tokenizer.hpp"

namespace m2s {

struct DivisionByZeroError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class CostRegime { Baseline, M2S };

// Closed-form inputs: n turns, average tokens per user turn (U) and per
// assistant response (R).
struct CostParams {
  std::int64_t turns = 1;
  double avg_user_tokens = 0.0;
  double avg_assistant_tokens = 0.0;
};

struct CostBreakdown {
  double gen_tokens = 0.0;
  double train_tokens = 0.0;
  double total = 0.0;
  CostRegime regime = CostRegime::Baseline;
};

// Multi-turn pipeline: every turn k pays the full k-turn prefix, once to
// generate the assistant response and once as a training sample.
//   gen   = n(n+1)/2 * U + n(n-1)/2 * R
//   train = n(n+1)/2 * (U + R)
CostBreakdown baseline_cost(const CostParams& params);

// Single-turn compression: no generation phase, one sample of n user turns.
// Template overhead is modeled as zero here; empirical_audit measures it.
CostBreakdown m2s_cost(const CostParams& params);

/// baseline total / M2S total. Throws DivisionByZeroError when n*U == 0.
double cost_ratio(const CostParams& params);

struct ScalingRow {
  std::int64_t turns = 0;
  double m2s_total = 0.0;
  double baseline_total = 0.0;
  double ratio = 0.0;
};

std::vector<ScalingRow> scaling_table(const std::vector<std::int64_t>& turns,
                                      double avg_user_tokens,
                                      double avg_assistant_tokens);

// Four-column text table (Turns, M2S Tokens, Multi-turn Tokens, Ratio) with
// thousands separators and ratios like "21.0x".
std::string render_scaling_table(const std::vector<ScalingRow>& rows);

// Exact per-turn recount of both pipelines over a real dataset.
struct AuditReport {
  std::int64_t phase1_baseline = 0;   // generation-phase input tokens
  std::int64_t phase2_baseline = 0;   // training tokens over k-turn prefixes
  std::int64_t phase2_m2s = 0;        // training tokens over compressed prompts
  std::int64_t template_overhead = 0; // phase2_m2s minus bare user-turn tokens
  std::int64_t conversations = 0;
  double avg_baseline_per_sample = 0.0;
  double avg_m2s_per_sample = 0.0;
  double empirical_ratio = 0.0;       // (phase1 + phase2 baseline) / phase2_m2s
  TemplateKind template_kind = TemplateKind::Hyphenize;
  TokenSchemeKind scheme = TokenSchemeKind::Whitespace;
};

// Sums exact per-turn counts; averages are derived afterwards, never used in
// the totals. A conversation missing assistant responses contributes zero
// assistant tokens for those slots. Work is spread over conversations;
// max_threads 0 means one worker per hardware thread.
// Throws EmptyDatasetError on an empty dataset.
AuditReport empirical_audit(const std::vector<LabeledConversation>& dataset,
                            const TokenCounter& counter,
                            TemplateKind template_kind,
                            std::size_t max_threads = 0);

// Text report with Phase 1 / Phase 2 / Total / Avg per Sample rows, one
// column per pipeline.
std::string render_audit_report(const AuditReport& report);

}  // namespace m2s
