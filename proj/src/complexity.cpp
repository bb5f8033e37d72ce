#include "m2s/complexity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include "m2s/compressor.hpp"
#include "m2s/parallel.hpp"

namespace m2s {

namespace {

void validate(const CostParams& params) {
  if (params.turns < 1) {
    throw std::invalid_argument("cost params: turns must be >= 1");
  }
  if (params.avg_user_tokens < 0.0 || params.avg_assistant_tokens < 0.0) {
    throw std::invalid_argument("cost params: token averages must be >= 0");
  }
}

std::string group_digits(std::string digits) {
  for (auto pos = static_cast<std::ptrdiff_t>(digits.size()) - 3; pos > 0; pos -= 3) {
    digits.insert(static_cast<std::size_t>(pos), ",");
  }
  return digits;
}

// 21000 -> "21,000"; non-integral values keep one decimal: "217.1".
std::string format_tokens(double value) {
  const double rounded = std::round(value);
  char buf[64];
  if (std::abs(value - rounded) < 1e-9) {
    std::snprintf(buf, sizeof(buf), "%.0f", rounded);
    return group_digits(buf);
  }
  std::snprintf(buf, sizeof(buf), "%.1f", value);
  std::string text = buf;
  const auto dot = text.find('.');
  return group_digits(text.substr(0, dot)) + text.substr(dot);
}

std::string format_ratio(double ratio) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1fx", ratio);
  return buf;
}

std::string pad_left(const std::string& text, std::size_t width) {
  if (text.size() >= width) return text;
  return std::string(width - text.size(), ' ') + text;
}

std::string pad_right(const std::string& text, std::size_t width) {
  if (text.size() >= width) return text;
  return text + std::string(width - text.size(), ' ');
}

struct ConversationTotals {
  std::int64_t phase1 = 0;
  std::int64_t phase2_baseline = 0;
  std::int64_t phase2_m2s = 0;
  std::int64_t user_tokens = 0;
};

ConversationTotals audit_one(const Conversation& conversation,
                             const TokenCounter& counter,
                             TemplateKind template_kind) {
  std::vector<std::int64_t> user_counts;
  std::vector<std::int64_t> assistant_counts;
  for (const auto& turn : conversation.turns) {
    const auto tokens = counter.count(turn.text);
    if (turn.role == Role::User) {
      user_counts.push_back(tokens);
    } else {
      assistant_counts.push_back(tokens);
    }
  }

  ConversationTotals totals;
  const std::size_t n = user_counts.size();
  if (n == 0) return totals;

  std::int64_t user_prefix = 0;
  std::int64_t assistant_prefix_for_gen = 0;   // first k-1 responses
  std::int64_t assistant_prefix_for_train = 0; // first k responses
  for (std::size_t k = 1; k <= n; ++k) {
    user_prefix += user_counts[k - 1];
    if (k >= 2 && k - 2 < assistant_counts.size()) {
      assistant_prefix_for_gen += assistant_counts[k - 2];
    }
    if (k - 1 < assistant_counts.size()) {
      assistant_prefix_for_train += assistant_counts[k - 1];
    }
    totals.phase1 += user_prefix + assistant_prefix_for_gen;
    totals.phase2_baseline += user_prefix + assistant_prefix_for_train;
  }

  totals.user_tokens = user_prefix;
  totals.phase2_m2s = counter.count(compress(conversation, template_kind).text);
  return totals;
}

}  // namespace

CostBreakdown baseline_cost(const CostParams& params) {
  validate(params);
  const double n = static_cast<double>(params.turns);
  const double user = params.avg_user_tokens;
  const double assistant = params.avg_assistant_tokens;
  CostBreakdown breakdown;
  breakdown.regime = CostRegime::Baseline;
  breakdown.gen_tokens = n * (n + 1) / 2 * user + n * (n - 1) / 2 * assistant;
  breakdown.train_tokens = n * (n + 1) / 2 * (user + assistant);
  breakdown.total = breakdown.gen_tokens + breakdown.train_tokens;
  return breakdown;
}

CostBreakdown m2s_cost(const CostParams& params) {
  validate(params);
  CostBreakdown breakdown;
  breakdown.regime = CostRegime::M2S;
  breakdown.gen_tokens = 0.0;
  breakdown.train_tokens = static_cast<double>(params.turns) * params.avg_user_tokens;
  breakdown.total = breakdown.train_tokens;
  return breakdown;
}

double cost_ratio(const CostParams& params) {
  const auto m2s = m2s_cost(params);
  if (m2s.total <= 0.0) {
    throw DivisionByZeroError("cost ratio undefined: n * U is zero");
  }
  return baseline_cost(params).total / m2s.total;
}

std::vector<ScalingRow> scaling_table(const std::vector<std::int64_t>& turns,
                                      double avg_user_tokens,
                                      double avg_assistant_tokens) {
  std::vector<ScalingRow> rows;
  rows.reserve(turns.size());
  for (const auto n : turns) {
    CostParams params{n, avg_user_tokens, avg_assistant_tokens};
    ScalingRow row;
    row.turns = n;
    row.m2s_total = m2s_cost(params).total;
    row.baseline_total = baseline_cost(params).total;
    row.ratio = cost_ratio(params);
    rows.push_back(row);
  }
  return rows;
}

std::string render_scaling_table(const std::vector<ScalingRow>& rows) {
  static constexpr std::size_t kTurnsWidth = 9;
  static constexpr std::size_t kTokensWidth = 18;
  static constexpr std::size_t kRatioWidth = 8;

  std::ostringstream out;
  out << pad_right("Turns", kTurnsWidth) << pad_left("M2S Tokens", kTokensWidth)
      << pad_left("Multi-turn Tokens", kTokensWidth + 1)
      << pad_left("Ratio", kRatioWidth) << '\n';
  for (const auto& row : rows) {
    out << pad_right(std::to_string(row.turns), kTurnsWidth)
        << pad_left(format_tokens(row.m2s_total), kTokensWidth)
        << pad_left(format_tokens(row.baseline_total), kTokensWidth + 1)
        << pad_left(format_ratio(row.ratio), kRatioWidth) << '\n';
  }
  return out.str();
}

AuditReport empirical_audit(const std::vector<LabeledConversation>& dataset,
                            const TokenCounter& counter,
                            TemplateKind template_kind,
                            std::size_t max_threads) {
  if (dataset.empty()) {
    throw EmptyDatasetError("empirical audit: dataset is empty");
  }

  std::vector<ConversationTotals> per_conversation(dataset.size());
  parallel_for_index(dataset.size(), max_threads, [&](std::size_t index) {
    per_conversation[index] =
        audit_one(dataset[index].conversation, counter, template_kind);
  });

  AuditReport report;
  report.template_kind = template_kind;
  report.scheme = counter.kind();
  report.conversations = static_cast<std::int64_t>(dataset.size());
  std::int64_t user_tokens = 0;
  for (const auto& totals : per_conversation) {
    report.phase1_baseline += totals.phase1;
    report.phase2_baseline += totals.phase2_baseline;
    report.phase2_m2s += totals.phase2_m2s;
    user_tokens += totals.user_tokens;
  }
  report.template_overhead = report.phase2_m2s - user_tokens;

  const auto baseline_total = report.phase1_baseline + report.phase2_baseline;
  report.avg_baseline_per_sample =
      static_cast<double>(baseline_total) / static_cast<double>(report.conversations);
  report.avg_m2s_per_sample =
      static_cast<double>(report.phase2_m2s) / static_cast<double>(report.conversations);
  report.empirical_ratio =
      report.phase2_m2s > 0
          ? static_cast<double>(baseline_total) / static_cast<double>(report.phase2_m2s)
          : 0.0;
  return report;
}

std::string render_audit_report(const AuditReport& report) {
  static constexpr std::size_t kLabelWidth = 22;
  static constexpr std::size_t kColumnWidth = 16;

  const auto baseline_total = report.phase1_baseline + report.phase2_baseline;
  const auto row = [&](const std::string& label, const std::string& m2s,
                       const std::string& baseline) {
    return pad_right(label, kLabelWidth) + pad_left(m2s, kColumnWidth) +
           pad_left(baseline, kColumnWidth) + '\n';
  };

  std::ostringstream out;
  out << "Token audit: " << to_string(report.scheme) << " scheme, "
      << to_string(report.template_kind) << " template, "
      << report.conversations << " conversations\n";
  out << row("", "M2S", "Multi-turn");
  out << row("Phase 1 (generation)", "0",
             format_tokens(static_cast<double>(report.phase1_baseline)));
  out << row("Phase 2 (training)",
             format_tokens(static_cast<double>(report.phase2_m2s)),
             format_tokens(static_cast<double>(report.phase2_baseline)));
  out << row("Total", format_tokens(static_cast<double>(report.phase2_m2s)),
             format_tokens(static_cast<double>(baseline_total)));
  out << row("Avg per Sample", format_tokens(report.avg_m2s_per_sample),
             format_tokens(report.avg_baseline_per_sample));
  out << "Template overhead: "
      << format_tokens(static_cast<double>(report.template_overhead))
      << " tokens\n";
  out << "Empirical ratio: " << format_ratio(report.empirical_ratio) << '\n';
  return out.str();
}

}  // namespace m2s
