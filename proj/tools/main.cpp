#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "m2s/complexity.hpp"
#include "m2s/compressor.hpp"
#include "m2s/core.hpp"
#include "m2s/dataset.hpp"
#include "m2s/eval.hpp"
#include "m2s/mock_guard.hpp"
#include "m2s/tokenizer.hpp"

namespace {

using namespace m2s;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

TokenCounter make_counter(const std::string& scheme, const std::string& vocab_path) {
  if (scheme == "whitespace") return TokenCounter::whitespace();
  if (scheme == "char4") return TokenCounter::char_quarter();
  if (scheme == "vocab") {
    if (vocab_path.empty()) {
      throw CLI::ValidationError("--vocab", "required when --scheme vocab is used");
    }
    return TokenCounter::from_vocab_file(vocab_path);
  }
  throw CLI::ValidationError("--scheme", "unknown scheme \"" + scheme + "\"");
}

std::string substitute_seed(std::string name, std::uint64_t seed) {
  static constexpr std::string_view kSlot = "{seed}";
  const auto value = std::to_string(seed);
  std::size_t pos = 0;
  while ((pos = name.find(kSlot, pos)) != std::string::npos) {
    name.replace(pos, kSlot.size(), value);
    pos += value.size();
  }
  return name;
}

std::filesystem::path seed_report_path(const std::filesystem::path& base,
                                       std::uint64_t seed, bool multi_seed) {
  if (!multi_seed) return base;
  const auto ext = base.extension().string();
  auto named = base;
  named.replace_extension();
  return std::filesystem::path(named.string() + ".seed" + std::to_string(seed) + ext);
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
  return buf;
}

struct CompressArgs {
  std::string input;
  std::string output = "-";
  std::string template_name;
  std::string format = "jsonl";
};

int run_compress(const CompressArgs& args) {
  const auto kind = template_from_string(args.template_name);
  const auto data = ingest(args.input);

  std::ostringstream text;
  for (const auto& item : data) {
    const auto compressed = compress(item.conversation, kind);
    if (args.format == "text") {
      text << compressed.text << '\n';
    } else {
      nlohmann::json record;
      record["id"] = item.conversation.id;
      record["label"] = std::string(to_string(item.label));
      record["template"] = std::string(to_string(kind));
      record["prompt"] = compressed.text;
      text << record.dump() << '\n';
    }
  }

  if (args.output == "-") {
    std::cout << text.str();
  } else {
    std::ofstream out(args.output, std::ios::binary);
    if (!out) {
      throw std::runtime_error("cannot write " + args.output);
    }
    out << text.str();
  }
  return 0;
}

struct BuildDatasetArgs {
  std::string input;
  std::string out_dir;
  std::string template_name = "all";
  std::uint64_t seed = 0;
  std::int64_t min_turns = 8;
  bool no_balance = false;
  bool skip_prefix = false;
};

int run_build_dataset(const BuildDatasetArgs& args) {
  const auto policy = args.template_name == "all"
                          ? TemplatePolicy::mixed_all()
                          : TemplatePolicy::single(template_from_string(args.template_name));

  auto data = ingest(args.input);
  const auto ingested = data.size();
  data = filter_min_turns(data, args.min_turns);
  const auto filtered = data.size();
  if (!args.no_balance) {
    data = balance(data, args.seed);
  }

  const std::filesystem::path out_dir(args.out_dir);
  std::filesystem::create_directories(out_dir);

  const auto manifest = emit_m2s_set(data, policy, args.seed,
                                     out_dir / "m2s_train.jsonl", args.min_turns);
  emit_training_manifest(manifest, out_dir / "manifest.json");
  if (!args.skip_prefix) {
    emit_multiturn_prefix_set(data, out_dir / "multiturn_prefix_train.jsonl",
                              args.min_turns, args.seed);
  }

  std::cout << "ingested " << ingested << " records, " << filtered
            << " past the min-turns filter, " << manifest.total << " kept\n";
  std::cout << "unsafe " << manifest.unsafe_count << ", safe " << manifest.safe_count
            << ", avg user turns " << manifest.avg_user_turns << '\n';
  std::cout << "template policy " << manifest.template_policy << ", seed "
            << manifest.seed << '\n';
  std::cout << "wrote " << (out_dir / "m2s_train.jsonl").string();
  if (!args.skip_prefix) {
    std::cout << ", " << (out_dir / "multiturn_prefix_train.jsonl").string();
  }
  std::cout << ", " << (out_dir / "manifest.json").string() << '\n';
  return 0;
}

struct ComplexityArgs {
  std::vector<std::int64_t> turns = {2, 5, 10, 15, 20};
  double avg_user = 100.0;
  double avg_assistant = 100.0;
  std::string audit_path;
  std::string scheme = "whitespace";
  std::string vocab_path;
  std::string template_name = "all";
};

int run_complexity(const ComplexityArgs& args) {
  if (args.audit_path.empty()) {
    std::cout << render_scaling_table(
        scaling_table(args.turns, args.avg_user, args.avg_assistant));
    return 0;
  }

  const auto data = ingest(args.audit_path);
  const auto counter = make_counter(args.scheme, args.vocab_path);
  std::vector<TemplateKind> kinds;
  if (args.template_name == "all") {
    kinds.assign(kAllTemplates.begin(), kAllTemplates.end());
  } else {
    kinds.push_back(template_from_string(args.template_name));
  }
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (i > 0) std::cout << '\n';
    std::cout << render_audit_report(empirical_audit(data, counter, kinds[i]));
  }
  return 0;
}

struct EvaluateArgs {
  std::string input;
  std::string template_name = "hyphenize";
  std::string endpoint_url;
  bool use_mock = false;
  std::vector<std::string> mock_keywords;
  std::string model = "mock-guard";
  std::string scheme = "whitespace";
  std::string vocab_path;
  std::vector<std::uint64_t> seeds;
  std::size_t concurrency = 8;
  int max_tokens = 64;
  std::int64_t timeout_ms = 10000;
  int retries = 2;
  std::string fail_policy = "continue";
  bool full_history = false;
  std::string report_path;
  std::vector<std::string> compare_paths;
  std::string t_test_unit = "seed";
};

std::vector<double> correctness_by_id(const RunReport& report,
                                      const std::vector<std::string>& ids) {
  std::vector<double> values;
  values.reserve(ids.size());
  for (const auto& id : ids) {
    for (const auto& record : report.records) {
      if (record.id != id || record.error) continue;
      values.push_back(record.predicted == record.gold ? 1.0 : 0.0);
      break;
    }
  }
  return values;
}

void print_t_test(const EvaluateArgs& args, const std::vector<RunReport>& reports) {
  std::vector<double> ours;
  std::vector<double> theirs;
  if (args.t_test_unit == "seed") {
    std::vector<RunReport> loaded;
    for (const auto& path : args.compare_paths) {
      loaded.push_back(load_run_report(path));
    }
    for (const auto& report : reports) {
      if (!report.recall) throw std::runtime_error("t-test: a run has no recall");
      ours.push_back(*report.recall);
    }
    for (const auto& report : loaded) {
      if (!report.recall) throw std::runtime_error("t-test: a compared run has no recall");
      theirs.push_back(*report.recall);
    }
  } else {
    if (args.compare_paths.size() != 1) {
      throw std::runtime_error("t-test unit \"sample\" needs exactly one --compare file");
    }
    const auto other = load_run_report(args.compare_paths.front());
    std::vector<std::string> shared_ids;
    for (const auto& record : reports.front().records) {
      if (record.error) continue;
      for (const auto& candidate : other.records) {
        if (candidate.id == record.id && !candidate.error) {
          shared_ids.push_back(record.id);
          break;
        }
      }
    }
    ours = correctness_by_id(reports.front(), shared_ids);
    theirs = correctness_by_id(other, shared_ids);
  }

  try {
    const auto result = paired_t_test(ours, theirs);
    std::printf("Paired t-test (unit: %s): t = %.4f, df = %lld, p = %.6g\n",
                args.t_test_unit.c_str(), result.t_statistic,
                static_cast<long long>(result.df), result.p_value);
  } catch (const ZeroVarianceError&) {
    std::printf("Paired t-test (unit: %s): all differences identical, no variance\n",
                args.t_test_unit.c_str());
  }
}

int run_evaluate(const EvaluateArgs& args) {
  if (args.use_mock == !args.endpoint_url.empty()) {
    throw CLI::ValidationError("evaluate", "pass exactly one of --endpoint or --mock");
  }

  const auto data = ingest(args.input);
  const auto counter = make_counter(args.scheme, args.vocab_path);
  const auto kind = template_from_string(args.template_name);

  std::optional<MockGuardServer> mock;
  GuardEndpoint endpoint;
  if (args.use_mock) {
    MockPolicy policy;
    policy.blocked_keywords = args.mock_keywords;
    mock.emplace(std::move(policy));
    mock->serve(0);
    endpoint.base_url = mock->base_url();
  } else {
    endpoint.base_url = args.endpoint_url;
    if (const char* token = std::getenv("M2SGUARD_API_TOKEN")) {
      endpoint.auth_token = token;
    }
  }
  endpoint.timeout = std::chrono::milliseconds(args.timeout_ms);
  endpoint.max_retries = args.retries;
  endpoint.max_output_tokens = args.max_tokens;

  EvalOptions options;
  options.concurrency = args.concurrency;
  options.fail_policy =
      args.fail_policy == "abort" ? FailPolicy::Abort : FailPolicy::MarkAndContinue;
  options.mode = args.full_history ? EvalMode::FullHistory : EvalMode::Compressed;

  std::vector<RunReport> reports;
  for (const auto seed : args.seeds) {
    endpoint.model_name = substitute_seed(args.model, seed);
    reports.push_back(evaluate_run(data, kind, endpoint, counter, seed, options));
  }
  if (mock) mock->stop();

  if (!args.report_path.empty()) {
    for (const auto& report : reports) {
      write_run_report(report, seed_report_path(args.report_path, report.seed,
                                                args.seeds.size() > 1));
    }
  }

  const std::string training_label =
      args.full_history ? "full-history" : "m2s-" + std::string(to_string(kind));
  std::int64_t errored = 0;
  for (const auto& report : reports) {
    errored += report.errored;
    std::printf("seed %llu: recall %s, fpr %s, mean input tokens %.1f, errors %lld\n",
                static_cast<unsigned long long>(report.seed),
                report.recall ? format_percent(*report.recall).c_str() : "-",
                report.fpr ? format_percent(*report.fpr).c_str() : "-",
                report.mean_input_tokens,
                static_cast<long long>(report.errored));
  }

  std::string recall_text = "-";
  std::string fpr_text = "-";
  double mean_tokens = 0.0;
  double reduction = 0.0;
  if (reports.size() >= 2) {
    const auto aggregate = aggregate_seeds(reports);
    if (aggregate.recall_mean) {
      recall_text = aggregate.recall_std
                        ? format_mean_std(*aggregate.recall_mean * 100.0,
                                          *aggregate.recall_std * 100.0)
                        : format_percent(*aggregate.recall_mean);
    }
    if (aggregate.fpr_mean) {
      fpr_text = aggregate.fpr_std ? format_mean_std(*aggregate.fpr_mean * 100.0,
                                                     *aggregate.fpr_std * 100.0)
                                   : format_percent(*aggregate.fpr_mean);
    }
    mean_tokens = aggregate.mean_input_tokens;
    for (const auto& report : aggregate.per_seed) {
      reduction += report.token_reduction_vs_full;
    }
    reduction /= static_cast<double>(aggregate.per_seed.size());
  } else {
    const auto& only = reports.front();
    if (only.recall) recall_text = format_percent(*only.recall);
    if (only.fpr) fpr_text = format_percent(*only.fpr);
    mean_tokens = only.mean_input_tokens;
    reduction = only.token_reduction_vs_full;
  }

  char tokens_text[32];
  std::snprintf(tokens_text, sizeof(tokens_text), "%.0f", mean_tokens);
  std::cout << render_results_table(
      {{args.model, training_label, recall_text, tokens_text}});
  std::printf("FPR (%%): %s\n", fpr_text.c_str());
  std::printf("Token reduction vs full history: %s%%\n",
              format_percent(reduction).c_str());
  if (errored > 0) {
    std::printf("errored records across runs: %lld\n", static_cast<long long>(errored));
  }

  if (!args.compare_paths.empty()) {
    print_t_test(args, reports);
  }
  return 0;
}

struct MockServeArgs {
  int port = 0;
  std::vector<std::string> keywords;
  std::string verdict_format = "{verdict}";
};

int run_mock_serve(const MockServeArgs& args) {
  MockPolicy policy;
  policy.blocked_keywords = args.keywords;
  policy.verdict_format = args.verdict_format;
  MockGuardServer server(std::move(policy));
  server.serve(args.port);
  std::cout << "mock guard listening on " << server.base_url() << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-turn conversation compression and guardrail evaluation"};
  app.require_subcommand(1);

  CompressArgs compress_args;
  auto* compress_cmd =
      app.add_subcommand("compress", "Compress conversations into single-turn prompts");
  compress_cmd->add_option("--input", compress_args.input, "Line-delimited conversation file")
      ->required()
      ->check(CLI::ExistingFile);
  compress_cmd->add_option("--output", compress_args.output, "Output path, - for stdout");
  compress_cmd
      ->add_option("--template", compress_args.template_name, "Compression template")
      ->required()
      ->check(CLI::IsMember({"hyphenize", "numberize", "pythonize"}));
  compress_cmd->add_option("--format", compress_args.format, "Output format")
      ->check(CLI::IsMember({"jsonl", "text"}));

  BuildDatasetArgs build_args;
  auto* build_cmd = app.add_subcommand(
      "build-dataset", "Filter, balance and emit training sets plus a manifest");
  build_cmd->add_option("--input", build_args.input, "Line-delimited conversation file")
      ->required()
      ->check(CLI::ExistingFile);
  build_cmd->add_option("--out-dir", build_args.out_dir, "Output directory")->required();
  build_cmd
      ->add_option("--template", build_args.template_name,
                   "Template policy; all = even mixed assignment")
      ->check(CLI::IsMember({"hyphenize", "numberize", "pythonize", "all"}));
  build_cmd->add_option("--seed", build_args.seed, "Balancing/assignment seed")->required();
  build_cmd->add_option("--min-turns", build_args.min_turns, "Minimum user turns")
      ->check(CLI::PositiveNumber);
  build_cmd->add_flag("--no-balance", build_args.no_balance, "Skip class balancing");
  build_cmd->add_flag("--skip-prefix", build_args.skip_prefix,
                      "Skip the multi-turn prefix set");

  ComplexityArgs complexity_args;
  auto* complexity_cmd = app.add_subcommand(
      "complexity", "Closed-form token-cost table or an empirical dataset audit");
  complexity_cmd->add_option("--turns", complexity_args.turns, "Turn counts")
      ->delimiter(',');
  complexity_cmd->add_option("--u", complexity_args.avg_user, "Avg tokens per user turn");
  complexity_cmd->add_option("--r", complexity_args.avg_assistant,
                             "Avg tokens per assistant response");
  complexity_cmd
      ->add_option("--audit", complexity_args.audit_path,
                   "Dataset to audit instead of the closed-form table")
      ->check(CLI::ExistingFile);
  complexity_cmd->add_option("--scheme", complexity_args.scheme, "Token scheme")
      ->check(CLI::IsMember({"whitespace", "char4", "vocab"}));
  complexity_cmd->add_option("--vocab", complexity_args.vocab_path, "Vocabulary file")
      ->check(CLI::ExistingFile);
  complexity_cmd
      ->add_option("--template", complexity_args.template_name, "Template(s) to audit")
      ->check(CLI::IsMember({"hyphenize", "numberize", "pythonize", "all"}));

  EvaluateArgs evaluate_args;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "Run the compress/query/score loop over a dataset");
  evaluate_cmd->add_option("--input", evaluate_args.input, "Line-delimited conversation file")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate_cmd
      ->add_option("--template", evaluate_args.template_name, "Compression template")
      ->check(CLI::IsMember({"hyphenize", "numberize", "pythonize"}));
  evaluate_cmd->add_option("--endpoint", evaluate_args.endpoint_url,
                           "Guardrail base URL, e.g. http://127.0.0.1:8441");
  evaluate_cmd->add_flag("--mock", evaluate_args.use_mock,
                         "Evaluate against an in-process mock guard");
  evaluate_cmd
      ->add_option("--mock-keywords", evaluate_args.mock_keywords,
                   "Blocked keywords for --mock")
      ->delimiter(',');
  evaluate_cmd->add_option("--model", evaluate_args.model,
                           "Model name; {seed} expands per evaluated seed");
  evaluate_cmd->add_option("--scheme", evaluate_args.scheme, "Token scheme")
      ->check(CLI::IsMember({"whitespace", "char4", "vocab"}));
  evaluate_cmd->add_option("--vocab", evaluate_args.vocab_path, "Vocabulary file")
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--seeds", evaluate_args.seeds, "Seeds to evaluate")
      ->required()
      ->delimiter(',');
  evaluate_cmd->add_option("--concurrency", evaluate_args.concurrency,
                           "Max in-flight requests");
  evaluate_cmd->add_option("--max-tokens", evaluate_args.max_tokens,
                           "Max completion tokens requested");
  evaluate_cmd->add_option("--timeout-ms", evaluate_args.timeout_ms, "Per-request timeout");
  evaluate_cmd->add_option("--retries", evaluate_args.retries,
                           "Retries after the first attempt");
  evaluate_cmd->add_option("--fail-policy", evaluate_args.fail_policy,
                           "abort: first endpoint error stops the run")
      ->check(CLI::IsMember({"abort", "continue"}));
  evaluate_cmd->add_flag("--full-history", evaluate_args.full_history,
                         "Send the full message list instead of compressing");
  evaluate_cmd->add_option("--report", evaluate_args.report_path,
                           "Write per-seed line-delimited run reports");
  evaluate_cmd->add_option("--compare", evaluate_args.compare_paths,
                           "Prior run report(s) to t-test against");
  evaluate_cmd->add_option("--t-test-unit", evaluate_args.t_test_unit,
                           "Pairing unit for --compare")
      ->check(CLI::IsMember({"seed", "sample"}));

  MockServeArgs mock_args;
  auto* mock_cmd = app.add_subcommand("mock-serve", "Run the keyword mock guard service");
  mock_cmd->add_option("--port", mock_args.port, "Port, 0 picks a free one");
  mock_cmd->add_option("--keywords", mock_args.keywords, "Blocked keywords")
      ->required()
      ->delimiter(',');
  mock_cmd->add_option("--verdict-format", mock_args.verdict_format,
                       "Reply template; {verdict} is replaced");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*compress_cmd) return run_compress(compress_args);
    if (*build_cmd) return run_build_dataset(build_args);
    if (*complexity_cmd) return run_complexity(complexity_args);
    if (*evaluate_cmd) return run_evaluate(evaluate_args);
    if (*mock_cmd) return run_mock_serve(mock_args);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
