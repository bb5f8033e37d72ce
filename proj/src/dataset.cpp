#include "m2s/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "m2s/parallel.hpp"
#include "m2s/rng.hpp"

namespace m2s {

namespace {

using nlohmann::json;

std::string require_string(const json& record, const char* key, std::size_t line) {
  const auto it = record.find(key);
  if (it == record.end()) {
    throw ParseError(line, std::string("missing key \"") + key + "\"");
  }
  if (!it->is_string()) {
    throw ParseError(line, std::string("key \"") + key + "\" is not a string");
  }
  return it->get<std::string>();
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

DatasetManifest summarize(const std::vector<LabeledConversation>& data,
                          std::string policy_name, std::uint64_t seed,
                          std::int64_t min_turns_filter) {
  DatasetManifest manifest;
  manifest.template_policy = std::move(policy_name);
  manifest.seed = seed;
  manifest.min_turns_filter = min_turns_filter;
  manifest.total = static_cast<std::int64_t>(data.size());
  std::int64_t turn_sum = 0;
  for (const auto& item : data) {
    const auto turns = static_cast<std::int64_t>(user_turn_count(item.conversation));
    if (turns < min_turns_filter) {
      throw std::invalid_argument("record " + item.conversation.id + " has " +
                                  std::to_string(turns) +
                                  " user turns, below the recorded filter of " +
                                  std::to_string(min_turns_filter));
    }
    turn_sum += turns;
    if (item.label == SafetyLabel::Unsafe) {
      ++manifest.unsafe_count;
    } else {
      ++manifest.safe_count;
    }
  }
  if (manifest.total > 0) {
    manifest.avg_user_turns =
        static_cast<double>(turn_sum) / static_cast<double>(manifest.total);
  }
  return manifest;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  return out;
}

}  // namespace

ParseError::ParseError(std::size_t line_no, const std::string& reason)
    : std::runtime_error("line " + std::to_string(line_no) + ": " + reason),
      line(line_no) {}

UnknownLabelError::UnknownLabelError(std::size_t line_no, const std::string& value)
    : std::runtime_error("line " + std::to_string(line_no) + ": unknown label \"" +
                         value + "\" (expected \"safe\" or \"unsafe\")"),
      line(line_no),
      label(value) {}

MissingAssistantTurnError::MissingAssistantTurnError(const std::string& record_id,
                                                     std::size_t prefix_k)
    : std::runtime_error("record " + record_id + ": no assistant response for turn " +
                         std::to_string(prefix_k)),
      id(record_id),
      k(prefix_k) {}

std::string TemplatePolicy::name() const {
  return mixed_ ? "mixed" : std::string(to_string(kind_));
}

std::vector<LabeledConversation> ingest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  const std::string default_source = path.stem().string();

  std::vector<LabeledConversation> data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;

    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, e.what());
    }
    if (!record.is_object()) {
      throw ParseError(line_no, "record is not a JSON object");
    }

    LabeledConversation item;
    item.conversation.id = require_string(record, "id", line_no);
    const auto label = require_string(record, "label", line_no);
    if (label == "safe") {
      item.label = SafetyLabel::Safe;
    } else if (label == "unsafe") {
      item.label = SafetyLabel::Unsafe;
    } else {
      throw UnknownLabelError(line_no, label);
    }

    const auto turns = record.find("turns");
    if (turns == record.end() || !turns->is_array()) {
      throw ParseError(line_no, "missing or non-array \"turns\"");
    }
    for (const auto& entry : *turns) {
      if (!entry.is_object()) {
        throw ParseError(line_no, "turn is not a JSON object");
      }
      Turn turn;
      const auto role = require_string(entry, "role", line_no);
      if (role == "user") {
        turn.role = Role::User;
      } else if (role == "assistant") {
        turn.role = Role::Assistant;
      } else {
        throw ParseError(line_no, "unknown role \"" + role + "\"");
      }
      turn.text = require_string(entry, "text", line_no);
      item.conversation.turns.push_back(std::move(turn));
    }

    if (record.contains("source")) {
      if (!record["source"].is_string()) {
        throw ParseError(line_no, "key \"source\" is not a string");
      }
      item.source = record["source"].get<std::string>();
    } else {
      item.source = default_source;
    }
    data.push_back(std::move(item));
  }
  return data;
}

std::vector<LabeledConversation> filter_min_turns(
    const std::vector<LabeledConversation>& data, std::int64_t min_turns) {
  if (min_turns < 1) {
    throw std::invalid_argument("min_turns must be >= 1");
  }
  std::vector<LabeledConversation> kept;
  for (const auto& item : data) {
    if (static_cast<std::int64_t>(user_turn_count(item.conversation)) >= min_turns) {
      kept.push_back(item);
    }
  }
  return kept;
}

std::vector<LabeledConversation> balance(
    const std::vector<LabeledConversation>& data, std::uint64_t seed) {
  std::vector<std::size_t> unsafe_indices;
  std::vector<std::size_t> safe_indices;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data[i].label == SafetyLabel::Unsafe ? unsafe_indices : safe_indices)
        .push_back(i);
  }
  if (unsafe_indices.empty() || safe_indices.empty()) {
    throw SingleClassDatasetError("balance requires both safe and unsafe records");
  }
  if (unsafe_indices.size() == safe_indices.size()) {
    return data;
  }

  auto& majority =
      unsafe_indices.size() > safe_indices.size() ? unsafe_indices : safe_indices;
  const auto minority_size =
      std::min(unsafe_indices.size(), safe_indices.size());

  SeededRng rng(seed);
  rng.shuffle(majority);
  majority.resize(minority_size);
  std::sort(majority.begin(), majority.end());

  std::vector<bool> keep(data.size(), false);
  for (const auto i : unsafe_indices) keep[i] = true;
  for (const auto i : safe_indices) keep[i] = true;

  std::vector<LabeledConversation> balanced;
  balanced.reserve(2 * minority_size);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (keep[i]) balanced.push_back(data[i]);
  }
  return balanced;
}

DatasetManifest emit_m2s_set(const std::vector<LabeledConversation>& data,
                             const TemplatePolicy& policy, std::uint64_t seed,
                             const std::filesystem::path& out_path,
                             std::int64_t min_turns_filter) {
  if (data.empty()) {
    throw EmptyDatasetError("emit_m2s_set: dataset is empty");
  }
  for (const auto& item : data) {
    if (user_turn_count(item.conversation) == 0) {
      throw EmptyConversationError("record " + item.conversation.id +
                                   ": no user turns to compress");
    }
  }
  auto manifest = summarize(data, policy.name(), seed, min_turns_filter);

  std::vector<TemplateKind> assigned(data.size(), policy.kind());
  if (policy.is_mixed()) {
    const auto pairs = assign_mixed_templates(data, seed);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      assigned[i] = pairs[i].second;
    }
  }

  std::vector<std::string> lines(data.size());
  parallel_for_index(data.size(), 0, [&](std::size_t i) {
    const auto& item = data[i];
    const auto compressed = compress(item.conversation, assigned[i]);
    json record;
    record["id"] = item.conversation.id;
    record["label"] = std::string(to_string(item.label));
    record["template"] = std::string(to_string(assigned[i]));
    record["prompt"] = compressed.text;
    lines[i] = record.dump();
  });

  auto out = open_output(out_path);
  for (const auto& line : lines) {
    out << line << '\n';
  }
  return manifest;
}

DatasetManifest emit_multiturn_prefix_set(
    const std::vector<LabeledConversation>& data,
    const std::filesystem::path& out_path, std::int64_t min_turns_filter,
    std::uint64_t seed) {
  if (data.empty()) {
    throw EmptyDatasetError("emit_multiturn_prefix_set: dataset is empty");
  }
  auto manifest = summarize(data, "multiturn_prefix", seed, min_turns_filter);

  std::vector<std::string> blocks(data.size());
  parallel_for_index(data.size(), 0, [&](std::size_t index) {
    const auto& item = data[index];
    const auto& turns = item.conversation.turns;
    const auto n = user_turn_count(item.conversation);
    std::size_t assistant_total = 0;
    for (const auto& turn : turns) {
      if (turn.role == Role::Assistant) ++assistant_total;
    }
    if (assistant_total < n) {
      throw MissingAssistantTurnError(item.conversation.id, assistant_total + 1);
    }

    std::ostringstream block;
    for (std::size_t k = 1; k <= n; ++k) {
      json messages = json::array();
      std::size_t users_taken = 0;
      std::size_t assistants_taken = 0;
      for (const auto& turn : turns) {
        const bool take = turn.role == Role::User ? users_taken < k
                                                  : assistants_taken < k;
        if (!take) continue;
        (turn.role == Role::User ? users_taken : assistants_taken) += 1;
        messages.push_back(
            {{"role", std::string(to_string(turn.role))}, {"text", turn.text}});
      }
      json record;
      record["id"] = item.conversation.id;
      record["label"] = std::string(to_string(item.label));
      record["k"] = k;
      record["messages"] = std::move(messages);
      block << record.dump() << '\n';
    }
    blocks[index] = block.str();
  });

  auto out = open_output(out_path);
  for (const auto& block : blocks) {
    out << block;
  }
  return manifest;
}

void emit_training_manifest(const DatasetManifest& manifest,
                            const std::filesystem::path& out_path) {
  json doc;
  doc["dataset"] = {
      {"total", manifest.total},
      {"unsafe_count", manifest.unsafe_count},
      {"safe_count", manifest.safe_count},
      {"avg_user_turns", manifest.avg_user_turns},
      {"min_turns_filter", manifest.min_turns_filter},
      {"template_policy", manifest.template_policy},
      {"seed", manifest.seed},
  };
  doc["training"] = {
      {"Base learning rate", 2e-4},
      {"Batch size", 4},
      {"Gradient accumulation steps", 4},
      {"Effective batch size", 16},
      {"Epochs", 3},
      {"Warmup ratio", 0.03},
      {"Weight decay", 0.01},
      {"Optimizer", "AdamW"},
      {"LR scheduler", "Cosine"},
      {"Max sequence length", 4096},
      {"LoRA rank", 16},
      {"LoRA alpha", 32},
      {"LoRA dropout", 0.1},
      {"Target modules", "q_proj, k_proj, v_proj, o_proj"},
      {"Quantization", "4-bit NF4"},
      {"Compute dtype", "bfloat16"},
      {"Seeds", {42, 123, 456}},
  };

  auto out = open_output(out_path);
  out << doc.dump(2) << '\n';
}

}  // namespace m2s
