#include "m2s/compressor.hpp"

#include <numeric>
#include <optional>

#include "m2s/rng.hpp"

namespace m2s {
namespace {

constexpr std::string_view kPythonHeader = "def conversation():";
constexpr std::string_view kAssignPrefix = "    user_turn_";

std::string flatten_newlines(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') {
        ++i;
      }
      out.push_back(' ');
    } else if (c == '\n') {
      out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  return out;
}

// Double-quoted literal body: backslash, quote, and newline are escaped;
// everything else (tabs, CR, non-ASCII bytes) passes through raw.
std::string escape_literal(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (const char c : text) {
    switch (c) {
      case '\\':
        out += "\\\\";
        break;
      case '"':
        out += "\\\"";
        break;
      case '\n':
        out += "\\n";
        break;
      default:
        out.push_back(c);
    }
  }
  return out;
}

std::optional<std::string> unescape_literal(std::string_view body) {
  std::string out;
  out.reserve(body.size());
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (c == '"') {
      return std::nullopt;  // raw quote cannot appear inside the body
    }
    if (c != '\\') {
      out.push_back(c);
      continue;
    }
    if (++i >= body.size()) {
      return std::nullopt;  // dangling backslash
    }
    switch (body[i]) {
      case '\\':
        out.push_back('\\');
        break;
      case '"':
        out.push_back('"');
        break;
      case 'n':
        out.push_back('\n');
        break;
      default:
        return std::nullopt;  // unknown escape
    }
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find('\n', start);
    if (pos == std::string_view::npos) {
      lines.push_back(text.substr(start));
      return lines;
    }
    lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

// Each parser returns the recovered turns or a grammar-violation message.
struct ParseOutcome {
  std::vector<std::string> turns;
  std::string error;

  bool ok() const { return error.empty(); }
};

ParseOutcome fail(std::string message) { return {{}, std::move(message)}; }

ParseOutcome parse_hyphenize(std::string_view text) {
  ParseOutcome out;
  for (const std::string_view line : split_lines(text)) {
    if (line.size() < 2 || line[0] != '-' || line[1] != ' ') {
      return fail("hyphenize: line does not start with \"- \"");
    }
    out.turns.emplace_back(line.substr(2));
  }
  return out;
}

ParseOutcome parse_numberize(std::string_view text) {
  ParseOutcome out;
  std::size_t expected = 1;
  for (const std::string_view line : split_lines(text)) {
    const std::string prefix = std::to_string(expected) + ". ";
    if (line.substr(0, prefix.size()) != prefix) {
      return fail("numberize: expected line to start with \"" + prefix + "\"");
    }
    out.turns.emplace_back(line.substr(prefix.size()));
    ++expected;
  }
  return out;
}

ParseOutcome parse_pythonize(std::string_view text) {
  const std::vector<std::string_view> lines = split_lines(text);
  if (lines.empty() || lines[0] != kPythonHeader) {
    return fail("pythonize: missing \"def conversation():\" header");
  }
  if (lines.size() < 2) {
    return fail("pythonize: no turn assignments");
  }
  ParseOutcome out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string prefix =
        std::string(kAssignPrefix) + std::to_string(i) + " = \"";
    const std::string_view line = lines[i];
    if (line.substr(0, prefix.size()) != prefix) {
      return fail("pythonize: expected assignment to user_turn_" +
                  std::to_string(i));
    }
    if (line.size() < prefix.size() + 1 || line.back() != '"') {
      return fail("pythonize: assignment is not a closed string literal");
    }
    const std::string_view body =
        line.substr(prefix.size(), line.size() - prefix.size() - 1);
    std::optional<std::string> turn = unescape_literal(body);
    if (!turn) {
      return fail("pythonize: invalid escape sequence in string literal");
    }
    out.turns.push_back(std::move(*turn));
  }
  return out;
}

ParseOutcome parse_as(std::string_view text, TemplateKind kind) {
  switch (kind) {
    case TemplateKind::Hyphenize:
      return parse_hyphenize(text);
    case TemplateKind::Numberize:
      return parse_numberize(text);
    case TemplateKind::Pythonize:
      return parse_pythonize(text);
  }
  return fail("unknown template");
}

}  // namespace

std::string canonical_turn_text(std::string_view text, TemplateKind kind) {
  if (kind == TemplateKind::Pythonize) {
    return std::string(text);
  }
  return flatten_newlines(text);
}

CompressedPrompt compress(const Conversation& conv, TemplateKind kind) {
  const std::vector<std::string> turns = user_turns(conv);
  if (turns.empty()) {
    throw EmptyConversationError("conversation \"" + conv.id +
                                 "\" has no user turns");
  }

  std::string text;
  switch (kind) {
    case TemplateKind::Hyphenize:
      for (std::size_t i = 0; i < turns.size(); ++i) {
        if (i > 0) text.push_back('\n');
        text += "- ";
        text += flatten_newlines(turns[i]);
      }
      break;
    case TemplateKind::Numberize:
      for (std::size_t i = 0; i < turns.size(); ++i) {
        if (i > 0) text.push_back('\n');
        text += std::to_string(i + 1);
        text += ". ";
        text += flatten_newlines(turns[i]);
      }
      break;
    case TemplateKind::Pythonize:
      text = kPythonHeader;
      for (std::size_t i = 0; i < turns.size(); ++i) {
        text.push_back('\n');
        text += kAssignPrefix;
        text += std::to_string(i + 1);
        text += " = \"";
        text += escape_literal(turns[i]);
        text.push_back('"');
      }
      break;
  }

  return CompressedPrompt{std::move(text), kind, conv.id, turns.size()};
}

std::vector<std::string> parse_compressed(const CompressedPrompt& prompt) {
  if (prompt.text.empty()) {
    throw MalformedPromptError("compressed prompt text is empty");
  }
  ParseOutcome outcome = parse_as(prompt.text, prompt.template_kind);
  if (!outcome.ok()) {
    for (const TemplateKind other : kAllTemplates) {
      if (other == prompt.template_kind) continue;
      if (parse_as(prompt.text, other).ok()) {
        throw TemplateMismatchError(
            "prompt declares " + std::string(to_string(prompt.template_kind)) +
            " but its text parses as " + std::string(to_string(other)));
      }
    }
    throw MalformedPromptError(outcome.error);
  }
  if (outcome.turns.size() != prompt.user_turn_count) {
    throw MalformedPromptError(
        "prompt declares " + std::to_string(prompt.user_turn_count) +
        " turns but text contains " + std::to_string(outcome.turns.size()));
  }
  return std::move(outcome.turns);
}

std::vector<std::pair<LabeledConversation, TemplateKind>> assign_mixed_templates(
    const std::vector<LabeledConversation>& dataset, std::uint64_t seed) {
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(seed);
  rng.shuffle(order);

  std::vector<TemplateKind> assigned(dataset.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    assigned[order[rank]] = kAllTemplates[rank % kAllTemplates.size()];
  }

  std::vector<std::pair<LabeledConversation, TemplateKind>> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out.emplace_back(dataset[i], assigned[i]);
  }
  return out;
}

}  // namespace m2s
