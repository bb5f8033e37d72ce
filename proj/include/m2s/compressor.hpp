#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "m2s/core.hpp"

namespace m2s {

struct EmptyConversationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MalformedPromptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The text parses under a different template than the one it declares.
struct TemplateMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CompressedPrompt {
  std::string text;
  TemplateKind template_kind = TemplateKind::Hyphenize;
  std::string source_id;
  std::size_t user_turn_count = 0;

  bool operator==(const CompressedPrompt&) const = default;
};

// What a turn text looks like after template emission. The hyphen- and
// number-list grammars are line-oriented, so embedded newlines collapse to a
// single space; the python-style template escapes them instead and is
// lossless. Round-trip identity holds exactly for canonical turns.
std::string canonical_turn_text(std::string_view text, TemplateKind kind);

/// Compresses the user turns of a conversation into one single-turn prompt.
/// Deterministic; assistant turns never reach the output.
/// Throws EmptyConversationError when the conversation has no user turns.
CompressedPrompt compress(const Conversation& conv, TemplateKind kind);

/// Inverse of compress: recovers the embedded turn texts, unescaped.
/// Throws MalformedPromptError on grammar violations and
/// TemplateMismatchError when the text belongs to a different template.
std::vector<std::string> parse_compressed(const CompressedPrompt& prompt);

/// Balanced per-conversation template assignment for mixed-template sets:
/// seed-keyed shuffle, then round-robin over the three templates. Counts
/// differ by at most one; output preserves dataset order.
std::vector<std::pair<LabeledConversation, TemplateKind>> assign_mixed_templates(
    const std::vector<LabeledConversation>& dataset, std::uint64_t seed);

}  // namespace m2s
