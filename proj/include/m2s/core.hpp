#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace m2s {

enum class Role { User, Assistant };

enum class SafetyLabel { Safe, Unsafe };

// The three single-turn compression templates. Mixed-template training is a
// dataset-level policy, not a fourth template.
enum class TemplateKind { Hyphenize, Numberize, Pythonize };

inline constexpr std::array<TemplateKind, 3> kAllTemplates = {
    TemplateKind::Hyphenize, TemplateKind::Numberize, TemplateKind::Pythonize};

struct Turn {
  Role role = Role::User;
  std::string text;  // may be empty; preserved byte-exactly, no normalization

  bool operator==(const Turn&) const = default;
};

// Ordered user/assistant turns. Conversations may begin with either role and
// need not alternate; red-team corpora routinely violate strict alternation.
struct Conversation {
  std::string id;
  std::vector<Turn> turns;

  bool operator==(const Conversation&) const = default;
};

struct LabeledConversation {
  Conversation conversation;
  SafetyLabel label = SafetyLabel::Safe;
  std::string source;  // provenance tag, e.g. the ingested file

  bool operator==(const LabeledConversation&) const = default;
};

struct EmptyDatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Texts of user-role turns in original order; assistant turns discarded.
std::vector<std::string> user_turns(const Conversation& conv);

std::size_t user_turn_count(const Conversation& conv);

std::string_view to_string(Role role);
std::string_view to_string(SafetyLabel label);
std::string_view to_string(TemplateKind kind);

// All three throw std::invalid_argument on unknown names.
Role role_from_string(std::string_view name);
SafetyLabel label_from_string(std::string_view name);
TemplateKind template_from_string(std::string_view name);

}  // namespace m2s
