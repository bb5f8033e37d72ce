#include "m2s/core.hpp"

namespace m2s {

std::vector<std::string> user_turns(const Conversation& conv) {
  std::vector<std::string> out;
  out.reserve(conv.turns.size());
  for (const Turn& turn : conv.turns) {
    if (turn.role == Role::User) {
      out.push_back(turn.text);
    }
  }
  return out;
}

std::size_t user_turn_count(const Conversation& conv) {
  std::size_t n = 0;
  for (const Turn& turn : conv.turns) {
    if (turn.role == Role::User) {
      ++n;
    }
  }
  return n;
}

std::string_view to_string(Role role) {
  return role == Role::User ? "user" : "assistant";
}

std::string_view to_string(SafetyLabel label) {
  return label == SafetyLabel::Safe ? "safe" : "unsafe";
}

std::string_view to_string(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::Hyphenize:
      return "hyphenize";
    case TemplateKind::Numberize:
      return "numberize";
    case TemplateKind::Pythonize:
      return "pythonize";
  }
  return "hyphenize";
}

Role role_from_string(std::string_view name) {
  if (name == "user") return Role::User;
  if (name == "assistant") return Role::Assistant;
  throw std::invalid_argument("unknown role: " + std::string(name));
}

SafetyLabel label_from_string(std::string_view name) {
  if (name == "safe") return SafetyLabel::Safe;
  if (name == "unsafe") return SafetyLabel::Unsafe;
  throw std::invalid_argument("unknown label: " + std::string(name));
}

TemplateKind template_from_string(std::string_view name) {
  if (name == "hyphenize") return TemplateKind::Hyphenize;
  if (name == "numberize") return TemplateKind::Numberize;
  if (name == "pythonize") return TemplateKind::Pythonize;
  throw std::invalid_argument("unknown template: " + std::string(name));
}

}  // namespace m2s
