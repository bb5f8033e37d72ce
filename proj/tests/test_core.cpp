#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "m2s/core.hpp"

using namespace m2s;

namespace {

Conversation sample() {
  Conversation conv;
  conv.id = "c1";
  conv.turns = {{Role::User, "first"},
                {Role::Assistant, "reply"},
                {Role::User, "second"}};
  return conv;
}

}  // namespace

TEST_CASE("user turns are extracted in order") {
  const auto conv = sample();
  CHECK(user_turn_count(conv) == 2);
  const auto turns = user_turns(conv);
  REQUIRE(turns.size() == 2);
  CHECK(turns[0] == "first");
  CHECK(turns[1] == "second");
}

TEST_CASE("empty conversation has no user turns") {
  Conversation conv;
  CHECK(user_turn_count(conv) == 0);
  CHECK(user_turns(conv).empty());
}

TEST_CASE("name round-trips") {
  CHECK(to_string(Role::User) == "user");
  CHECK(to_string(Role::Assistant) == "assistant");
  CHECK(role_from_string("assistant") == Role::Assistant);

  CHECK(to_string(SafetyLabel::Safe) == "safe");
  CHECK(to_string(SafetyLabel::Unsafe) == "unsafe");
  CHECK(label_from_string("unsafe") == SafetyLabel::Unsafe);

  for (const auto kind : kAllTemplates) {
    CHECK(template_from_string(std::string(to_string(kind))) == kind);
  }
}

TEST_CASE("unknown names are rejected") {
  CHECK_THROWS_AS(role_from_string("system"), std::invalid_argument);
  CHECK_THROWS_AS(label_from_string("harmful"), std::invalid_argument);
  CHECK_THROWS_AS(template_from_string("bulletize"), std::invalid_argument);
}

TEST_CASE("value types compare structurally") {
  LabeledConversation a{sample(), SafetyLabel::Unsafe, "fixture"};
  LabeledConversation b = a;
  CHECK(a == b);
  b.conversation.turns[0].text = "changed";
  CHECK_FALSE(a == b);
}
