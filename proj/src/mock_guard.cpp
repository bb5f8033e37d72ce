#include "m2s/mock_guard.hpp"

#include <algorithm>
#include <cctype>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace m2s {

namespace {

using nlohmann::json;

std::string lowercase(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return lowered;
}

std::int64_t whitespace_tokens(std::string_view text) {
  std::int64_t count = 0;
  bool in_run = false;
  for (const unsigned char c : text) {
    if (std::isspace(c)) {
      in_run = false;
    } else if (!in_run) {
      in_run = true;
      ++count;
    }
  }
  return count;
}

json error_body(const std::string& message) {
  return json{{"error", {{"message", message}, {"type", "invalid_request_error"}}}};
}

}  // namespace

std::string mock_verdict(std::string_view prompt, const MockPolicy& policy) {
  const auto haystack = lowercase(prompt);
  bool blocked = false;
  for (const auto& keyword : policy.blocked_keywords) {
    if (!keyword.empty() && haystack.find(lowercase(keyword)) != std::string::npos) {
      blocked = true;
      break;
    }
  }
  const std::string verdict = blocked ? "unsafe" : "safe";

  std::string output = policy.verdict_format;
  static constexpr std::string_view kSlot = "{verdict}";
  std::size_t pos = 0;
  while ((pos = output.find(kSlot, pos)) != std::string::npos) {
    output.replace(pos, kSlot.size(), verdict);
    pos += verdict.size();
  }
  return output;
}

struct MockGuardServer::Impl {
  explicit Impl(MockPolicy p) : policy(std::move(p)) {
    server.Post("/v1/chat/completions",
                [this](const httplib::Request& request, httplib::Response& response) {
                  handle(request, response);
                });
  }

  void handle(const httplib::Request& request, httplib::Response& response) {
    const auto body = json::parse(request.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
      response.status = 400;
      response.set_content(error_body("request body is not a JSON object").dump(),
                           "application/json");
      return;
    }
    const auto messages = body.find("messages");
    if (messages == body.end() || !messages->is_array() || messages->empty()) {
      response.status = 400;
      response.set_content(error_body("missing or empty \"messages\"").dump(),
                           "application/json");
      return;
    }
    std::string prompt;
    for (const auto& message : *messages) {
      if (!message.is_object() || !message.contains("content") ||
          !message["content"].is_string()) {
        response.status = 400;
        response.set_content(error_body("message without string content").dump(),
                             "application/json");
        return;
      }
      if (!prompt.empty()) prompt += '\n';
      prompt += message["content"].get<std::string>();
    }

    const auto verdict = mock_verdict(prompt, policy);
    const auto prompt_tokens = whitespace_tokens(prompt);
    const auto completion_tokens = whitespace_tokens(verdict);
    json reply;
    reply["id"] = "mock-guard";
    reply["object"] = "chat.completion";
    reply["model"] = body.value("model", "mock-guard");
    reply["choices"] = json::array(
        {{{"index", 0},
          {"message", {{"role", "assistant"}, {"content", verdict}}},
          {"finish_reason", "stop"}}});
    reply["usage"] = {{"prompt_tokens", prompt_tokens},
                      {"completion_tokens", completion_tokens},
                      {"total_tokens", prompt_tokens + completion_tokens}};
    response.set_content(reply.dump(), "application/json");
  }

  MockPolicy policy;
  httplib::Server server;
  std::thread thread;
  int port = 0;
};

MockGuardServer::MockGuardServer(MockPolicy policy)
    : impl_(std::make_unique<Impl>(std::move(policy))) {}

MockGuardServer::~MockGuardServer() { stop(); }

void MockGuardServer::serve(int port) {
  if (impl_->thread.joinable()) {
    throw BindError("mock guard is already serving");
  }
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    if (impl_->port < 0) {
      throw BindError("cannot bind 127.0.0.1 to any port");
    }
  } else {
    if (!impl_->server.bind_to_port("127.0.0.1", port)) {
      throw BindError("cannot bind 127.0.0.1:" + std::to_string(port));
    }
    impl_->port = port;
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockGuardServer::stop() {
  if (!impl_) return;
  if (impl_->server.is_running()) {
    impl_->server.stop();
  }
  if (impl_->thread.joinable()) {
    impl_->thread.join();
  }
}

int MockGuardServer::port() const { return impl_->port; }

std::string MockGuardServer::base_url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

}  // namespace m2s
