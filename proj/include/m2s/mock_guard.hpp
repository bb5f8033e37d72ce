#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace m2s {

struct BindError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Keyword blocklist. Matching is case-insensitive substring (not word
// boundary) so the oracle stays trivially recomputable. verdict_format
// replaces every "{verdict}" occurrence with "safe"/"unsafe".
struct MockPolicy {
  std::vector<std::string> blocked_keywords;
  std::string verdict_format = "{verdict}";
};

std::string mock_verdict(std::string_view prompt, const MockPolicy& policy);

// Chat-completions test double. Scans the concatenated message contents
// against the policy and answers with a fixed-shape JSON body; identical
// requests get byte-identical responses. Malformed bodies get HTTP 400.
class MockGuardServer {
 public:
  explicit MockGuardServer(MockPolicy policy);
  ~MockGuardServer();

  MockGuardServer(const MockGuardServer&) = delete;
  MockGuardServer& operator=(const MockGuardServer&) = delete;

  /// Binds 127.0.0.1 and serves on a background thread until stop().
  /// port 0 picks a free port. Throws BindError.
  void serve(int port = 0);
  void stop();

  int port() const;
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace m2s
