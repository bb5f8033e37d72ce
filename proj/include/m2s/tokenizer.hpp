#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

namespace m2s {

enum class TokenSchemeKind { Whitespace, CharQuarter, VocabFile };

struct VocabLoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroOriginalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Vocab;
}

// Deterministic token counting. Three schemes:
//   Whitespace   maximal non-whitespace runs (the test-oracle scheme)
//   CharQuarter  ceil(bytes / 4)
//   VocabFile    greedy byte-pair merging against a loaded vocabulary; see
//                docs/vocab-format.md for the file contract
//
// A loaded vocabulary is shared read-only, so counters are cheap to copy
// and counting is safe from any number of threads.
class TokenCounter {
 public:
  static TokenCounter whitespace();
  static TokenCounter char_quarter();
  /// Throws VocabLoadError on a missing or corrupt vocabulary file.
  static TokenCounter from_vocab_file(const std::filesystem::path& path);

  std::int64_t count(std::string_view text) const;
  TokenSchemeKind kind() const { return kind_; }

 private:
  TokenCounter(TokenSchemeKind kind, std::shared_ptr<const detail::Vocab> vocab)
      : kind_(kind), vocab_(std::move(vocab)) {}

  TokenSchemeKind kind_;
  std::shared_ptr<const detail::Vocab> vocab_;
};

std::string_view to_string(TokenSchemeKind kind);

/// 1 - compressed/original. Throws ZeroOriginalError unless original > 0.
/// Negative results are legitimate when "compression" grows the text.
double token_reduction(std::int64_t original, std::int64_t compressed);

}  // namespace m2s
