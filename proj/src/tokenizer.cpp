#include "m2s/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <utility>
#include <vector>

namespace m2s {

struct detail::Vocab {
  std::set<std::string, std::less<>> alphabet;
  std::size_t longest_symbol = 0;
  // Rule order is priority order; lower rank merges first.
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank;
  std::vector<std::pair<std::string, std::string>> merges;
};

namespace {

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string_view trimmed(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

struct WordSymbol {
  std::string text;
  bool known = false;  // unknown bytes stand alone and never merge
};

// Greedy longest match against the alphabet.
std::vector<WordSymbol> segment_word(std::string_view word,
                                     const detail::Vocab& vocab) {
  std::vector<WordSymbol> symbols;
  std::size_t i = 0;
  while (i < word.size()) {
    std::size_t width = std::min(vocab.longest_symbol, word.size() - i);
    for (; width > 0; --width) {
      if (vocab.alphabet.count(word.substr(i, width)) > 0) {
        break;
      }
    }
    if (width == 0) {
      symbols.push_back({std::string(1, word[i]), false});
      i += 1;
    } else {
      symbols.push_back({std::string(word.substr(i, width)), true});
      i += width;
    }
  }
  return symbols;
}

// Repeatedly applies the lowest-ranked applicable merge to all adjacent
// occurrences until none applies; returns the surviving symbol count.
std::size_t merge_and_count(std::vector<WordSymbol> symbols,
                            const detail::Vocab& vocab) {
  while (symbols.size() > 1) {
    std::size_t best_rank = vocab.merges.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      if (!symbols[i].known || !symbols[i + 1].known) continue;
      const auto it = vocab.merge_rank.find(
          std::make_pair(symbols[i].text, symbols[i + 1].text));
      if (it != vocab.merge_rank.end() && it->second < best_rank) {
        best_rank = it->second;
      }
    }
    if (best_rank == vocab.merges.size()) {
      break;
    }
    const auto& [left, right] = vocab.merges[best_rank];
    std::vector<WordSymbol> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i].known && symbols[i + 1].known &&
          symbols[i].text == left && symbols[i + 1].text == right) {
        merged.push_back({left + right, true});
        ++i;
      } else {
        merged.push_back(std::move(symbols[i]));
      }
    }
    symbols = std::move(merged);
  }
  return symbols.size();
}

std::shared_ptr<const detail::Vocab> load_vocab(
    const std::filesystem::path& path) {
  std::ifstream input(path, std::ios::binary);
  if (!input) {
    throw VocabLoadError("cannot open vocab file: " + path.string());
  }

  auto vocab = std::make_shared<detail::Vocab>();
  std::set<std::string, std::less<>> known;  // alphabet + merge results
  enum class Section { None, Alphabet, Merges } section = Section::None;
  std::string raw;
  std::size_t line_no = 0;

  while (std::getline(input, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') {
      raw.pop_back();
    }
    if (!raw.empty() && raw.front() == '#') {
      continue;
    }
    const std::string_view line = trimmed(raw);
    if (line.empty()) {
      continue;
    }
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (line == "[alphabet]") {
      section = Section::Alphabet;
      continue;
    }
    if (line == "[merges]") {
      if (section != Section::Alphabet) {
        throw VocabLoadError(where + ": [merges] before [alphabet]");
      }
      section = Section::Merges;
      continue;
    }
    switch (section) {
      case Section::None:
        throw VocabLoadError(where + ": content before [alphabet] header");
      case Section::Alphabet: {
        const std::string symbol(line);
        if (symbol.find_first_of(" \t") != std::string::npos) {
          throw VocabLoadError(where + ": alphabet symbol contains whitespace");
        }
        if (!vocab->alphabet.insert(symbol).second) {
          throw VocabLoadError(where + ": duplicate alphabet symbol");
        }
        known.insert(symbol);
        vocab->longest_symbol = std::max(vocab->longest_symbol, symbol.size());
        break;
      }
      case Section::Merges: {
        const std::size_t space = line.find(' ');
        if (space == std::string_view::npos ||
            line.find(' ', space + 1) != std::string_view::npos) {
          throw VocabLoadError(where + ": merge rule must be \"left right\"");
        }
        std::string left(line.substr(0, space));
        std::string right(line.substr(space + 1));
        if (known.count(left) == 0 || known.count(right) == 0) {
          throw VocabLoadError(where + ": merge references unknown symbol");
        }
        known.insert(left + right);
        vocab->merge_rank.emplace(std::make_pair(left, right),
                                  vocab->merges.size());
        vocab->merges.emplace_back(std::move(left), std::move(right));
        break;
      }
    }
  }
  if (vocab->alphabet.empty()) {
    throw VocabLoadError(path.string() + ": vocab has no [alphabet] section");
  }
  return vocab;
}

}  // namespace

TokenCounter TokenCounter::whitespace() {
  return TokenCounter(TokenSchemeKind::Whitespace, nullptr);
}

TokenCounter TokenCounter::char_quarter() {
  return TokenCounter(TokenSchemeKind::CharQuarter, nullptr);
}

TokenCounter TokenCounter::from_vocab_file(const std::filesystem::path& path) {
  return TokenCounter(TokenSchemeKind::VocabFile, load_vocab(path));
}

std::int64_t TokenCounter::count(std::string_view text) const {
  switch (kind_) {
    case TokenSchemeKind::Whitespace: {
      std::int64_t runs = 0;
      bool in_run = false;
      for (const char c : text) {
        if (is_space(c)) {
          in_run = false;
        } else if (!in_run) {
          in_run = true;
          ++runs;
        }
      }
      return runs;
    }
    case TokenSchemeKind::CharQuarter:
      return static_cast<std::int64_t>((text.size() + 3) / 4);
    case TokenSchemeKind::VocabFile: {
      std::int64_t total = 0;
      std::size_t i = 0;
      while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) {
          total += static_cast<std::int64_t>(merge_and_count(
              segment_word(text.substr(start, i - start), *vocab_), *vocab_));
        }
      }
      return total;
    }
  }
  return 0;
}

std::string_view to_string(TokenSchemeKind kind) {
  switch (kind) {
    case TokenSchemeKind::Whitespace:
      return "whitespace";
    case TokenSchemeKind::CharQuarter:
      return "char-quarter";
    case TokenSchemeKind::VocabFile:
      return "vocab-file";
  }
  return "whitespace";
}

double token_reduction(std::int64_t original, std::int64_t compressed) {
  if (original <= 0) {
    throw ZeroOriginalError("token_reduction requires original > 0, got " +
                            std::to_string(original));
  }
  return 1.0 - static_cast<double>(compressed) / static_cast<double>(original);
}

}  // namespace m2s
