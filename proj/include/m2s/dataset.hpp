#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "m2s/compressor.hpp"
#include "m2s/core.hpp"

namespace m2s {

struct ParseError : std::runtime_error {
  ParseError(std::size_t line, const std::string& reason);
  std::size_t line;
};

struct UnknownLabelError : std::runtime_error {
  UnknownLabelError(std::size_t line, const std::string& label);
  std::size_t line;
  std::string label;
};

struct SingleClassDatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingAssistantTurnError : std::runtime_error {
  MissingAssistantTurnError(const std::string& id, std::size_t k);
  std::string id;
  std::size_t k;
};

// Either every record gets one fixed template, or the three templates are
// spread evenly across the dataset (seed-keyed assignment).
class TemplatePolicy {
 public:
  static TemplatePolicy single(TemplateKind kind) { return TemplatePolicy(false, kind); }
  static TemplatePolicy mixed_all() { return TemplatePolicy(true, TemplateKind::Hyphenize); }

  bool is_mixed() const { return mixed_; }
  TemplateKind kind() const { return kind_; }
  std::string name() const;

 private:
  TemplatePolicy(bool mixed, TemplateKind kind) : mixed_(mixed), kind_(kind) {}

  bool mixed_;
  TemplateKind kind_;
};

struct DatasetManifest {
  std::int64_t total = 0;
  std::int64_t unsafe_count = 0;
  std::int64_t safe_count = 0;
  double avg_user_turns = 0.0;
  std::int64_t min_turns_filter = 1;
  std::string template_policy;
  std::uint64_t seed = 0;
};

// Reads line-delimited records:
//   {"id": ..., "label": "safe"|"unsafe", "turns": [{"role", "text"}, ...]}
// An optional "source" key overrides the default source (the file stem).
// Throws ParseError with the first bad line's number, or UnknownLabelError
// for a label outside the closed safe/unsafe set.
std::vector<LabeledConversation> ingest(const std::filesystem::path& path);

/// Keeps conversations with at least min_turns user turns; order preserved.
std::vector<LabeledConversation> filter_min_turns(
    const std::vector<LabeledConversation>& data, std::int64_t min_turns);

// Downsamples the majority class to exactly the minority size, selection
// keyed by seed, original order kept. Throws SingleClassDatasetError unless
// both labels are present.
std::vector<LabeledConversation> balance(
    const std::vector<LabeledConversation>& data, std::uint64_t seed);

// Writes one {"id","label","template","prompt"} line per conversation and
// returns the manifest. min_turns_filter is recorded as provenance; every
// conversation must already satisfy it.
DatasetManifest emit_m2s_set(const std::vector<LabeledConversation>& data,
                             const TemplatePolicy& policy, std::uint64_t seed,
                             const std::filesystem::path& out_path,
                             std::int64_t min_turns_filter = 1);

// Writes, per conversation with n user turns, records k = 1..n of the form
// {"id","label","k","messages"} where messages holds the first k user turns
// and first k assistant responses in conversation order. Every prefix record
// carries the conversation's label.
DatasetManifest emit_multiturn_prefix_set(
    const std::vector<LabeledConversation>& data,
    const std::filesystem::path& out_path, std::int64_t min_turns_filter = 1,
    std::uint64_t seed = 0);

/// Writes dataset statistics plus the fixed fine-tuning recipe as JSON.
void emit_training_manifest(const DatasetManifest& manifest,
                            const std::filesystem::path& out_path);

}  // namespace m2s
