#pragma once

// Corpus ingestion, vocabulary and gold-structure readers.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "structlab/grammar.hpp"

namespace structlab::corpus {

/// Malformed input; the message names the file and line.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Sentence = std::vector<std::string>;

class Vocab {
 public:
  static constexpr std::int32_t kUnk = 0;
  static constexpr std::int32_t kPad = 1;
  static constexpr std::int32_t kMask = 2;
  static constexpr std::size_t kReserved = 3;
  static const std::string kUnkToken, kPadToken, kMaskToken;

  /// Reserved tokens only.
  Vocab();
  /// Full id order; the reserved tokens must come first.
  static Vocab from_tokens(std::vector<std::string> tokens);
  /// Tokens seen at least min_frequency times, by frequency then bytes.
  static Vocab build(std::span<const Sentence> sentences, std::size_t min_frequency);

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  std::int32_t id(std::string_view token) const;  // kUnk when absent
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::int32_t> encode(std::span<const std::string> sentence) const;

  /// Non-reserved tokens, one per line; line k holds id kReserved + k.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

struct RawCorpus {
  std::vector<Sentence> sentences;
  std::size_t lines = 0;
  std::size_t blank_lines = 0;  // lines - blank_lines == sentences.size()
};

RawCorpus read_raw(std::istream& in, bool lowercase = false);
RawCorpus read_raw(const std::filesystem::path& path, bool lowercase = false);

/// Punctuation test used identically for gold and predictions.
struct PunctuationPolicy {
  std::set<std::string> forms;  // extra forms always treated as punctuation
  std::set<std::string> tags{"PUNCT", ",", ".", ":", "``", "''", "-LRB-", "-RRB-"};  // POS tags
  bool symbol_only = true;      // tokens without any letter or digit

  bool is_punct(std::string_view form, std::string_view tag = {}) const;
};

struct LabeledSpan {
  grammar::Span span;
  std::string label;
  auto operator<=>(const LabeledSpan&) const = default;
};

struct GoldSentence {
  std::vector<std::string> tokens;
  std::optional<grammar::SpanSet> spans;     // multi-word spans, whole sentence included
  std::vector<LabeledSpan> labeled_spans;    // same spans with their labels
  std::optional<std::vector<int>> parents;   // 0-based, -1 for the root
  std::vector<bool> punct;                   // per token
};

/// Penn-style bracketed trees, one per line. Labels are kept for
/// label_recall; -NONE- elements and punctuation leaves are dropped before
/// spans are extracted, so indices refer to the remaining tokens.
std::vector<GoldSentence> read_bracketed(std::istream& in, const PunctuationPolicy& policy = {},
                                         const std::string& source = "<stream>");
std::vector<GoldSentence> read_bracketed(const std::filesystem::path& path, const PunctuationPolicy& policy = {});

/// CoNLL-X: column 1 index, 2 form, 4 coarse tag, 7 head (0 = root).
std::vector<GoldSentence> read_conll(std::istream& in, const PunctuationPolicy& policy = {},
                                     const std::string& source = "<stream>");
std::vector<GoldSentence> read_conll(const std::filesystem::path& path, const PunctuationPolicy& policy = {});

/// Writes sentences with parents as 10-column CoNLL-X.
void write_conll(std::ostream& out, std::span<const GoldSentence> sentences);

}  // namespace structlab::corpus
