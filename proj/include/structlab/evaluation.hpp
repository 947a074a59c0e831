#pragma once

// Unsupervised parsing metrics and trivial baselines. All scores are
// percentages in [0, 100].

#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "structlab/corpus.hpp"
#include "structlab/grammar.hpp"

namespace structlab::evaluation {

/// Misaligned predictions and gold; the message names the sentence.
class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpanScore {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t matched = 0, predicted = 0, gold = 0;
};

/// Spans counted by UF1: more than one token, whole sentence included.
grammar::SpanSet scored_spans(const grammar::SpanSet& spans);
grammar::SpanSet scored_spans(const grammar::ConstituencyTree& tree);

/// Micro-averaged over sentences.
SpanScore span_f1(std::span<const grammar::SpanSet> predicted, std::span<const grammar::SpanSet> gold);
SpanScore unlabeled_f1(std::span<const grammar::ConstituencyTree> predicted,
                       std::span<const corpus::GoldSentence> gold);

/// Span sets of aligned predicted trees; throws AlignmentError naming the
/// first sentence whose leaf count differs from the gold token count.
std::vector<grammar::SpanSet> predicted_spans(std::span<const grammar::ConstituencyTree> predicted,
                                              std::span<const corpus::GoldSentence> gold);

/// Share of gold spans carrying `label` that the prediction contains;
/// nothing when no gold span has the label.
std::optional<double> label_recall(std::span<const grammar::SpanSet> predicted,
                                   std::span<const corpus::GoldSentence> gold, const std::string& label);
std::optional<double> label_recall(std::span<const grammar::ConstituencyTree> predicted,
                                   std::span<const corpus::GoldSentence> gold, const std::string& label);

struct PredictedDependencies {
  std::vector<std::size_t> parents;  // parent per token; the root's entry is ignored
  std::size_t root = 0;
};

struct AttachmentCounts {
  std::size_t directed = 0;    // correct parent, or correctly predicted root
  std::size_t undirected = 0;  // directed, or the predicted edge is a gold edge
  std::size_t tokens = 0;      // non-punctuation tokens scored
};

/// Per-token scoring over non-punctuation tokens. A token counts as
/// undirected-correct when it is directed-correct or its predicted edge
/// {i, parent(i)} appears in the gold graph in either direction, so
/// undirected >= directed on every input.
AttachmentCounts attachment_counts(const PredictedDependencies& predicted, std::span<const int> gold_parents,
                                   const std::vector<bool>& punct);

struct AttachmentScore {
  double uas = 0, uuas = 0;
  std::size_t tokens = 0;
};

AttachmentScore attachment_scores(std::span<const PredictedDependencies> predicted,
                                  std::span<const corpus::GoldSentence> gold);

enum class BaselineKind { kRandom, kLeft, kRight };
BaselineKind parse_baseline(const std::string& name);  // random | left | right

grammar::ConstituencyTree baseline_tree(std::size_t n, BaselineKind kind, std::mt19937_64& rng);
std::vector<grammar::ConstituencyTree> baseline_trees(std::span<const corpus::GoldSentence> gold,
                                                      BaselineKind kind, std::uint64_t seed);

/// Uniformly random root; every other token gets a uniformly random parent
/// among the remaining tokens.
PredictedDependencies random_parents(std::size_t n, std::mt19937_64& rng);

struct ParseEvalReport {
  std::size_t sentences = 0;
  std::size_t tokens = 0;                     // punctuation excluded
  std::map<std::string, double> metrics;      // uf1, precision, recall, uas_*, uuas_*, ppl
  std::map<std::string, double> label_recall;
};

/// Labels present in the gold spans, sorted.
std::vector<std::string> gold_labels(std::span<const corpus::GoldSentence> gold);

/// Adds uf1/precision/recall and per-label recall.
void add_constituency(ParseEvalReport& report, std::span<const grammar::SpanSet> predicted,
                      std::span<const corpus::GoldSentence> gold);
void add_constituency(ParseEvalReport& report, std::span<const grammar::ConstituencyTree> predicted,
                      std::span<const corpus::GoldSentence> gold);
/// Adds uas_<scheme> and uuas_<scheme>.
void add_dependency(ParseEvalReport& report, const std::string& scheme,
                    std::span<const PredictedDependencies> predicted, std::span<const corpus::GoldSentence> gold);

struct MetricSummary {
  double mean = 0;
  double stddev = 0;  // sample standard deviation; 0 for a single value
  std::vector<double> values;
};

/// Per-metric mean and spread across runs (e.g. seeds). Metrics missing
/// from some runs are summarized over the runs that have them.
std::map<std::string, MetricSummary> summarize(std::span<const ParseEvalReport> reports);

std::string to_json(const ParseEvalReport& report);
std::string to_json(std::span<const ParseEvalReport> reports);
/// Aligned plain-text table; several reports print as mean (stddev).
std::string to_table(std::span<const ParseEvalReport> reports);

}  // namespace structlab::evaluation
