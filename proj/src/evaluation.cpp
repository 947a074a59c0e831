#include "structlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "json.hpp"
#include "structlab/parameters.hpp"

namespace structlab::evaluation {

grammar::SpanSet scored_spans(const grammar::SpanSet& spans) {
  grammar::SpanSet out;
  for (const auto& s : spans)
    if (s.end > s.start) out.insert(s);
  return out;
}

grammar::SpanSet scored_spans(const grammar::ConstituencyTree& tree) { return scored_spans(grammar::tree_spans(tree)); }

namespace {

double pct(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

void finish(SpanScore& s) {
  s.precision = pct(s.matched, s.predicted);
  s.recall = pct(s.matched, s.gold);
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
}

void check_size(std::size_t predicted, std::size_t gold, const char* what) {
  if (predicted != gold) {
    throw AlignmentError(std::string(what) + ": " + std::to_string(predicted) + " predictions for " +
                         std::to_string(gold) + " gold sentences");
  }
}

const grammar::SpanSet& gold_spans(const corpus::GoldSentence& g, std::size_t index) {
  if (!g.spans) throw AlignmentError("sentence " + std::to_string(index + 1) + " has no gold constituency spans");
  return *g.spans;
}

void check_tree(const grammar::ConstituencyTree& tree, const corpus::GoldSentence& g, std::size_t index) {
  const std::size_t n = tree.empty() ? 0 : tree.num_leaves();
  if (n != g.tokens.size()) {
    throw AlignmentError("sentence " + std::to_string(index + 1) + ": predicted tree has " + std::to_string(n) +
                         " leaves, gold has " + std::to_string(g.tokens.size()) + " tokens");
  }
}

}  // namespace

SpanScore span_f1(std::span<const grammar::SpanSet> predicted, std::span<const grammar::SpanSet> gold) {
  check_size(predicted.size(), gold.size(), "unlabeled_f1");
  SpanScore s;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const auto p = scored_spans(predicted[k]);
    const auto g = scored_spans(gold[k]);
    s.predicted += p.size();
    s.gold += g.size();
    for (const auto& span : p) s.matched += g.count(span);
  }
  finish(s);
  return s;
}

std::vector<grammar::SpanSet> predicted_spans(std::span<const grammar::ConstituencyTree> predicted,
                                              std::span<const corpus::GoldSentence> gold) {
  check_size(predicted.size(), gold.size(), "unlabeled_f1");
  std::vector<grammar::SpanSet> out;
  out.reserve(predicted.size());
  for (std::size_t k = 0; k < gold.size(); ++k) {
    if (gold[k].tokens.empty()) {
      out.emplace_back();
      continue;
    }
    check_tree(predicted[k], gold[k], k);
    out.push_back(grammar::tree_spans(predicted[k]));
  }
  return out;
}

SpanScore unlabeled_f1(std::span<const grammar::ConstituencyTree> predicted,
                       std::span<const corpus::GoldSentence> gold) {
  const auto p = predicted_spans(predicted, gold);
  std::vector<grammar::SpanSet> g;
  for (std::size_t k = 0; k < gold.size(); ++k) g.push_back(gold_spans(gold[k], k));
  return span_f1(p, g);
}

std::optional<double> label_recall(std::span<const grammar::SpanSet> predicted,
                                   std::span<const corpus::GoldSentence> gold, const std::string& label) {
  check_size(predicted.size(), gold.size(), "label_recall");
  std::size_t found = 0, total = 0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    for (const auto& ls : gold[k].labeled_spans) {
      if (ls.label != label || ls.span.end == ls.span.start) continue;
      ++total;
      found += predicted[k].count(ls.span);
    }
  }
  if (total == 0) return std::nullopt;
  return pct(found, total);
}

std::optional<double> label_recall(std::span<const grammar::ConstituencyTree> predicted,
                                   std::span<const corpus::GoldSentence> gold, const std::string& label) {
  return label_recall(predicted_spans(predicted, gold), gold, label);
}

AttachmentCounts attachment_counts(const PredictedDependencies& predicted, std::span<const int> gold_parents,
                                   const std::vector<bool>& punct) {
  const std::size_t n = gold_parents.size();
  if (predicted.parents.size() != n || (!punct.empty() && punct.size() != n)) {
    throw AlignmentError("attachment_scores: " + std::to_string(predicted.parents.size()) +
                         " predicted parents for " + std::to_string(n) + " gold tokens");
  }
  if (n == 0) return {};
  if (predicted.root >= n) throw AlignmentError("attachment_scores: predicted root outside the sentence");
  const auto gold_edge = [&](std::size_t a, std::size_t b) {
    return gold_parents[a] == static_cast<int>(b) || gold_parents[b] == static_cast<int>(a);
  };
  AttachmentCounts c;
  for (std::size_t i = 0; i < n; ++i) {
    if (!punct.empty() && punct[i]) continue;
    ++c.tokens;
    bool directed, undirected;
    if (i == predicted.root) {
      directed = gold_parents[i] < 0;
      undirected = directed;
    } else {
      const std::size_t p = predicted.parents[i];
      if (p >= n) throw AlignmentError("attachment_scores: predicted parent outside the sentence");
      directed = gold_parents[i] == static_cast<int>(p);
      undirected = directed || (p != i && gold_edge(i, p));
    }
    c.directed += directed;
    c.undirected += undirected;
  }
  return c;
}

AttachmentScore attachment_scores(std::span<const PredictedDependencies> predicted,
                                  std::span<const corpus::GoldSentence> gold) {
  check_size(predicted.size(), gold.size(), "attachment_scores");
  std::size_t directed = 0, undirected = 0, tokens = 0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    if (!gold[k].parents) throw AlignmentError("sentence " + std::to_string(k + 1) + " has no gold parents");
    AttachmentCounts c;
    try {
      c = attachment_counts(predicted[k], *gold[k].parents, gold[k].punct);
    } catch (const AlignmentError& e) {
      throw AlignmentError("sentence " + std::to_string(k + 1) + ": " + e.what());
    }
    directed += c.directed;
    undirected += c.undirected;
    tokens += c.tokens;
  }
  return {pct(directed, tokens), pct(undirected, tokens), tokens};
}

BaselineKind parse_baseline(const std::string& name) {
  if (name == "random") return BaselineKind::kRandom;
  if (name == "left") return BaselineKind::kLeft;
  if (name == "right") return BaselineKind::kRight;
  throw std::invalid_argument("unknown baseline '" + name + "' (expected random, left or right)");
}

grammar::ConstituencyTree baseline_tree(std::size_t n, BaselineKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case BaselineKind::kLeft: return grammar::left_branching(n);
    case BaselineKind::kRight: return grammar::right_branching(n);
    case BaselineKind::kRandom: break;
  }
  // i.i.d. distances give a uniformly random split order
  std::vector<double> tau(n > 0 ? n - 1 : 0);
  for (double& t : tau) t = uniform01(rng);
  return grammar::distance_to_tree(n, tau);
}

std::vector<grammar::ConstituencyTree> baseline_trees(std::span<const corpus::GoldSentence> gold,
                                                      BaselineKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<grammar::ConstituencyTree> out;
  out.reserve(gold.size());
  for (const auto& g : gold) {
    out.push_back(g.tokens.empty() ? grammar::ConstituencyTree{} : baseline_tree(g.tokens.size(), kind, rng));
  }
  return out;
}

PredictedDependencies random_parents(std::size_t n, std::mt19937_64& rng) {
  PredictedDependencies d;
  d.parents.assign(n, 0);
  if (n == 0) return d;
  const auto draw = [&](std::size_t k) {
    return std::min(k - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k)));
  };
  d.root = draw(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == d.root || n == 1) {
      d.parents[i] = i;
      continue;
    }
    const std::size_t j = draw(n - 1);
    d.parents[i] = j >= i ? j + 1 : j;
  }
  return d;
}

std::vector<std::string> gold_labels(std::span<const corpus::GoldSentence> gold) {
  std::set<std::string> labels;
  for (const auto& g : gold)
    for (const auto& ls : g.labeled_spans)
      if (ls.span.end > ls.span.start) labels.insert(ls.label);
  return {labels.begin(), labels.end()};
}

namespace {

void count_corpus(ParseEvalReport& report, std::span<const corpus::GoldSentence> gold) {
  report.sentences = gold.size();
  std::size_t tokens = 0;
  for (const auto& g : gold) {
    for (std::size_t i = 0; i < g.tokens.size(); ++i) tokens += !(i < g.punct.size() && g.punct[i]);
  }
  report.tokens = std::max(report.tokens, tokens);
}

}  // namespace

void add_constituency(ParseEvalReport& report, std::span<const grammar::SpanSet> predicted,
                      std::span<const corpus::GoldSentence> gold) {
  check_size(predicted.size(), gold.size(), "unlabeled_f1");
  std::vector<grammar::SpanSet> g;
  for (std::size_t k = 0; k < gold.size(); ++k) g.push_back(gold_spans(gold[k], k));
  const SpanScore s = span_f1(predicted, g);
  report.metrics["uf1"] = s.f1;
  report.metrics["precision"] = s.precision;
  report.metrics["recall"] = s.recall;
  for (const auto& label : gold_labels(gold)) {
    if (const auto r = label_recall(predicted, gold, label)) report.label_recall[label] = *r;
  }
  count_corpus(report, gold);
}

void add_constituency(ParseEvalReport& report, std::span<const grammar::ConstituencyTree> predicted,
                      std::span<const corpus::GoldSentence> gold) {
  add_constituency(report, predicted_spans(predicted, gold), gold);
}

void add_dependency(ParseEvalReport& report, const std::string& scheme,
                    std::span<const PredictedDependencies> predicted, std::span<const corpus::GoldSentence> gold) {
  const AttachmentScore s = attachment_scores(predicted, gold);
  report.metrics["uas_" + scheme] = s.uas;
  report.metrics["uuas_" + scheme] = s.uuas;
  count_corpus(report, gold);
}

std::map<std::string, MetricSummary> summarize(std::span<const ParseEvalReport> reports) {
  std::map<std::string, MetricSummary> out;
  for (const auto& r : reports) {
    for (const auto& [k, v] : r.metrics) out[k].values.push_back(v);
    for (const auto& [k, v] : r.label_recall) out["recall_" + k].values.push_back(v);
  }
  for (auto& [k, s] : out) {
    const double n = static_cast<double>(s.values.size());
    s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / n;
    double sq = 0;
    for (double v : s.values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = s.values.size() > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
  }
  return out;
}

std::string to_json(const ParseEvalReport& report) {
  nlohmann::ordered_json j;
  j["sentences"] = report.sentences;
  j["tokens"] = report.tokens;
  for (const auto& [k, v] : report.metrics) j[k] = v;
  j["label_recall"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.label_recall) j["label_recall"][k] = v;
  return j.dump(2);
}

std::string to_json(std::span<const ParseEvalReport> reports) {
  if (reports.size() == 1) return to_json(reports[0]);
  nlohmann::ordered_json j;
  j["runs"] = reports.size();
  j["sentences"] = reports.empty() ? 0 : reports[0].sentences;
  j["tokens"] = reports.empty() ? 0 : reports[0].tokens;
  for (const auto& [k, s] : summarize(reports)) {
    j["metrics"][k] = {{"mean", s.mean}, {"stddev", s.stddev}, {"values", s.values}};
  }
  return j.dump(2);
}

std::string to_table(std::span<const ParseEvalReport> reports) {
  const auto summary = summarize(reports);
  std::size_t width = 6;
  for (const auto& [k, s] : summary) width = std::max(width, k.size());
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s  %s\n", static_cast<int>(width), "metric",
                reports.size() > 1 ? "mean (stddev)" : "value");
  out += buf;
  for (const auto& [k, s] : summary) {
    if (reports.size() > 1) {
      std::snprintf(buf, sizeof buf, "%-*s  %8.2f (%.2f)\n", static_cast<int>(width), k.c_str(), s.mean, s.stddev);
    } else {
      std::snprintf(buf, sizeof buf, "%-*s  %8.2f\n", static_cast<int>(width), k.c_str(), s.mean);
    }
    out += buf;
  }
  if (!reports.empty()) {
    std::snprintf(buf, sizeof buf, "%-*s  %8zu\n%-*s  %8zu\n", static_cast<int>(width), "sentences",
                  reports[0].sentences, static_cast<int>(width), "tokens", reports[0].tokens);
    out += buf;
  }
  return out;
}

}  // namespace structlab::evaluation
