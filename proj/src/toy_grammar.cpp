#include "structlab/toy_grammar.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

#include "structlab/parameters.hpp"

namespace structlab::toy {

namespace {

using Words = std::vector<std::string>;

struct Lexicon {
  Words det[2] = {{"a", "the", "this", "that", "every", "one"}, {"the", "these", "those", "some", "many", "two"}};
  Words noun[2] = {
      {"dog", "cat", "bird", "child", "teacher", "farmer", "student", "king", "horse", "friend",
       "doctor", "writer", "boy", "girl", "painter", "baker", "sailor", "singer", "lawyer", "cook"},
      {"dogs", "cats", "birds", "children", "teachers", "farmers", "students", "kings", "horses", "friends",
       "doctors", "writers", "boys", "girls", "painters", "bakers", "sailors", "singers", "lawyers", "cooks"}};
  Words pron[2] = {{"he", "she", "it"}, {"they", "we"}};
  Words adj = {"big", "small", "old", "young", "happy", "sad", "clever", "quiet", "brave", "tired", "kind", "strange"};
  Words vt[2] = {{"sees", "likes", "helps", "follows", "finds", "knows", "meets", "calls", "watches", "loves"},
                 {"see", "like", "help", "follow", "find", "know", "meet", "call", "watch", "love"}};
  Words vi[2] = {{"sleeps", "runs", "laughs", "waits", "sings", "smiles", "falls", "works"},
                 {"sleep", "run", "laugh", "wait", "sing", "smile", "fall", "work"}};
  Words vs[2] = {{"thinks", "says", "believes", "hopes"}, {"think", "say", "believe", "hope"}};
  Words prep = {"near", "with", "behind", "under", "beside", "above", "without", "after"};
  Words adv = {"often", "never", "always", "quickly", "slowly", "rarely"};
  Words comp = {"that", "whether"};
};

const Lexicon& lex() {
  static const Lexicon l;
  return l;
}

/// Sampled constituent; leaves carry a word and a preterminal tag.
struct Node {
  std::string label;
  std::string word;
  std::vector<Node> children;
  std::size_t head = 0;  // index of the head child
};

class Sampler {
 public:
  explicit Sampler(std::mt19937_64& rng) : rng_(rng) {}

  Node sentence(std::size_t depth) {
    const int n = coin(0.5);
    return binary("S", noun_phrase(n, depth + 1), verb_phrase(n, depth + 1), 1);
  }

 private:
  static Node binary(std::string label, Node left, Node right, std::size_t head) {
    Node node;
    node.label = std::move(label);
    node.children.push_back(std::move(left));
    node.children.push_back(std::move(right));
    node.head = head;
    return node;
  }

  static Node unary(std::string label, Node child) {
    Node node;
    node.label = std::move(label);
    node.children.push_back(std::move(child));
    return node;
  }

  Node word(const std::string& tag, const Words& choices) {
    Node node;
    node.label = tag;
    node.word = choices[static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(choices.size()))];
    return node;
  }

  int coin(double p) { return uniform01(rng_) < p ? 1 : 0; }

  // Recursion thins out with depth so that samples stay short.
  bool recurse(double p, std::size_t depth) { return depth < kMaxDepth && uniform01(rng_) < p / (1.0 + 0.15 * static_cast<double>(depth)); }

  Node noun_phrase(int n, std::size_t depth) {
    if (uniform01(rng_) < 0.2) return unary("NP", word("PRP", lex().pron[n]));
    return binary("NP", word("DT", lex().det[n]), nominal(n, depth + 1), 1);
  }

  Node nominal(int n, std::size_t depth) {
    if (recurse(0.3, depth)) return binary("NB", word("JJ", lex().adj), nominal(n, depth + 1), 1);
    if (recurse(0.25, depth)) return binary("NB", nominal(n, depth + 1), prep_phrase(depth + 1), 0);
    return word("NN", lex().noun[n]);
  }

  Node prep_phrase(std::size_t depth) {
    return binary("PP", word("IN", lex().prep), noun_phrase(coin(0.5), depth + 1), 0);
  }

  Node verb_phrase(int n, std::size_t depth) {
    if (recurse(0.2, depth)) return binary("VP", verb_phrase(n, depth + 1), prep_phrase(depth + 1), 0);
    if (recurse(0.12, depth)) return binary("VP", word("RB", lex().adv), verb_phrase(n, depth + 1), 1);
    if (recurse(0.15, depth)) return binary("VP", word("VBS", lex().vs[n]), clause(depth + 1), 0);
    if (uniform01(rng_) < 0.6) return binary("VP", word("VBT", lex().vt[n]), noun_phrase(coin(0.5), depth + 1), 0);
    return unary("VP", word("VBI", lex().vi[n]));
  }

  Node clause(std::size_t depth) { return binary("SBAR", word("C", lex().comp), sentence(depth + 1), 0); }

  static constexpr std::size_t kMaxDepth = 10;
  std::mt19937_64& rng_;
};

struct Flattened {
  std::vector<std::string> tokens;
  std::vector<int> parents;
  grammar::SpanSet spans;
  std::vector<corpus::LabeledSpan> labeled;
  std::string bracketed;
};

struct Built {
  grammar::ConstituencyTree tree;
  grammar::Span span;
  std::size_t head = 0;  // token index of the lexical head
};

Built flatten(const Node& node, Flattened& out) {
  if (!node.word.empty()) {
    const std::size_t i = out.tokens.size();
    out.tokens.push_back(node.word);
    out.parents.push_back(-1);
    out.bracketed += "(" + node.label + " " + node.word + ")";
    return {grammar::ConstituencyTree::leaf(i), {i, i}, i};
  }
  out.bracketed += "(" + node.label;
  std::vector<Built> parts;
  for (const auto& child : node.children) {
    out.bracketed += " ";
    parts.push_back(flatten(child, out));
  }
  out.bracketed += ")";
  if (parts.size() == 1) return parts[0];

  const std::size_t head = parts[node.head].head;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (k != node.head) out.parents[parts[k].head] = static_cast<int>(head);
  }
  Built b{grammar::ConstituencyTree::join(parts[0].tree, parts[1].tree), {parts[0].span.start, parts[1].span.end}, head};
  out.spans.insert(b.span);
  corpus::LabeledSpan ls{b.span, node.label};
  if (std::find(out.labeled.begin(), out.labeled.end(), ls) == out.labeled.end()) out.labeled.push_back(ls);
  return b;
}

}  // namespace

ToyCorpus generate(std::uint64_t seed, std::size_t size) {
  std::mt19937_64 rng(seed);
  Sampler sampler(rng);
  ToyCorpus out;
  while (out.sentences.size() < size) {
    const Node root = sampler.sentence(0);
    Flattened f;
    const Built built = flatten(root, f);
    if (f.tokens.size() < kMinLength || f.tokens.size() > kMaxLength) continue;
    corpus::GoldSentence g;
    g.tokens = std::move(f.tokens);
    g.spans = std::move(f.spans);
    g.labeled_spans = std::move(f.labeled);
    g.parents = std::move(f.parents);
    g.punct.assign(g.tokens.size(), false);
    out.sentences.push_back(std::move(g));
    out.trees.push_back(built.tree);
    out.bracketed.push_back(std::move(f.bracketed));
  }
  return out;
}

std::vector<std::string> lexicon() {
  const Lexicon& l = lex();
  std::set<std::string> all;
  const auto add = [&](const Words& w) { all.insert(w.begin(), w.end()); };
  for (int n = 0; n < 2; ++n) {
    add(l.det[n]);
    add(l.noun[n]);
    add(l.pron[n]);
    add(l.vt[n]);
    add(l.vi[n]);
    add(l.vs[n]);
  }
  add(l.adj);
  add(l.prep);
  add(l.adv);
  add(l.comp);
  return {all.begin(), all.end()};
}

}  // namespace structlab::toy
