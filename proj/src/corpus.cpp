#include "structlab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace structlab::corpus {

const std::string Vocab::kUnkToken = "<unk>";
const std::string Vocab::kPadToken = "<pad>";
const std::string Vocab::kMaskToken = "<mask>";

namespace {

bool is_reserved(std::string_view t) {
  return t == Vocab::kUnkToken || t == Vocab::kPadToken || t == Vocab::kMaskToken;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError(path.string() + ": cannot open");
  return in;
}

}  // namespace

Vocab::Vocab() : tokens_{kUnkToken, kPadToken, kMaskToken} { index(); }

void Vocab::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw CorpusError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved || tokens[kUnk] != kUnkToken || tokens[kPad] != kPadToken ||
      tokens[kMask] != kMaskToken) {
    throw CorpusError("vocabulary: reserved tokens must occupy ids 0-2");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index();
  return v;
}

Vocab Vocab::build(std::span<const Sentence> sentences, std::size_t min_frequency) {
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : sentences) {
    for (const auto& t : s) {
      ++counts[t];
      ++total;
    }
  }
  if (total == 0) throw CorpusError("build_vocab: empty corpus");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, c] : counts) {
    if (c >= min_frequency && !is_reserved(tok)) kept.emplace_back(tok, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocab v;
  for (auto& [tok, c] : kept) v.tokens_.push_back(tok);
  v.index();
  return v;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

std::int32_t Vocab::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocab::encode(std::span<const std::string> sentence) const {
  std::vector<std::int32_t> out;
  out.reserve(sentence.size());
  for (const auto& t : sentence) out.push_back(id(t));
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw CorpusError(path.string() + ": cannot open for writing");
  for (std::size_t i = kReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::string> tokens{kUnkToken, kPadToken, kMaskToken};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.find_first_of(" \t") != std::string::npos || is_reserved(line)) {
      throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": invalid vocabulary entry '" + line + "'");
    }
    tokens.push_back(line);
  }
  try {
    return from_tokens(std::move(tokens));
  } catch (const CorpusError& e) {
    throw CorpusError(path.string() + ": " + e.what());
  }
}

RawCorpus read_raw(std::istream& in, bool lowercase) {
  RawCorpus out;
  std::string line;
  while (std::getline(in, line)) {
    ++out.lines;
    if (lowercase) {
      for (char& c : line) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    auto toks = split_ws(line);
    if (toks.empty()) {
      ++out.blank_lines;
      continue;
    }
    out.sentences.push_back(std::move(toks));
  }
  return out;
}

RawCorpus read_raw(const std::filesystem::path& path, bool lowercase) {
  auto in = open_input(path);
  return read_raw(in, lowercase);
}

bool PunctuationPolicy::is_punct(std::string_view form, std::string_view tag) const {
  if (!tag.empty() && tags.count(std::string(tag))) return true;
  if (forms.count(std::string(form))) return true;
  if (!symbol_only || form.empty()) return false;
  // bytes >= 0x80 belong to non-ASCII letters and count as word characters
  return std::none_of(form.begin(), form.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u);
  });
}

// ---- bracketed trees -------------------------------------------------------

namespace {

struct BracketNode {
  std::string label;
  std::string word;  // set for leaves
  std::vector<BracketNode> children;
  bool is_leaf() const { return !word.empty(); }
};

class BracketParser {
 public:
  BracketParser(std::string_view text, std::string where) : text_(text), where_(std::move(where)) {}

  std::vector<BracketNode> parse_all() {
    std::vector<BracketNode> trees;
    skip_space();
    while (pos_ < text_.size()) {
      if (text_[pos_] != '(') fail("expected '(' at column " + std::to_string(pos_ + 1));
      trees.push_back(parse_node());
      skip_space();
    }
    return trees;
  }

 private:
  BracketNode parse_node() {
    ++pos_;  // '('
    BracketNode node;
    skip_space();
    if (pos_ < text_.size() && text_[pos_] != '(' && text_[pos_] != ')') node.label = atom();
    while (true) {
      skip_space();
      if (pos_ >= text_.size()) fail("unbalanced brackets: missing ')'");
      if (text_[pos_] == ')') {
        ++pos_;
        break;
      }
      if (text_[pos_] == '(') {
        node.children.push_back(parse_node());
      } else {
        BracketNode leaf;
        leaf.word = atom();
        node.children.push_back(std::move(leaf));
      }
    }
    if (node.children.empty()) fail("empty constituent '" + node.label + "'");
    return node;
  }

  std::string atom() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '(' &&
           text_[pos_] != ')') {
      ++pos_;
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const { throw CorpusError(where_ + ": " + what); }

  std::string_view text_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::string base_label(const std::string& label) {
  if (label.empty() || label[0] == '-') return label;  // -NONE-, -LRB-
  const auto cut = label.find_first_of("-=");
  return cut == std::string::npos ? label : label.substr(0, cut);
}

struct SpanCollector {
  const PunctuationPolicy& policy;
  GoldSentence& out;

  // Returns the [first, last] token range of the node or nothing if empty.
  std::optional<grammar::Span> visit(const BracketNode& node, const std::string& parent_label) {
    if (node.is_leaf()) {
      if (parent_label == "-NONE-" || policy.is_punct(node.word, parent_label)) return std::nullopt;
      out.tokens.push_back(node.word);
      const std::size_t i = out.tokens.size() - 1;
      return grammar::Span{i, i};
    }
    if (node.label == "-NONE-") return std::nullopt;
    const bool preterminal = node.children.size() == 1 && node.children[0].is_leaf();
    std::optional<grammar::Span> range;
    for (const auto& child : node.children) {
      const auto r = visit(child, node.label);
      if (!r) continue;
      if (!range) range = r;
      else range->end = r->end;
    }
    if (range && range->end > range->start && !preterminal) {
      out.spans->insert(*range);
      const std::string label = base_label(node.label);
      if (!label.empty()) {
        LabeledSpan ls{*range, label};
        if (std::find(out.labeled_spans.begin(), out.labeled_spans.end(), ls) == out.labeled_spans.end()) {
          out.labeled_spans.push_back(ls);
        }
      }
    }
    return range;
  }
};

}  // namespace

std::vector<GoldSentence> read_bracketed(std::istream& in, const PunctuationPolicy& policy,
                                         const std::string& source) {
  std::vector<GoldSentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    BracketParser parser(line, source + ":" + std::to_string(lineno));
    const auto trees = parser.parse_all();
    if (trees.empty()) continue;
    if (trees.size() > 1) throw CorpusError(source + ":" + std::to_string(lineno) + ": more than one tree on the line");
    GoldSentence g;
    g.spans.emplace();
    SpanCollector collect{policy, g};
    const auto whole = collect.visit(trees[0], "");
    if (whole && whole->end > whole->start) g.spans->insert(*whole);
    g.punct.assign(g.tokens.size(), false);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<GoldSentence> read_bracketed(const std::filesystem::path& path, const PunctuationPolicy& policy) {
  auto in = open_input(path);
  return read_bracketed(in, policy, path.string());
}

// ---- CoNLL -----------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

bool parse_int(const std::string& s, long& out) {
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && end == s.data() + s.size();
}

void check_tree(const std::vector<int>& parents, const std::string& where) {
  const std::size_t n = parents.size();
  std::size_t roots = 0;
  for (int p : parents) roots += p < 0;
  if (roots != 1) throw CorpusError(where + ": sentence has " + std::to_string(roots) + " roots");
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t steps = 0;
    for (int k = static_cast<int>(i); k >= 0; k = parents[static_cast<std::size_t>(k)]) {
      if (++steps > n) throw CorpusError(where + ": head column forms a cycle");
    }
  }
}

}  // namespace

std::vector<GoldSentence> read_conll(std::istream& in, const PunctuationPolicy& policy, const std::string& source) {
  std::vector<GoldSentence> out;
  GoldSentence cur;
  std::vector<int> parents;
  std::vector<std::size_t> token_lines;
  std::size_t start_line = 0;
  std::string line;
  std::size_t lineno = 0;

  const auto flush = [&] {
    if (cur.tokens.empty()) return;
    const std::string where = source + ":" + std::to_string(start_line);
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (parents[i] >= static_cast<int>(parents.size())) {
        throw CorpusError(source + ":" + std::to_string(token_lines[i]) + ": head beyond the sentence length");
      }
    }
    check_tree(parents, where);
    cur.parents = parents;
    out.push_back(std::move(cur));
    cur = GoldSentence{};
    parents.clear();
    token_lines.clear();
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto cols = split_tabs(line);
    if (cols.size() < 7) throw CorpusError(where + ": expected at least 7 tab-separated columns, found " + std::to_string(cols.size()));
    // multiword ranges and empty nodes carry no head
    if (cols[0].find_first_of("-.") != std::string::npos) continue;
    long index = 0, head = 0;
    if (!parse_int(cols[0], index) || index != static_cast<long>(cur.tokens.size()) + 1) {
      throw CorpusError(where + ": token index '" + cols[0] + "' is out of sequence");
    }
    if (!parse_int(cols[6], head) || head < 0) throw CorpusError(where + ": invalid head '" + cols[6] + "'");
    if (cur.tokens.empty()) start_line = lineno;
    const std::string& form = cols[1];
    const bool punct = policy.is_punct(form, cols[3]) || (cols.size() > 4 && policy.is_punct(form, cols[4]));
    cur.tokens.push_back(form);
    cur.punct.push_back(punct);
    parents.push_back(static_cast<int>(head) - 1);
    token_lines.push_back(lineno);
  }
  flush();
  return out;
}

std::vector<GoldSentence> read_conll(const std::filesystem::path& path, const PunctuationPolicy& policy) {
  auto in = open_input(path);
  return read_conll(in, policy, path.string());
}

void write_conll(std::ostream& out, std::span<const GoldSentence> sentences) {
  for (const auto& s : sentences) {
    if (!s.parents || s.parents->size() != s.tokens.size()) {
      throw CorpusError("write_conll: sentence without a parent for every token");
    }
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      const bool punct = i < s.punct.size() && s.punct[i];
      const int head = (*s.parents)[i] + 1;
      out << (i + 1) << '\t' << s.tokens[i] << "\t_\t" << (punct ? "PUNCT" : "_") << '\t'
          << (punct ? "PUNCT" : "_") << "\t_\t" << head << '\t' << (head == 0 ? "root" : "dep") << "\t_\t_\n";
    }
    out << '\n';
  }
}

}  // namespace structlab::corpus
