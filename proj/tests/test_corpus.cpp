#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <sstream>

#include "structlab/corpus.hpp"
#include "structlab/toy_grammar.hpp"

namespace structlab::corpus {
namespace {

namespace fs = std::filesystem;
using grammar::SpanSet;

std::vector<GoldSentence> bracketed(const std::string& text) {
  std::istringstream in(text);
  return read_bracketed(in);
}

std::vector<GoldSentence> conll(const std::string& text) {
  std::istringstream in(text);
  return read_conll(in);
}

TEST(Vocab, FrequencyThreshold) {
  const std::vector<Sentence> corpus{{"a", "a", "b"}};
  const auto v = Vocab::build(corpus, 2);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
  EXPECT_EQ(v.id("b"), Vocab::kUnk);
  EXPECT_EQ(v.token(Vocab::kMask), "<mask>");
  EXPECT_EQ(Vocab::build(corpus, 1).size(), 5u);
}

TEST(Vocab, DeterministicOrder) {
  const std::vector<Sentence> corpus{{"z", "y", "y", "x", "w", "x"}, {"w", "v"}};
  const auto a = Vocab::build(corpus, 1), b = Vocab::build(corpus, 1);
  EXPECT_EQ(a.tokens(), b.tokens());
  // frequency first, then bytes
  EXPECT_EQ(std::vector<std::string>(a.tokens().begin() + 3, a.tokens().end()),
            (std::vector<std::string>{"w", "x", "y", "v", "z"}));
}

TEST(Vocab, SaveLoadRoundTrip) {
  const std::vector<Sentence> corpus{{"the", "cat", "sat"}, {"the", "dog"}};
  const auto v = Vocab::build(corpus, 1);
  const auto path = fs::temp_directory_path() / "structlab-vocab.txt";
  v.save(path);
  EXPECT_EQ(Vocab::load(path).tokens(), v.tokens());
  EXPECT_THROW(Vocab::build(std::vector<Sentence>{}, 1), CorpusError);
}

TEST(RawCorpus, CountsReconcile) {
  std::istringstream in("the cat\n\n  A dog  barks \n\n");
  const auto raw = read_raw(in, true);
  EXPECT_EQ(raw.lines, 4u);
  EXPECT_EQ(raw.blank_lines, 2u);
  ASSERT_EQ(raw.sentences.size(), 2u);
  EXPECT_EQ(raw.sentences[1], (Sentence{"a", "dog", "barks"}));
}

TEST(Bracketed, SpansExcludeSingleWords) {
  const auto g = bracketed("(S (NP I) (VP like (NP cats)))\n");
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].tokens, (std::vector<std::string>{"I", "like", "cats"}));
  EXPECT_EQ(*g[0].spans, (SpanSet{{0, 2}, {1, 2}}));
  EXPECT_EQ(g[0].labeled_spans.size(), 2u);
}

TEST(Bracketed, SingleTokenTreeHasNoSpans) {
  const auto g = bracketed("(S (NN hello))\n");
  EXPECT_TRUE(g[0].spans->empty());
}

TEST(Bracketed, PunctuationRemovedAndIndicesReassigned) {
  const auto g = bracketed("(S (NP (DT the) (NN dog)) (, ,) (VP (VBZ barks) (ADVP (RB very) (RB loudly))) (. .))\n");
  EXPECT_EQ(g[0].tokens, (std::vector<std::string>{"the", "dog", "barks", "very", "loudly"}));
  EXPECT_EQ(*g[0].spans, (SpanSet{{0, 4}, {0, 1}, {2, 4}, {3, 4}}));
}

TEST(Bracketed, FunctionTagsAndEmptyElements) {
  const auto g = bracketed("(S (NP-SBJ (-NONE- *T*)) (NP-SBJ-1 (DT a) (NN b)) (VP (VBD ran)))\n");
  EXPECT_EQ(g[0].tokens, (std::vector<std::string>{"a", "b", "ran"}));
  std::set<std::string> labels;
  for (const auto& s : g[0].labeled_spans) labels.insert(s.label);
  EXPECT_EQ(labels, (std::set<std::string>{"S", "NP"}));
}

TEST(Bracketed, OuterWrapperAndErrors) {
  EXPECT_EQ(bracketed("( (S (A x) (B y)))\n")[0].tokens.size(), 2u);
  EXPECT_THROW(bracketed("(S (A x) (B y)\n"), CorpusError);
  try {
    bracketed("(S (A x))\n(S (A x)))\n");
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

TEST(Conll, HeadsMapToParents) {
  const auto g = conll(
      "1\tI\t_\tPRON\tPRP\t_\t2\tnsubj\t_\t_\n"
      "2\tlike\t_\tVERB\tVBP\t_\t0\troot\t_\t_\n"
      "3\tcats\t_\tNOUN\tNNS\t_\t2\tobj\t_\t_\n\n");
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(*g[0].parents, (std::vector<int>{1, -1, 1}));
}

TEST(Conll, EmptyInput) { EXPECT_TRUE(conll("").empty()); }

TEST(Conll, CommentsMultiwordAndPunctuation) {
  const auto g = conll(
      "# sent_id = 1\n"
      "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n"
      "1\tdo\t_\tAUX\tVB\t_\t0\troot\t_\t_\n"
      "2\tn't\t_\tPART\tRB\t_\t1\tadvmod\t_\t_\n"
      "3\t.\t_\tPUNCT\t.\t_\t1\tpunct\t_\t_\n");
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].tokens.size(), 3u);
  EXPECT_EQ(g[0].punct, (std::vector<bool>{false, false, true}));
}

TEST(Conll, MalformedGraphsNameTheLine) {
  const std::string two_roots = "1\ta\t_\tX\tX\t_\t0\t_\t_\t_\n2\tb\t_\tX\tX\t_\t0\t_\t_\t_\n";
  const std::string cycle = "1\ta\t_\tX\tX\t_\t2\t_\t_\t_\n2\tb\t_\tX\tX\t_\t1\t_\t_\t_\n3\tc\t_\tX\tX\t_\t0\t_\t_\t_\n";
  const std::string out_of_range = "1\ta\t_\tX\tX\t_\t0\t_\t_\t_\n2\tb\t_\tX\tX\t_\t7\t_\t_\t_\n";
  const std::string bad_index = "1\ta\t_\tX\tX\t_\t0\t_\t_\t_\n3\tb\t_\tX\tX\t_\t1\t_\t_\t_\n";
  for (const auto& text : {two_roots, cycle, out_of_range, bad_index}) {
    EXPECT_THROW(conll(text), CorpusError) << text;
  }
  try {
    conll(out_of_range);
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

TEST(Conll, WriteReadRoundTrip) {
  std::vector<GoldSentence> sentences(2);
  sentences[0].tokens = {"a", "b", "c", "d"};
  sentences[0].parents = std::vector<int>{1, -1, 3, 1};
  sentences[1].tokens = {"x"};
  sentences[1].parents = std::vector<int>{-1};
  std::ostringstream out;
  write_conll(out, sentences);
  const auto back = conll(out.str());
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back[k].tokens, sentences[k].tokens);
    EXPECT_EQ(*back[k].parents, *sentences[k].parents);
  }
}

TEST(Punctuation, Policy) {
  const PunctuationPolicy p;
  EXPECT_TRUE(p.is_punct(","));
  EXPECT_TRUE(p.is_punct("--"));
  EXPECT_TRUE(p.is_punct("word", "PUNCT"));
  EXPECT_FALSE(p.is_punct("I"));
  EXPECT_FALSE(p.is_punct("3"));
}

}  // namespace
}  // namespace structlab::corpus

namespace structlab::toy {
namespace {

TEST(ToyGrammar, SameSeedSameCorpus) {
  const auto a = generate(5, 200), b = generate(5, 200);
  EXPECT_EQ(a.bracketed, b.bracketed);
  EXPECT_NE(generate(6, 200).bracketed, a.bracketed);
}

TEST(ToyGrammar, StructuresAreConsistent) {
  const auto c = generate(7, 500);
  ASSERT_EQ(c.sentences.size(), 500u);
  for (std::size_t k = 0; k < c.sentences.size(); ++k) {
    const auto& s = c.sentences[k];
    const std::size_t n = s.tokens.size();
    EXPECT_GE(n, kMinLength);
    EXPECT_LE(n, kMaxLength);
    int roots = 0;
    for (int p : *s.parents) roots += p < 0;
    EXPECT_EQ(roots, 1);  // n-1 arcs
    EXPECT_EQ(c.trees[k].num_leaves(), n);
    EXPECT_EQ(grammar::tree_spans(c.trees[k]), *s.spans);
    std::istringstream line(c.bracketed[k]);
    const auto reread = corpus::read_bracketed(line);
    ASSERT_EQ(reread.size(), 1u);
    EXPECT_EQ(reread[0].tokens, s.tokens);
    EXPECT_EQ(*reread[0].spans, *s.spans);
  }
}

TEST(ToyGrammar, VocabularyAroundOneHundred) {
  const auto lex = lexicon();
  EXPECT_GE(lex.size(), 80u);
  EXPECT_LE(lex.size(), 160u);
}

TEST(ToyGrammar, FiveThousandSentencesQuickly) {
  const auto start = std::chrono::steady_clock::now();
  const auto c = generate(1, 5000);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(c.sentences.size(), 5000u);
  EXPECT_LT(seconds, 10.0);
}

}  // namespace
}  // namespace structlab::toy
