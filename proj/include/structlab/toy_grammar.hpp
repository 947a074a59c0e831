#pragma once

// Built-in probabilistic grammar with subject-verb and determiner-noun
// number agreement. Every rule has at most two children, so the sampled
// trees are binary over the words; heads percolate to give dependencies.

#include <cstdint>
#include <string>
#include <vector>

#include "structlab/corpus.hpp"
#include "structlab/grammar.hpp"

namespace structlab::toy {

struct ToyCorpus {
  std::vector<corpus::GoldSentence> sentences;    // spans, labels and parents filled
  std::vector<grammar::ConstituencyTree> trees;   // binary gold trees
  std::vector<std::string> bracketed;             // labeled Penn-style lines
};

inline constexpr std::size_t kMinLength = 4;
inline constexpr std::size_t kMaxLength = 20;

/// `size` sentences of length kMinLength..kMaxLength, a pure function of seed.
ToyCorpus generate(std::uint64_t seed, std::size_t size);

/// Every word the grammar can emit, sorted.
std::vector<std::string> lexicon();

}  // namespace structlab::toy
