#pragma once

// Discrete syntactic structures: distances, heights, binary constituency
// trees and projective dependency graphs, plus the conversions between them.
//
// Token indices are 0-based. Split point k (0 <= k < n-1) sits between tokens
// k and k+1; the two sentence boundaries behave as +infinity distances.

#include <compare>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace structlab::grammar {

struct SyntacticDistances {
  std::vector<double> tau;  // size n-1
};

struct SyntacticHeights {
  std::vector<double> delta;  // size n
};

/// Inclusive leaf-index bounds of a constituent.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  auto operator<=>(const Span&) const = default;
};

using SpanSet = std::set<Span>;

/// Unlabeled binary tree whose leaves are 0..n-1 in order.
class ConstituencyTree {
 public:
  struct Node {
    int left = -1;   // child node ids, -1 for a leaf
    int right = -1;
    std::size_t start = 0;  // leaf range covered
    std::size_t end = 0;
    bool is_leaf() const { return left < 0; }
  };

  ConstituencyTree() = default;

  static ConstituencyTree leaf(std::size_t index);
  /// Joins two trees whose leaf ranges are adjacent (left before right).
  static ConstituencyTree join(const ConstituencyTree& left, const ConstituencyTree& right);

  bool empty() const { return nodes_.empty(); }
  std::size_t num_leaves() const;
  int root() const { return root_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Binary, in-order leaves 0..n-1.
  bool valid() const;

  /// "(a (b c))"; leaves print as their words, or indices when words is empty.
  std::string to_bracketed(std::span<const std::string> words = {}) const;

  bool operator==(const ConstituencyTree& other) const;

 private:
  int add(Node node);
  int copy_from(const ConstituencyTree& src, int id, std::size_t offset);

  std::vector<Node> nodes_;
  int root_ = -1;
};

struct Arc {
  std::size_t dependent = 0;
  std::size_t parent = 0;
  auto operator<=>(const Arc&) const = default;
};

struct DependencyGraph {
  std::vector<Arc> arcs;  // sorted by dependent
  std::size_t root = 0;

  /// Parent per token, -1 for the root.
  std::vector<int> parents(std::size_t n) const;
  /// Exactly n-1 arcs, one parent per non-root token, acyclic.
  bool valid(std::size_t n) const;
};

struct JointParse {
  ConstituencyTree tree;
  DependencyGraph graph;
  std::size_t parent = 0;  // head of the whole sentence
  double height = 0;       // its syntactic height
};

/// Recursive split at the leftmost maximal distance.
ConstituencyTree distance_to_tree(std::size_t n, std::span<const double> tau);
ConstituencyTree distance_to_tree(std::span<const std::string> words, std::span<const double> tau);

/// At each internal node the head with the lower height attaches to the head
/// with the higher height; equal heights keep the left head.
DependencyGraph tree_to_dependencies(const ConstituencyTree& tree, std::span<const double> delta);

/// Builds tree and dependency graph in one recursion.
JointParse joint_parse(std::size_t n, std::span<const double> tau, std::span<const double> delta);

/// One span per internal node; single leaves produce none.
SpanSet tree_spans(const ConstituencyTree& tree);

/// Canonical chains, e.g. right_branching(3) = (0 (1 2)).
ConstituencyTree right_branching(std::size_t n);
ConstituencyTree left_branching(std::size_t n);

}  // namespace structlab::grammar
