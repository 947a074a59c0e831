#include "structlab/grammar.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>

namespace structlab::grammar {

int ConstituencyTree::add(Node node) {
  nodes_.push_back(node);
  return static_cast<int>(nodes_.size() - 1);
}

ConstituencyTree ConstituencyTree::leaf(std::size_t index) {
  ConstituencyTree t;
  t.root_ = t.add(Node{-1, -1, index, index});
  return t;
}

int ConstituencyTree::copy_from(const ConstituencyTree& src, int id, std::size_t offset) {
  const Node& n = src.node(id);
  if (n.is_leaf()) return add(Node{-1, -1, n.start + offset, n.end + offset});
  const int l = copy_from(src, n.left, offset);
  const int r = copy_from(src, n.right, offset);
  return add(Node{l, r, n.start + offset, n.end + offset});
}

ConstituencyTree ConstituencyTree::join(const ConstituencyTree& left, const ConstituencyTree& right) {
  if (left.empty() || right.empty()) throw std::invalid_argument("join: empty subtree");
  const Node& ln = left.node(left.root());
  const Node& rn = right.node(right.root());
  if (ln.end + 1 != rn.start) throw std::invalid_argument("join: subtrees are not adjacent");
  ConstituencyTree t;
  t.nodes_.reserve(left.nodes_.size() + right.nodes_.size() + 1);
  const int l = t.copy_from(left, left.root(), 0);
  const int r = t.copy_from(right, right.root(), 0);
  t.root_ = t.add(Node{l, r, ln.start, rn.end});
  return t;
}

std::size_t ConstituencyTree::num_leaves() const {
  if (empty()) return 0;
  const Node& r = node(root_);
  return r.end - r.start + 1;
}

bool ConstituencyTree::valid() const {
  if (empty()) return false;
  std::size_t next = node(root_).start;
  if (next != 0) return false;
  std::function<bool(int)> walk = [&](int id) -> bool {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) return false;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      if (n.right >= 0 || n.start != n.end || n.start != next) return false;
      ++next;
      return true;
    }
    if (n.right < 0) return false;
    if (!walk(n.left) || !walk(n.right)) return false;
    return node(n.left).start == n.start && node(n.right).end == n.end;
  };
  return walk(root_) && next == num_leaves();
}

std::string ConstituencyTree::to_bracketed(std::span<const std::string> words) const {
  if (empty()) return "";
  std::string out;
  std::function<void(int)> walk = [&](int id) {
    const Node& n = node(id);
    if (n.is_leaf()) {
      out += n.start < words.size() ? words[n.start] : std::to_string(n.start);
      return;
    }
    out += '(';
    walk(n.left);
    out += ' ';
    walk(n.right);
    out += ')';
  };
  walk(root_);
  return out;
}

bool ConstituencyTree::operator==(const ConstituencyTree& other) const {
  if (empty() || other.empty()) return empty() == other.empty();
  std::function<bool(int, int)> same = [&](int a, int b) -> bool {
    const Node& x = node(a);
    const Node& y = other.node(b);
    if (x.start != y.start || x.end != y.end || x.is_leaf() != y.is_leaf()) return false;
    return x.is_leaf() || (same(x.left, y.left) && same(x.right, y.right));
  };
  return same(root_, other.root_);
}

std::vector<int> DependencyGraph::parents(std::size_t n) const {
  std::vector<int> out(n, -1);
  for (const Arc& a : arcs) out.at(a.dependent) = static_cast<int>(a.parent);
  return out;
}

bool DependencyGraph::valid(std::size_t n) const {
  if (n == 0 || root >= n || arcs.size() != n - 1) return false;
  std::vector<int> parent(n, -2);
  for (const Arc& a : arcs) {
    if (a.dependent >= n || a.parent >= n || a.dependent == root || parent[a.dependent] != -2) return false;
    parent[a.dependent] = static_cast<int>(a.parent);
  }
  parent[root] = -1;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t steps = 0;
    int cur = static_cast<int>(i);
    while (cur != -1) {
      if (++steps > n) return false;
      cur = parent[static_cast<std::size_t>(cur)];
    }
  }
  return true;
}

namespace {

void check_lengths(std::size_t n, std::size_t tau_size, const char* op) {
  if (n == 0) throw std::invalid_argument(std::string(op) + ": empty word sequence");
  if (tau_size + 1 != n) {
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(n - 1) +
                                " distances for " + std::to_string(n) + " words, got " +
                                std::to_string(tau_size));
  }
}

// Leftmost argmax over tau[lo..hi).
std::size_t split_point(std::span<const double> tau, std::size_t lo, std::size_t hi) {
  std::size_t best = lo;
  for (std::size_t k = lo + 1; k < hi; ++k)
    if (tau[k] > tau[best]) best = k;
  return best;
}

ConstituencyTree build(std::span<const double> tau, std::size_t lo, std::size_t hi) {
  if (lo == hi) return ConstituencyTree::leaf(lo);
  const std::size_t k = split_point(tau, lo, hi);
  return ConstituencyTree::join(build(tau, lo, k), build(tau, k + 1, hi));
}

}  // namespace

ConstituencyTree distance_to_tree(std::size_t n, std::span<const double> tau) {
  check_lengths(n, tau.size(), "distance_to_tree");
  return build(tau, 0, n - 1);
}

ConstituencyTree distance_to_tree(std::span<const std::string> words, std::span<const double> tau) {
  return distance_to_tree(words.size(), tau);
}

DependencyGraph tree_to_dependencies(const ConstituencyTree& tree, std::span<const double> delta) {
  if (!tree.valid()) throw std::invalid_argument("tree_to_dependencies: malformed tree");
  if (delta.size() != tree.num_leaves()) {
    throw std::invalid_argument("tree_to_dependencies: " + std::to_string(delta.size()) +
                                " heights for " + std::to_string(tree.num_leaves()) + " leaves");
  }
  DependencyGraph g;
  std::function<std::size_t(int)> head = [&](int id) -> std::size_t {
    const auto& n = tree.node(id);
    if (n.is_leaf()) return n.start;
    const std::size_t pl = head(n.left);
    const std::size_t pr = head(n.right);
    if (delta[pl] >= delta[pr]) {
      g.arcs.push_back({pr, pl});
      return pl;
    }
    g.arcs.push_back({pl, pr});
    return pr;
  };
  g.root = head(tree.root());
  std::sort(g.arcs.begin(), g.arcs.end());
  return g;
}

namespace {

struct Built {
  ConstituencyTree tree;
  std::size_t parent;
  double height;
};

Built build_joint(std::span<const double> tau, std::span<const double> delta, std::size_t lo,
                  std::size_t hi, std::vector<Arc>& arcs) {
  if (lo == hi) return {ConstituencyTree::leaf(lo), lo, delta[lo]};
  const std::size_t k = split_point(tau, lo, hi);
  Built l = build_joint(tau, delta, lo, k, arcs);
  Built r = build_joint(tau, delta, k + 1, hi, arcs);
  ConstituencyTree t = ConstituencyTree::join(l.tree, r.tree);
  if (l.height >= r.height) {
    arcs.push_back({r.parent, l.parent});
    return {std::move(t), l.parent, l.height};
  }
  arcs.push_back({l.parent, r.parent});
  return {std::move(t), r.parent, r.height};
}

}  // namespace

JointParse joint_parse(std::size_t n, std::span<const double> tau, std::span<const double> delta) {
  check_lengths(n, tau.size(), "joint_parse");
  if (delta.size() != n) {
    throw std::invalid_argument("joint_parse: expected " + std::to_string(n) + " heights, got " +
                                std::to_string(delta.size()));
  }
  JointParse out;
  Built b = build_joint(tau, delta, 0, n - 1, out.graph.arcs);
  std::sort(out.graph.arcs.begin(), out.graph.arcs.end());
  out.tree = std::move(b.tree);
  out.graph.root = b.parent;
  out.parent = b.parent;
  out.height = b.height;
  return out;
}

SpanSet tree_spans(const ConstituencyTree& tree) {
  SpanSet spans;
  for (const auto& n : tree.nodes())
    if (!n.is_leaf()) spans.insert({n.start, n.end});
  return spans;
}

ConstituencyTree right_branching(std::size_t n) {
  if (n == 0) throw std::invalid_argument("right_branching: empty sentence");
  std::vector<double> tau(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) tau[k] = static_cast<double>(n - k);
  return distance_to_tree(n, tau);
}

ConstituencyTree left_branching(std::size_t n) {
  if (n == 0) throw std::invalid_argument("left_branching: empty sentence");
  std::vector<double> tau(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) tau[k] = static_cast<double>(k + 1);
  return distance_to_tree(n, tau);
}

}  // namespace structlab::grammar
