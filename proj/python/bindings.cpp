// Python bindings for the parsing core, metrics, toy corpus, checkpoints and
// the command line.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "structlab/cli.hpp"
#include "structlab/corpus.hpp"
#include "structlab/dependency.hpp"
#include "structlab/evaluation.hpp"
#include "structlab/grammar.hpp"
#include "structlab/model.hpp"
#include "structlab/parser_network.hpp"
#include "structlab/toy_grammar.hpp"

namespace py = pybind11;
using namespace structlab;

namespace {

using Spans = std::vector<std::pair<std::size_t, std::size_t>>;

Spans to_pairs(const grammar::SpanSet& spans) {
  Spans out;
  for (const auto& s : spans) out.emplace_back(s.start, s.end);
  return out;
}

grammar::SpanSet from_pairs(const Spans& pairs) {
  grammar::SpanSet out;
  for (const auto& [a, b] : pairs) out.insert({a, b});
  return out;
}

py::array_t<double> to_array(const Tensor<double>& t) {
  py::array_t<double> out({t.dim(0), t.dim(1)});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw std::invalid_argument("expected a square matrix");
  const auto n = static_cast<std::size_t>(a.shape(0));
  return Tensor<double>({n, n}, std::vector<double>(a.data(), a.data() + n * n));
}

/// -1 marks the root.
std::vector<int> signed_parents(const std::vector<std::size_t>& parents, std::size_t root) {
  std::vector<int> out(parents.size());
  for (std::size_t i = 0; i < parents.size(); ++i) out[i] = i == root ? -1 : static_cast<int>(parents[i]);
  return out;
}

parser::CalibrationTarget parse_target(const std::string& name) {
  if (name == "distances") return parser::CalibrationTarget::kDistances;
  if (name == "heights") return parser::CalibrationTarget::kHeights;
  throw std::invalid_argument("target must be 'distances' or 'heights'");
}

/// A checkpoint loaded at 64-bit precision with its vocabulary.
class Model {
 public:
  explicit Model(const std::string& path) {
    const auto ck = model::read_checkpoint(path);
    vocab_ = corpus::Vocab::from_tokens(ck.vocab);
    model_.emplace(model::model_from_checkpoint<double>(ck));
    if (!model_->config().structformer()) throw std::invalid_argument(path + " holds a baseline without a parser");
  }

  py::dict analyze(const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("empty sentence");
    const auto a = model_->analyze(vocab_.encode(tokens));
    py::dict d;
    d["tokens"] = tokens;
    d["tree"] = a.tree.to_bracketed(tokens);
    d["parents"] = signed_parents(a.decoded, a.root);
    d["root"] = a.root;
    d["tau"] = a.tau;
    d["delta"] = a.delta;
    d["raw_tau"] = a.raw_tau;
    d["raw_delta"] = a.raw_delta;
    d["parent_matrix"] = to_array(a.parent);
    return d;
  }

  std::vector<std::vector<std::pair<double, double>>> relation_weights() const {
    std::vector<std::vector<std::pair<double, double>>> out;
    for (const auto& layer : model_->relation_mixes()) {
      auto& row = out.emplace_back();
      for (const auto& mix : layer) row.emplace_back(mix.parent, mix.dep);
    }
    return out;
  }

  std::pair<double, double> temperatures() const { return model_->temperatures(); }
  std::size_t vocab_size() const { return vocab_.size(); }

 private:
  corpus::Vocab vocab_;
  std::optional<model::StructFormer<double>> model_;
};

}  // namespace

PYBIND11_MODULE(_structlab, m) {
  m.doc() = "Dependency-constrained transformer toolkit: parsing, metrics and checkpoints";

  m.def(
      "distance_to_tree",
      [](const std::vector<double>& tau, std::optional<std::vector<std::string>> words) {
        const std::size_t n = tau.size() + 1;
        if (words && words->size() != n) throw std::invalid_argument("need one more word than distances");
        const auto tree = grammar::distance_to_tree(n, tau);
        return tree.to_bracketed(words ? std::span<const std::string>(*words) : std::span<const std::string>());
      },
      py::arg("tau"), py::arg("words") = py::none(), "Bracketed binary tree from syntactic distances.");

  m.def(
      "tree_spans",
      [](const std::vector<double>& tau) { return to_pairs(grammar::tree_spans(grammar::distance_to_tree(tau.size() + 1, tau))); },
      py::arg("tau"), "Spans (start, end inclusive) of the tree built from the distances.");

  m.def(
      "joint_parse",
      [](const std::vector<double>& tau, const std::vector<double>& delta) {
        if (delta.size() != tau.size() + 1) throw std::invalid_argument("need one more height than distances");
        const auto p = grammar::joint_parse(delta.size(), tau, delta);
        py::dict d;
        d["tree"] = p.tree.to_bracketed();
        d["parents"] = p.graph.parents(delta.size());
        d["root"] = p.graph.root;
        return d;
      },
      py::arg("tau"), py::arg("delta"), "Constituency tree and dependency graph; parents use -1 for the root.");

  m.def(
      "parent_dist",
      [](const std::vector<double>& tau, const std::vector<double>& delta, double mu1, double mu2) {
        if (delta.size() != tau.size() + 1) throw std::invalid_argument("need one more height than distances");
        return to_array(depdist::parent_dist(tau, delta, mu1, mu2).probs);
      },
      py::arg("tau"), py::arg("delta"), py::arg("mu1") = 1.0, py::arg("mu2") = 1.0,
      "Matrix p[i, j] = probability that token j is the parent of token i.");

  m.def(
      "decode_parents", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p) {
        return depdist::decode_parents(from_array(p));
      },
      py::arg("probs"), "Row-wise argmax over j != i, leftmost on ties.");

  m.def(
      "calibrate",
      [](const std::vector<double>& tau, const std::vector<double>& delta, const std::string& target) {
        const auto c = parser::calibrate(tau, delta, parse_target(target));
        return py::make_tuple(c.tau, c.delta, c.shift);
      },
      py::arg("tau"), py::arg("delta"), py::arg("target") = "distances",
      "Removes the largest isolation margin; returns (tau, delta, shift).");

  m.def(
      "span_f1",
      [](const std::vector<Spans>& predicted, const std::vector<Spans>& gold) {
        std::vector<grammar::SpanSet> p, g;
        for (const auto& s : predicted) p.push_back(from_pairs(s));
        for (const auto& s : gold) g.push_back(from_pairs(s));
        const auto s = evaluation::span_f1(p, g);
        py::dict d;
        d["f1"] = s.f1;
        d["precision"] = s.precision;
        d["recall"] = s.recall;
        d["matched"] = s.matched;
        return d;
      },
      py::arg("predicted"), py::arg("gold"), "Micro-averaged unlabeled F1 over per-sentence span lists.");

  m.def(
      "attachment_scores",
      [](const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& gold) {
        if (predicted.size() != gold.size()) throw std::invalid_argument("sentence counts differ");
        std::vector<evaluation::PredictedDependencies> p;
        std::vector<corpus::GoldSentence> g;
        for (std::size_t k = 0; k < predicted.size(); ++k) {
          const auto& row = predicted[k];
          evaluation::PredictedDependencies d;
          d.parents.resize(row.size());
          for (std::size_t i = 0; i < row.size(); ++i) {
            if (row[i] < 0) d.root = i;
            d.parents[i] = row[i] < 0 ? i : static_cast<std::size_t>(row[i]);
          }
          p.push_back(std::move(d));
          corpus::GoldSentence s;
          s.tokens.assign(gold[k].size(), "_");
          s.punct.assign(gold[k].size(), false);
          s.parents = gold[k];
          g.push_back(std::move(s));
        }
        const auto s = evaluation::attachment_scores(p, g);
        py::dict d;
        d["uas"] = s.uas;
        d["uuas"] = s.uuas;
        d["tokens"] = s.tokens;
        return d;
      },
      py::arg("predicted"), py::arg("gold"), "UAS and UUAS; parent lists use -1 for the root.");

  m.def(
      "toy_corpus",
      [](std::uint64_t seed, std::size_t size) {
        const auto c = toy::generate(seed, size);
        py::list out;
        for (std::size_t k = 0; k < c.sentences.size(); ++k) {
          py::dict d;
          d["tokens"] = c.sentences[k].tokens;
          d["tree"] = c.bracketed[k];
          d["parents"] = *c.sentences[k].parents;
          d["spans"] = to_pairs(*c.sentences[k].spans);
          out.append(d);
        }
        return out;
      },
      py::arg("seed"), py::arg("size"), "Sentences sampled from the built-in toy grammar.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command line in process; returns (exit code, stdout, stderr).");

  py::class_<Model>(m, "Model", "A trained checkpoint loaded at 64-bit precision.")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def("analyze", &Model::analyze, py::arg("tokens"),
           "Tree, decoded parents, distances, heights and parent matrix for one sentence.")
      .def("relation_weights", &Model::relation_weights, "Per layer and head: (parent, dep) mixing weights.")
      .def("temperatures", &Model::temperatures)
      .def_property_readonly("vocab_size", &Model::vocab_size);
}
