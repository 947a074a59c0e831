#include "structlab/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "structlab/corpus.hpp"
#include "structlab/evaluation.hpp"
#include "structlab/toy_grammar.hpp"

namespace structlab::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto out = std::stoull(v, &used);
    if (used != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) seeds.push_back(parse_u64(key, trim(item)));
  if (seeds.empty()) throw UsageError("config key '" + key + "': empty seed list");
  return seeds;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  try {
    if (key == "seed" || key == "seeds") {
      seeds = parse_seeds(key, value);
      return;
    }
    if (model.set(key, value) || train.set(key, value)) return;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (key == "corpus") corpus = value;
  else if (key == "heldout") heldout = value;
  else if (key == "out") out = value;
  else if (key == "min_frequency") min_frequency = parse_u64(key, value);
  else if (key == "lowercase") {
    if (value != "on" && value != "off") throw UsageError("config key 'lowercase': expected on or off, got '" + value + "'");
    lowercase = value == "on";
  } else if (key == "eval_seed") eval_seed = parse_u64(key, value);
  else throw UsageError("unknown config key '" + key + "'");
}

void RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(where + ": " + e.what());
    }
  }
}

std::string RunConfig::echo() const {
  std::string out;
  const auto line = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  for (const auto& [k, v] : model.entries()) {
    if (k != "seed") line(k, v);
  }
  for (const auto& [k, v] : train.entries()) line(k, v);
  line("seeds", join_seeds(seeds));
  if (!corpus.empty()) line("corpus", corpus);
  if (!heldout.empty()) line("heldout", heldout);
  if (!out.empty()) line("out", this->out);
  line("min_frequency", std::to_string(min_frequency));
  line("lowercase", lowercase ? "on" : "off");
  line("eval_seed", std::to_string(eval_seed));
  return out;
}

std::size_t thread_budget() {
  if (const char* env = std::getenv("STRUCTLAB_THREADS")) {
    const std::string v = env;
    std::size_t n = 0;
    try {
      n = std::stoul(v);
    } catch (const std::exception&) {
      n = 0;
    }
    if (n == 0) throw UsageError("STRUCTLAB_THREADS must be a positive integer, got '" + v + "'");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

/// Runs jobs 0..count-1 on up to thread_budget() workers; the first
/// exception is rethrown after all workers finish.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::min(count, thread_budget());
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Sentences from a raw file or stdin ("-"), with counts for reconciliation.
corpus::RawCorpus read_sentences(const std::string& path, bool lowercase) {
  if (path == "-") return corpus::read_raw(std::cin, lowercase);
  return corpus::read_raw(fs::path(path), lowercase);
}

struct CommonFlags {
  std::string config_path;
  std::string corpus, heldout, out, mask_rate, relations, calibrate, seeds, architecture, precision, steps;
  std::vector<std::string> sets;

  void attach(CLI::App& app, bool training_flags) {
    app.add_option("--config", config_path, "key=value configuration file");
    app.add_option("--corpus", corpus, "raw corpus, one sentence per line");
    app.add_option("--out", out, "output directory or file");
    app.add_option("--seed,--seeds", seeds, "seed or comma-separated seed list");
    app.add_option("--set", sets, "extra key=value override (repeatable)");
    if (training_flags) {
      app.add_option("--heldout", heldout, "held-out raw corpus for the final perplexity");
      app.add_option("--mask-rate", mask_rate, "masking probability (default 0.3)");
      app.add_option("--relations", relations, "parent, dep or parent+dep");
      app.add_option("--calibrate", calibrate, "on or off");
      app.add_option("--architecture", architecture, "structformer or transformer");
      app.add_option("--precision", precision, "32 or 64");
      app.add_option("--steps", steps, "training steps");
    }
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) c.load(config_path);
    const auto apply = [&](const char* key, const std::string& v) {
      if (!v.empty()) c.set(key, v);
    };
    apply("corpus", corpus);
    apply("heldout", heldout);
    apply("out", out);
    apply("mask_rate", mask_rate);
    apply("relations", relations);
    apply("calibrate", calibrate);
    apply("seeds", seeds);
    apply("architecture", architecture);
    apply("precision", precision);
    apply("steps", steps);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    return c;
  }
};

// ---- train -------------------------------------------------------------------

template <typename T>
double train_one(const RunConfig& run, const model::ModelConfig& mc, const corpus::Vocab& vocab,
                 const std::vector<std::vector<std::int32_t>>& train_ids,
                 const std::vector<std::vector<std::int32_t>>& eval_ids, const fs::path& dir, std::ostream& err,
                 std::mutex& log_mutex) {
  model::StructFormer<T> m(mc);
  {
    std::lock_guard lock(log_mutex);
    err << "seed " << mc.seed << ": " << m.parameters().scalar_count() << " parameters ("
        << m.structure_parameter_count() << " in the parser, temperatures and relation weights)\n";
  }
  std::ofstream metrics(dir / "metrics.jsonl");
  if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.jsonl").string());
  training::TrainConfig tc = run.train;
  tc.seed = mc.seed;
  training::train(m, train_ids, tc, corpus::Vocab::kMask, [&](const training::TrainMetrics& x) {
    ordered_json j{{"step", x.step}, {"loss", x.loss}, {"ppl", x.ppl}, {"lr", x.lr}, {"wall_time", x.wall_time}};
    metrics << j.dump() << '\n';
    metrics.flush();
    std::lock_guard lock(log_mutex);
    err << "seed " << mc.seed << " step " << x.step << " loss " << x.loss << " ppl " << x.ppl << '\n';
  });
  model::save_checkpoint(dir / "model.ckpt", m, vocab.tokens());
  return training::evaluate_ppl(m, eval_ids, corpus::Vocab::kMask, run.eval_seed);
}

std::vector<std::vector<std::int32_t>> encode_all(const corpus::Vocab& vocab, const std::vector<corpus::Sentence>& s,
                                                  std::size_t cap, const std::string& what, std::ostream& err) {
  std::vector<std::vector<std::int32_t>> out;
  std::size_t skipped = 0;
  for (const auto& sentence : s) {
    if (sentence.size() > cap) {
      ++skipped;
      continue;
    }
    out.push_back(vocab.encode(sentence));
  }
  if (skipped) err << what << ": " << skipped << " sentences longer than " << cap << " tokens left out\n";
  return out;
}

int cmd_train(const RunConfig& run, std::ostream& out, std::ostream& err) {
  if (run.corpus.empty()) throw UsageError("train: --corpus is required");
  if (run.out.empty()) throw UsageError("train: --out is required");
  const auto raw = read_sentences(run.corpus, run.lowercase);
  err << "corpus " << run.corpus << ": " << raw.lines << " lines, " << raw.sentences.size() << " sentences, "
      << raw.blank_lines << " blank lines\n";
  if (raw.sentences.empty()) throw corpus::CorpusError(run.corpus + ": empty corpus");
  const corpus::Vocab vocab = corpus::Vocab::build(raw.sentences, run.min_frequency);
  err << "vocabulary: " << vocab.size() << " tokens\n";

  model::ModelConfig mc = run.model;
  mc.vocab_size = vocab.size();
  try {
    mc.validate();
    run.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto train_ids = encode_all(vocab, raw.sentences, mc.max_train_length, "training corpus", err);
  if (train_ids.empty()) throw corpus::CorpusError(run.corpus + ": no sentence fits the training length cap");
  std::vector<std::vector<std::int32_t>> eval_ids = train_ids;
  if (!run.heldout.empty()) {
    const auto held = read_sentences(run.heldout, run.lowercase);
    err << "held-out " << run.heldout << ": " << held.lines << " lines, " << held.sentences.size() << " sentences, "
        << held.blank_lines << " blank lines\n";
    eval_ids = encode_all(vocab, held.sentences, mc.max_eval_length, "held-out corpus", err);
    if (eval_ids.empty()) throw corpus::CorpusError(run.heldout + ": empty held-out corpus");
  }

  const fs::path root(run.out);
  ensure_dir(root);
  write_text(root / "config.txt", run.echo());
  vocab.save(root / "vocab.txt");

  std::vector<double> ppl(run.seeds.size());
  std::mutex log_mutex;
  parallel_for(run.seeds.size(), [&](std::size_t k) {
    model::ModelConfig seeded = mc;
    seeded.seed = run.seeds[k];
    const fs::path dir = run.seeds.size() == 1 ? root : root / ("seed-" + std::to_string(run.seeds[k]));
    ensure_dir(dir);
    RunConfig echo = run;
    echo.seeds = {run.seeds[k]};
    write_text(dir / "config.txt", echo.echo());
    ppl[k] = seeded.precision == model::Precision::k64
                 ? train_one<double>(run, seeded, vocab, train_ids, eval_ids, dir, err, log_mutex)
                 : train_one<float>(run, seeded, vocab, train_ids, eval_ids, dir, err, log_mutex);
  });

  ordered_json summary;
  summary["eval_corpus"] = run.heldout.empty() ? run.corpus : run.heldout;
  for (std::size_t k = 0; k < run.seeds.size(); ++k) {
    out << "seed " << run.seeds[k] << ": final masked perplexity " << ppl[k] << '\n';
    summary["runs"].push_back({{"seed", run.seeds[k]}, {"ppl", ppl[k]}});
  }
  write_text(root / "summary.json", summary.dump(2) + "\n");
  return kOk;
}

// ---- checkpoint-driven commands --------------------------------------------

/// A loaded checkpoint at either precision.
struct LoadedModel {
  corpus::Vocab vocab;
  std::optional<model::StructFormer<float>> f32;
  std::optional<model::StructFormer<double>> f64;

  explicit LoadedModel(const std::string& path) {
    const auto ck = model::read_checkpoint(path);
    vocab = corpus::Vocab::from_tokens(ck.vocab);
    const auto config = model::config_from_text(ck.config_text);
    if (config.precision == model::Precision::k64) f64.emplace(model::model_from_checkpoint<double>(ck));
    else f32.emplace(model::model_from_checkpoint<float>(ck));
  }

  const model::ModelConfig& config() const { return f64 ? f64->config() : f32->config(); }

  model::SentenceAnalysis analyze(std::span<const std::int32_t> ids) const {
    return f64 ? f64->analyze(ids) : f32->analyze(ids);
  }

  std::vector<std::vector<attention::RelationMix>> relation_mixes() const {
    return f64 ? f64->relation_mixes() : f32->relation_mixes();
  }

  std::pair<double, double> temperatures() const { return f64 ? f64->temperatures() : f32->temperatures(); }

  double ppl(const std::vector<std::vector<std::int32_t>>& ids, std::uint64_t seed) const {
    return f64 ? training::evaluate_ppl(*f64, ids, corpus::Vocab::kMask, seed)
               : training::evaluate_ppl(*f32, ids, corpus::Vocab::kMask, seed);
  }

  void require_parser(const std::string& path) const {
    if (!config().structformer()) {
      throw corpus::CorpusError("checkpoint " + path + " holds a baseline transformer without a parser");
    }
  }
};

std::ostream& output_stream(const std::string& path, std::ofstream& file, std::ostream& fallback) {
  if (path.empty() || path == "-") return fallback;
  file.open(path);
  if (!file) throw std::runtime_error("cannot write " + path);
  return file;
}

int cmd_parse(const std::string& checkpoint, const std::string& input, const std::string& out_path,
              const std::string& format, bool dump, std::ostream& out, std::ostream& err) {
  if (format != "jsonl" && format != "conll") throw UsageError("parse: --format must be jsonl or conll");
  const LoadedModel lm(checkpoint);
  lm.require_parser(checkpoint);
  std::ifstream in_file;
  std::istream* in = &std::cin;
  if (input != "-") {
    in_file.open(input);
    if (!in_file) throw corpus::CorpusError(input + ": cannot open");
    in = &in_file;
  }
  std::ofstream file;
  std::ostream& os = output_stream(out_path, file, out);
  std::string line;
  std::size_t lineno = 0, parsed = 0, skipped = 0;
  while (std::getline(*in, line)) {
    ++lineno;
    std::istringstream ss(line);
    corpus::Sentence tokens;
    for (std::string t; ss >> t;) tokens.push_back(t);
    if (tokens.empty()) {
      err << "line " << lineno << ": empty, skipped\n";
      ++skipped;
      continue;
    }
    const auto ids = lm.vocab.encode(tokens);
    const auto a = lm.analyze(ids);
    std::vector<int> heads(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) heads[i] = i == a.root ? 0 : static_cast<int>(a.decoded[i]) + 1;
    if (format == "conll") {
      corpus::GoldSentence g;
      g.tokens = tokens;
      g.parents.emplace();
      for (int h : heads) g.parents->push_back(h - 1);
      corpus::write_conll(os, std::span<const corpus::GoldSentence>(&g, 1));
    } else {
      ordered_json j{{"tokens", tokens}, {"tree", a.tree.to_bracketed(tokens)}, {"parents", heads}};
      std::vector<std::string> words;
      for (int h : heads) words.push_back(h == 0 ? "ROOT" : tokens[static_cast<std::size_t>(h - 1)]);
      j["heads"] = words;
      if (dump) {
        j["tau"] = a.raw_tau;
        j["delta"] = a.raw_delta;
      }
      os << j.dump() << '\n';
    }
    ++parsed;
  }
  err << "parsed " << parsed << " sentences, skipped " << skipped << " empty lines\n";
  return kOk;
}

struct EvalInputs {
  std::vector<corpus::GoldSentence> trees, stanford, conll;
  std::vector<std::vector<std::int32_t>> ppl_ids;
  bool has_ppl = false;
};

std::vector<evaluation::PredictedDependencies> chain_parents(std::span<const corpus::GoldSentence> gold,
                                                              evaluation::BaselineKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<evaluation::PredictedDependencies> out;
  for (const auto& g : gold) {
    const std::size_t n = g.tokens.size();
    if (kind == evaluation::BaselineKind::kRandom) {
      out.push_back(evaluation::random_parents(n, rng));
      continue;
    }
    evaluation::PredictedDependencies d;
    d.parents.resize(n);
    // left: every token attaches to its right neighbour; right: to its left
    for (std::size_t i = 0; i < n; ++i) {
      d.parents[i] = kind == evaluation::BaselineKind::kLeft ? std::min(i + 1, n - 1) : (i == 0 ? 0 : i - 1);
    }
    d.root = kind == evaluation::BaselineKind::kLeft ? n - 1 : 0;
    out.push_back(std::move(d));
  }
  return out;
}

evaluation::ParseEvalReport evaluate_checkpoint(const std::string& path, const EvalInputs& in, std::uint64_t seed) {
  const LoadedModel lm(path);
  evaluation::ParseEvalReport report;
  const auto parse_all = [&](const std::vector<corpus::GoldSentence>& gold, std::vector<grammar::ConstituencyTree>* trees,
                             std::vector<evaluation::PredictedDependencies>* deps) {
    for (std::size_t k = 0; k < gold.size(); ++k) {
      const auto& g = gold[k];
      if (g.tokens.empty()) {
        if (trees) trees->emplace_back();
        if (deps) deps->emplace_back();
        continue;
      }
      model::SentenceAnalysis a;
      try {
        a = lm.analyze(lm.vocab.encode(g.tokens));
      } catch (const std::length_error& e) {
        throw evaluation::AlignmentError("sentence " + std::to_string(k + 1) + ": " + e.what());
      }
      if (trees) trees->push_back(a.tree);
      if (deps) deps->push_back({a.decoded, a.root});
    }
  };
  if (!in.trees.empty() || !in.stanford.empty() || !in.conll.empty()) lm.require_parser(path);
  if (!in.trees.empty()) {
    std::vector<grammar::ConstituencyTree> trees;
    parse_all(in.trees, &trees, nullptr);
    evaluation::add_constituency(report, trees, in.trees);
  }
  for (const auto& [scheme, gold] : {std::pair{"stanford", &in.stanford}, std::pair{"conll", &in.conll}}) {
    if (gold->empty()) continue;
    std::vector<evaluation::PredictedDependencies> deps;
    parse_all(*gold, nullptr, &deps);
    evaluation::add_dependency(report, scheme, deps, *gold);
  }
  if (in.has_ppl) report.metrics["ppl"] = lm.ppl(in.ppl_ids, seed);
  return report;
}

struct EvalFlags {
  std::vector<std::string> checkpoints;
  std::string baseline, predicted_trees, gold_trees, stanford, conll, corpus, out, seeds, config_path;
  bool json = false;
};

int cmd_eval(const EvalFlags& f, std::ostream& out, std::ostream& err) {
  RunConfig run;
  if (!f.config_path.empty()) run.load(f.config_path);
  if (!f.seeds.empty()) run.set("seeds", f.seeds);
  const int sources = !f.checkpoints.empty() + !f.baseline.empty() + !f.predicted_trees.empty();
  if (sources != 1) throw UsageError("eval: give exactly one of --checkpoint, --baseline or --predicted-trees");
  if (f.gold_trees.empty() && f.stanford.empty() && f.conll.empty() && f.corpus.empty()) {
    throw UsageError("eval: nothing to evaluate; pass --gold-trees, --gold-deps-stanford, --gold-deps-conll or --corpus");
  }

  EvalInputs in;
  const corpus::PunctuationPolicy policy;
  if (!f.gold_trees.empty()) in.trees = corpus::read_bracketed(fs::path(f.gold_trees), policy);
  if (!f.stanford.empty()) in.stanford = corpus::read_conll(fs::path(f.stanford), policy);
  if (!f.conll.empty()) in.conll = corpus::read_conll(fs::path(f.conll), policy);
  err << "gold: " << in.trees.size() << " trees, " << in.stanford.size() << " stanford graphs, " << in.conll.size()
      << " conll graphs\n";

  std::vector<evaluation::ParseEvalReport> reports;
  if (!f.checkpoints.empty()) {
    if (!f.corpus.empty()) {
      const LoadedModel first(f.checkpoints[0]);
      const auto raw = read_sentences(f.corpus, run.lowercase);
      for (const auto& s : raw.sentences) in.ppl_ids.push_back(first.vocab.encode(s));
      in.has_ppl = true;
    }
    reports.resize(f.checkpoints.size());
    parallel_for(f.checkpoints.size(), [&](std::size_t k) {
      reports[k] = evaluate_checkpoint(f.checkpoints[k], in, run.eval_seed);
    });
  } else if (!f.baseline.empty()) {
    const auto kind = [&] {
      try {
        return evaluation::parse_baseline(f.baseline);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }();
    for (std::uint64_t seed : run.seeds) {
      evaluation::ParseEvalReport r;
      if (!in.trees.empty()) evaluation::add_constituency(r, evaluation::baseline_trees(in.trees, kind, seed), in.trees);
      if (!in.stanford.empty()) evaluation::add_dependency(r, "stanford", chain_parents(in.stanford, kind, seed), in.stanford);
      if (!in.conll.empty()) evaluation::add_dependency(r, "conll", chain_parents(in.conll, kind, seed), in.conll);
      reports.push_back(std::move(r));
      if (kind != evaluation::BaselineKind::kRandom) break;  // deterministic
    }
  } else {
    if (in.trees.empty()) throw UsageError("eval: --predicted-trees needs --gold-trees");
    const auto predicted = corpus::read_bracketed(fs::path(f.predicted_trees), policy);
    if (predicted.size() != in.trees.size()) {
      throw evaluation::AlignmentError("eval: " + std::to_string(predicted.size()) + " predicted trees for " +
                                       std::to_string(in.trees.size()) + " gold trees");
    }
    std::vector<grammar::SpanSet> spans;
    for (std::size_t k = 0; k < predicted.size(); ++k) {
      if (predicted[k].tokens != in.trees[k].tokens) {
        throw evaluation::AlignmentError("sentence " + std::to_string(k + 1) + ": predicted and gold tokens differ");
      }
      spans.push_back(*predicted[k].spans);
    }
    evaluation::ParseEvalReport r;
    evaluation::add_constituency(r, spans, in.trees);
    reports.push_back(std::move(r));
  }

  const std::string table = evaluation::to_table(reports);
  const std::string json = evaluation::to_json(reports);
  out << (f.json ? json + "\n" : table);
  if (!f.out.empty()) {
    ensure_dir(f.out);
    write_text(fs::path(f.out) / "report.json", json + "\n");
    write_text(fs::path(f.out) / "report.txt", table);
    write_text(fs::path(f.out) / "config.txt", run.echo());
  }
  return kOk;
}

int cmd_inspect(const std::string& checkpoint, const std::string& input, const std::string& out_path,
                std::ostream& out, std::ostream& err) {
  const LoadedModel lm(checkpoint);
  lm.require_parser(checkpoint);
  std::ofstream file;
  std::ostream& os = output_stream(out_path, file, out);

  ordered_json header{{"record", "relations"},
                      {"layers", lm.config().layers},
                      {"heads", lm.config().heads},
                      {"relation_set", attention::to_string(lm.config().relations)}};
  ordered_json weights = ordered_json::array();
  for (const auto& layer : lm.relation_mixes()) {
    ordered_json row = ordered_json::array();
    for (const auto& mix : layer) row.push_back({{"parent", mix.parent}, {"dep", mix.dep}});
    weights.push_back(row);
  }
  header["relation_weights"] = weights;
  const auto [mu1, mu2] = lm.temperatures();
  header["temperatures"] = {mu1, mu2};
  os << header.dump() << '\n';

  const auto raw = read_sentences(input, false);
  for (const auto& tokens : raw.sentences) {
    const auto a = lm.analyze(lm.vocab.encode(tokens));
    const std::size_t n = tokens.size();
    std::vector<double> matrix(a.parent.values().begin(), a.parent.values().end());
    std::vector<double> entropy(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double p = a.parent.at(i, j);
        if (p > 0) entropy[i] -= p * std::log(p);
      }
    }
    ordered_json j{{"record", "sentence"},
                   {"tokens", tokens},
                   {"tau", a.tau},
                   {"delta", a.delta},
                   {"parent_matrix", matrix},
                   {"decoded_parents", a.decoded},
                   {"root", a.root},
                   {"entropy", entropy}};
    os << j.dump() << '\n';
  }
  err << "inspected " << raw.sentences.size() << " sentences (" << raw.blank_lines << " blank lines skipped)\n";
  return kOk;
}

int cmd_generate(const std::string& out_dir, std::uint64_t seed, std::size_t train_size, std::size_t heldout_size,
                 std::ostream& out) {
  if (out_dir.empty()) throw UsageError("generate: --out is required");
  ensure_dir(out_dir);
  const auto write_split = [&](const std::string& name, const toy::ToyCorpus& c) {
    std::ofstream txt(fs::path(out_dir) / (name + ".txt")), trees(fs::path(out_dir) / (name + ".trees")),
        conll(fs::path(out_dir) / (name + ".conll"));
    if (!txt || !trees || !conll) throw std::runtime_error("cannot write into " + out_dir);
    for (std::size_t k = 0; k < c.sentences.size(); ++k) {
      const auto& tokens = c.sentences[k].tokens;
      for (std::size_t i = 0; i < tokens.size(); ++i) txt << (i ? " " : "") << tokens[i];
      txt << '\n';
      trees << c.bracketed[k] << '\n';
    }
    corpus::write_conll(conll, c.sentences);
    out << name << ": " << c.sentences.size() << " sentences\n";
  };
  write_split("train", toy::generate(seed, train_size));
  // the held-out stream is seeded independently of the training stream
  write_split("heldout", toy::generate(seed ^ 0x5DEECE66Dull, heldout_size));
  write_text(fs::path(out_dir) / "config.txt", "seed = " + std::to_string(seed) + "\nsentences = " +
                                                   std::to_string(train_size) + "\nheldout = " +
                                                   std::to_string(heldout_size) + "\n");
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"structlab: unsupervised dependency-constrained transformer toolkit", "structlab"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  auto* train = app.add_subcommand("train", "train a masked language model");
  train_flags.attach(*train, true);

  std::string checkpoint, input = "-", out_path, format = "jsonl";
  bool dump = false;
  auto* parse = app.add_subcommand("parse", "parse sentences with a trained checkpoint");
  parse->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  parse->add_option("--corpus", input, "sentences, one per line ('-' for stdin)");
  parse->add_option("--out", out_path, "output file (default stdout)");
  parse->add_option("--format", format, "jsonl or conll");
  parse->add_flag("--dump", dump, "include distances and heights");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "score induced structure against gold files");
  eval->add_option("--checkpoint", ef.checkpoints, "checkpoint (repeat for a seed list)");
  eval->add_option("--baseline", ef.baseline, "random, left or right");
  eval->add_option("--predicted-trees", ef.predicted_trees, "bracketed predictions to score as-is");
  eval->add_option("--gold-trees", ef.gold_trees, "bracketed gold trees");
  eval->add_option("--gold-deps-stanford", ef.stanford, "CoNLL gold graphs (Stanford scheme)");
  eval->add_option("--gold-deps-conll", ef.conll, "CoNLL gold graphs (CoNLL scheme)");
  eval->add_option("--corpus", ef.corpus, "raw held-out corpus for masked perplexity");
  eval->add_option("--seed,--seeds", ef.seeds, "seed list for random baselines");
  eval->add_option("--config", ef.config_path, "key=value configuration file");
  eval->add_option("--out", ef.out, "directory for report.json and report.txt");
  eval->add_flag("--json", ef.json, "print JSON instead of the table");

  std::string inspect_ckpt, inspect_in = "-", inspect_out;
  auto* inspect = app.add_subcommand("inspect", "dump distances, heights, parent distributions and relation weights");
  inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint file")->required();
  inspect->add_option("--corpus", inspect_in, "sentences, one per line ('-' for stdin)");
  inspect->add_option("--out", inspect_out, "JSON-lines output (default stdout)");

  std::string gen_out;
  std::uint64_t gen_seed = 1;
  std::size_t gen_train = 5000, gen_heldout = 500;
  auto* generate = app.add_subcommand("generate", "sample the built-in toy grammar");
  generate->add_option("--out", gen_out, "output directory")->required();
  generate->add_option("--seed", gen_seed, "sampling seed");
  generate->add_option("--sentences", gen_train, "training sentences");
  generate->add_option("--heldout", gen_heldout, "held-out sentences");

  std::vector<std::string> argv_copy(args.rbegin(), args.rend());
  try {
    app.parse(argv_copy);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(train_flags.resolve(), out, err);
    if (*parse) return cmd_parse(checkpoint, input, out_path, format, dump, out, err);
    if (*eval) return cmd_eval(ef, out, err);
    if (*inspect) return cmd_inspect(inspect_ckpt, inspect_in, inspect_out, out, err);
    if (*generate) return cmd_generate(gen_out, gen_seed, gen_train, gen_heldout, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const training::NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace structlab::cli
