#include "structlab/model.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "structlab/dependency.hpp"

namespace structlab::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0;
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size() || !std::isfinite(out)) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

bool parse_switch(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected on or off, got '" + value + "'");
}

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void ModelConfig::validate() const {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(layers, "layers");
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(d_ff, "d_ff");
  positive(max_train_length, "max_train_length");
  positive(max_eval_length, "max_eval_length");
  if (structformer()) {
    positive(parser_layers, "parser_layers");
    positive(kernel_width, "kernel_width");
    if (kernel_width % 2 == 0) throw std::invalid_argument("model config: kernel_width must be odd");
  }
  if (d_model % heads != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " is not divisible by heads " + std::to_string(heads));
  }
  if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("model config: dropout must lie in [0, 1)");
  if (!(mask_rate > 0 && mask_rate < 1)) throw std::invalid_argument("model config: mask_rate must lie in (0, 1)");
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "architecture") {
    if (value == "structformer") architecture = Architecture::kStructFormer;
    else if (value == "transformer") architecture = Architecture::kTransformer;
    else throw std::invalid_argument("config key 'architecture': expected structformer or transformer, got '" + value + "'");
  } else if (key == "vocab_size") {
    vocab_size = parse_size(key, value);
  } else if (key == "layers") {
    layers = parse_size(key, value);
  } else if (key == "d_model") {
    d_model = parse_size(key, value);
  } else if (key == "heads") {
    heads = parse_size(key, value);
  } else if (key == "d_ff") {
    d_ff = parse_size(key, value);
  } else if (key == "dropout") {
    dropout = parse_real(key, value);
  } else if (key == "parser_layers") {
    parser_layers = parse_size(key, value);
  } else if (key == "kernel_width") {
    kernel_width = parse_size(key, value);
  } else if (key == "mask_rate") {
    mask_rate = parse_real(key, value);
  } else if (key == "relations") {
    relations = attention::parse_relations(value);
  } else if (key == "calibrate") {
    calibrate = parse_switch(key, value);
  } else if (key == "calibrate_target") {
    if (value == "distances") calibration_target = parser::CalibrationTarget::kDistances;
    else if (value == "heights") calibration_target = parser::CalibrationTarget::kHeights;
    else throw std::invalid_argument("config key 'calibrate_target': expected distances or heights, got '" + value + "'");
  } else if (key == "max_train_length") {
    max_train_length = parse_size(key, value);
  } else if (key == "max_eval_length") {
    max_eval_length = parse_size(key, value);
  } else if (key == "precision") {
    if (value == "32") precision = Precision::k32;
    else if (value == "64") precision = Precision::k64;
    else throw std::invalid_argument("config key 'precision': expected 32 or 64, got '" + value + "'");
  } else if (key == "seed") {
    seed = parse_size(key, value);
  } else {
    return false;
  }
  return true;
}

std::vector<std::pair<std::string, std::string>> ModelConfig::entries() const {
  return {
      {"architecture", structformer() ? "structformer" : "transformer"},
      {"vocab_size", std::to_string(vocab_size)},
      {"layers", std::to_string(layers)},
      {"d_model", std::to_string(d_model)},
      {"heads", std::to_string(heads)},
      {"d_ff", std::to_string(d_ff)},
      {"dropout", real_text(dropout)},
      {"parser_layers", std::to_string(parser_layers)},
      {"kernel_width", std::to_string(kernel_width)},
      {"mask_rate", real_text(mask_rate)},
      {"relations", attention::to_string(relations)},
      {"calibrate", calibrate ? "on" : "off"},
      {"calibrate_target", calibration_target == parser::CalibrationTarget::kDistances ? "distances" : "heights"},
      {"max_train_length", std::to_string(max_train_length)},
      {"max_eval_length", std::to_string(max_eval_length)},
      {"precision", precision == Precision::k64 ? "64" : "32"},
      {"seed", std::to_string(seed)},
  };
}

void Batch::add(std::span<const std::int32_t> sentence) {
  if (sentence.empty()) throw std::invalid_argument("batch: empty sentence");
  ids.insert(ids.end(), sentence.begin(), sentence.end());
  lengths.push_back(sentence.size());
}

double inverse_softplus(double value) {
  if (!(value > 0)) throw std::invalid_argument("inverse_softplus: value must be positive");
  return value > 30 ? value : std::log(std::expm1(value));
}

template <typename T>
StructFormer<T>::StructFormer(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.d_model;
  const double d_std = 1.0 / std::sqrt(static_cast<double>(d));

  store_.add("embed.tokens", normal_tensor<T>(Shape{config_.vocab_size, d}, d_std, rng));
  store_.add("embed.positions", normal_tensor<T>(Shape{config_.max_positions(), d}, d_std, rng));
  if (config_.structformer()) {
    parser::ParserParams<T>::create(store_, {d, config_.parser_layers, config_.kernel_width}, rng);
    store_.add("dist.temperature", Tensor<T>(Shape{2}, static_cast<T>(inverse_softplus(1.0))));
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    store_.add(p + "ln1.gain", Tensor<T>(Shape{d}, T(1)));
    store_.add(p + "ln1.bias", Tensor<T>(Shape{d}));
    attention::AttentionParams<T>::create(store_, d, config_.heads, config_.structformer(), rng, p + "attn.");
    store_.add(p + "ln2.gain", Tensor<T>(Shape{d}, T(1)));
    store_.add(p + "ln2.bias", Tensor<T>(Shape{d}));
    store_.add(p + "ff.in.weight", normal_tensor<T>(Shape{d, config_.d_ff}, d_std, rng));
    store_.add(p + "ff.in.bias", Tensor<T>(Shape{config_.d_ff}));
    store_.add(p + "ff.out.weight",
               normal_tensor<T>(Shape{config_.d_ff, d}, 1.0 / std::sqrt(static_cast<double>(config_.d_ff)), rng));
    store_.add(p + "ff.out.bias", Tensor<T>(Shape{d}));
  }
  store_.add("final_ln.gain", Tensor<T>(Shape{d}, T(1)));
  store_.add("final_ln.bias", Tensor<T>(Shape{d}));
  store_.add("output.bias", Tensor<T>(Shape{config_.vocab_size}));
  bind();
}

template <typename T>
StructFormer<T>::StructFormer(ModelConfig config, ParameterStore<T>&& store)
    : config_(std::move(config)), store_(std::move(store)) {
  config_.validate();
  bind();
}

template <typename T>
void StructFormer<T>::bind() {
  tokens_ = &store_.get("embed.tokens");
  positions_ = &store_.get("embed.positions");
  final_gain_ = &store_.get("final_ln.gain");
  final_bias_ = &store_.get("final_ln.bias");
  output_bias_ = &store_.get("output.bias");
  if (config_.structformer()) {
    parser_ = parser::ParserParams<T>::bind(store_, {config_.d_model, config_.parser_layers, config_.kernel_width});
    temperature_ = &store_.get("dist.temperature");
  }
  layers_.clear();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer layer;
    layer.ln1_gain = &store_.get(p + "ln1.gain");
    layer.ln1_bias = &store_.get(p + "ln1.bias");
    layer.attn = attention::AttentionParams<T>::bind(store_, config_.heads, config_.structformer(), p + "attn.");
    layer.ln2_gain = &store_.get(p + "ln2.gain");
    layer.ln2_bias = &store_.get(p + "ln2.bias");
    layer.ff_in = &store_.get(p + "ff.in.weight");
    layer.ff_in_bias = &store_.get(p + "ff.in.bias");
    layer.ff_out = &store_.get(p + "ff.out.weight");
    layer.ff_out_bias = &store_.get(p + "ff.out.bias");
    layers_.push_back(layer);
  }
}

template <typename T>
std::size_t StructFormer<T>::structure_parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : store_.all()) {
    if (p.name.rfind("parser.", 0) == 0 || p.name == "dist.temperature" ||
        p.name.ends_with(".attn.relations")) {
      total += p.value.size();
    }
  }
  return total;
}

template <typename T>
void StructFormer<T>::check_lengths(const Batch& batch, bool training) const {
  const std::size_t cap = training ? config_.max_train_length : config_.max_eval_length;
  std::size_t total = 0;
  for (std::size_t n : batch.lengths) {
    if (n == 0) throw std::invalid_argument("forward: empty sentence");
    if (n > cap) {
      throw std::length_error("sentence length " + std::to_string(n) + " exceeds the configured cap " +
                              std::to_string(cap));
    }
    total += n;
  }
  if (total != batch.ids.size()) {
    throw std::invalid_argument("forward: lengths cover " + std::to_string(total) + " tokens, batch has " +
                                std::to_string(batch.ids.size()));
  }
  for (std::int32_t id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw std::out_of_range("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
    }
  }
}

template <typename T>
ForwardResult<T> StructFormer<T>::forward(Tape<T>& tape, const Batch& batch, bool training,
                                          std::mt19937_64* rng,
                                          std::span<const std::size_t> logit_rows) const {
  check_lengths(batch, training);
  if (training && config_.dropout > 0 && rng == nullptr) {
    throw std::invalid_argument("forward: training with dropout needs an rng");
  }
  const T rate = training ? static_cast<T>(config_.dropout) : T(0);
  const auto drop = [&](const Var<T>& v) { return rate > T(0) ? ad::dropout(v, rate, *rng) : v; };

  std::vector<std::int32_t> positions;
  positions.reserve(batch.ids.size());
  for (std::size_t n : batch.lengths)
    for (std::size_t i = 0; i < n; ++i) positions.push_back(static_cast<std::int32_t>(i));

  ForwardResult<T> out;
  const Var<T> table = tape.parameter(*tokens_);
  const Var<T> words = ad::embedding(table, std::span<const std::int32_t>(batch.ids));
  Var<T> x = drop(ad::add(words, ad::embedding(tape.parameter(*positions_), std::span<const std::int32_t>(positions))));

  std::vector<attention::SentenceGraph<T>> graphs;
  if (config_.structformer()) {
    const auto pv = parser::ParserVars<T>::on(tape, parser_);
    const Var<T> states = parser::conv_stack(pv, words, batch.lengths, rate, rng);
    const Var<T> tau_all = parser::predict_distances(pv, states, batch.lengths);
    const Var<T> delta_all = parser::predict_heights(pv, states);
    const Var<T> mu = ad::softplus(tape.parameter(*temperature_));
    const Var<T> mu1 = ad::slice(mu, 0, 0, 1), mu2 = ad::slice(mu, 0, 1, 1);

    std::size_t begin = 0, tau_begin = 0;
    for (std::size_t n : batch.lengths) {
      Var<T> delta = ad::slice(delta_all, 0, begin, n);
      Var<T> tau = n >= 2 ? ad::slice(tau_all, 0, tau_begin, n - 1) : tape.constant(Tensor<T>(Shape{0}));
      if (config_.calibrate && n >= 2) {
        const Var<T> shift = parser::calibration_shift(tau, delta);
        if (config_.calibration_target == parser::CalibrationTarget::kDistances) {
          tau = ad::sub(tau, shift);
        } else {
          delta = ad::add(delta, shift);
        }
      }
      const Var<T> parent = depdist::parent_distribution(tau, delta, mu1, mu2);
      graphs.push_back({parent, ad::transpose(parent)});
      out.distances.push_back(tau);
      out.heights.push_back(delta);
      out.parent.push_back(parent);
      begin += n;
      tau_begin += n >= 2 ? n - 1 : 0;
    }
  }

  for (const Layer& layer : layers_) {
    const Var<T> h1 = ad::layer_norm(x, tape.parameter(*layer.ln1_gain), tape.parameter(*layer.ln1_bias));
    x = ad::add(x, drop(attention::multi_head<T>(h1, batch.lengths, graphs, layer.attn, config_.relations)));
    const Var<T> h2 = ad::layer_norm(x, tape.parameter(*layer.ln2_gain), tape.parameter(*layer.ln2_bias));
    const Var<T> inner = ad::relu(ad::add(ad::matmul(h2, tape.parameter(*layer.ff_in)), tape.parameter(*layer.ff_in_bias)));
    x = ad::add(x, drop(ad::add(ad::matmul(inner, tape.parameter(*layer.ff_out)), tape.parameter(*layer.ff_out_bias))));
  }

  out.hidden = ad::layer_norm(x, tape.parameter(*final_gain_), tape.parameter(*final_bias_));
  const Var<T> rows = logit_rows.empty() ? out.hidden : ad::gather_rows(out.hidden, logit_rows);
  out.logits = ad::add(ad::matmul(rows, ad::transpose(table)), tape.parameter(*output_bias_));
  return out;
}

template <typename T>
SentenceAnalysis StructFormer<T>::analyze(std::span<const std::int32_t> ids) const {
  if (!config_.structformer()) throw std::logic_error("analyze: the baseline architecture has no parser");
  Batch batch;
  batch.add(ids);
  check_lengths(batch, false);
  const std::size_t n = ids.size();

  Tape<T> tape(false);
  const auto pv = parser::ParserVars<T>::on(tape, parser_);
  const Var<T> words = ad::embedding(tape.parameter(*tokens_), ids);
  const Var<T> states = parser::conv_stack(pv, words, batch.lengths);
  const Var<T> tau = parser::predict_distances(pv, states, batch.lengths);
  const Var<T> delta = parser::predict_heights(pv, states);

  SentenceAnalysis a;
  a.raw_tau.assign(tau.value().values().begin(), tau.value().values().end());
  a.raw_delta.assign(delta.value().values().begin(), delta.value().values().end());
  if (config_.calibrate && n >= 2) {
    const auto cal = parser::calibrate(a.raw_tau, a.raw_delta, config_.calibration_target);
    a.tau = cal.tau;
    a.delta = cal.delta;
    a.shift = cal.shift;
  } else {
    a.tau = a.raw_tau;
    a.delta = a.raw_delta;
  }
  const auto [mu1, mu2] = temperatures();
  a.parent = depdist::parent_dist(a.tau, a.delta, mu1, mu2).probs;
  a.decoded = depdist::decode_parents(a.parent);
  a.root = static_cast<std::size_t>(std::max_element(a.raw_delta.begin(), a.raw_delta.end()) - a.raw_delta.begin());
  a.tree = grammar::distance_to_tree(n, a.raw_tau);
  return a;
}

template <typename T>
std::vector<std::vector<attention::RelationMix>> StructFormer<T>::relation_mixes() const {
  std::vector<std::vector<attention::RelationMix>> out;
  for (const Layer& layer : layers_) {
    std::vector<attention::RelationMix> heads;
    for (std::size_t h = 0; h < config_.heads; ++h) {
      double wp = 0, wd = 0;
      if (layer.attn.relations != nullptr) {
        wp = static_cast<double>(layer.attn.relations->value.at(h, 0));
        wd = static_cast<double>(layer.attn.relations->value.at(h, 1));
      }
      heads.push_back(attention::effective_mix(config_.relations, wp, wd));
    }
    out.push_back(std::move(heads));
  }
  return out;
}

template <typename T>
std::pair<double, double> StructFormer<T>::temperatures() const {
  if (temperature_ == nullptr) return {1.0, 1.0};
  const auto softplus = [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); };
  return {softplus(static_cast<double>(temperature_->value[0])),
          softplus(static_cast<double>(temperature_->value[1]))};
}

// ---- checkpoint I/O --------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'U', 'C', 'T', 'L', 'B'};
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  template <typename U>
  U get() {
    U v{};
    read(&v, sizeof v);
    return v;
  }

  std::string get_string(std::uint64_t limit = 1ull << 32) {
    const auto len = get<std::uint64_t>();
    if (len > limit) fail("string length " + std::to_string(len) + " is implausible");
    std::string s(len, '\0');
    read(s.data(), len);
    return s;
  }

  void read(void* dst, std::size_t bytes) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(is_.gcount()) != bytes) fail("unexpected end of file");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("checkpoint " + path_ + ": " + what);
  }

 private:
  std::istream& is_;
  std::string path_;
};

}  // namespace

std::string config_to_text(const ModelConfig& config) {
  std::string out;
  for (const auto& [k, v] : config.entries()) out += k + "=" + v + "\n";
  return out;
}

ModelConfig config_from_text(const std::string& text) {
  ModelConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config echo: malformed line '" + line + "'");
    if (!config.set(line.substr(0, eq), line.substr(eq + 1))) {
      throw std::invalid_argument("config echo: unknown key '" + line.substr(0, eq) + "'");
    }
  }
  return config;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const StructFormer<T>& model,
                     std::span<const std::string> vocab) {
  if (vocab.size() != model.config().vocab_size) {
    throw CheckpointError("checkpoint " + path.string() + ": vocabulary has " + std::to_string(vocab.size()) +
                          " tokens, model expects " + std::to_string(model.config().vocab_size));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint " + path.string() + ": cannot open for writing");
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put_string(os, config_to_text(model.config()));
  put<std::uint64_t>(os, vocab.size());
  for (const auto& tok : vocab) put_string(os, tok);

  const auto& params = model.parameters().all();
  put<std::uint64_t>(os, params.size());
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    put_string(os, p.name);
    put<std::uint8_t>(os, sizeof(T) == 8 ? kDtypeF64 : kDtypeF32);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put<std::uint64_t>(os, d);
    const std::uint64_t bytes = p.value.size() * sizeof(T);
    put<std::uint64_t>(os, offset);
    put<std::uint64_t>(os, bytes);
    offset += bytes;
  }
  for (const auto& p : params) {
    os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(T)));
  }
  if (!os) throw CheckpointError("checkpoint " + path.string() + ": write failed");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint " + path.string() + ": cannot open");
  Reader r(is, path.string());
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a structlab checkpoint");
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(ck.version));
  ck.config_text = r.get_string();
  const auto vocab = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < vocab; ++i) ck.vocab.push_back(r.get_string(1 << 20));

  struct Entry {
    std::uint8_t dtype;
    std::uint64_t offset, bytes;
  };
  const auto count = r.get<std::uint64_t>();
  std::vector<Entry> entries;
  std::uint64_t expected = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.get_string(1 << 16);
    Entry e{};
    e.dtype = r.get<std::uint8_t>();
    if (e.dtype != kDtypeF32 && e.dtype != kDtypeF64) r.fail("tensor " + t.name + " has unknown dtype");
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("tensor " + t.name + " has implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint64_t>());
    e.offset = r.get<std::uint64_t>();
    e.bytes = r.get<std::uint64_t>();
    const std::size_t width = e.dtype == kDtypeF64 ? 8 : 4;
    if (e.offset != expected || e.bytes != shape_numel(t.shape) * width) {
      r.fail("tensor " + t.name + " manifest is inconsistent");
    }
    expected += e.bytes;
    t.is_f64 = e.dtype == kDtypeF64;
    ck.tensors.push_back(std::move(t));
    entries.push_back(e);
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& t = ck.tensors[i];
    const std::size_t n = shape_numel(t.shape);
    t.values.resize(n);
    if (t.is_f64) {
      r.read(t.values.data(), n * sizeof(double));
    } else {
      std::vector<float> buf(n);
      r.read(buf.data(), n * sizeof(float));
      std::copy(buf.begin(), buf.end(), t.values.begin());
    }
  }
  return ck;
}

template <typename T>
StructFormer<T> model_from_checkpoint(const Checkpoint& checkpoint) {
  ModelConfig config = config_from_text(checkpoint.config_text);
  if (checkpoint.vocab.size() != config.vocab_size) {
    throw CheckpointError("checkpoint: vocabulary has " + std::to_string(checkpoint.vocab.size()) +
                          " tokens, config says " + std::to_string(config.vocab_size));
  }
  ParameterStore<T> store;
  for (const auto& t : checkpoint.tensors) {
    Tensor<T> value(t.shape);
    for (std::size_t i = 0; i < t.values.size(); ++i) value[i] = static_cast<T>(t.values[i]);
    store.add(t.name, std::move(value));
  }
  // the reference model pins every expected name and shape
  const StructFormer<T> reference(config);
  if (reference.parameters().all().size() != store.all().size()) {
    throw CheckpointError("checkpoint: holds " + std::to_string(store.all().size()) + " tensors, model needs " +
                          std::to_string(reference.parameters().all().size()));
  }
  for (const auto& p : reference.parameters().all()) {
    const Parameter<T>* got = store.find(p.name);
    if (got == nullptr) throw CheckpointError("checkpoint: missing tensor " + p.name);
    if (got->value.shape() != p.value.shape()) {
      throw CheckpointError("checkpoint: tensor " + p.name + " has shape " + shape_string(got->value.shape()) +
                            ", expected " + shape_string(p.value.shape()));
    }
  }
  return StructFormer<T>(std::move(config), std::move(store));
}

ModelConfig matched_baseline(const ModelConfig& structformer) {
  ModelConfig base = structformer;
  base.architecture = Architecture::kTransformer;
  if (!structformer.structformer()) return base;
  const StructFormer<float> reference(structformer);
  // each extra feed-forward unit adds an input column, a bias and an output row per layer
  const double per_unit = static_cast<double>(structformer.layers * (2 * structformer.d_model + 1));
  const auto extra = static_cast<std::size_t>(std::llround(static_cast<double>(reference.structure_parameter_count()) / per_unit));
  base.d_ff = structformer.d_ff + extra;
  return base;
}

template class StructFormer<float>;
template class StructFormer<double>;
template void save_checkpoint(const std::filesystem::path&, const StructFormer<float>&, std::span<const std::string>);
template void save_checkpoint(const std::filesystem::path&, const StructFormer<double>&, std::span<const std::string>);
template StructFormer<float> model_from_checkpoint(const Checkpoint&);
template StructFormer<double> model_from_checkpoint(const Checkpoint&);

}  // namespace structlab::model
