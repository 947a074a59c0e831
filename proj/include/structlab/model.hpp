#pragma once

// Pre-LN transformer encoder whose attention is constrained by the soft
// dependency graph the parser induces from the shared word embeddings.
// The baseline architecture runs the same encoder with softmax attention
// and no parser.

#include <cstdint>
#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "structlab/attention.hpp"
#include "structlab/autodiff.hpp"
#include "structlab/grammar.hpp"
#include "structlab/parameters.hpp"
#include "structlab/parser_network.hpp"

namespace structlab::model {

enum class Architecture { kStructFormer, kTransformer };
enum class Precision { k32, k64 };

struct ModelConfig {
  Architecture architecture = Architecture::kStructFormer;
  std::size_t vocab_size = 0;
  std::size_t layers = 8;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t d_ff = 2048;
  double dropout = 0.1;
  std::size_t parser_layers = 3;
  std::size_t kernel_width = 3;
  double mask_rate = 0.3;
  attention::RelationSet relations = attention::RelationSet::kParentAndDep;
  bool calibrate = true;
  parser::CalibrationTarget calibration_target = parser::CalibrationTarget::kDistances;
  std::size_t max_train_length = 64;
  std::size_t max_eval_length = 128;
  Precision precision = Precision::k32;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the first offending field.
  void validate() const;
  bool structformer() const { return architecture == Architecture::kStructFormer; }
  std::size_t max_positions() const { return std::max(max_train_length, max_eval_length); }

  /// Applies one key=value pair; false when the key is not a model key.
  /// Malformed values throw std::invalid_argument.
  bool set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> entries() const;
};

/// Sentences packed row-wise with their lengths.
struct Batch {
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> lengths;

  void add(std::span<const std::int32_t> sentence);
};

template <typename T>
struct ForwardResult {
  Var<T> logits;                      // rows x vocab
  Var<T> hidden;                      // tokens x d_model, after the final norm
  std::vector<Var<T>> distances;      // per sentence, after calibration
  std::vector<Var<T>> heights;        // per sentence, after calibration
  std::vector<Var<T>> parent;         // per sentence n x n
};

/// Parse-side view of one sentence, computed without gradients.
struct SentenceAnalysis {
  std::vector<double> raw_tau, raw_delta;  // parser outputs
  std::vector<double> tau, delta;          // what the dependency distribution consumed
  double shift = 0;
  Tensor<double> parent;                   // p_D(j | i)
  std::vector<std::size_t> decoded;        // argmax parent per token
  std::size_t root = 0;                    // argmax height
  grammar::ConstituencyTree tree;
};

template <typename T>
class StructFormer {
 public:
  /// Fresh parameters drawn from config.seed.
  explicit StructFormer(ModelConfig config);
  /// Parameters supplied by the caller (checkpoint load); every name must exist.
  StructFormer(ModelConfig config, ParameterStore<T>&& store);

  StructFormer(const StructFormer&) = delete;
  StructFormer& operator=(const StructFormer&) = delete;
  // deque storage keeps element addresses across moves
  StructFormer(StructFormer&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  /// Scalars owned by the parser network, temperatures and relation weights.
  std::size_t structure_parameter_count() const;

  /// Full forward pass. `logit_rows` selects rows of the packed batch for the
  /// output projection (all rows when empty). `training` enables dropout
  /// (requires rng) and applies the training length cap.
  ForwardResult<T> forward(Tape<T>& tape, const Batch& batch, bool training, std::mt19937_64* rng,
                           std::span<const std::size_t> logit_rows = {}) const;

  /// Throws std::logic_error for the baseline architecture.
  SentenceAnalysis analyze(std::span<const std::int32_t> ids) const;

  /// Learned (p_parent, p_dep) per layer and head.
  std::vector<std::vector<attention::RelationMix>> relation_mixes() const;

  /// Current positive temperatures (boundary, parent).
  std::pair<double, double> temperatures() const;

 private:
  void bind();
  void check_lengths(const Batch& batch, bool training) const;

  struct Layer {
    Parameter<T>* ln1_gain = nullptr;
    Parameter<T>* ln1_bias = nullptr;
    attention::AttentionParams<T> attn;
    Parameter<T>* ln2_gain = nullptr;
    Parameter<T>* ln2_bias = nullptr;
    Parameter<T>* ff_in = nullptr;
    Parameter<T>* ff_in_bias = nullptr;
    Parameter<T>* ff_out = nullptr;
    Parameter<T>* ff_out_bias = nullptr;
  };

  ModelConfig config_;
  // mutable: forward() only reads values but binds leaves through non-const pointers
  mutable ParameterStore<T> store_;
  Parameter<T>* tokens_ = nullptr;
  Parameter<T>* positions_ = nullptr;
  Parameter<T>* final_gain_ = nullptr;
  Parameter<T>* final_bias_ = nullptr;
  Parameter<T>* output_bias_ = nullptr;
  Parameter<T>* temperature_ = nullptr;  // raw values; softplus gives (mu1, mu2)
  parser::ParserParams<T> parser_;
  std::vector<Layer> layers_;
};

/// Baseline transformer with the feed-forward width chosen so that its
/// parameter count is as close as possible to the StructFormer's.
ModelConfig matched_baseline(const ModelConfig& structformer);

/// Raw parameter value whose softplus equals `value`.
double inverse_softplus(double value);

// Checkpoint container: magic, version, config echo, vocabulary, manifest of
// (name, dtype, shape, offset, size) and little-endian payloads.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;  // widened on load; dtype recorded separately
  bool is_f64 = false;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;  // key=value lines
  std::vector<std::string> vocab;
  std::vector<CheckpointTensor> tensors;
};

/// Thrown for unreadable or inconsistent checkpoint files.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const StructFormer<T>& model,
                     std::span<const std::string> vocab);

Checkpoint read_checkpoint(const std::filesystem::path& path);

ModelConfig config_from_text(const std::string& text);
std::string config_to_text(const ModelConfig& config);

/// Rebuilds the model at precision T; values are converted if the stored
/// dtype differs.
template <typename T>
StructFormer<T> model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace structlab::model
