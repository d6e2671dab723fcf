#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmn/autodiff.hpp"
#include "mmn/ops.hpp"
#include "mmn/vocab.hpp"

namespace mmn {

struct ModelConfig {
  std::size_t d_emb = 300;
  std::size_t vocab_size = kDefaultVocabularySize + kReservedTokens;
  std::size_t kernel = 3;
  std::size_t encoder_layers = 9;
  std::size_t decoder_layers = 3;
  std::vector<std::size_t> memory_layers = {3, 6, 9};  // 1-based encoder layers
  double label_smoothing = 0.1;
  bool output_bias = true;
  bool train_embeddings = true;
  bool dilated = true;
  std::size_t max_document_len = 500;

  std::size_t levels() const { return memory_layers.size(); }
  // 1-based layer l reads with dilation 2^(l-1), or 1 when not dilated.
  std::size_t dilation(std::size_t layer) const;
  void validate() const;  // throws std::invalid_argument
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

std::string config_to_json(const ModelConfig& config);
// Missing keys keep the values already in `base`; unknown keys are an error.
ModelConfig config_from_json(std::string_view text, ModelConfig base = {});

// 1 + sum over layers of (k - 1) * dilation.
std::size_t receptive_field(std::size_t kernel, std::span<const std::size_t> dilations);
std::size_t receptive_field(const ModelConfig& config, std::size_t layer);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
class Model {
 public:
  struct Encoded {
    std::vector<Var<T>> layers;  // d^0 .. d^L
    Var<T> whole;                // [d_emb]
    std::unique_ptr<bool[]> pad; // true at PAD document positions
    std::size_t length = 0;
    std::span<const bool> pad_mask() const { return {pad.get(), length}; }
  };

  struct Memory {
    Var<T> input;   // M^a
    Var<T> output;  // M^c
  };

  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::span<Parameter<T>> parameters() { return params_; }
  std::span<const Parameter<T>> parameters() const { return params_; }
  const Parameter<T>& parameter(std::string_view name) const;
  Parameter<T>& parameter(std::string_view name);
  std::size_t parameter_count() const;
  // False for the embedding table when embeddings are frozen.
  bool trainable(const Parameter<T>& p) const;

  Encoded encode(Tape<T>& tape, std::span<const TokenId> document) const;
  std::vector<Memory> memories(const Encoded& encoded) const;

  // Decoder input ids (BOS first) -> logits [T, V]. With `last_only` only the
  // final position is projected.
  Var<T> decode(Tape<T>& tape, const Encoded& encoded, const std::vector<Memory>& memories,
                std::span<const TokenId> inputs, bool last_only = false) const;

  // Logits for teacher forcing: decoder inputs are BOS + summary[:-1].
  Var<T> forward(Tape<T>& tape, std::span<const TokenId> document, std::span<const TokenId> summary) const;
  Var<T> loss(Tape<T>& tape, std::span<const TokenId> document, std::span<const TokenId> summary, double epsilon) const;

  // Argmax decoding, lowest id on ties; stops at EOS or after max_len tokens.
  // The returned ids hold neither BOS nor EOS.
  std::vector<TokenId> greedy_decode(std::span<const TokenId> document, std::size_t max_len) const;

  // Copies file vectors into W_emb for tokens present in `vocab`; returns how
  // many rows were replaced.
  std::size_t load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab);

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static Model load(std::istream& in);
  static Model load(const std::filesystem::path& path);

 private:
  struct ConvIndex {
    std::size_t v, g, b;
  };
  struct LayerIndex {
    ConvIndex filter, gate;
    std::size_t gain, bias;
    std::size_t cond_f = 0, cond_g = 0;  // decoder only
  };
  struct LevelIndex {
    std::size_t wq, bq;
  };

  std::size_t add_param(std::string name, Tensor<T> value);
  ConvWeights<T> conv_vars(Tape<T>& tape, const ConvIndex& c) const;
  Var<T> embed(Tape<T>& tape, std::span<const TokenId> ids, bool zero_pad) const;

  ModelConfig config_;
  std::vector<Parameter<T>> params_;
  std::size_t emb_ = 0;
  std::vector<LayerIndex> encoder_;
  std::vector<LayerIndex> decoder_;
  std::vector<LevelIndex> levels_;
  std::size_t wo_v_ = 0, wo_g_ = 0, bo_ = 0;
};

}  // namespace mmn
