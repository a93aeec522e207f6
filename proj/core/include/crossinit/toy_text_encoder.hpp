#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "crossinit/embedding.hpp"
#include "crossinit/text_encoder.hpp"

namespace crossinit {

/// Architecture of the toy CLIP-style encoder.
struct EncoderConfig {
  int dim = 32;
  int num_blocks = 4;
  int num_heads = 4;
  double mlp_ratio = 4.0;
  std::uint64_t seed = 7;
  int vocab_size = 64;
  int max_positions = 32;
  double init_std = 0.02;
  double ln_eps = 1e-12;
  bool final_norm = true;

  /// Throws InvalidConfig if an invariant is violated.
  void validate() const;
  int hidden_width() const;
};

struct LayerNormWeights {
  Vector gain;
  Vector bias;
};

/// Projections use the row convention y = x W + b.
struct EncoderBlockWeights {
  LayerNormWeights ln_attn;
  Matrix w_query, w_key, w_value, w_out;
  Vector b_query, b_key, b_value, b_out;
  LayerNormWeights ln_mlp;
  Matrix w_up, w_down;
  Vector b_up, b_down;
};

struct EncoderWeights {
  Matrix positions;  ///< max_positions x dim
  std::vector<EncoderBlockWeights> blocks;
  LayerNormWeights final_norm;
};

/// Everything a forward pass produces, kept for backprop and instrumentation.
struct EncoderForward {
  std::vector<Matrix> residual;      ///< input, then state after each block
  std::vector<Matrix> norm_outputs;  ///< every LayerNorm output, in execution order
  Matrix output;
};

/// Pre-LayerNorm transformer with causal multi-head attention, quick-GELU
/// MLP, learned positions and a final LayerNorm. Immutable; thread-safe.
class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(EncoderConfig config, EncoderWeights weights);
  /// Seeded normal init (init_std); LayerNorm gains 1, all biases 0.
  static ToyTextEncoder random(const EncoderConfig& config);

  int dim() const override { return config_.dim; }
  int max_positions() const override { return config_.max_positions; }
  Matrix encode(const Matrix& inputs) const override;
  Matrix pullback(const Matrix& inputs, const Matrix& output_grad) const override;
  std::vector<Matrix> hidden_states(const Matrix& inputs) const override;

  EncoderForward forward(const Matrix& inputs) const;

  const EncoderConfig& config() const { return config_; }
  const EncoderWeights& weights() const { return weights_; }

 private:
  struct Cache;
  Matrix run(const Matrix& inputs, Cache* cache, EncoderForward* record) const;

  EncoderConfig config_;
  EncoderWeights weights_;
};

/// Words known to the toy vocabulary after the four special tokens.
const std::vector<std::string>& toy_vocabulary_words();

/// Builds the toy token table: specials, then toy_vocabulary_words(),
/// truncated or padded with "<extra_i>" to vocab_size. Rows are drawn from
/// N(0, init_std) with a stream derived from config.seed.
EmbeddingTable make_toy_embedding_table(const EncoderConfig& config);

}  // namespace crossinit
