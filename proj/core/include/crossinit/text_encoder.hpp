#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "crossinit/embedding.hpp"
#include "crossinit/linalg.hpp"
#include "crossinit/prompt.hpp"

namespace crossinit {

/// Adapter contract for a text encoder E. Implementations are immutable after
/// construction and may be called concurrently.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual int dim() const = 0;
  virtual int max_positions() const { return 1 << 20; }

  /// One output row per input row.
  virtual Matrix encode(const Matrix& inputs) const = 0;
  /// Vector-Jacobian product: gradient w.r.t. `inputs` of <output_grad, encode(inputs)>.
  virtual Matrix pullback(const Matrix& inputs, const Matrix& output_grad) const = 0;
  /// Residual-stream states: the raw input, one entry per block, and the
  /// final output. Encoders without internals report {input, output}.
  virtual std::vector<Matrix> hidden_states(const Matrix& inputs) const;
};

/// Zero blocks, no positions, no final norm: E(v) = v.
class IdentityEncoder final : public TextEncoder {
 public:
  explicit IdentityEncoder(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  Matrix encode(const Matrix& inputs) const override { return inputs; }
  Matrix pullback(const Matrix&, const Matrix& output_grad) const override { return output_grad; }

 private:
  int dim_;
};

/// c(y) = [E(v_1), ..., E(v_n)], one row per position.
class ConditioningVector {
 public:
  explicit ConditioningVector(Matrix vectors);

  int size() const { return static_cast<int>(vectors_.rows()); }
  int dim() const { return static_cast<int>(vectors_.cols()); }
  const Matrix& matrix() const { return vectors_; }
  EmbeddingVector at(int position) const { return EmbeddingVector(vectors_.row(position).transpose()); }

 private:
  Matrix vectors_;
};

ConditioningVector encode(const std::vector<EmbeddingVector>& sequence, const TextEncoder& encoder);

/// Pre-encoder inputs for a template with a concept spliced into its slots.
struct SplicedPrompt {
  Matrix inputs;
  std::vector<int> slot_positions;
};

/// Throws SlotCountMismatch unless the template (after marker expansion)
/// has exactly concept.k() slots.
SplicedPrompt splice_concept(const PromptTemplate& tmpl, const ConceptEmbedding& embedding,
                             const EmbeddingTable& table);

ConditioningVector assemble_conditioning(const PromptTemplate& tmpl, const ConceptEmbedding& embedding,
                                         const EmbeddingTable& table, const TextEncoder& encoder);

/// The encoder outputs at the placeholder positions, one row per slot.
Matrix encode_at_slots(const ConceptEmbedding& embedding, const PromptTemplate& tmpl,
                       const EmbeddingTable& table, const TextEncoder& encoder);

/// v_init = E(mean) at the placeholder positions. Requires a raw_mean concept.
ConceptEmbedding cross_initialize(const ConceptEmbedding& mean_concept, const TextEncoder& encoder,
                                  const PromptTemplate& tmpl, const EmbeddingTable& table);

/// [v, E(v), E(E(v)), ...], length repeats + 1.
std::vector<ConceptEmbedding> repeated_encoding_trace(const ConceptEmbedding& v, const TextEncoder& encoder,
                                                      const PromptTemplate& tmpl, const EmbeddingTable& table,
                                                      int repeats);

/// Euclidean distance between consecutive elements (concatenated slots).
std::vector<double> step_distances(const std::vector<ConceptEmbedding>& trace);

struct BlockTraceEntry {
  std::string stage;  ///< "input", "block_<i>", "final"
  double norm = 0.0;
  double cosine_to_final = 0.0;
};

struct BlockTrace {
  int position = 0;
  std::vector<BlockTraceEntry> entries;
};

BlockTrace block_trace(const Matrix& sequence, const TextEncoder& encoder, int position);

void write_block_trace_csv(const BlockTrace& trace, const std::filesystem::path& path);
/// One row per element; norm and cosine use the concatenated slot vector,
/// cosine taken against the last element.
void write_repeated_encoding_csv(const std::vector<ConceptEmbedding>& trace, const std::filesystem::path& path);

}  // namespace crossinit
