#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossinit/errors.hpp"
#include "crossinit/linalg.hpp"

namespace crossinit {

/// A single token embedding (pre-encoder v_i) or encoder output E(v_i).
/// Always non-empty and finite.
class EmbeddingVector {
 public:
  explicit EmbeddingVector(Vector values);

  int dim() const { return static_cast<int>(values_.size()); }
  const Vector& values() const { return values_; }
  double operator[](int i) const { return values_[i]; }

  bool operator==(const EmbeddingVector& other) const;

 private:
  Vector values_;
};

enum class InitStrategy { cross, super_category, raw_mean, direct_output };

std::string to_string(InitStrategy s);
/// Accepts both "super_category" and the CLI spelling "super-category".
InitStrategy parse_init_strategy(std::string_view text);

struct ConceptSlot {
  std::string slot;
  EmbeddingVector vector;

  bool operator==(const ConceptSlot&) const = default;
};

/// The learnable concept S_*: k ordered slot vectors of a common dimension.
class ConceptEmbedding {
 public:
  ConceptEmbedding(std::vector<ConceptSlot> tokens, InitStrategy strategy,
                   nlohmann::json metadata = nlohmann::json::object());

  int k() const { return static_cast<int>(tokens_.size()); }
  int dim() const { return tokens_.front().vector.dim(); }
  const std::vector<ConceptSlot>& tokens() const { return tokens_; }
  const EmbeddingVector& vector(int slot) const { return tokens_.at(slot).vector; }
  std::vector<std::string> slot_names() const;
  InitStrategy init_strategy() const { return strategy_; }
  const nlohmann::json& metadata() const { return metadata_; }
  nlohmann::json& metadata() { return metadata_; }

  /// Rows are the slot vectors, in order.
  Matrix as_matrix() const;
  /// Same slots, strategy and metadata with new vector values (one row per slot).
  ConceptEmbedding with_values(const Matrix& rows) const;
  ConceptEmbedding with_strategy(InitStrategy s) const;

  bool operator==(const ConceptEmbedding& other) const;

 private:
  std::vector<ConceptSlot> tokens_;
  InitStrategy strategy_;
  nlohmann::json metadata_;
};

struct PersonName {
  std::string first;
  std::string last;
};

class NameList {
 public:
  explicit NameList(std::vector<PersonName> entries);

  /// Newline-separated "First Last"; blank lines and '#' comments skipped.
  static NameList parse(std::istream& in);
  static NameList load(const std::filesystem::path& path);

  std::size_t size() const { return entries_.size(); }
  const std::vector<PersonName>& entries() const { return entries_; }
  const PersonName& operator[](std::size_t i) const { return entries_[i]; }

 private:
  std::vector<PersonName> entries_;
};

/// Splits prompt text into words and words into vocabulary subtokens.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<std::string> words(std::string_view text) const = 0;
  virtual std::vector<std::string> subtokens(std::string_view word) const = 0;
};

/// Lower-cases, splits words on whitespace and punctuation, and splits
/// hyphenated or apostrophised words into subtokens.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  std::vector<std::string> words(std::string_view text) const override;
  std::vector<std::string> subtokens(std::string_view word) const override;
};

struct SpecialTokens {
  static constexpr std::string_view bos = "<bos>";
  static constexpr std::string_view eos = "<eos>";
  static constexpr std::string_view pad = "<pad>";
  static constexpr std::string_view unk = "<unk>";
};

/// Vocabulary plus one embedding row per token. Immutable after construction.
class EmbeddingTable {
 public:
  /// `tokens` must begin with (or contain) the four special tokens.
  EmbeddingTable(std::vector<std::string> tokens, Matrix rows,
                 std::shared_ptr<const Tokenizer> tokenizer = std::make_shared<WhitespaceTokenizer>());

  int dim() const { return static_cast<int>(rows_.cols()); }
  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }

  std::optional<int> id_of(std::string_view token) const;
  /// Unknown words map to <unk>; multi-subtoken words expand to all subtokens.
  std::vector<int> encode_words(std::string_view text) const;
  EmbeddingVector row(int id) const;
  const Matrix& rows() const { return rows_; }

  int bos_id() const { return bos_; }
  int eos_id() const { return eos_; }
  int pad_id() const { return pad_; }
  int unk_id() const { return unk_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  Matrix rows_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  int bos_ = -1, eos_ = -1, pad_ = -1, unk_ = -1;
};

/// Returns a copy of the table row for `token`. A word that splits into
/// several subtokens resolves to its first subtoken (a warning is logged).
EmbeddingVector lookup_embedding(std::string_view token, const EmbeddingTable& table);

/// Slot "f" is the mean first-name embedding and slot "l" the mean
/// last-name embedding; init strategy raw_mean.
ConceptEmbedding mean_name_embedding(const NameList& names, const EmbeddingTable& table);

inline constexpr int kConceptSchemaVersion = 1;

nlohmann::json concept_to_json(const ConceptEmbedding& embedding);
ConceptEmbedding concept_from_json(const nlohmann::json& j);
void save_concept(const ConceptEmbedding& embedding, const std::filesystem::path& path);
ConceptEmbedding load_concept(const std::filesystem::path& path);

}  // namespace crossinit
