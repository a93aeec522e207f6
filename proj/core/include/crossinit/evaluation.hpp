#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossinit/embedding.hpp"
#include "crossinit/image.hpp"
#include "crossinit/linalg.hpp"

namespace crossinit {

struct Backend;

/// Face-recognition embedder. nullopt means no face was found.
class FaceEmbedder {
 public:
  virtual ~FaceEmbedder() = default;
  virtual std::optional<Vector> embed(const Image& image) const = 0;
};

/// Joint image/text embedder (CLIP-style). Failures throw ScorerFailure.
class ImageTextScorer {
 public:
  virtual ~ImageTextScorer() = default;
  virtual Vector embed_image(const Image& image) const = 0;
  virtual Vector embed_text(const std::string& text) const = 0;
};

enum class PromptTag { expression, background, interaction, style, plain };

std::string to_string(PromptTag tag);
PromptTag parse_prompt_tag(std::string_view text);

struct TaggedPrompt {
  PromptTag tag = PromptTag::plain;
  std::string text;  ///< contains exactly one "{S*}"
};

class PromptSet {
 public:
  explicit PromptSet(std::vector<TaggedPrompt> prompts);

  /// One "tag<TAB>prompt" per line; blank lines and '#' comments skipped.
  static PromptSet parse(std::istream& in);
  static PromptSet load(const std::filesystem::path& path);
  /// The 20 evaluation prompts; the five art-style prompts are tagged style.
  static PromptSet default_set();

  const std::vector<TaggedPrompt>& prompts() const { return prompts_; }
  std::size_t size() const { return prompts_.size(); }

 private:
  std::vector<TaggedPrompt> prompts_;
};

double cosine_similarity(const Vector& a, const Vector& b);

/// Mean of `values` summed in sorted order, so the result does not depend
/// on input order.
double order_independent_mean(std::vector<double> values);

struct IdentityScore {
  double mean = 0.0;
  int used = 0;
  int skipped = 0;
};

/// Mean cosine between each generated image's face embedding and the
/// reference's. Images without a face are skipped and counted.
IdentityScore identity_similarity(const std::vector<Image>& generated, const Image& reference,
                                  const FaceEmbedder& embedder);

/// Mean cosine between image embeddings and the prompt's text embedding,
/// with the concept marker replaced by `class_word`.
double prompt_similarity(const std::vector<Image>& generated, std::string_view prompt,
                         const ImageTextScorer& scorer, std::string_view class_word = "person");

struct PromptResult {
  std::string prompt;
  PromptTag tag = PromptTag::plain;
  std::optional<double> identity;
  double prompt_similarity = 0.0;
  int n_images = 0;
  int n_skipped = 0;
};

struct EvalReport {
  std::optional<double> identity_mean;  ///< nullopt when no prompt qualifies
  double prompt_mean = 0.0;
  std::vector<PromptResult> per_prompt;
  std::vector<std::string> excluded_from_identity;
  double wall_time = 0.0;
};

struct EvalOptions {
  int n_per_prompt = 2;
  std::uint64_t seed = 0;
  int sample_steps = 50;
  std::string class_word = "person";
  int threads = 1;
};

/// Aggregates already-generated images. `images[i]` belongs to prompt i.
EvalReport score_prompts(const PromptSet& prompts, const std::vector<std::vector<Image>>& images,
                         const Image& reference, const FaceEmbedder& face, const ImageTextScorer& scorer,
                         std::string_view class_word);

/// Generates n_per_prompt images per prompt (image j uses seed + j for every
/// prompt), then scores them. Style prompts never enter identity_mean.
EvalReport evaluate(const ConceptEmbedding& embedding, const PromptSet& prompts, const Image& reference,
                    const Backend& backend, const EvalOptions& options);

inline constexpr int kReportSchemaVersion = 1;

/// Excludes wall_time so reruns produce identical files.
nlohmann::json report_to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& path);

// Toy embedders -------------------------------------------------------------

/// Seeded projection of the centred 8x8 thumbnail; a flat image has no face.
class ToyFaceEmbedder final : public FaceEmbedder {
 public:
  explicit ToyFaceEmbedder(std::uint64_t seed, int dim = 32);
  std::optional<Vector> embed(const Image& image) const override;

 private:
  Matrix projection_;
};

/// Images: seeded projection of the thumbnail. Text: sum of per-word vectors
/// seeded from a hash of the word.
class ToyImageTextScorer final : public ImageTextScorer {
 public:
  explicit ToyImageTextScorer(std::uint64_t seed, int dim = 16);
  Vector embed_image(const Image& image) const override;
  Vector embed_text(const std::string& text) const override;

 private:
  std::uint64_t seed_;
  Matrix projection_;
};

}  // namespace crossinit
