#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossinit/diffusion.hpp"
#include "crossinit/embedding.hpp"
#include "crossinit/evaluation.hpp"
#include "crossinit/text_encoder.hpp"
#include "crossinit/toy_text_encoder.hpp"

namespace crossinit {

/// Everything a run needs from a model stack. Decoder and embedders are
/// optional; commands that need them raise AdapterMissing.
struct Backend {
  std::string name;
  std::shared_ptr<const EmbeddingTable> table;
  std::shared_ptr<const TextEncoder> text_encoder;
  std::shared_ptr<const Denoiser> denoiser;
  std::shared_ptr<const LatentEncoder> latent_encoder;
  std::shared_ptr<const LatentDecoder> latent_decoder;
  std::shared_ptr<const NoiseSchedule> schedule;
  std::shared_ptr<const FaceEmbedder> face_embedder;
  std::shared_ptr<const ImageTextScorer> image_text_scorer;

  /// Required pieces present and dims consistent; throws InvalidConfig.
  void validate() const;
};

struct ToyBackendOptions {
  std::uint64_t model_seed = 7;
  EncoderConfig encoder;
  ToyDenoiserConfig denoiser;
};

/// Conditioning for `embedding` in `tmpl`. A direct_output concept is
/// spliced after the encoder (placeholders enter it as <pad>); every other
/// strategy goes through assemble_conditioning.
ConditioningVector concept_conditioning(const ConceptEmbedding& embedding, const PromptTemplate& tmpl,
                                        const Backend& backend);

Backend make_toy_backend(const ToyBackendOptions& options = {});

using BackendFactory = std::function<Backend(const nlohmann::json& options)>;

/// Makes `name` resolvable as "adapter:<name>". Replaces an existing entry.
void register_backend_adapter(const std::string& name, BackendFactory factory);
void unregister_backend_adapter(const std::string& name);
std::vector<std::string> registered_backend_adapters();

/// "toy" or "adapter:<name>"; throws InvalidConfig if unresolvable.
Backend resolve_backend(std::string_view spec, const nlohmann::json& options = nlohmann::json::object());

}  // namespace crossinit
