#include "crossinit/backend.hpp"

#include <map>
#include <mutex>

namespace crossinit {

void Backend::validate() const {
  if (!table || !text_encoder || !denoiser || !latent_encoder || !schedule)
    throw InvalidConfig("backend '" + name + "' lacks a required component");
  if (table->dim() != text_encoder->dim())
    throw InvalidConfig("backend '" + name + "': embedding table dim " + std::to_string(table->dim()) +
                        " != text encoder dim " + std::to_string(text_encoder->dim()));
  if (denoiser->cond_dim() != text_encoder->dim())
    throw InvalidConfig("backend '" + name + "': denoiser conditioning dim does not match the text encoder");
  if (denoiser->latent_dim() != latent_encoder->latent_dim())
    throw InvalidConfig("backend '" + name + "': denoiser and latent encoder disagree on latent dim");
}

ConditioningVector concept_conditioning(const ConceptEmbedding& embedding, const PromptTemplate& tmpl,
                                        const Backend& backend) {
  if (embedding.init_strategy() != InitStrategy::direct_output)
    return assemble_conditioning(tmpl, embedding, *backend.table, *backend.text_encoder);
  SplicedPrompt sp = splice_concept(tmpl, embedding, *backend.table);
  for (int pos : sp.slot_positions) sp.inputs.row(pos) = backend.table->rows().row(backend.table->pad_id());
  Matrix out = backend.text_encoder->encode(sp.inputs);
  for (int s = 0; s < embedding.k(); ++s) out.row(sp.slot_positions[s]) = embedding.vector(s).values().transpose();
  return ConditioningVector(std::move(out));
}

Backend make_toy_backend(const ToyBackendOptions& options) {
  EncoderConfig enc = options.encoder;
  enc.seed = options.model_seed;
  ToyDenoiserConfig den = options.denoiser;
  den.seed = options.model_seed;
  den.cond_dim = enc.dim;

  Backend b;
  b.name = "toy";
  b.table = std::make_shared<const EmbeddingTable>(make_toy_embedding_table(enc));
  b.text_encoder = std::make_shared<const ToyTextEncoder>(ToyTextEncoder::random(enc));
  b.denoiser = std::make_shared<const ToyDenoiser>(den);
  auto latent = std::make_shared<const ToyLatentEncoder>(den.latent_dim, options.model_seed);
  b.latent_decoder = std::make_shared<const ToyLatentDecoder>(*latent);
  b.latent_encoder = latent;
  b.schedule = std::make_shared<const NoiseSchedule>(NoiseSchedule::toy_default());
  b.face_embedder = std::make_shared<const ToyFaceEmbedder>(options.model_seed);
  b.image_text_scorer = std::make_shared<const ToyImageTextScorer>(options.model_seed);
  b.validate();
  return b;
}

namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, BackendFactory> factories;
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_backend_adapter(const std::string& name, BackendFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

void unregister_backend_adapter(const std::string& name) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories.erase(name);
}

std::vector<std::string> registered_backend_adapters() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, _] : r.factories) names.push_back(name);
  return names;
}

Backend resolve_backend(std::string_view spec, const nlohmann::json& options) {
  if (spec == "toy") {
    ToyBackendOptions opts;
    try {
      for (const auto& [key, value] : options.items()) {
        if (key == "model_seed") opts.model_seed = value.get<std::uint64_t>();
        else if (key == "gain") opts.denoiser.gain = value.get<double>();
        else if (key == "cond_gain") opts.denoiser.cond_gain = value.get<double>();
        else if (key == "hidden") opts.denoiser.hidden = value.get<int>();
        else if (key == "num_blocks") opts.encoder.num_blocks = value.get<int>();
        else throw InvalidConfig("unknown toy backend option '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig(std::string("toy backend options: ") + e.what());
    }
    return make_toy_backend(opts);
  }
  constexpr std::string_view prefix = "adapter:";
  if (spec.substr(0, prefix.size()) != prefix)
    throw InvalidConfig("unknown backend '" + std::string(spec) + "' (expected toy or adapter:<name>)");
  const std::string name(spec.substr(prefix.size()));
  BackendFactory factory;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.factories.find(name);
    if (it == r.factories.end()) throw InvalidConfig("no backend adapter registered as '" + name + "'");
    factory = it->second;
  }
  Backend b = factory(options);
  if (b.name.empty()) b.name = std::string(spec);
  b.validate();
  return b;
}

}  // namespace crossinit
