#include "crossinit/inversion.hpp"

#include <chrono>
#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

namespace crossinit {

OptimizerConfig OptimizerConfig::resolved() const {
  OptimizerConfig c = *this;
  if (c.fast) {
    c.steps = kFastSteps;
    c.learning_rate = kFastLearningRate;
  }
  return c;
}

void OptimizerConfig::validate() const {
  if (steps < 1) throw InvalidConfig("steps must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidConfig("learning rate must be >= 0");
  if (batch_size < 1) throw InvalidConfig("batch size must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidConfig("lambda must be >= 0");
  if (checkpoint_every < 0) throw InvalidConfig("checkpoint interval must be >= 0");
}

double reg_loss(const ConceptEmbedding& v, const ConceptEmbedding& v_init) {
  if (v.k() != v_init.k() || v.dim() != v_init.dim()) throw ShapeMismatch("reg_loss: concepts differ in shape");
  double sum = 0.0;
  for (int s = 0; s < v.k(); ++s) sum += (v.vector(s).values() - v_init.vector(s).values()).squaredNorm();
  return sum;
}

Matrix reg_loss_grad(const ConceptEmbedding& v, const ConceptEmbedding& v_init) {
  if (v.k() != v_init.k() || v.dim() != v_init.dim()) throw ShapeMismatch("reg_loss: concepts differ in shape");
  return 2.0 * (v.as_matrix() - v_init.as_matrix());
}

double total_loss(double diffusion_loss, double reg, double lambda) {
  if (!std::isfinite(diffusion_loss) || !std::isfinite(reg) || !std::isfinite(lambda))
    throw NonFiniteLoss("non-finite loss term");
  const double total = diffusion_loss + lambda * reg;
  if (!std::isfinite(total)) throw NonFiniteLoss("total loss overflowed");
  return total;
}

namespace {

std::vector<std::string> slot_names_for(int k) {
  if (k == 2) return {"f", "l"};
  std::vector<std::string> names;
  for (int i = 0; i < k; ++i) names.push_back("t" + std::to_string(i));
  return names;
}

ConceptEmbedding cross_from_names(const NameList& names, const InversionSetup& setup, const Backend& backend) {
  const ConceptEmbedding mean = mean_name_embedding(names, *backend.table);
  return cross_initialize(mean, *backend.text_encoder, setup.init_template, *backend.table);
}

const NameList& require_names(const InversionSetup& setup, InitStrategy strategy) {
  if (!setup.names) throw MissingNames(to_string(strategy) + " initialization needs a name list");
  if (setup.k_tokens != 2)
    throw InvalidConfig("name-based initialization produces 2 tokens (first/last); k_tokens is " +
                        std::to_string(setup.k_tokens));
  return *setup.names;
}

}  // namespace

ConceptEmbedding initialize(InitStrategy strategy, const InversionSetup& setup, const Backend& backend) {
  backend.validate();
  switch (strategy) {
    case InitStrategy::raw_mean:
      return mean_name_embedding(require_names(setup, strategy), *backend.table);
    case InitStrategy::cross:
      return cross_from_names(require_names(setup, strategy), setup, backend);
    case InitStrategy::direct_output:
      return cross_from_names(require_names(setup, strategy), setup, backend)
          .with_strategy(InitStrategy::direct_output);
    case InitStrategy::super_category: {
      if (setup.k_tokens < 1) throw InvalidConfig("k_tokens must be >= 1");
      if (static_cast<int>(setup.super_tokens.size()) < setup.k_tokens)
        throw InvalidConfig("need " + std::to_string(setup.k_tokens) + " super-category tokens, have " +
                            std::to_string(setup.super_tokens.size()));
      const auto names = slot_names_for(setup.k_tokens);
      std::vector<ConceptSlot> slots;
      for (int i = 0; i < setup.k_tokens; ++i)
        slots.push_back({names[static_cast<std::size_t>(i)],
                         lookup_embedding(setup.super_tokens[static_cast<std::size_t>(i)], *backend.table)});
      nlohmann::json meta = {
          {"super_tokens", std::vector<std::string>(setup.super_tokens.begin(),
                                                    setup.super_tokens.begin() + setup.k_tokens)}};
      return ConceptEmbedding(std::move(slots), InitStrategy::super_category, std::move(meta));
    }
  }
  throw InvalidConfig("unknown init strategy");
}

TrainingBatch draw_batch(std::mt19937_64& rng, int batch_size, int image_count, int template_count, int timesteps,
                         int latent_dim) {
  std::uniform_int_distribution<int> pick_image(0, image_count - 1);
  std::uniform_int_distribution<int> pick_template(0, template_count - 1);
  std::uniform_int_distribution<int> pick_t(0, timesteps - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  TrainingBatch batch(static_cast<std::size_t>(batch_size));
  for (auto& s : batch) {
    s.image = pick_image(rng);
    s.template_index = pick_template(rng);
    s.timestep = pick_t(rng);
    s.noise.resize(latent_dim);
    for (int i = 0; i < latent_dim; ++i) s.noise[i] = normal(rng);
  }
  return batch;
}

InversionObjective::InversionObjective(const Backend& backend, std::vector<Vector> image_latents,
                                       std::vector<PromptTemplate> templates, ConceptEmbedding v_init, double lambda)
    : backend_(backend),
      latents_(std::move(image_latents)),
      templates_(std::move(templates)),
      v_init_(std::move(v_init)),
      lambda_(lambda) {
  backend_.validate();
  if (latents_.empty()) throw InvalidConfig("optimization needs at least one image");
  if (templates_.empty()) throw InvalidConfig("optimization needs at least one training template");
  for (const auto& z : latents_)
    if (z.size() != backend_.denoiser->latent_dim()) throw ShapeMismatch("image latent has wrong dim");
  // Fail early on templates that cannot host the concept.
  for (const auto& t : templates_) (void)splice_concept(t, v_init_, *backend_.table);
}

ConditioningVector InversionObjective::conditioning(const ConceptEmbedding& v, int template_index) const {
  return concept_conditioning(v, templates_.at(static_cast<std::size_t>(template_index)), backend_);
}

InversionObjective::Evaluation InversionObjective::evaluate(const ConceptEmbedding& v, const TrainingBatch& batch,
                                                            bool want_grad) const {
  if (batch.empty()) throw ShapeMismatch("empty training batch");
  const int n = static_cast<int>(batch.size());
  const int latent_dim = backend_.denoiser->latent_dim();

  // One encoder pass per distinct template in the batch.
  std::map<int, SplicedPrompt> spliced;
  std::map<int, ConditioningVector> conds;
  for (const auto& s : batch) {
    if (conds.count(s.template_index)) continue;
    spliced.emplace(s.template_index, splice_concept(templates_.at(static_cast<std::size_t>(s.template_index)), v,
                                                     *backend_.table));
    conds.emplace(s.template_index, conditioning(v, s.template_index));
  }

  LatentBatch lb;
  lb.z0.resize(n, latent_dim);
  lb.noise.resize(n, latent_dim);
  std::vector<ConditioningVector> per_sample;
  per_sample.reserve(batch.size());
  for (int b = 0; b < n; ++b) {
    const auto& s = batch[static_cast<std::size_t>(b)];
    lb.z0.row(b) = latents_.at(static_cast<std::size_t>(s.image)).transpose();
    lb.noise.row(b) = s.noise.transpose();
    lb.timesteps.push_back(s.timestep);
    per_sample.push_back(conds.at(s.template_index));
  }
  const LdmLossGrad diff = ldm_loss_and_grad(lb, per_sample, *backend_.denoiser, *backend_.schedule, want_grad);

  Evaluation ev;
  ev.losses.diffusion = diff.loss;
  ev.losses.reg = reg_loss(v, v_init_);
  ev.losses.total = total_loss(ev.losses.diffusion, ev.losses.reg, lambda_);
  if (!want_grad) return ev;

  std::map<int, Matrix> cond_grad_sum;
  for (int b = 0; b < n; ++b) {
    const int ti = batch[static_cast<std::size_t>(b)].template_index;
    auto it = cond_grad_sum.find(ti);
    if (it == cond_grad_sum.end()) cond_grad_sum.emplace(ti, diff.cond_grads[static_cast<std::size_t>(b)]);
    else it->second += diff.cond_grads[static_cast<std::size_t>(b)];
  }
  ev.grad = Matrix::Zero(v.k(), v.dim());
  for (const auto& [ti, g] : cond_grad_sum) {
    const SplicedPrompt& sp = spliced.at(ti);
    if (direct_output()) {
      for (int s = 0; s < v.k(); ++s) ev.grad.row(s) += g.row(sp.slot_positions[s]);
    } else {
      const Matrix gin = backend_.text_encoder->pullback(sp.inputs, g);
      for (int s = 0; s < v.k(); ++s) ev.grad.row(s) += gin.row(sp.slot_positions[s]);
    }
  }
  ev.grad += lambda_ * reg_loss_grad(v, v_init_);
  return ev;
}

namespace {

ConceptEmbedding stamped(const ConceptEmbedding& c, int step, const OptimizerConfig& cfg) {
  ConceptEmbedding out = c;
  out.metadata()["step"] = step;
  out.metadata()["seed"] = cfg.seed;
  out.metadata()["learning_rate"] = cfg.learning_rate;
  out.metadata()["lambda"] = cfg.lambda;
  out.metadata()["batch_size"] = cfg.batch_size;
  return out;
}

}  // namespace

OptimizationResult optimize_from(ConceptEmbedding v_init, const InversionSetup& setup, const OptimizerConfig& config,
                                 const Backend& backend, const CheckpointFn& checkpoint) {
  const auto start = std::chrono::steady_clock::now();
  const OptimizerConfig cfg = config.resolved();
  cfg.validate();
  backend.validate();
  if (setup.images.empty()) throw InvalidConfig("optimization needs at least one image");

  std::vector<Vector> latents;
  for (const auto& img : setup.images) latents.push_back(backend.latent_encoder->encode(img));
  const InversionObjective objective(backend, std::move(latents), setup.templates, v_init, cfg.lambda);

  std::mt19937_64 rng(cfg.seed);
  TrajectoryRecord record(v_init.slot_names());
  ConceptEmbedding v = v_init;
  ConceptEmbedding last_finite = v_init;
  auto abort_non_finite = [&](int step, const std::string& why) {
    if (checkpoint) checkpoint(stamped(last_finite, step, cfg), step, CheckpointKind::last_finite);
    throw NonFiniteLoss("step " + std::to_string(step) + ": " + why);
  };

  for (int step = 0; step <= cfg.steps; ++step) {
    const TrainingBatch batch = draw_batch(rng, cfg.batch_size, static_cast<int>(setup.images.size()),
                                           static_cast<int>(setup.templates.size()), backend.schedule->steps(),
                                           backend.denoiser->latent_dim());
    InversionObjective::Evaluation ev;
    try {
      ev = objective.evaluate(v, batch, step < cfg.steps);
    } catch (const NonFiniteLoss& e) {
      abort_non_finite(step, e.what());
    }
    last_finite = v;
    record_step(record, step, ev.losses, v, v_init, *backend.text_encoder, setup.init_template, *backend.table);
    if (step == cfg.steps) break;

    if (!ev.grad.allFinite()) abort_non_finite(step, "non-finite gradient");
    const Matrix next = v.as_matrix() - cfg.learning_rate * ev.grad;
    if (!next.allFinite()) abort_non_finite(step, "update produced non-finite values");
    v = v.with_values(next);
    if (checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps)
      checkpoint(stamped(v, step + 1, cfg), step + 1, CheckpointKind::periodic);
  }

  ConceptEmbedding learned = stamped(v, cfg.steps, cfg);
  if (checkpoint) checkpoint(learned, cfg.steps, CheckpointKind::final);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  spdlog::debug("optimized {} steps in {:.3f}s, final loss {}", cfg.steps, wall, record.back().losses.total);
  return {std::move(learned), std::move(v_init), std::move(record), cfg, wall};
}

OptimizationResult optimize(const InversionSetup& setup, const OptimizerConfig& config, const Backend& backend,
                            const CheckpointFn& checkpoint) {
  return optimize_from(initialize(config.init_strategy, setup, backend), setup, config, backend, checkpoint);
}

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::no_ci: return "no_ci";
    case AblationMode::no_mean: return "no_mean";
    case AblationMode::no_reg: return "no_reg";
    case AblationMode::full: return "full";
  }
  return "full";
}

AblationMode parse_ablation_mode(std::string_view text) {
  std::string s(text);
  for (auto& ch : s)
    if (ch == '-') ch = '_';
  if (s == "no_ci") return AblationMode::no_ci;
  if (s == "no_mean") return AblationMode::no_mean;
  if (s == "no_reg") return AblationMode::no_reg;
  if (s == "full") return AblationMode::full;
  throw InvalidConfig("unknown ablation mode '" + std::string(text) + "'");
}

OptimizationResult ablation_run(AblationMode mode, const InversionSetup& setup, const OptimizerConfig& config,
                                const Backend& backend, const CheckpointFn& checkpoint) {
  OptimizerConfig cfg = config;
  switch (mode) {
    case AblationMode::no_ci:
      cfg.init_strategy = InitStrategy::super_category;
      return optimize(setup, cfg, backend, checkpoint);
    case AblationMode::no_mean: {
      const NameList& names = require_names(setup, InitStrategy::cross);
      cfg.init_strategy = InitStrategy::cross;
      ConceptEmbedding init = cross_from_names(NameList(std::vector<PersonName>{names[0]}), setup, backend);
      return optimize_from(std::move(init), setup, cfg, backend, checkpoint);
    }
    case AblationMode::no_reg:
      cfg.lambda = 0.0;
      return optimize(setup, cfg, backend, checkpoint);
    case AblationMode::full:
      return optimize(setup, cfg, backend, checkpoint);
  }
  throw InvalidConfig("unknown ablation mode");
}

}  // namespace crossinit
