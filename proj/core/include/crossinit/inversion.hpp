#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "crossinit/backend.hpp"
#include "crossinit/diagnostics.hpp"
#include "crossinit/embedding.hpp"
#include "crossinit/image.hpp"
#include "crossinit/prompt.hpp"

namespace crossinit {

struct OptimizerConfig {
  static constexpr int kDefaultSteps = 320;
  static constexpr double kDefaultLearningRate = 0.005;
  static constexpr int kDefaultBatchSize = 8;
  static constexpr double kDefaultLambda = 1e-5;
  static constexpr int kFastSteps = 25;
  static constexpr double kFastLearningRate = 0.08;

  int steps = kDefaultSteps;
  double learning_rate = kDefaultLearningRate;
  int batch_size = kDefaultBatchSize;
  double lambda = kDefaultLambda;
  InitStrategy init_strategy = InitStrategy::cross;
  std::uint64_t seed = 0;
  bool fast = false;
  int checkpoint_every = 80;

  /// Applies fast mode (steps 25, learning rate 0.08).
  OptimizerConfig resolved() const;
  /// Throws InvalidConfig.
  void validate() const;
};

/// Sum over slots of |v - v_init|^2.
double reg_loss(const ConceptEmbedding& v, const ConceptEmbedding& v_init);
/// 2 (v - v_init), one row per slot.
Matrix reg_loss_grad(const ConceptEmbedding& v, const ConceptEmbedding& v_init);
/// diffusion + lambda * reg; throws NonFiniteLoss on non-finite inputs or result.
double total_loss(double diffusion_loss, double reg, double lambda);

/// Inputs shared by initialization and optimization.
struct InversionSetup {
  std::vector<Image> images;
  std::optional<NameList> names;
  std::vector<PromptTemplate> templates;
  PromptTemplate init_template = PromptTemplate::parse("a photo of a {S*} person");
  std::vector<std::string> super_tokens = {"human", "face"};
  int k_tokens = 2;
};

/// cross: E(mean names); super_category: table embeddings of super_tokens;
/// raw_mean: mean names; direct_output: same vectors as cross, flagged so
/// optimization splices them after the encoder.
ConceptEmbedding initialize(InitStrategy strategy, const InversionSetup& setup, const Backend& backend);

struct TrainingSample {
  int image = 0;
  int template_index = 0;
  int timestep = 0;
  Vector noise;
};

using TrainingBatch = std::vector<TrainingSample>;

/// Draws batch_size samples in a fixed order: image, template, timestep, noise.
TrainingBatch draw_batch(std::mt19937_64& rng, int batch_size, int image_count, int template_count,
                         int timesteps, int latent_dim);

/// L_diffusion + lambda * L_reg for a fixed batch, with its gradient w.r.t.
/// the concept vectors. Encoder, denoiser and v_init stay fixed.
class InversionObjective {
 public:
  struct Evaluation {
    StepLosses losses;
    Matrix grad;  ///< k x dim; empty when not requested
  };

  InversionObjective(const Backend& backend, std::vector<Vector> image_latents, std::vector<PromptTemplate> templates,
                     ConceptEmbedding v_init, double lambda);

  Evaluation evaluate(const ConceptEmbedding& v, const TrainingBatch& batch, bool want_grad = true) const;
  /// Conditioning seen by the denoiser; direct_output splices v after encoding.
  ConditioningVector conditioning(const ConceptEmbedding& v, int template_index) const;

  const ConceptEmbedding& v_init() const { return v_init_; }
  double lambda() const { return lambda_; }
  bool direct_output() const { return v_init_.init_strategy() == InitStrategy::direct_output; }

 private:
  Backend backend_;
  std::vector<Vector> latents_;
  std::vector<PromptTemplate> templates_;
  ConceptEmbedding v_init_;
  double lambda_;
};

struct OptimizationResult {
  ConceptEmbedding learned;
  ConceptEmbedding v_init;
  TrajectoryRecord trajectory;
  OptimizerConfig config;
  double wall_time = 0.0;
};

enum class CheckpointKind { periodic, final, last_finite };

/// Called with the concept after `step` updates.
using CheckpointFn = std::function<void(const ConceptEmbedding&, int step, CheckpointKind)>;

/// Plain SGD on the concept vectors only. Trajectory point s holds the
/// concept after s updates and the losses on batch s evaluated at it.
OptimizationResult optimize_from(ConceptEmbedding v_init, const InversionSetup& setup, const OptimizerConfig& config,
                                 const Backend& backend, const CheckpointFn& checkpoint = {});

OptimizationResult optimize(const InversionSetup& setup, const OptimizerConfig& config, const Backend& backend,
                            const CheckpointFn& checkpoint = {});

enum class AblationMode { no_ci, no_mean, no_reg, full };

std::string to_string(AblationMode mode);
AblationMode parse_ablation_mode(std::string_view text);

/// no_ci: super-category init; no_mean: cross init from the first name only;
/// no_reg: lambda = 0; full: `config` unchanged.
OptimizationResult ablation_run(AblationMode mode, const InversionSetup& setup, const OptimizerConfig& config,
                                const Backend& backend, const CheckpointFn& checkpoint = {});

}  // namespace crossinit
