#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "crossinit/embedding.hpp"
#include "crossinit/image.hpp"
#include "crossinit/linalg.hpp"
#include "crossinit/text_encoder.hpp"

namespace crossinit {

/// DDPM variance schedule. betas in (0, 1), strictly increasing;
/// alphas_cumprod[t] = prod_{s<=t} (1 - betas[s]).
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> betas);
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  /// T=100, beta from 1e-4 to 0.02.
  static NoiseSchedule toy_default() { return linear(100, 1e-4, 0.02); }

  int steps() const { return static_cast<int>(betas_.size()); }
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas_cumprod() const { return alphas_cumprod_; }
  double alpha_bar(int t) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_cumprod_;
};

/// One row per sample.
struct LatentBatch {
  Matrix z0;
  Matrix noise;
  std::vector<int> timesteps;

  int size() const { return static_cast<int>(z0.rows()); }
  int latent_dim() const { return static_cast<int>(z0.cols()); }
  /// Throws ShapeMismatch / TimestepOutOfRange.
  void validate(const NoiseSchedule& schedule) const;
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, per row.
Matrix noisify(const Matrix& z0, const Matrix& noise, const std::vector<int>& timesteps,
               const NoiseSchedule& schedule);

/// Adapter contract for the frozen noise predictor eps_theta(z_t, t, c).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual int latent_dim() const = 0;
  virtual int cond_dim() const = 0;
  virtual Vector predict(const Vector& z_t, int t, const ConditioningVector& cond) const = 0;
  /// Gradient w.r.t. the conditioning of <eps_grad, predict(z_t, t, cond)>.
  virtual Matrix pullback(const Vector& z_t, int t, const ConditioningVector& cond,
                          const Vector& eps_grad) const = 0;
};

/// Image -> latent (the autoencoder's encoder).
class LatentEncoder {
 public:
  virtual ~LatentEncoder() = default;
  virtual int latent_dim() const = 0;
  virtual Vector encode(const Image& image) const = 0;
};

/// Latent -> image (the autoencoder's decoder).
class LatentDecoder {
 public:
  virtual ~LatentDecoder() = default;
  virtual Image decode(const Vector& latent) const = 0;
};

double ldm_loss(const LatentBatch& batch, const ConditioningVector& cond, const Denoiser& denoiser,
                const NoiseSchedule& schedule);

struct LdmLossGrad {
  double loss = 0.0;
  std::vector<Matrix> cond_grads;  ///< d loss / d cond_b, one per sample
};

/// Mean over batch and latent dims of (eps - eps_hat)^2, with each sample
/// conditioned on its own conditioning vector.
LdmLossGrad ldm_loss_and_grad(const LatentBatch& batch, const std::vector<ConditioningVector>& conds,
                              const Denoiser& denoiser, const NoiseSchedule& schedule, bool want_grad = true);

/// Strided timestep sequence T-1 = t_0 > t_1 > ... used by the sampler.
std::vector<int> sampling_timesteps(const NoiseSchedule& schedule, int steps);

/// Ancestral DDPM sampling from seeded N(0, I) noise with strided timesteps.
Vector sample_latent(const ConditioningVector& cond, const Denoiser& denoiser, const NoiseSchedule& schedule,
                     int steps, std::uint64_t seed);

Vector sample(const ConceptEmbedding& embedding, const PromptTemplate& tmpl, const EmbeddingTable& table,
              const TextEncoder& encoder, const Denoiser& denoiser, const NoiseSchedule& schedule, int steps,
              std::uint64_t seed);

/// Throws AdapterMissing when `decoder` is null.
Image decode_latent(const Vector& latent, const LatentDecoder* decoder);

// ---------------------------------------------------------------------------
// Toy backend pieces

struct ToyDenoiserConfig {
  int latent_dim = 16;
  int cond_dim = 32;
  int time_dim = 16;
  int hidden = 64;
  std::uint64_t seed = 7;
  /// Weights are N(0, gain^2 / fan_in); the conditioning columns of the
  /// first layer use cond_gain.
  double gain = 1.0;
  double cond_gain = 32.0;

  void validate() const;
};

/// Sinusoidal timestep embedding of even width `dim`.
Vector timestep_embedding(int t, int dim);

/// Two-hidden-layer SiLU perceptron on [z_t | t-embedding | mean-pooled cond].
class ToyDenoiser final : public Denoiser {
 public:
  explicit ToyDenoiser(const ToyDenoiserConfig& config);

  int latent_dim() const override { return config_.latent_dim; }
  int cond_dim() const override { return config_.cond_dim; }
  Vector predict(const Vector& z_t, int t, const ConditioningVector& cond) const override;
  Matrix pullback(const Vector& z_t, int t, const ConditioningVector& cond, const Vector& eps_grad) const override;

  const ToyDenoiserConfig& config() const { return config_; }
  /// Row convention y = x W + b; layer 0 input is [z_t | temb | pooled].
  const Matrix& weight(int layer) const { return weights_.at(static_cast<std::size_t>(layer)); }
  const Vector& bias(int layer) const { return biases_.at(static_cast<std::size_t>(layer)); }

 private:
  Vector input_features(const Vector& z_t, int t, const ConditioningVector& cond) const;

  ToyDenoiserConfig config_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

/// Fixed seeded linear projection of an 8x8 grayscale thumbnail (scaled to
/// [-1, 1]) to the latent space.
class ToyLatentEncoder final : public LatentEncoder {
 public:
  static constexpr int kThumbnail = 8;
  ToyLatentEncoder(int latent_dim, std::uint64_t seed);
  int latent_dim() const override { return static_cast<int>(projection_.rows()); }
  Vector encode(const Image& image) const override;
  const Matrix& projection() const { return projection_; }

 private:
  Matrix projection_;  ///< latent_dim x 64
};

/// Minimum-norm inverse of ToyLatentEncoder.
class ToyLatentDecoder final : public LatentDecoder {
 public:
  explicit ToyLatentDecoder(const ToyLatentEncoder& encoder);
  Image decode(const Vector& latent) const override;

 private:
  Matrix inverse_;  ///< 64 x latent_dim
};

}  // namespace crossinit
