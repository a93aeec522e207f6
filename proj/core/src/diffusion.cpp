#include "crossinit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace crossinit {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw InvalidConfig("noise schedule needs at least one timestep");
  double prod = 1.0;
  for (std::size_t t = 0; t < betas_.size(); ++t) {
    const double b = betas_[t];
    if (!(b > 0.0 && b < 1.0)) throw InvalidConfig("betas must lie in (0, 1)");
    if (t > 0 && !(b > betas_[t - 1])) throw InvalidConfig("betas must be strictly increasing");
    prod *= 1.0 - b;
    if (t > 0 && !(prod < alphas_cumprod_.back()))
      throw InvalidConfig("alphas_cumprod must be strictly decreasing");
    alphas_cumprod_.push_back(prod);
  }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw InvalidConfig("schedule needs at least one timestep");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t)
    betas[static_cast<std::size_t>(t)] =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / static_cast<double>(steps - 1);
  return NoiseSchedule(std::move(betas));
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t >= steps())
    throw TimestepOutOfRange("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
  return alphas_cumprod_[static_cast<std::size_t>(t)];
}

void LatentBatch::validate(const NoiseSchedule& schedule) const {
  if (z0.rows() < 1) throw ShapeMismatch("latent batch is empty");
  if (noise.rows() != z0.rows() || noise.cols() != z0.cols())
    throw ShapeMismatch("noise shape does not match z0");
  if (static_cast<Eigen::Index>(timesteps.size()) != z0.rows())
    throw ShapeMismatch("one timestep per sample required");
  for (int t : timesteps)
    if (t < 0 || t >= schedule.steps())
      throw TimestepOutOfRange("timestep " + std::to_string(t) + " outside [0, " + std::to_string(schedule.steps()) +
                               ")");
}

Matrix noisify(const Matrix& z0, const Matrix& noise, const std::vector<int>& timesteps,
               const NoiseSchedule& schedule) {
  LatentBatch{z0, noise, timesteps}.validate(schedule);
  Matrix zt(z0.rows(), z0.cols());
  for (Eigen::Index b = 0; b < z0.rows(); ++b) {
    const double abar = schedule.alpha_bar(timesteps[static_cast<std::size_t>(b)]);
    zt.row(b) = std::sqrt(abar) * z0.row(b) + std::sqrt(1.0 - abar) * noise.row(b);
  }
  return zt;
}

double ldm_loss(const LatentBatch& batch, const ConditioningVector& cond, const Denoiser& denoiser,
                const NoiseSchedule& schedule) {
  std::vector<ConditioningVector> conds(static_cast<std::size_t>(batch.size()), cond);
  return ldm_loss_and_grad(batch, conds, denoiser, schedule, false).loss;
}

LdmLossGrad ldm_loss_and_grad(const LatentBatch& batch, const std::vector<ConditioningVector>& conds,
                              const Denoiser& denoiser, const NoiseSchedule& schedule, bool want_grad) {
  batch.validate(schedule);
  if (static_cast<int>(conds.size()) != batch.size()) throw ShapeMismatch("one conditioning vector per sample");
  if (batch.latent_dim() != denoiser.latent_dim())
    throw ShapeMismatch("batch latent dim " + std::to_string(batch.latent_dim()) + " != denoiser latent dim " +
                        std::to_string(denoiser.latent_dim()));
  const Matrix zt = noisify(batch.z0, batch.noise, batch.timesteps, schedule);
  const double denom = static_cast<double>(batch.size()) * batch.latent_dim();
  LdmLossGrad out;
  for (int b = 0; b < batch.size(); ++b) {
    const auto& cond = conds[static_cast<std::size_t>(b)];
    if (cond.dim() != denoiser.cond_dim()) throw ShapeMismatch("conditioning dim does not match denoiser");
    const Vector z = zt.row(b).transpose();
    const int t = batch.timesteps[static_cast<std::size_t>(b)];
    const Vector eps_hat = denoiser.predict(z, t, cond);
    if (eps_hat.size() != batch.latent_dim()) throw ShapeMismatch("denoiser output has wrong size");
    const Vector residual = eps_hat - batch.noise.row(b).transpose();
    out.loss += residual.squaredNorm();
    if (want_grad) out.cond_grads.push_back(denoiser.pullback(z, t, cond, (2.0 / denom) * residual));
  }
  out.loss /= denom;
  return out;
}

std::vector<int> sampling_timesteps(const NoiseSchedule& schedule, int steps) {
  const int T = schedule.steps();
  if (steps < 1) throw InvalidConfig("sampler needs at least one step");
  if (steps > T) throw InvalidConfig("sampler steps exceed schedule length");
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  if (steps == 1) return {T - 1};
  for (int i = 0; i < steps; ++i)
    ts.push_back(static_cast<int>((static_cast<long long>(T - 1) * (steps - 1 - i)) / (steps - 1)));
  return ts;
}

Vector sample_latent(const ConditioningVector& cond, const Denoiser& denoiser, const NoiseSchedule& schedule,
                     int steps, std::uint64_t seed) {
  const auto ts = sampling_timesteps(schedule, steps);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int d = denoiser.latent_dim();
  Vector x(d);
  for (int i = 0; i < d; ++i) x[i] = normal(rng);

  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const bool last = i + 1 == ts.size();
    const double abar = schedule.alpha_bar(t);
    const double abar_prev = last ? 1.0 : schedule.alpha_bar(ts[i + 1]);
    const Vector eps_hat = denoiser.predict(x, t, cond);
    const Vector x0 = (x - std::sqrt(1.0 - abar) * eps_hat) / std::sqrt(abar);
    const double beta = 1.0 - abar / abar_prev;
    const Vector mean = (std::sqrt(abar_prev) * beta / (1.0 - abar)) * x0 +
                        (std::sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar)) * x;
    if (last) {
      x = mean;
    } else {
      const double sigma = std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
      Vector noise(d);
      for (int j = 0; j < d; ++j) noise[j] = normal(rng);
      x = mean + sigma * noise;
    }
  }
  return x;
}

Vector sample(const ConceptEmbedding& embedding, const PromptTemplate& tmpl, const EmbeddingTable& table,
              const TextEncoder& encoder, const Denoiser& denoiser, const NoiseSchedule& schedule, int steps,
              std::uint64_t seed) {
  const ConditioningVector cond = assemble_conditioning(tmpl, embedding, table, encoder);
  return sample_latent(cond, denoiser, schedule, steps, seed);
}

Image decode_latent(const Vector& latent, const LatentDecoder* decoder) {
  if (!decoder) throw AdapterMissing("image output requested but the backend has no latent decoder");
  return decoder->decode(latent);
}

// ---------------------------------------------------------------------------

void ToyDenoiserConfig::validate() const {
  if (latent_dim < 1 || cond_dim < 1 || hidden < 1) throw InvalidConfig("toy denoiser dims must be positive");
  if (time_dim < 2 || time_dim % 2 != 0) throw InvalidConfig("time embedding width must be even and >= 2");
  if (!(gain > 0.0) || !(cond_gain > 0.0)) throw InvalidConfig("toy denoiser gains must be positive");
}

Vector timestep_embedding(int t, int dim) {
  const int half = dim / 2;
  Vector e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / static_cast<double>(half));
    e[i] = std::cos(t * freq);
    e[half + i] = std::sin(t * freq);
  }
  return e;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace

ToyDenoiser::ToyDenoiser(const ToyDenoiserConfig& config) : config_(config) {
  config_.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                    0xD3u};
  std::mt19937_64 rng(seq);
  const int in = config_.latent_dim + config_.time_dim + config_.cond_dim;
  auto draw = [&](int rows, int cols, double std_dev) {
    std::normal_distribution<double> normal(0.0, std_dev);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
  };
  Matrix w0 = draw(in, config_.hidden, config_.gain / std::sqrt(in));
  w0.bottomRows(config_.cond_dim) = draw(config_.cond_dim, config_.hidden, config_.cond_gain / std::sqrt(in));
  weights_ = {std::move(w0), draw(config_.hidden, config_.hidden, config_.gain / std::sqrt(config_.hidden)),
              draw(config_.hidden, config_.latent_dim, config_.gain / std::sqrt(config_.hidden))};
  biases_ = {Vector::Zero(config_.hidden), Vector::Zero(config_.hidden), Vector::Zero(config_.latent_dim)};
}

Vector ToyDenoiser::input_features(const Vector& z_t, int t, const ConditioningVector& cond) const {
  if (z_t.size() != config_.latent_dim) throw ShapeMismatch("z_t has wrong latent dim");
  if (cond.dim() != config_.cond_dim) throw ShapeMismatch("conditioning has wrong dim");
  Vector x(config_.latent_dim + config_.time_dim + config_.cond_dim);
  x << z_t, timestep_embedding(t, config_.time_dim), cond.matrix().colwise().mean().transpose();
  return x;
}

Vector ToyDenoiser::predict(const Vector& z_t, int t, const ConditioningVector& cond) const {
  const Vector x = input_features(z_t, t, cond);
  const Vector h1 = (weights_[0].transpose() * x + biases_[0]).unaryExpr(&silu);
  const Vector h2 = (weights_[1].transpose() * h1 + biases_[1]).unaryExpr(&silu);
  return weights_[2].transpose() * h2 + biases_[2];
}

Matrix ToyDenoiser::pullback(const Vector& z_t, int t, const ConditioningVector& cond, const Vector& eps_grad) const {
  if (eps_grad.size() != config_.latent_dim) throw ShapeMismatch("eps gradient has wrong size");
  const Vector x = input_features(z_t, t, cond);
  const Vector a1 = weights_[0].transpose() * x + biases_[0];
  const Vector h1 = a1.unaryExpr(&silu);
  const Vector a2 = weights_[1].transpose() * h1 + biases_[1];

  const Vector dh2 = weights_[2] * eps_grad;
  const Vector da2 = dh2.cwiseProduct(a2.unaryExpr(&silu_grad));
  const Vector dh1 = weights_[1] * da2;
  const Vector da1 = dh1.cwiseProduct(a1.unaryExpr(&silu_grad));
  const Vector dx = weights_[0] * da1;

  const Vector dpooled = dx.tail(config_.cond_dim) / static_cast<double>(cond.size());
  Matrix grad(cond.size(), cond.dim());
  grad.rowwise() = dpooled.transpose();
  return grad;
}

ToyLatentEncoder::ToyLatentEncoder(int latent_dim, std::uint64_t seed) {
  if (latent_dim < 1 || latent_dim > kThumbnail * kThumbnail) throw InvalidConfig("latent dim must be in [1, 64]");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xE1u};
  std::mt19937_64 rng(seq);
  const int n = kThumbnail * kThumbnail;
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
  projection_.resize(latent_dim, n);
  for (int i = 0; i < latent_dim; ++i)
    for (int j = 0; j < n; ++j) projection_(i, j) = normal(rng);
}

Vector ToyLatentEncoder::encode(const Image& image) const {
  const Image thumb = to_gray_thumbnail(image, kThumbnail);
  Vector x(kThumbnail * kThumbnail);
  for (int i = 0; i < x.size(); ++i) x[i] = 2.0 * thumb.pixels[static_cast<std::size_t>(i)] - 1.0;
  return projection_ * x;
}

ToyLatentDecoder::ToyLatentDecoder(const ToyLatentEncoder& encoder) {
  const Matrix& p = encoder.projection();
  const Eigen::MatrixXd gram = p * p.transpose();
  inverse_ = p.transpose() * gram.ldlt().solve(Eigen::MatrixXd::Identity(gram.rows(), gram.cols()));
}

Image ToyLatentDecoder::decode(const Vector& latent) const {
  if (latent.size() != inverse_.cols()) throw ShapeMismatch("latent has wrong size for decoder");
  const Vector x = inverse_ * latent;
  const int s = ToyLatentEncoder::kThumbnail;
  Image img{s, s, 1, std::vector<double>(static_cast<std::size_t>(s) * s)};
  for (int i = 0; i < s * s; ++i) img.pixels[static_cast<std::size_t>(i)] = std::clamp((x[i] + 1.0) / 2.0, 0.0, 1.0);
  return img;
}

}  // namespace crossinit
