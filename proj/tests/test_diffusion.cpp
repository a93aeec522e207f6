#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "crossinit/backend.hpp"
#include "crossinit/defaults.hpp"
#include "crossinit/errors.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace crossinit;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double std_dev = 1.0) {
  std::normal_distribution<double> normal(0.0, std_dev);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

class ZeroDenoiser final : public Denoiser {
 public:
  explicit ZeroDenoiser(int latent, int cond) : latent_(latent), cond_(cond) {}
  int latent_dim() const override { return latent_; }
  int cond_dim() const override { return cond_; }
  Vector predict(const Vector&, int, const ConditioningVector&) const override { return Vector::Zero(latent_); }
  Matrix pullback(const Vector&, int, const ConditioningVector& c, const Vector&) const override {
    return Matrix::Zero(c.size(), c.dim());
  }

 private:
  int latent_, cond_;
};

/// Replays the batch noise in call order.
class NoiseEcho final : public Denoiser {
 public:
  explicit NoiseEcho(Matrix noise) : noise_(std::move(noise)) {}
  int latent_dim() const override { return static_cast<int>(noise_.cols()); }
  int cond_dim() const override { return 4; }
  Vector predict(const Vector&, int, const ConditioningVector&) const override {
    return noise_.row(next_++).transpose();
  }
  Matrix pullback(const Vector&, int, const ConditioningVector& c, const Vector&) const override {
    return Matrix::Zero(c.size(), c.dim());
  }

 private:
  Matrix noise_;
  mutable Eigen::Index next_ = 0;
};

const NoiseSchedule kToy = NoiseSchedule::toy_default();

}  // namespace

TEST(NoiseSchedule, MatchesNumpyReference) {
  // tests/oracles/schedule_oracle.py
  EXPECT_NEAR(kToy.alpha_bar(0), 0.9999, 1e-15);
  EXPECT_NEAR(kToy.alpha_bar(1), 0.99959902, 1e-15);
  EXPECT_NEAR(kToy.alpha_bar(10), 0.9879091845233353, 1e-13);
  EXPECT_NEAR(kToy.alpha_bar(50), 0.7692913123069753, 1e-13);
  EXPECT_NEAR(kToy.alpha_bar(99), 0.3635632480554922, 1e-13);
  EXPECT_EQ(kToy.steps(), 100);
}

TEST(NoiseSchedule, RejectsInvalidBetas) {
  EXPECT_THROW(NoiseSchedule({}), InvalidConfig);
  EXPECT_THROW(NoiseSchedule({0.1, 0.05}), InvalidConfig);
  EXPECT_THROW(NoiseSchedule({0.0, 0.1}), InvalidConfig);
  EXPECT_THROW(NoiseSchedule({0.5, 1.0}), InvalidConfig);
  EXPECT_THROW(kToy.alpha_bar(100), TimestepOutOfRange);
  EXPECT_THROW(kToy.alpha_bar(-1), TimestepOutOfRange);
}

TEST(Noisify, UnitAlphaBarLeavesLatentUnchanged) {
  const NoiseSchedule limit({1e-20});  // 1 - 1e-20 rounds to exactly 1
  ASSERT_EQ(limit.alpha_bar(0), 1.0);
  std::mt19937_64 rng(1);
  const Matrix z0 = random_matrix(rng, 3, 5);
  EXPECT_EQ(noisify(z0, random_matrix(rng, 3, 5), {0, 0, 0}, limit), z0);
}

TEST(Noisify, ZeroNoiseScalesBySqrtAlphaBar) {
  std::mt19937_64 rng(2);
  const Matrix z0 = random_matrix(rng, 2, 4);
  const Matrix zt = noisify(z0, Matrix::Zero(2, 4), {10, 80}, kToy);
  EXPECT_EQ(zt.row(0), std::sqrt(kToy.alpha_bar(10)) * z0.row(0));
  EXPECT_EQ(zt.row(1), std::sqrt(kToy.alpha_bar(80)) * z0.row(1));
}

TEST(Noisify, MatchesLoopOracleAndNumpy) {
  std::mt19937_64 rng(3);
  const Matrix z0 = random_matrix(rng, 6, 16);
  const Matrix eps = random_matrix(rng, 6, 16);
  const std::vector<int> t = {0, 5, 17, 50, 98, 99};
  const Matrix want = oracle::to_matrix(oracle::noisify(oracle::to_rows(z0), oracle::to_rows(eps), t, kToy.betas()));
  EXPECT_LE((noisify(z0, eps, t, kToy) - want).cwiseAbs().maxCoeff(), 1e-10);

  Matrix a(1, 3), e(1, 3);
  a << 0.5, -1.25, 2.0;
  e << 0.1, 0.2, -0.3;
  const Matrix z = noisify(a, e, {37}, kToy);
  EXPECT_NEAR(z(0, 0), 0.5017169386073652, 1e-13);
  EXPECT_NEAR(z(0, 1), -1.088710937756621, 1e-13);
  EXPECT_NEAR(z(0, 2), 1.7492966741333402, 1e-13);
}

TEST(Noisify, ShapeErrors) {
  EXPECT_THROW(noisify(Matrix::Zero(2, 3), Matrix::Zero(2, 4), {0, 0}, kToy), ShapeMismatch);
  EXPECT_THROW(noisify(Matrix::Zero(2, 3), Matrix::Zero(2, 3), {0}, kToy), ShapeMismatch);
  EXPECT_THROW(noisify(Matrix::Zero(1, 3), Matrix::Zero(1, 3), {100}, kToy), TimestepOutOfRange);
}

TEST(LdmLoss, PerfectPredictionIsZero) {
  std::mt19937_64 rng(4);
  LatentBatch b{random_matrix(rng, 4, 6), random_matrix(rng, 4, 6), {3, 30, 60, 90}};
  const NoiseEcho echo(b.noise);
  EXPECT_EQ(ldm_loss(b, ConditioningVector(Matrix::Ones(3, 4)), echo, kToy), 0.0);
}

TEST(LdmLoss, ZeroPredictionIsMeanSquaredNoise) {
  std::mt19937_64 rng(5);
  LatentBatch b{random_matrix(rng, 4, 6), random_matrix(rng, 4, 6), {3, 30, 60, 90}};
  const ZeroDenoiser zero(6, 4);
  EXPECT_NEAR(ldm_loss(b, ConditioningVector(Matrix::Ones(3, 4)), zero, kToy), b.noise.squaredNorm() / 24.0, 1e-15);
}

TEST(LdmLoss, ToyMatchesLoopOracle) {
  const Backend be = make_toy_backend();
  const auto& den = static_cast<const ToyDenoiser&>(*be.denoiser);
  std::mt19937_64 rng(6);
  LatentBatch b{random_matrix(rng, 8, 16), random_matrix(rng, 8, 16), {0, 9, 19, 33, 47, 61, 80, 99}};
  const Matrix cond = random_matrix(rng, 9, 32);
  const double want = oracle::ldm_loss(oracle::to_rows(b.z0), oracle::to_rows(b.noise), b.timesteps,
                                       oracle::to_rows(cond), den, kToy.betas());
  EXPECT_NEAR(ldm_loss(b, ConditioningVector(cond), den, kToy), want, 1e-10);
}

TEST(LdmLoss, ConditioningGradientMatchesFiniteDifferences) {
  const Backend be = make_toy_backend();
  std::mt19937_64 rng(7);
  LatentBatch b{random_matrix(rng, 3, 16), random_matrix(rng, 3, 16), {4, 40, 90}};
  const Matrix cond = random_matrix(rng, 5, 32);
  const std::vector<ConditioningVector> conds(3, ConditioningVector(cond));
  const auto lg = ldm_loss_and_grad(b, conds, *be.denoiser, kToy);
  Matrix analytic = Matrix::Zero(5, 32);
  for (const auto& g : lg.cond_grads) analytic += g;
  auto f = [&](const Matrix& c) { return ldm_loss(b, ConditioningVector(c), *be.denoiser, kToy); };
  EXPECT_LE(oracle::max_relative_error(analytic, oracle::central_difference(f, cond, 1e-5), 1e-8), 1e-5);
}

TEST(Sampler, TimestepsAreStridedAndDescending) {
  EXPECT_EQ(sampling_timesteps(kToy, 1), (std::vector<int>{99}));
  EXPECT_EQ(sampling_timesteps(kToy, 4), (std::vector<int>{99, 66, 33, 0}));
  const auto all = sampling_timesteps(kToy, 100);
  EXPECT_EQ(all.front(), 99);
  EXPECT_EQ(all.back(), 0);
  EXPECT_THROW(sampling_timesteps(kToy, 0), InvalidConfig);
  EXPECT_THROW(sampling_timesteps(kToy, 101), InvalidConfig);
}

TEST(Sampler, SingleStepWithZeroDenoiserIsPosteriorMean) {
  const ZeroDenoiser zero(6, 4);
  const Vector got = sample_latent(ConditioningVector(Matrix::Ones(2, 4)), zero, kToy, 1, 42);
  std::mt19937_64 rng(42);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(6);
  for (int i = 0; i < 6; ++i) z[i] = normal(rng);
  // eps_hat = 0 makes x0 = z / sqrt(abar_T); the last step returns x0.
  const Vector want = z / std::sqrt(kToy.alpha_bar(99));
  EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sampler, SeededAndFinite) {
  const Backend be = make_toy_backend();
  const ConceptEmbedding c = mean_name_embedding(fixture::five_names(), *be.table);
  const auto tmpl = PromptTemplate::parse(defaults::kInitTemplate);
  const Vector a = sample(c, tmpl, *be.table, *be.text_encoder, *be.denoiser, *be.schedule, 10, 5);
  const Vector b = sample(c, tmpl, *be.table, *be.text_encoder, *be.denoiser, *be.schedule, 10, 5);
  const Vector other = sample(c, tmpl, *be.table, *be.text_encoder, *be.denoiser, *be.schedule, 10, 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, other);
  EXPECT_EQ(a.size(), be.denoiser->latent_dim());
  EXPECT_TRUE(a.allFinite());
}

TEST(ToyDenoiser, PullbackMatchesFiniteDifferences) {
  const Backend be = make_toy_backend();
  std::mt19937_64 rng(8);
  const Vector z = random_matrix(rng, 16, 1).col(0);
  const Vector g = random_matrix(rng, 16, 1).col(0);
  const Matrix cond = random_matrix(rng, 4, 32);
  auto f = [&](const Matrix& c) { return be.denoiser->predict(z, 25, ConditioningVector(c)).dot(g); };
  const Matrix analytic = be.denoiser->pullback(z, 25, ConditioningVector(cond), g);
  EXPECT_LE(oracle::max_relative_error(analytic, oracle::central_difference(f, cond, 1e-5), 1e-8), 1e-5);
}

TEST(ToyDenoiser, MatchesLoopOracle) {
  const Backend be = make_toy_backend();
  const auto& den = static_cast<const ToyDenoiser&>(*be.denoiser);
  std::mt19937_64 rng(9);
  const Vector z = random_matrix(rng, 16, 1).col(0);
  const Matrix cond = random_matrix(rng, 3, 32);
  const auto want = oracle::denoiser_predict(den, std::vector<double>(z.data(), z.data() + 16), 71,
                                             oracle::to_rows(cond));
  const Vector got = den.predict(z, 71, ConditioningVector(cond));
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(got[i], want[static_cast<std::size_t>(i)], 1e-10);
}

TEST(LatentCodec, DecoderIsRightInverseAndMissingDecoderThrows) {
  const ToyLatentEncoder enc(16, 7);
  const ToyLatentDecoder dec(enc);
  std::mt19937_64 rng(10);
  const Vector z = 0.05 * random_matrix(rng, 16, 1).col(0);
  EXPECT_LE((enc.encode(dec.decode(z)) - z).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(decode_latent(z, nullptr), AdapterMissing);
  EXPECT_THROW(ToyLatentEncoder(65, 1), InvalidConfig);
}
