#include <random>

#include <benchmark/benchmark.h>

#include "crossinit/backend.hpp"
#include "crossinit/inversion.hpp"

using namespace crossinit;

namespace {

const Backend& toy() {
  static const Backend b = make_toy_backend();
  return b;
}

Matrix random_inputs(int rows, int cols) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.02);
  Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  return x;
}

InversionSetup setup() {
  InversionSetup s;
  s.images = {synthetic_face()};
  s.names = NameList(std::vector<PersonName>{{"Albert", "Einstein"}, {"Marie", "Curie"}});
  s.templates = {PromptTemplate::parse("a photo of a {S*} person"), PromptTemplate::parse("a portrait of {S*}")};
  return s;
}

}  // namespace

static void BM_EncoderForward(benchmark::State& state) {
  const Matrix x = random_inputs(static_cast<int>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(toy().text_encoder->encode(x));
}
BENCHMARK(BM_EncoderForward)->Arg(9)->Arg(32);

static void BM_EncoderPullback(benchmark::State& state) {
  const Matrix x = random_inputs(static_cast<int>(state.range(0)), 32);
  const Matrix g = random_inputs(static_cast<int>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(toy().text_encoder->pullback(x, g));
}
BENCHMARK(BM_EncoderPullback)->Arg(9)->Arg(32);

static void BM_OptimizationStep(benchmark::State& state) {
  const InversionSetup s = setup();
  const ConceptEmbedding init = initialize(InitStrategy::cross, s, toy());
  const InversionObjective obj(toy(), {toy().latent_encoder->encode(s.images[0])}, s.templates, init, 1e-5);
  std::mt19937_64 rng(3);
  const TrainingBatch batch = draw_batch(rng, static_cast<int>(state.range(0)), 1, 2, 100, 16);
  for (auto _ : state) benchmark::DoNotOptimize(obj.evaluate(init, batch));
}
BENCHMARK(BM_OptimizationStep)->Arg(1)->Arg(8);

static void BM_CrossInitialize(benchmark::State& state) {
  const InversionSetup s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(initialize(InitStrategy::cross, s, toy()));
}
BENCHMARK(BM_CrossInitialize);
BENCHMARK_MAIN();
