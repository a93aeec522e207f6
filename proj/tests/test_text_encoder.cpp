#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "crossinit/backend.hpp"
#include "crossinit/defaults.hpp"
#include "crossinit/errors.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace crossinit;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double std_dev) {
  std::normal_distribution<double> normal(0.0, std_dev);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

const Backend& toy() {
  static const Backend b = make_toy_backend();
  return b;
}

const PromptTemplate kInit = PromptTemplate::parse(defaults::kInitTemplate);

}  // namespace

TEST(IdentityEncoder, ReturnsInputUnchanged) {
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(rng, 5, 8, 1.0);
  const IdentityEncoder e(8);
  EXPECT_EQ(e.encode(x), x);
  EXPECT_EQ(e.pullback(x, 2.0 * x), 2.0 * x);
}

TEST(ToyEncoder, MatchesLoopOracle) {
  const auto& enc = static_cast<const ToyTextEncoder&>(*toy().text_encoder);
  std::mt19937_64 rng(7);
  for (int n : {1, 4, 9}) {
    const Matrix x = random_matrix(rng, n, 32, 0.5);
    const Matrix got = enc.encode(x);
    const Matrix want = oracle::to_matrix(oracle::encode(enc, oracle::to_rows(x)).output);
    EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-10) << "n=" << n;
  }
}

TEST(ToyEncoder, WideAdapterKeepsDim1024) {
  const Backend b = fixture::wide_backend();
  const auto tp = tokenize_prompt(PromptTemplate::parse("a photo of a person"), *b.table);
  Matrix x(static_cast<Eigen::Index>(tp.ids.size()), b.table->dim());
  for (std::size_t i = 0; i < tp.ids.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = b.table->rows().row(tp.ids[i]);
  const Matrix y = b.text_encoder->encode(x);
  EXPECT_EQ(x.cols(), 1024);
  EXPECT_EQ(y.cols(), 1024);
  EXPECT_EQ(y.rows(), x.rows());
}

TEST(ToyEncoder, PostLayerNormRowsHaveNormSqrtDim) {
  const auto& enc = static_cast<const ToyTextEncoder&>(*toy().text_encoder);
  std::mt19937_64 rng(5);
  for (double scale : {0.02, 1.0, 40.0}) {
    const EncoderForward f = enc.forward(random_matrix(rng, 7, 32, scale));
    for (const Matrix& m : f.norm_outputs)
      for (Eigen::Index i = 0; i < m.rows(); ++i) EXPECT_NEAR(m.row(i).norm(), std::sqrt(32.0), 1e-5);
  }
}

TEST(ToyEncoder, RejectsTooLongOrWrongDim) {
  const auto& enc = *toy().text_encoder;
  EXPECT_THROW(enc.encode(Matrix::Zero(33, 32)), ShapeMismatch);
  EXPECT_THROW(enc.encode(Matrix::Zero(3, 31)), DimensionMismatch);
  EncoderConfig bad;
  bad.num_heads = 5;
  EXPECT_THROW(bad.validate(), InvalidConfig);
}

TEST(ToyEncoder, PullbackMatchesFiniteDifferences) {
  const auto& enc = *toy().text_encoder;
  std::mt19937_64 rng(9);
  const Matrix x = random_matrix(rng, 6, 32, 0.3);
  const Matrix g = random_matrix(rng, 6, 32, 1.0);
  auto f = [&](const Matrix& in) { return (enc.encode(in).array() * g.array()).sum(); };
  const Matrix analytic = enc.pullback(x, g);
  const Matrix numeric = oracle::central_difference(f, x, 1e-5);
  EXPECT_LE(oracle::max_relative_error(analytic, numeric, 1e-6), 1e-5);
}

TEST(Conditioning, LiteralTokensEqualLiteralPrompt) {
  std::mt19937_64 rng(4);
  const EmbeddingTable table({"<bos>", "<eos>", "<pad>", "<unk>", "a", "photo", "of", "john", "smith", "person"},
                             random_matrix(rng, 10, 32, 0.02));
  const ConceptEmbedding c({{"f", lookup_embedding("john", table)}, {"l", lookup_embedding("smith", table)}},
                           InitStrategy::cross);
  const auto& enc = *toy().text_encoder;
  const Matrix spliced = assemble_conditioning(kInit, c, table, enc).matrix();
  const auto tp = tokenize_prompt(PromptTemplate::parse("a photo of a john smith person"), table);
  Matrix literal(static_cast<Eigen::Index>(tp.ids.size()), 32);
  for (std::size_t i = 0; i < tp.ids.size(); ++i) literal.row(static_cast<Eigen::Index>(i)) = table.rows().row(tp.ids[i]);
  EXPECT_EQ(spliced, enc.encode(literal));
}

TEST(Conditioning, SlotCountMismatch) {
  std::mt19937_64 rng(1);
  const ConceptEmbedding c = fixture::random_concept(rng, 2, 32);
  EXPECT_THROW(splice_concept(PromptTemplate::parse("a {f} person"), c, *toy().table), SlotCountMismatch);
  const ConceptEmbedding narrow = fixture::random_concept(rng, 2, 16);
  EXPECT_THROW(splice_concept(kInit, narrow, *toy().table), DimensionMismatch);
}

TEST(Conditioning, SpliceThenEncodeMatchesOracle) {
  std::mt19937_64 rng(2);
  const ConceptEmbedding c = fixture::random_concept(rng, 2, 32);
  const auto& table = *toy().table;
  const auto& enc = static_cast<const ToyTextEncoder&>(*toy().text_encoder);
  const std::vector<std::string> words = {"<bos>", "a", "photo", "of", "a", "", "", "person", "<eos>"};
  oracle::Rows rows;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i == 5 || i == 6) {
      const auto& v = c.vector(static_cast<int>(i) - 5).values();
      rows.emplace_back(v.data(), v.data() + v.size());
    } else {
      const int id = table.id_of(words[i]).value();
      rows.push_back(oracle::to_rows(table.rows().row(id))[0]);
    }
  }
  const Matrix want = oracle::to_matrix(oracle::encode(enc, rows).output);
  const Matrix got = assemble_conditioning(PromptTemplate::parse("a photo of a {f} {l} person"), c, table, enc).matrix();
  EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CrossInitialize, IdentityEncoderReturnsMean) {
  const Backend b = fixture::identity_backend();
  const ConceptEmbedding mean = mean_name_embedding(fixture::five_names(), *b.table);
  const ConceptEmbedding ci = cross_initialize(mean, *b.text_encoder, kInit, *b.table);
  EXPECT_EQ(ci.as_matrix(), mean.as_matrix());
  EXPECT_EQ(ci.init_strategy(), InitStrategy::cross);
  EXPECT_EQ(ci.metadata().at("init_template"), defaults::kInitTemplate);
}

TEST(CrossInitialize, EqualsSlotPositionsOfIndependentEncode) {
  const auto& table = *toy().table;
  const auto& enc = static_cast<const ToyTextEncoder&>(*toy().text_encoder);
  const ConceptEmbedding mean = mean_name_embedding(fixture::default_names(), table);
  const ConceptEmbedding ci = cross_initialize(mean, enc, kInit, table);
  const SplicedPrompt sp = splice_concept(kInit, mean, table);
  const oracle::Rows out = oracle::encode(enc, oracle::to_rows(sp.inputs)).output;
  for (int s = 0; s < 2; ++s)
    for (int j = 0; j < 32; ++j)
      EXPECT_NEAR(ci.vector(s)[j], out[static_cast<std::size_t>(sp.slot_positions[s])][j], 1e-10);
}

TEST(CrossInitialize, WideAdapterChangesNormAndDirection) {
  const Backend b = fixture::wide_backend();
  const ConceptEmbedding mean = mean_name_embedding(fixture::wide_names(), *b.table);
  const ConceptEmbedding ci = cross_initialize(mean, *b.text_encoder, kInit, *b.table);
  ASSERT_EQ(ci.dim(), 1024);
  for (int s = 0; s < 2; ++s) {
    const Vector& v = mean.vector(s).values();
    const Vector& e = ci.vector(s).values();
    EXPECT_GT(std::abs(e.norm() / v.norm() - 1.0), 0.1);
    EXPECT_LT(v.dot(e) / (v.norm() * e.norm()), 0.9);
  }
}

TEST(CrossInitialize, RequiresRawMean) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(cross_initialize(fixture::random_concept(rng, 2, 32, InitStrategy::cross), *toy().text_encoder, kInit,
                                *toy().table),
               InvalidConfig);
}

TEST(RepeatedEncoding, ZeroAndOneRepeats) {
  const ConceptEmbedding mean = mean_name_embedding(fixture::five_names(), *toy().table);
  const auto t0 = repeated_encoding_trace(mean, *toy().text_encoder, kInit, *toy().table, 0);
  ASSERT_EQ(t0.size(), 1u);
  EXPECT_EQ(t0[0], mean);
  const auto t1 = repeated_encoding_trace(mean, *toy().text_encoder, kInit, *toy().table, 1);
  ASSERT_EQ(t1.size(), 2u);
  EXPECT_EQ(t1[1].as_matrix(), cross_initialize(mean, *toy().text_encoder, kInit, *toy().table).as_matrix());
  EXPECT_THROW(repeated_encoding_trace(mean, *toy().text_encoder, kInit, *toy().table, -1), InvalidConfig);
}

TEST(RepeatedEncoding, StepDistancesMatchOracle) {
  const auto& table = *toy().table;
  const auto& enc = static_cast<const ToyTextEncoder&>(*toy().text_encoder);
  const ConceptEmbedding mean = mean_name_embedding(fixture::default_names(), table);
  const auto trace = repeated_encoding_trace(mean, enc, kInit, table, 4);
  const auto d = step_distances(trace);
  ASSERT_EQ(d.size(), 4u);

  ConceptEmbedding cur = mean;
  for (int i = 0; i < 4; ++i) {
    const SplicedPrompt sp = splice_concept(kInit, cur, table);
    const oracle::Rows out = oracle::encode(enc, oracle::to_rows(sp.inputs)).output;
    Matrix next(2, 32);
    for (int s = 0; s < 2; ++s)
      for (int j = 0; j < 32; ++j) next(s, j) = out[static_cast<std::size_t>(sp.slot_positions[s])][j];
    double sq = 0.0;
    for (int s = 0; s < 2; ++s)
      for (int j = 0; j < 32; ++j) sq += (next(s, j) - cur.as_matrix()(s, j)) * (next(s, j) - cur.as_matrix()(s, j));
    EXPECT_NEAR(d[static_cast<std::size_t>(i)], std::sqrt(sq), 1e-10);
    cur = cur.with_values(next);
  }
}

TEST(BlockTrace, IdentityEncoderIsFlat) {
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(rng, 4, 8, 1.0);
  const BlockTrace t = block_trace(x, IdentityEncoder(8), 2);
  ASSERT_EQ(t.entries.size(), 2u);
  for (const auto& e : t.entries) {
    EXPECT_DOUBLE_EQ(e.norm, x.row(2).norm());
    EXPECT_NEAR(e.cosine_to_final, 1.0, 1e-15);
  }
  EXPECT_EQ(t.entries[0].stage, "input");
  EXPECT_EQ(t.entries[1].stage, "final");
}

TEST(BlockTrace, ToyMatchesInstrumentedOracle) {
  const auto& enc = static_cast<const ToyTextEncoder&>(*toy().text_encoder);
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(rng, 6, 32, 0.5);
  const int pos = 4;
  const BlockTrace t = block_trace(x, enc, pos);
  const auto tr = oracle::encode(enc, oracle::to_rows(x));
  std::vector<std::vector<double>> states;
  for (const auto& r : tr.residual) states.push_back(r[pos]);
  states.push_back(tr.output[pos]);
  ASSERT_EQ(t.entries.size(), states.size());
  ASSERT_EQ(t.entries.size(), 6u);  // input, 4 blocks, final
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto g = oracle::geometry(states[i], states[i]);
    EXPECT_NEAR(t.entries[i].norm, g.norm, 1e-10);
    EXPECT_NEAR(t.entries[i].cosine_to_final, oracle::cosine(states[i], states.back()), 1e-10);
  }
  EXPECT_EQ(t.entries[1].stage, "block_0");
  EXPECT_THROW(block_trace(x, enc, 6), PositionOutOfRange);
  EXPECT_THROW(block_trace(x, enc, -1), PositionOutOfRange);
}

TEST(TraceCsv, HeadersAndRowCounts) {
  fixture::TempDir dir("trace");
  std::mt19937_64 rng(1);
  write_block_trace_csv(block_trace(random_matrix(rng, 3, 32, 1.0), *toy().text_encoder, 1), dir / "b.csv");
  auto lines = read_lines(dir / "b.csv");
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0], "stage,norm,cosine_to_final");

  const ConceptEmbedding mean = mean_name_embedding(fixture::five_names(), *toy().table);
  write_repeated_encoding_csv(repeated_encoding_trace(mean, *toy().text_encoder, kInit, *toy().table, 0),
                              dir / "r0.csv");
  lines = read_lines(dir / "r0.csv");
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "stage,norm,cosine_to_final");
  EXPECT_EQ(lines[1].substr(0, 4), "E^0,");
  write_repeated_encoding_csv(repeated_encoding_trace(mean, *toy().text_encoder, kInit, *toy().table, 4),
                              dir / "r4.csv");
  EXPECT_EQ(read_lines(dir / "r4.csv").size(), 6u);
}
