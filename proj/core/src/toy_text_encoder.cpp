#include "crossinit/toy_text_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "crossinit/defaults.hpp"

namespace crossinit {

void EncoderConfig::validate() const {
  if (dim < 1) throw InvalidConfig("encoder dim must be positive");
  if (num_blocks < 1) throw InvalidConfig("encoder needs at least one block");
  if (num_heads < 1 || dim % num_heads != 0) throw InvalidConfig("encoder dim must be divisible by num_heads");
  if (!(mlp_ratio > 0.0)) throw InvalidConfig("mlp_ratio must be positive");
  if (vocab_size < 4) throw InvalidConfig("vocab_size must be >= 4 (BOS, EOS, PAD, UNK)");
  if (max_positions < 2) throw InvalidConfig("max_positions must be >= 2");
  if (!(init_std > 0.0)) throw InvalidConfig("init_std must be positive");
  if (!(ln_eps >= 0.0)) throw InvalidConfig("ln_eps must be non-negative");
}

int EncoderConfig::hidden_width() const {
  return std::max(1, static_cast<int>(std::lround(mlp_ratio * dim)));
}

namespace {

constexpr double kQuickGeluAlpha = 1.702;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct NormCache {
  Matrix normalized;
  Vector inv_sigma;
};

Matrix layer_norm(const Matrix& x, const LayerNormWeights& w, double eps, NormCache* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  Matrix normalized(n, d);
  Vector inv_sigma(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).matrix();
    const double var = centered.squaredNorm() / static_cast<double>(d);
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    normalized.row(i) = centered * inv_sigma[i];
  }
  Matrix y = (normalized.array().rowwise() * w.gain.transpose().array()).rowwise() + w.bias.transpose().array();
  if (cache) *cache = {std::move(normalized), std::move(inv_sigma)};
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormWeights& w, const NormCache& c) {
  const Matrix dnorm = dy.array().rowwise() * w.gain.transpose().array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dnorm.row(i).mean();
    const double mean_dx = dnorm.row(i).dot(c.normalized.row(i)) / static_cast<double>(dy.cols());
    dx.row(i) = ((dnorm.row(i).array() - mean_d) - c.normalized.row(i).array() * mean_dx) * c.inv_sigma[i];
  }
  return dx;
}

Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
  return (x * w).rowwise() + b.transpose();
}

}  // namespace

struct ToyTextEncoder::Cache {
  struct Block {
    NormCache ln_attn;
    Matrix attn_in, query, key, value, heads_out;
    std::vector<Matrix> probs;
    NormCache ln_mlp;
    Matrix mlp_in, pre_act;
  };
  std::vector<Block> blocks;
  NormCache final_norm;
};

ToyTextEncoder::ToyTextEncoder(EncoderConfig config, EncoderWeights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  const int d = config_.dim;
  const int m = config_.hidden_width();
  auto check = [&](bool ok, const char* what) {
    if (!ok) throw DimensionMismatch(std::string("toy encoder weights: ") + what);
  };
  auto check_ln = [&](const LayerNormWeights& ln) {
    check(ln.gain.size() == d && ln.bias.size() == d, "layer norm shape");
  };
  check(weights_.positions.rows() == config_.max_positions && weights_.positions.cols() == d, "positions shape");
  check(static_cast<int>(weights_.blocks.size()) == config_.num_blocks, "block count");
  for (const auto& b : weights_.blocks) {
    check_ln(b.ln_attn);
    check_ln(b.ln_mlp);
    for (const Matrix* w : {&b.w_query, &b.w_key, &b.w_value, &b.w_out})
      check(w->rows() == d && w->cols() == d, "attention projection shape");
    for (const Vector* v : {&b.b_query, &b.b_key, &b.b_value, &b.b_out}) check(v->size() == d, "attention bias");
    check(b.w_up.rows() == d && b.w_up.cols() == m && b.b_up.size() == m, "mlp up shape");
    check(b.w_down.rows() == m && b.w_down.cols() == d && b.b_down.size() == d, "mlp down shape");
  }
  check_ln(weights_.final_norm);
}

ToyTextEncoder ToyTextEncoder::random(const EncoderConfig& config) {
  config.validate();
  // Stream offset keeps encoder weights independent of the token table draws.
  std::mt19937_64 rng(config.seed * 2 + 1);
  std::normal_distribution<double> normal(0.0, config.init_std);
  auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
  };
  const int d = config.dim;
  const int m = config.hidden_width();
  auto unit_norm = [&] { return LayerNormWeights{Vector::Ones(d), Vector::Zero(d)}; };

  EncoderWeights w;
  w.positions = draw(config.max_positions, d);
  for (int b = 0; b < config.num_blocks; ++b) {
    EncoderBlockWeights blk;
    blk.ln_attn = unit_norm();
    blk.w_query = draw(d, d);
    blk.w_key = draw(d, d);
    blk.w_value = draw(d, d);
    blk.w_out = draw(d, d);
    blk.b_query = blk.b_key = blk.b_value = blk.b_out = Vector::Zero(d);
    blk.ln_mlp = unit_norm();
    blk.w_up = draw(d, m);
    blk.b_up = Vector::Zero(m);
    blk.w_down = draw(m, d);
    blk.b_down = Vector::Zero(d);
    w.blocks.push_back(std::move(blk));
  }
  w.final_norm = unit_norm();
  return ToyTextEncoder(config, std::move(w));
}

Matrix ToyTextEncoder::run(const Matrix& inputs, Cache* cache, EncoderForward* record) const {
  const int d = config_.dim;
  const auto n = inputs.rows();
  if (n < 1) throw ShapeMismatch("cannot encode an empty sequence");
  if (inputs.cols() != d)
    throw DimensionMismatch("input dim " + std::to_string(inputs.cols()) + " != encoder dim " + std::to_string(d));
  if (n > config_.max_positions)
    throw ShapeMismatch("sequence of length " + std::to_string(n) + " exceeds max_positions " +
                        std::to_string(config_.max_positions));

  const int heads = config_.num_heads;
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double eps = config_.ln_eps;

  if (cache) cache->blocks.resize(weights_.blocks.size());
  if (record) record->residual.push_back(inputs);

  Matrix h = inputs + weights_.positions.topRows(n);
  for (std::size_t bi = 0; bi < weights_.blocks.size(); ++bi) {
    const auto& w = weights_.blocks[bi];
    NormCache ln_attn;
    const Matrix a = layer_norm(h, w.ln_attn, eps, &ln_attn);
    const Matrix q = affine(a, w.w_query, w.b_query);
    const Matrix k = affine(a, w.w_key, w.b_key);
    const Matrix v = affine(a, w.w_value, w.b_value);
    Matrix heads_out(n, d);
    std::vector<Matrix> probs(static_cast<std::size_t>(heads));
    for (int hh = 0; hh < heads; ++hh) {
      const auto qh = q.middleCols(hh * hd, hd);
      const auto kh = k.middleCols(hh * hd, hd);
      const auto vh = v.middleCols(hh * hd, hd);
      Matrix p = Matrix::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        // causal: position i attends to 0..i
        Eigen::RowVectorXd logits = (qh.row(i) * kh.topRows(i + 1).transpose()) * scale;
        const double mx = logits.maxCoeff();
        Eigen::RowVectorXd e = (logits.array() - mx).exp();
        p.row(i).head(i + 1) = e / e.sum();
      }
      heads_out.middleCols(hh * hd, hd) = p * vh;
      probs[static_cast<std::size_t>(hh)] = std::move(p);
    }
    const Matrix attn = affine(heads_out, w.w_out, w.b_out);
    h += attn;

    NormCache ln_mlp;
    const Matrix b = layer_norm(h, w.ln_mlp, eps, &ln_mlp);
    const Matrix u = affine(b, w.w_up, w.b_up);
    const Matrix g = u.unaryExpr([](double x) { return x * sigmoid(kQuickGeluAlpha * x); });
    h += affine(g, w.w_down, w.b_down);

    if (record) {
      record->norm_outputs.push_back(a);
      record->norm_outputs.push_back(b);
      record->residual.push_back(h);
    }
    if (cache) {
      auto& c = cache->blocks[bi];
      c.ln_attn = std::move(ln_attn);
      c.attn_in = a;
      c.query = q;
      c.key = k;
      c.value = v;
      c.heads_out = std::move(heads_out);
      c.probs = std::move(probs);
      c.ln_mlp = std::move(ln_mlp);
      c.mlp_in = b;
      c.pre_act = u;
    }
  }
  if (!config_.final_norm) return h;
  NormCache fin;
  Matrix out = layer_norm(h, weights_.final_norm, eps, &fin);
  if (record) record->norm_outputs.push_back(out);
  if (cache) cache->final_norm = std::move(fin);
  return out;
}

Matrix ToyTextEncoder::encode(const Matrix& inputs) const { return run(inputs, nullptr, nullptr); }

EncoderForward ToyTextEncoder::forward(const Matrix& inputs) const {
  EncoderForward f;
  f.output = run(inputs, nullptr, &f);
  return f;
}

std::vector<Matrix> ToyTextEncoder::hidden_states(const Matrix& inputs) const {
  EncoderForward f = forward(inputs);
  std::vector<Matrix> states = std::move(f.residual);
  states.push_back(std::move(f.output));
  return states;
}

Matrix ToyTextEncoder::pullback(const Matrix& inputs, const Matrix& output_grad) const {
  Cache cache;
  const Matrix out = run(inputs, &cache, nullptr);
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
    throw ShapeMismatch("output gradient shape does not match encoder output");

  const int d = config_.dim;
  const int hd = d / config_.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto n = inputs.rows();

  Matrix dh = config_.final_norm ? layer_norm_backward(output_grad, weights_.final_norm, cache.final_norm)
                                 : output_grad;
  for (std::size_t bi = weights_.blocks.size(); bi-- > 0;) {
    const auto& w = weights_.blocks[bi];
    const auto& c = cache.blocks[bi];

    // MLP branch: h += W_down * qgelu(W_up * LN(h))
    const Matrix dg = dh * w.w_down.transpose();
    const Matrix du = dg.binaryExpr(c.pre_act, [](double grad, double x) {
      const double s = sigmoid(kQuickGeluAlpha * x);
      return grad * (s + kQuickGeluAlpha * x * s * (1.0 - s));
    });
    dh += layer_norm_backward(du * w.w_up.transpose(), w.ln_mlp, c.ln_mlp);

    // attention branch
    const Matrix dheads = dh * w.w_out.transpose();
    Matrix dq(n, d), dk(n, d), dv(n, d);
    for (int hh = 0; hh < config_.num_heads; ++hh) {
      const auto& p = c.probs[static_cast<std::size_t>(hh)];
      const auto qh = c.query.middleCols(hh * hd, hd);
      const auto kh = c.key.middleCols(hh * hd, hd);
      const auto vh = c.value.middleCols(hh * hd, hd);
      const auto dout = dheads.middleCols(hh * hd, hd);
      const Matrix dp = dout * vh.transpose();
      dv.middleCols(hh * hd, hd) = p.transpose() * dout;
      Matrix ds = p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array();
      ds *= scale;
      dq.middleCols(hh * hd, hd) = ds * kh;
      dk.middleCols(hh * hd, hd) = ds.transpose() * qh;
    }
    const Matrix da = dq * w.w_query.transpose() + dk * w.w_key.transpose() + dv * w.w_value.transpose();
    dh += layer_norm_backward(da, w.ln_attn, c.ln_attn);
  }
  return dh;
}

const std::vector<std::string>& toy_vocabulary_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w = {"a",   "photo", "of",  "person", "portrait", "human",  "face",
                                  "with", "an",   "the", "and",    "on",       "in",     "sad",
                                  "happy", "angry", "puzzled", "expression", "beach", "painting"};
    std::istringstream names{std::string(defaults::name_list_text())};
    std::string line;
    while (std::getline(names, line)) {
      if (line.empty() || line.front() == '#') continue;
      std::istringstream ls(line);
      std::string first, last;
      ls >> first >> last;
      for (auto* s : {&first, &last}) {
        for (auto& ch : *s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        w.push_back(*s);
      }
    }
    return w;
  }();
  return words;
}

EmbeddingTable make_toy_embedding_table(const EncoderConfig& config) {
  config.validate();
  std::vector<std::string> tokens = {std::string(SpecialTokens::bos), std::string(SpecialTokens::eos),
                                     std::string(SpecialTokens::pad), std::string(SpecialTokens::unk)};
  const auto& words = toy_vocabulary_words();
  for (std::size_t i = 0; static_cast<int>(tokens.size()) < config.vocab_size; ++i)
    tokens.push_back(i < words.size() ? words[i] : "<extra_" + std::to_string(i - words.size()) + ">");
  std::mt19937_64 rng(config.seed * 2);
  std::normal_distribution<double> normal(0.0, config.init_std);
  Matrix rows(config.vocab_size, config.dim);
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.cols(); ++j) rows(i, j) = normal(rng);
  return EmbeddingTable(std::move(tokens), std::move(rows));
}

}  // namespace crossinit
