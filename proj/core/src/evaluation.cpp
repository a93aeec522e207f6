#include "crossinit/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <istream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "crossinit/backend.hpp"
#include "crossinit/defaults.hpp"
#include "crossinit/prompt.hpp"

namespace crossinit {

std::string to_string(PromptTag tag) {
  switch (tag) {
    case PromptTag::expression: return "expression";
    case PromptTag::background: return "background";
    case PromptTag::interaction: return "interaction";
    case PromptTag::style: return "style";
    case PromptTag::plain: return "plain";
  }
  return "plain";
}

PromptTag parse_prompt_tag(std::string_view text) {
  if (text == "expression") return PromptTag::expression;
  if (text == "background") return PromptTag::background;
  if (text == "interaction") return PromptTag::interaction;
  if (text == "style") return PromptTag::style;
  if (text == "plain") return PromptTag::plain;
  throw CorruptFile("unknown prompt tag '" + std::string(text) + "'");
}

namespace {

std::size_t count_markers(std::string_view s) {
  std::size_t n = 0;
  for (auto pos = s.find(kConceptMarker); pos != std::string_view::npos; pos = s.find(kConceptMarker, pos + 1)) ++n;
  return n;
}

}  // namespace

PromptSet::PromptSet(std::vector<TaggedPrompt> prompts) : prompts_(std::move(prompts)) {
  if (prompts_.empty()) throw EmptyInput("prompt set is empty");
  for (const auto& p : prompts_)
    if (count_markers(p.text) != 1)
      throw CorruptFile("prompt '" + p.text + "' must contain exactly one " + std::string(kConceptMarker));
}

PromptSet PromptSet::parse(std::istream& in) {
  std::vector<TaggedPrompt> prompts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw CorruptFile("prompts line " + std::to_string(lineno) + ": expected \"tag<TAB>prompt\"");
    prompts.push_back({parse_prompt_tag(line.substr(0, tab)), line.substr(tab + 1)});
  }
  return PromptSet(std::move(prompts));
}

PromptSet PromptSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompts file " + path.string());
  return parse(in);
}

PromptSet PromptSet::default_set() {
  std::istringstream in{std::string(defaults::prompt_set_text())};
  return parse(in);
}

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionMismatch("cosine: vectors have different dims");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double order_independent_mean(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("mean of no values");
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

IdentityScore identity_similarity(const std::vector<Image>& generated, const Image& reference,
                                  const FaceEmbedder& embedder) {
  if (generated.empty()) throw EmptyInput("no generated images to score");
  const auto ref = embedder.embed(reference);
  if (!ref) throw NoFaceDetected("no face detected in the reference image");
  IdentityScore score;
  std::vector<double> sims;
  for (const auto& img : generated) {
    const auto e = embedder.embed(img);
    if (!e) {
      ++score.skipped;
      continue;
    }
    sims.push_back(cosine_similarity(*e, *ref));
  }
  if (sims.empty()) throw EmptyAfterSkips("no face detected in any generated image");
  score.used = static_cast<int>(sims.size());
  score.mean = order_independent_mean(std::move(sims));
  return score;
}

double prompt_similarity(const std::vector<Image>& generated, std::string_view prompt,
                         const ImageTextScorer& scorer, std::string_view class_word) {
  if (generated.empty()) throw EmptyInput("no generated images to score");
  const std::string text = PromptTemplate::parse(prompt).render(class_word);
  const Vector t = scorer.embed_text(text);
  std::vector<double> sims;
  sims.reserve(generated.size());
  for (const auto& img : generated) {
    const Vector v = scorer.embed_image(img);
    if (v.size() != t.size()) throw ScorerFailure("image and text embeddings differ in dim");
    sims.push_back(cosine_similarity(v, t));
  }
  return order_independent_mean(std::move(sims));
}

EvalReport score_prompts(const PromptSet& prompts, const std::vector<std::vector<Image>>& images,
                         const Image& reference, const FaceEmbedder& face, const ImageTextScorer& scorer,
                         std::string_view class_word) {
  if (images.size() != prompts.size()) throw ShapeMismatch("one image list per prompt required");
  EvalReport report;
  std::vector<double> identities, prompt_sims;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& p = prompts.prompts()[i];
    PromptResult r;
    r.prompt = p.text;
    r.tag = p.tag;
    r.n_images = static_cast<int>(images[i].size());
    r.prompt_similarity = prompt_similarity(images[i], p.text, scorer, class_word);
    prompt_sims.push_back(r.prompt_similarity);
    if (p.tag == PromptTag::style) {
      report.excluded_from_identity.push_back(p.text);
    } else {
      try {
        const IdentityScore s = identity_similarity(images[i], reference, face);
        r.identity = s.mean;
        r.n_skipped = s.skipped;
        identities.push_back(s.mean);
      } catch (const EmptyAfterSkips&) {
        r.n_skipped = r.n_images;
        report.excluded_from_identity.push_back(p.text);
      }
    }
    report.per_prompt.push_back(std::move(r));
  }
  report.prompt_mean = order_independent_mean(std::move(prompt_sims));
  if (!identities.empty()) report.identity_mean = order_independent_mean(std::move(identities));
  return report;
}

EvalReport evaluate(const ConceptEmbedding& embedding, const PromptSet& prompts, const Image& reference,
                    const Backend& backend, const EvalOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  backend.validate();
  if (!backend.face_embedder || !backend.image_text_scorer)
    throw AdapterMissing("backend '" + backend.name + "' provides no face embedder / image-text scorer");
  if (!backend.latent_decoder) throw AdapterMissing("backend '" + backend.name + "' provides no latent decoder");
  if (options.n_per_prompt < 1) throw InvalidConfig("n_per_prompt must be >= 1");

  std::vector<std::vector<Image>> images(prompts.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < prompts.size(); i = next++) {
      try {
        const auto tmpl = PromptTemplate::parse(prompts.prompts()[i].text);
        const auto cond = concept_conditioning(embedding, tmpl, backend);
        for (int j = 0; j < options.n_per_prompt; ++j) {
          const Vector z = sample_latent(cond, *backend.denoiser, *backend.schedule, options.sample_steps,
                                         options.seed + static_cast<std::uint64_t>(j));
          images[i].push_back(decode_latent(z, backend.latent_decoder.get()));
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(prompts.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport report = score_prompts(prompts, images, reference, *backend.face_embedder, *backend.image_text_scorer,
                                    options.class_word);
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json per_prompt = nlohmann::json::array();
  for (const auto& r : report.per_prompt) {
    per_prompt.push_back({{"prompt", r.prompt},
                          {"tag", to_string(r.tag)},
                          {"identity", r.identity ? nlohmann::json(*r.identity) : nlohmann::json(nullptr)},
                          {"prompt_sim", r.prompt_similarity},
                          {"n_images", r.n_images},
                          {"n_skipped", r.n_skipped}});
  }
  return {{"version", kReportSchemaVersion},
          {"identity_mean", report.identity_mean ? nlohmann::json(*report.identity_mean) : nlohmann::json(nullptr)},
          {"identity_defined", report.identity_mean.has_value()},
          {"prompt_mean", report.prompt_mean},
          {"per_prompt", std::move(per_prompt)},
          {"excluded_from_identity", report.excluded_from_identity}};
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << report_to_json(report).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kThumb = 8;

Vector thumbnail_vector(const Image& image) {
  const Image t = to_gray_thumbnail(image, kThumb);
  return Eigen::Map<const Vector>(t.pixels.data(), static_cast<Eigen::Index>(t.pixels.size()));
}

Matrix seeded_projection(std::uint64_t seed, std::uint32_t tag, int rows, int cols) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

ToyFaceEmbedder::ToyFaceEmbedder(std::uint64_t seed, int dim)
    : projection_(seeded_projection(seed, 0xFACEu, dim, kThumb * kThumb)) {}

std::optional<Vector> ToyFaceEmbedder::embed(const Image& image) const {
  Vector x = thumbnail_vector(image);
  x.array() -= x.mean();
  if (x.squaredNorm() < 1e-12) return std::nullopt;
  return projection_ * x;
}

ToyImageTextScorer::ToyImageTextScorer(std::uint64_t seed, int dim)
    : seed_(seed), projection_(seeded_projection(seed, 0xC11Bu, dim, kThumb * kThumb)) {}

Vector ToyImageTextScorer::embed_image(const Image& image) const {
  Vector x = thumbnail_vector(image);
  x.array() -= 0.5;
  return projection_ * x;
}

Vector ToyImageTextScorer::embed_text(const std::string& text) const {
  const WhitespaceTokenizer tokenizer;
  const auto dim = projection_.rows();
  Vector sum = Vector::Zero(dim);
  for (const auto& w : tokenizer.words(text)) {
    const std::uint64_t h = fnv1a(w) ^ seed_;
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32), 0x7E47u};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < dim; ++i) sum[i] += normal(rng);
  }
  if (sum.squaredNorm() == 0.0) throw ScorerFailure("text '" + text + "' has no words to embed");
  return sum;
}

}  // namespace crossinit
