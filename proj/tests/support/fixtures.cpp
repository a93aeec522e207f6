#include "fixtures.hpp"

#include <sstream>

#include "crossinit/defaults.hpp"

namespace fixture {

namespace fs = std::filesystem;
using namespace crossinit;

TempDir::TempDir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  path_ = fs::temp_directory_path() / ("crossinit_" + tag + "_" + std::to_string(rng()));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

NameList default_names() {
  std::istringstream in{std::string(defaults::name_list_text())};
  return NameList::parse(in);
}

NameList five_names() {
  const NameList all = default_names();
  return NameList(std::vector<PersonName>{all[0], all[3], all[7], all[12], all[18]});
}

Backend identity_backend() {
  Backend b = make_toy_backend();
  b.name = "identity";
  b.text_encoder = std::make_shared<const IdentityEncoder>(b.table->dim());
  return b;
}

namespace {

constexpr int kWideDim = 1024;
constexpr int kWideNames = 691;

}  // namespace

NameList wide_names() {
  std::vector<PersonName> names;
  for (int i = 0; i < kWideNames; ++i) names.push_back({"Name" + std::to_string(i), "Surname" + std::to_string(i)});
  return NameList(std::move(names));
}

Backend wide_backend() {
  static const Backend cached = [] {
    EncoderConfig enc;
    enc.dim = kWideDim;
    enc.num_blocks = 1;
    enc.num_heads = 8;
    enc.mlp_ratio = 1.0;
    enc.seed = 11;
    enc.max_positions = 16;

    std::vector<std::string> tokens = {"<bos>", "<eos>", "<pad>", "<unk>", "a", "photo", "of", "person"};
    for (int i = 0; i < kWideNames; ++i) {
      tokens.push_back("name" + std::to_string(i));
      tokens.push_back("surname" + std::to_string(i));
    }
    std::mt19937_64 rng(enc.seed * 2);
    std::normal_distribution<double> normal(0.0, enc.init_std);
    Matrix rows(static_cast<Eigen::Index>(tokens.size()), kWideDim);
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      for (Eigen::Index j = 0; j < rows.cols(); ++j) rows(i, j) = normal(rng);

    ToyDenoiserConfig den;
    den.cond_dim = kWideDim;
    den.seed = 11;
    Backend b;
    b.name = "wide";
    b.table = std::make_shared<const EmbeddingTable>(tokens, rows);
    b.text_encoder = std::make_shared<const ToyTextEncoder>(ToyTextEncoder::random(enc));
    b.denoiser = std::make_shared<const ToyDenoiser>(den);
    b.latent_encoder = std::make_shared<const ToyLatentEncoder>(den.latent_dim, 11);
    b.schedule = std::make_shared<const NoiseSchedule>(NoiseSchedule::toy_default());
    b.validate();
    return b;
  }();
  return cached;
}

void register_wide_adapter() {
  register_backend_adapter("wide", [](const nlohmann::json&) { return wide_backend(); });
}

ConceptEmbedding random_concept(std::mt19937_64& rng, int k, int dim, InitStrategy s) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ConceptSlot> slots;
  for (int i = 0; i < k; ++i) {
    Vector v(dim);
    for (int j = 0; j < dim; ++j) v[j] = normal(rng);
    slots.push_back({k == 2 ? (i == 0 ? "f" : "l") : "t" + std::to_string(i), EmbeddingVector(v)});
  }
  return ConceptEmbedding(std::move(slots), s, {{"fixture", true}});
}

InversionSetup toy_setup() {
  InversionSetup s;
  s.images = {synthetic_face()};
  s.names = default_names();
  for (const auto& t : defaults::training_templates()) s.templates.push_back(PromptTemplate::parse(t));
  s.init_template = PromptTemplate::parse(defaults::kInitTemplate);
  s.super_tokens = defaults::super_category_tokens();
  return s;
}

}  // namespace fixture
