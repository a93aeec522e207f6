#include "crossinit/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace crossinit {

EmbeddingVector::EmbeddingVector(Vector values) : values_(std::move(values)) {
  if (values_.size() == 0) throw InvalidEmbedding("embedding vector must have dim >= 1");
  if (!values_.allFinite()) throw InvalidEmbedding("embedding vector has non-finite entries");
}

bool EmbeddingVector::operator==(const EmbeddingVector& other) const {
  return values_.size() == other.values_.size() &&
         std::equal(values_.begin(), values_.end(), other.values_.begin());
}

std::string to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::cross: return "cross";
    case InitStrategy::super_category: return "super_category";
    case InitStrategy::raw_mean: return "raw_mean";
    case InitStrategy::direct_output: return "direct_output";
  }
  return "unknown";
}

InitStrategy parse_init_strategy(std::string_view text) {
  std::string s(text);
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "cross") return InitStrategy::cross;
  if (s == "super_category") return InitStrategy::super_category;
  if (s == "raw_mean") return InitStrategy::raw_mean;
  if (s == "direct_output") return InitStrategy::direct_output;
  throw InvalidConfig("unknown init strategy '" + std::string(text) + "'");
}

ConceptEmbedding::ConceptEmbedding(std::vector<ConceptSlot> tokens, InitStrategy strategy,
                                   nlohmann::json metadata)
    : tokens_(std::move(tokens)), strategy_(strategy), metadata_(std::move(metadata)) {
  if (tokens_.empty()) throw InvalidEmbedding("concept needs at least one token");
  std::set<std::string> seen;
  for (const auto& t : tokens_) {
    if (t.vector.dim() != tokens_.front().vector.dim())
      throw DimensionMismatch("concept slots have different dims");
    if (!seen.insert(t.slot).second) throw InvalidEmbedding("duplicate slot name '" + t.slot + "'");
  }
  if (!metadata_.is_object()) throw InvalidEmbedding("concept metadata must be a JSON object");
}

std::vector<std::string> ConceptEmbedding::slot_names() const {
  std::vector<std::string> out;
  out.reserve(tokens_.size());
  for (const auto& t : tokens_) out.push_back(t.slot);
  return out;
}

Matrix ConceptEmbedding::as_matrix() const {
  Matrix m(k(), dim());
  for (int i = 0; i < k(); ++i) m.row(i) = tokens_[i].vector.values().transpose();
  return m;
}

ConceptEmbedding ConceptEmbedding::with_values(const Matrix& rows) const {
  if (rows.rows() != k() || rows.cols() != dim())
    throw DimensionMismatch("replacement values do not match concept shape");
  std::vector<ConceptSlot> slots;
  slots.reserve(tokens_.size());
  for (int i = 0; i < k(); ++i)
    slots.push_back({tokens_[i].slot, EmbeddingVector(rows.row(i).transpose())});
  return ConceptEmbedding(std::move(slots), strategy_, metadata_);
}

ConceptEmbedding ConceptEmbedding::with_strategy(InitStrategy s) const {
  return ConceptEmbedding(tokens_, s, metadata_);
}

bool ConceptEmbedding::operator==(const ConceptEmbedding& other) const {
  return strategy_ == other.strategy_ && tokens_ == other.tokens_ && metadata_ == other.metadata_;
}

// ---------------------------------------------------------------------------

NameList::NameList(std::vector<PersonName> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw EmptyNameList("name list is empty");
  for (const auto& e : entries_)
    if (e.first.empty() || e.last.empty()) throw CorruptFile("name entry with empty first or last name");
}

NameList NameList::parse(std::istream& in) {
  std::vector<PersonName> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string first, last, extra;
    if (!(ss >> first)) continue;
    if (first.front() == '#') continue;
    if (!(ss >> last) || (ss >> extra))
      throw CorruptFile("names line " + std::to_string(lineno) + ": expected \"First Last\"");
    entries.push_back({first, last});
  }
  if (entries.empty()) throw EmptyNameList("name list contains no entries");
  return NameList(std::move(entries));
}

NameList NameList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open names file " + path.string());
  return parse(in);
}

// ---------------------------------------------------------------------------

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace

std::vector<std::string> WhitespaceTokenizer::words(std::string_view text) const {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(lower(cur));
    cur.clear();
  };
  for (char ch : text) {
    auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u) || ch == ',' || ch == '.' || ch == ';' || ch == ':' || ch == '!' || ch == '?')
      flush();
    else
      cur.push_back(ch);
  }
  flush();
  return out;
}

std::vector<std::string> WhitespaceTokenizer::subtokens(std::string_view word) const {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : word) {
    if (ch == '-' || ch == '\'') {
      if (!cur.empty()) out.push_back(lower(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(lower(cur));
  return out;
}

EmbeddingTable::EmbeddingTable(std::vector<std::string> tokens, Matrix rows,
                               std::shared_ptr<const Tokenizer> tokenizer)
    : tokens_(std::move(tokens)), rows_(std::move(rows)), tokenizer_(std::move(tokenizer)) {
  if (static_cast<Eigen::Index>(tokens_.size()) != rows_.rows())
    throw DimensionMismatch("embedding table: token count does not match row count");
  if (rows_.cols() < 1) throw DimensionMismatch("embedding table: dim must be >= 1");
  if (!rows_.allFinite()) throw InvalidEmbedding("embedding table has non-finite entries");
  if (!tokenizer_) throw InvalidConfig("embedding table needs a tokenizer");
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i)
    if (!index_.emplace(tokens_[i], i).second)
      throw InvalidConfig("embedding table: duplicate token '" + tokens_[i] + "'");
  auto special = [&](std::string_view s) {
    auto id = id_of(s);
    if (!id) throw InvalidConfig("embedding table lacks special token " + std::string(s));
    return *id;
  };
  bos_ = special(SpecialTokens::bos);
  eos_ = special(SpecialTokens::eos);
  pad_ = special(SpecialTokens::pad);
  unk_ = special(SpecialTokens::unk);
}

std::optional<int> EmbeddingTable::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> EmbeddingTable::encode_words(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : tokenizer_->words(text)) {
    if (auto id = id_of(w)) {
      ids.push_back(*id);
      continue;
    }
    auto parts = tokenizer_->subtokens(w);
    if (parts.empty()) continue;
    for (const auto& p : parts) ids.push_back(id_of(p).value_or(unk_));
  }
  return ids;
}

EmbeddingVector EmbeddingTable::row(int id) const {
  if (id < 0 || id >= vocab_size()) throw UnknownToken("token id out of range: " + std::to_string(id));
  return EmbeddingVector(rows_.row(id).transpose());
}

EmbeddingVector lookup_embedding(std::string_view token, const EmbeddingTable& table) {
  if (auto id = table.id_of(token)) return table.row(*id);
  auto parts = table.tokenizer().subtokens(token);
  if (parts.empty()) throw UnknownToken("empty token");
  if (parts.size() == 1) {
    if (auto id = table.id_of(parts.front())) return table.row(*id);
    throw UnknownToken("token '" + std::string(token) + "' is not in the vocabulary");
  }
  spdlog::warn("'{}' splits into {} subtokens; using the first ('{}')", token, parts.size(),
               parts.front());
  if (auto id = table.id_of(parts.front())) return table.row(*id);
  throw UnknownToken("first subtoken '" + parts.front() + "' of '" + std::string(token) +
                     "' is not in the vocabulary");
}

namespace {

// Sums each coordinate in sorted order so the mean is bit-identical under
// any permutation of the names.
Vector sorted_column_mean(std::vector<Vector> rows) {
  const auto dim = rows.front().size();
  Vector out(dim);
  std::vector<double> column(rows.size());
  for (Eigen::Index j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < rows.size(); ++i) column[i] = rows[i][j];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double x : column) sum += x;
    out[j] = sum / static_cast<double>(rows.size());
  }
  return out;
}

}  // namespace

ConceptEmbedding mean_name_embedding(const NameList& names, const EmbeddingTable& table) {
  if (names.size() == 0) throw EmptyNameList("name list is empty");
  std::vector<Vector> first, last;
  for (const auto& n : names.entries()) {
    first.push_back(lookup_embedding(n.first, table).values());
    last.push_back(lookup_embedding(n.last, table).values());
  }
  nlohmann::json meta = {{"name_count", names.size()}};
  return ConceptEmbedding({{"f", EmbeddingVector(sorted_column_mean(std::move(first)))},
                           {"l", EmbeddingVector(sorted_column_mean(std::move(last)))}},
                          InitStrategy::raw_mean, std::move(meta));
}

// ---------------------------------------------------------------------------

nlohmann::json concept_to_json(const ConceptEmbedding& embedding) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : embedding.tokens()) {
    const auto& v = t.vector.values();
    tokens.push_back({{"slot", t.slot}, {"values", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  return {{"version", kConceptSchemaVersion},
          {"dim", embedding.dim()},
          {"init_strategy", to_string(embedding.init_strategy())},
          {"tokens", std::move(tokens)},
          {"metadata", embedding.metadata()}};
}

ConceptEmbedding concept_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || !j.contains("version")) throw CorruptFile("concept file: missing version");
    const int version = j.at("version").get<int>();
    if (version != kConceptSchemaVersion)
      throw SchemaVersionMismatch("concept file version " + std::to_string(version) +
                                  " is not supported (expected " +
                                  std::to_string(kConceptSchemaVersion) + ")");
    const int dim = j.at("dim").get<int>();
    if (dim < 1) throw CorruptFile("concept file: dim must be >= 1");
    const auto strategy = parse_init_strategy(j.at("init_strategy").get<std::string>());
    std::vector<ConceptSlot> slots;
    for (const auto& t : j.at("tokens")) {
      const auto values = t.at("values").get<std::vector<double>>();
      if (static_cast<int>(values.size()) != dim)
        throw DimensionMismatch("concept file: slot '" + t.at("slot").get<std::string>() + "' has " +
                                std::to_string(values.size()) + " values, header says " +
                                std::to_string(dim));
      slots.push_back({t.at("slot").get<std::string>(),
                       EmbeddingVector(Eigen::Map<const Vector>(values.data(), dim))});
    }
    if (slots.empty()) throw CorruptFile("concept file: no tokens");
    return ConceptEmbedding(std::move(slots), strategy,
                            j.contains("metadata") ? j.at("metadata") : nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(std::string("concept file: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw CorruptFile(std::string("concept file: ") + e.what());
  } catch (const InvalidEmbedding& e) {
    throw CorruptFile(std::string("concept file: ") + e.what());
  }
}

void save_concept(const ConceptEmbedding& embedding, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write concept file " + path.string());
  out << concept_to_json(embedding).dump(2) << '\n';
  if (!out) throw IoError("failed writing concept file " + path.string());
}

ConceptEmbedding load_concept(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open concept file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("concept file " + path.string() + ": " + e.what());
  }
  return concept_from_json(j);
}

}  // namespace crossinit
