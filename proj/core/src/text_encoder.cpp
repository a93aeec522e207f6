#include "crossinit/text_encoder.hpp"

#include <cmath>
#include <fstream>

#include "detail/format.hpp"

namespace crossinit {

namespace {

double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

Vector concatenated(const ConceptEmbedding& c) {
  const Matrix m = c.as_matrix();
  return Eigen::Map<const Vector>(m.data(), m.size());
}

}  // namespace

std::vector<Matrix> TextEncoder::hidden_states(const Matrix& inputs) const {
  return {inputs, encode(inputs)};
}

ConditioningVector::ConditioningVector(Matrix vectors) : vectors_(std::move(vectors)) {
  if (vectors_.rows() < 1 || vectors_.cols() < 1) throw ShapeMismatch("conditioning vector is empty");
}

ConditioningVector encode(const std::vector<EmbeddingVector>& sequence, const TextEncoder& encoder) {
  if (sequence.empty()) throw ShapeMismatch("cannot encode an empty sequence");
  Matrix inputs(static_cast<Eigen::Index>(sequence.size()), encoder.dim());
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    if (sequence[i].dim() != encoder.dim())
      throw DimensionMismatch("input dim " + std::to_string(sequence[i].dim()) + " != encoder dim " +
                              std::to_string(encoder.dim()));
    inputs.row(static_cast<Eigen::Index>(i)) = sequence[i].values().transpose();
  }
  return ConditioningVector(encoder.encode(inputs));
}

SplicedPrompt splice_concept(const PromptTemplate& tmpl, const ConceptEmbedding& embedding,
                             const EmbeddingTable& table) {
  const PromptTemplate expanded = tmpl.has_concept_marker() ? tmpl.expand(embedding.slot_names()) : tmpl;
  if (expanded.slot_count() != embedding.k())
    throw SlotCountMismatch("template '" + tmpl.source() + "' has " + std::to_string(expanded.slot_count()) +
                            " slots but the concept has " + std::to_string(embedding.k()) + " tokens");
  if (embedding.dim() != table.dim())
    throw DimensionMismatch("concept dim " + std::to_string(embedding.dim()) + " != embedding table dim " +
                            std::to_string(table.dim()));
  const TokenizedPrompt tok = tokenize_prompt(expanded, table);
  SplicedPrompt out;
  out.inputs.resize(static_cast<Eigen::Index>(tok.ids.size()), table.dim());
  for (std::size_t i = 0; i < tok.ids.size(); ++i)
    out.inputs.row(static_cast<Eigen::Index>(i)) = table.rows().row(tok.ids[i]);
  for (int s = 0; s < embedding.k(); ++s)
    out.inputs.row(tok.slot_positions[s]) = embedding.vector(s).values().transpose();
  out.slot_positions = tok.slot_positions;
  return out;
}

namespace {

void check_fits(const SplicedPrompt& sp, const TextEncoder& encoder) {
  if (sp.inputs.cols() != encoder.dim())
    throw DimensionMismatch("prompt dim " + std::to_string(sp.inputs.cols()) + " != encoder dim " +
                            std::to_string(encoder.dim()));
  if (sp.inputs.rows() > encoder.max_positions())
    throw ShapeMismatch("prompt has " + std::to_string(sp.inputs.rows()) + " tokens; encoder accepts at most " +
                        std::to_string(encoder.max_positions()));
}

}  // namespace

ConditioningVector assemble_conditioning(const PromptTemplate& tmpl, const ConceptEmbedding& embedding,
                                         const EmbeddingTable& table, const TextEncoder& encoder) {
  const SplicedPrompt sp = splice_concept(tmpl, embedding, table);
  check_fits(sp, encoder);
  return ConditioningVector(encoder.encode(sp.inputs));
}

Matrix encode_at_slots(const ConceptEmbedding& embedding, const PromptTemplate& tmpl,
                       const EmbeddingTable& table, const TextEncoder& encoder) {
  const SplicedPrompt sp = splice_concept(tmpl, embedding, table);
  check_fits(sp, encoder);
  const Matrix out = encoder.encode(sp.inputs);
  Matrix rows(embedding.k(), embedding.dim());
  for (int s = 0; s < embedding.k(); ++s) rows.row(s) = out.row(sp.slot_positions[s]);
  return rows;
}

ConceptEmbedding cross_initialize(const ConceptEmbedding& mean_concept, const TextEncoder& encoder,
                                  const PromptTemplate& tmpl, const EmbeddingTable& table) {
  if (mean_concept.init_strategy() != InitStrategy::raw_mean)
    throw InvalidConfig("cross_initialize expects a raw_mean concept, got " +
                        to_string(mean_concept.init_strategy()));
  ConceptEmbedding out =
      mean_concept.with_values(encode_at_slots(mean_concept, tmpl, table, encoder)).with_strategy(InitStrategy::cross);
  out.metadata()["init_template"] = tmpl.source();
  return out;
}

std::vector<ConceptEmbedding> repeated_encoding_trace(const ConceptEmbedding& v, const TextEncoder& encoder,
                                                      const PromptTemplate& tmpl, const EmbeddingTable& table,
                                                      int repeats) {
  if (repeats < 0) throw InvalidConfig("repeat count must be >= 0");
  std::vector<ConceptEmbedding> trace{v};
  trace.reserve(static_cast<std::size_t>(repeats) + 1);
  for (int i = 0; i < repeats; ++i)
    trace.push_back(trace.back().with_values(encode_at_slots(trace.back(), tmpl, table, encoder)));
  return trace;
}

std::vector<double> step_distances(const std::vector<ConceptEmbedding>& trace) {
  std::vector<double> out;
  for (std::size_t i = 1; i < trace.size(); ++i)
    out.push_back((trace[i].as_matrix() - trace[i - 1].as_matrix()).norm());
  return out;
}

BlockTrace block_trace(const Matrix& sequence, const TextEncoder& encoder, int position) {
  if (position < 0 || position >= sequence.rows())
    throw PositionOutOfRange("position " + std::to_string(position) + " outside sequence of length " +
                             std::to_string(sequence.rows()));
  if (sequence.cols() != encoder.dim()) throw DimensionMismatch("sequence dim does not match encoder");
  const auto states = encoder.hidden_states(sequence);
  const Vector final_state = states.back().row(position).transpose();
  BlockTrace trace;
  trace.position = position;
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::string stage = i == 0 ? "input" : i + 1 == states.size() ? "final" : "block_" + std::to_string(i - 1);
    const Vector h = states[i].row(position).transpose();
    trace.entries.push_back({std::move(stage), h.norm(), cosine(h, final_state)});
  }
  return trace;
}

void write_block_trace_csv(const BlockTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "stage,norm,cosine_to_final\n";
  for (const auto& e : trace.entries)
    out << e.stage << ',' << detail::format_double(e.norm) << ',' << detail::format_double(e.cosine_to_final)
        << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_repeated_encoding_csv(const std::vector<ConceptEmbedding>& trace, const std::filesystem::path& path) {
  if (trace.empty()) throw InvalidConfig("empty repeated-encoding trace");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "stage,norm,cosine_to_final\n";
  const Vector last = concatenated(trace.back());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const Vector v = concatenated(trace[i]);
    out << "E^" << i << ',' << detail::format_double(v.norm()) << ',' << detail::format_double(cosine(v, last))
        << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace crossinit
