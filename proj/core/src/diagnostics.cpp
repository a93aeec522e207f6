#include "crossinit/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "detail/format.hpp"

namespace crossinit {

Geometry geometry(const Vector& v, const Vector& ref) {
  if (v.size() != ref.size()) throw DimensionMismatch("geometry: vectors have different dims");
  const double ref_norm = ref.norm();
  if (ref_norm == 0.0) throw ZeroReference("geometry: reference vector is zero");
  Geometry g;
  g.norm = v.norm();
  g.norm_ratio = g.norm / ref_norm;
  if (g.norm == 0.0) {
    g.zero_vector = true;
    g.cosine = 0.0;
  } else {
    g.cosine = std::clamp(v.dot(ref) / (g.norm * ref_norm), -1.0, 1.0);
  }
  return g;
}

Geometry geometry(const EmbeddingVector& v, const EmbeddingVector& ref) { return geometry(v.values(), ref.values()); }

double angular_deviation(double cosine) { return std::acos(std::clamp(cosine, -1.0, 1.0)); }

void TrajectoryRecord::append(TrajectoryPoint point) {
  if (!points_.empty() && point.step <= points_.back().step)
    throw NonMonotonicStep("trajectory step " + std::to_string(point.step) + " does not follow step " +
                           std::to_string(points_.back().step));
  if (!slot_names_.empty() && point.per_slot.size() != slot_names_.size())
    throw ShapeMismatch("trajectory point has the wrong number of slots");
  points_.push_back(std::move(point));
}

namespace {

SlotGeometry slot_geometry(const Vector& v, const Vector& init, const Vector& encoded) {
  const Geometry to_init = geometry(v, init);
  const Geometry to_enc = geometry(v, encoded);
  return {to_init.norm, to_init.norm_ratio, to_init.cosine, to_enc.cosine};
}

Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

}  // namespace

void record_step(TrajectoryRecord& record, int step, const StepLosses& losses, const ConceptEmbedding& current,
                 const ConceptEmbedding& v_init, const TextEncoder& encoder, const PromptTemplate& tmpl,
                 const EmbeddingTable& table) {
  if (current.k() != v_init.k() || current.dim() != v_init.dim())
    throw ShapeMismatch("current concept and v_init differ in shape");
  if (!record.empty() && step <= record.back().step)
    throw NonMonotonicStep("trajectory step " + std::to_string(step) + " does not follow step " +
                           std::to_string(record.back().step));
  const Matrix encoded = encode_at_slots(current, tmpl, table, encoder);
  const Matrix cur = current.as_matrix();
  const Matrix init = v_init.as_matrix();
  TrajectoryPoint p;
  p.step = step;
  p.losses = losses;
  for (int s = 0; s < current.k(); ++s)
    p.per_slot.push_back(slot_geometry(cur.row(s).transpose(), init.row(s).transpose(), encoded.row(s).transpose()));
  p.concatenated = slot_geometry(flatten(cur), flatten(init), flatten(encoded));
  record.append(std::move(p));
}

namespace {

constexpr const char* kHeader = "step,total_loss,diffusion_loss,reg_loss,slot,norm,norm_ratio,cos_init,cos_enc";

void write_row(std::ostream& out, const TrajectoryPoint& p, const std::string& slot, const SlotGeometry& g) {
  using detail::format_double;
  out << p.step << ',' << format_double(p.losses.total) << ',' << format_double(p.losses.diffusion) << ','
      << format_double(p.losses.reg) << ',' << slot << ',' << format_double(g.norm) << ','
      << format_double(g.norm_ratio_to_init) << ',' << format_double(g.cosine_to_init) << ','
      << format_double(g.cosine_to_encoder_output) << '\n';
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

void export_trajectory(const TrajectoryRecord& record, const std::filesystem::path& path) {
  if (record.empty()) throw InvalidConfig("cannot export an empty trajectory");
  auto out = open_for_write(path);
  out << kHeader << '\n';
  for (const auto& p : record.points())
    for (std::size_t s = 0; s < p.per_slot.size(); ++s) {
      const std::string slot = s < record.slot_names().size() ? record.slot_names()[s] : std::to_string(s);
      write_row(out, p, slot, p.per_slot[s]);
    }
  if (!out) throw IoError("failed writing " + path.string());
}

void export_trajectory_concatenated(const TrajectoryRecord& record, const std::filesystem::path& path) {
  if (record.empty()) throw InvalidConfig("cannot export an empty trajectory");
  auto out = open_for_write(path);
  out << kHeader << '\n';
  for (const auto& p : record.points()) write_row(out, p, "concat", p.concatenated);
  if (!out) throw IoError("failed writing " + path.string());
}

TrajectoryRecord parse_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw CorruptFile("unexpected trajectory CSV header");

  std::vector<std::string> slots;
  std::vector<TrajectoryPoint> points;
  bool slots_complete = false;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw CorruptFile("trajectory CSV line " + std::to_string(lineno) + ": expected 9 cells");
    try {
      const int step = std::stoi(cells[0]);
      const StepLosses losses{detail::parse_double(cells[1]), detail::parse_double(cells[2]),
                              detail::parse_double(cells[3])};
      const SlotGeometry g{detail::parse_double(cells[5]), detail::parse_double(cells[6]),
                           detail::parse_double(cells[7]), detail::parse_double(cells[8])};
      if (points.empty() || points.back().step != step) {
        if (!points.empty()) slots_complete = true;
        points.push_back({step, losses, {}, {}});
      }
      auto& p = points.back();
      if (!slots_complete) slots.push_back(cells[4]);
      else if (p.per_slot.size() >= slots.size() || slots[p.per_slot.size()] != cells[4])
        throw CorruptFile("trajectory CSV line " + std::to_string(lineno) + ": unexpected slot");
      p.per_slot.push_back(g);
    } catch (const std::invalid_argument& e) {
      throw CorruptFile("trajectory CSV line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::out_of_range& e) {
      throw CorruptFile("trajectory CSV line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  TrajectoryRecord record(slots);
  for (auto& p : points) record.append(std::move(p));
  return record;
}

}  // namespace crossinit
