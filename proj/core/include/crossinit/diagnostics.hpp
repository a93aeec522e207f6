#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "crossinit/embedding.hpp"
#include "crossinit/prompt.hpp"
#include "crossinit/text_encoder.hpp"

namespace crossinit {

struct Geometry {
  double norm = 0.0;
  double norm_ratio = 0.0;
  double cosine = 0.0;
  /// Set when v is the zero vector; cosine is then reported as 0.
  bool zero_vector = false;
};

/// (|v|, |v| / |ref|, cos(v, ref)). Throws ZeroReference if |ref| == 0.
Geometry geometry(const Vector& v, const Vector& ref);
Geometry geometry(const EmbeddingVector& v, const EmbeddingVector& ref);

struct SlotGeometry {
  double norm = 0.0;
  double norm_ratio_to_init = 0.0;
  double cosine_to_init = 0.0;
  double cosine_to_encoder_output = 0.0;

  bool operator==(const SlotGeometry&) const = default;
};

struct StepLosses {
  double total = 0.0;
  double diffusion = 0.0;
  double reg = 0.0;
};

struct TrajectoryPoint {
  int step = 0;
  StepLosses losses;
  std::vector<SlotGeometry> per_slot;
  /// Same quantities on the concatenation of all slots.
  SlotGeometry concatenated;
};

/// Per-step log of losses and embedding geometry. Steps strictly increase.
class TrajectoryRecord {
 public:
  TrajectoryRecord() = default;
  explicit TrajectoryRecord(std::vector<std::string> slot_names) : slot_names_(std::move(slot_names)) {}

  /// Throws NonMonotonicStep unless point.step exceeds the last step.
  void append(TrajectoryPoint point);

  const std::vector<std::string>& slot_names() const { return slot_names_; }
  const std::vector<TrajectoryPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const TrajectoryPoint& back() const { return points_.back(); }

 private:
  std::vector<std::string> slot_names_;
  std::vector<TrajectoryPoint> points_;
};

/// Appends a point with geometry of `current` against `v_init` and against
/// the encoder's output at the placeholder positions of `tmpl`.
void record_step(TrajectoryRecord& record, int step, const StepLosses& losses, const ConceptEmbedding& current,
                 const ConceptEmbedding& v_init, const TextEncoder& encoder, const PromptTemplate& tmpl,
                 const EmbeddingTable& table);

/// step,total_loss,diffusion_loss,reg_loss,slot,norm,norm_ratio,cos_init,cos_enc
/// One row per (step, slot); values in shortest round-trip decimal form.
void export_trajectory(const TrajectoryRecord& record, const std::filesystem::path& path);
/// Same columns with slot "concat" computed on the concatenated slots.
void export_trajectory_concatenated(const TrajectoryRecord& record, const std::filesystem::path& path);
TrajectoryRecord parse_trajectory_csv(const std::filesystem::path& path);

/// Angle in radians between v and ref, from the clamped cosine.
double angular_deviation(double cosine);

}  // namespace crossinit
