#pragma once

// Synthetic two-subject relation videos with exact masks, a rule-based relation
// classifier over subject trajectories, the temporal-consistency metric, and
// the on-disk dataset layout.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rlt/masks.hpp"
#include "rlt/tensor.hpp"

namespace rlt {

enum class Relation { approach, separate, orbit, follow, collide };
enum class ShapeKind { circle, square, triangle, cross };

inline constexpr std::array<Relation, 5> kAllRelations = {
    Relation::approach, Relation::separate, Relation::orbit, Relation::follow, Relation::collide};
inline constexpr std::array<ShapeKind, 4> kAllShapes = {ShapeKind::circle, ShapeKind::square,
                                                        ShapeKind::triangle, ShapeKind::cross};

std::string_view to_string(Relation r);
std::string_view to_string(ShapeKind s);
// SpecError listing the valid names on failure.
Relation relation_from_string(std::string_view s);
ShapeKind shape_from_string(std::string_view s);
std::string relation_names();

using Point = std::array<double, 2>;  // (x, y) in pixels

struct RelationSpec {
  Relation relation = Relation::approach;
  ShapeKind shape1 = ShapeKind::circle;
  ShapeKind shape2 = ShapeKind::square;
  double radius = 3.0;
  // Linear motion (approach, separate, follow, collide): center = start + k * velocity.
  Point start1{0, 0}, start2{0, 0};
  Point velocity1{0, 0}, velocity2{0, 0};
  // Orbit: subject 2 circles subject 1 (which stays at start1).
  double orbit_radius = 0.0;
  double orbit_start_angle = 0.0;
  double orbit_sweep = 0.0;  // total signed angle over the clip
  double intensity1 = 1.0;
  double intensity2 = 0.7;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static RelationSpec from_json(const nlohmann::json& j);
};

// Subject centers per frame, after rounding to the pixel grid.
std::vector<std::array<Point, 2>> trajectory(const RelationSpec& spec, std::size_t frames);

// Draws trajectory parameters for `relation` from `seed` that fit the frame.
RelationSpec random_spec(Relation relation, ShapeKind shape1, ShapeKind shape2, std::uint64_t seed,
                         std::size_t frames, std::size_t height, std::size_t width);
RelationSpec random_spec(Relation relation, std::uint64_t seed, std::size_t frames,
                         std::size_t height, std::size_t width);

struct DatasetEntry {
  Tensor video;  // [F, H, W, 1] in [0, 1]
  MaskSet masks; // pixel masks; latent masks are derived per model geometry
  std::vector<int> prompt;
  Relation relation = Relation::approach;
  RelationSpec spec;
};

std::vector<int> relation_prompt(ShapeKind s1, Relation r, ShapeKind s2);

// Deterministic given spec. Throws SpecError if a subject leaves the frame or
// both subjects start at the same position.
DatasetEntry gen_video(const RelationSpec& spec, std::size_t frames, std::size_t height,
                       std::size_t width);

struct OracleOptions {
  double threshold = 0.5;
  std::size_t min_area = 3;
  double detect_fraction = 0.8;
  double kendall_threshold = 0.6;
  double orbit_distance_cv = 0.1;
  double orbit_min_sweep = 1.5707963267948966;
  double follow_offset_cv = 0.15;
  double follow_min_speed = 0.5;  // pixels per frame of the pair's mean position
};

struct TrajectoryAnalysis {
  std::vector<double> distances;           // frames with two components
  std::vector<std::array<Point, 2>> centers;
  std::size_t two_component_frames = 0;
  std::size_t merged_tail = 0;             // trailing single-component frames
  double kendall_tau = 0.0;
  double distance_cv = 0.0;
  double angular_sweep = 0.0;
  double offset_cv = 0.0;
  double mean_speed = 0.0;
};

TrajectoryAnalysis analyze_trajectory(const Tensor& video, const OracleOptions& opt = {});
// nullopt means "unknown".
std::optional<Relation> relation_oracle(const Tensor& video, const OracleOptions& opt = {});
std::optional<Relation> relation_oracle(const DatasetEntry& entry, const OracleOptions& opt = {});

// Kendall tau-b of `series` against its index; 0 when undefined. Differences
// within 1e-9 of the largest magnitude are ties.
double kendall_tau(std::span<const double> series);

// Mean cosine similarity of consecutive flattened frames of [F, ...].
double temporal_consistency(const Tensor& video);

void write_dataset(std::span<const DatasetEntry> entries, const std::filesystem::path& dir);
std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir);

// Every *.ntv file under `dir` (recursively) that holds a "video" tensor,
// sorted by path. Dataset entries qualify through their video.ntv.
std::vector<std::pair<std::filesystem::path, Tensor>> read_videos(const std::filesystem::path& dir);
void write_video(const std::filesystem::path& path, const Tensor& video);

}  // namespace rlt
