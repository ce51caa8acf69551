#include "rlt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <random>

#include "rlt/errors.hpp"
#include "rlt/log.hpp"
#include "rlt/tensor_io.hpp"
#include "rlt/vocab.hpp"

namespace rlt {

namespace {

constexpr std::array<std::string_view, 5> kRelationNames = {"approach", "separate", "orbit",
                                                            "follow", "collide"};
constexpr std::array<std::string_view, 4> kShapeNames = {"circle", "square", "triangle", "cross"};

int rand_int(Rng& rng, int lo, int hi) {
  if (hi < lo) throw SpecError("frame too small for the requested relation");
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

bool inside_shape(ShapeKind s, int dx, int dy, int r) {
  switch (s) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: {
      const int half = std::max(1, static_cast<int>(std::lround(0.8 * r)));
      return std::abs(dx) <= half && std::abs(dy) <= half;
    }
    case ShapeKind::triangle:
      return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
    case ShapeKind::cross:
      return (std::abs(dx) <= 1 && std::abs(dy) <= r) || (std::abs(dy) <= 1 && std::abs(dx) <= r);
  }
  return false;
}

// True when the two subjects' pixels are 8-adjacent or overlap in any frame.
bool footprints_touch(const RelationSpec& spec, std::size_t frames);
// Largest relative deviation of the footprint-centroid distance from its mean.
double centroid_distance_spread(const RelationSpec& spec, std::size_t frames);

}  // namespace

std::string_view to_string(Relation r) { return kRelationNames[static_cast<std::size_t>(r)]; }
std::string_view to_string(ShapeKind s) { return kShapeNames[static_cast<std::size_t>(s)]; }

std::string relation_names() {
  std::string out;
  for (auto n : kRelationNames) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

Relation relation_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kRelationNames.size(); ++i)
    if (kRelationNames[i] == s) return static_cast<Relation>(i);
  throw SpecError("unknown relation '" + std::string(s) + "'; valid: " + relation_names());
}

ShapeKind shape_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i)
    if (kShapeNames[i] == s) return static_cast<ShapeKind>(i);
  std::string valid;
  for (auto n : kShapeNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw SpecError("unknown shape '" + std::string(s) + "'; valid: " + valid);
}

// --- spec ------------------------------------------------------------------

nlohmann::json RelationSpec::to_json() const {
  return {{"relation", to_string(relation)},
          {"shape1", to_string(shape1)},
          {"shape2", to_string(shape2)},
          {"radius", radius},
          {"start1", start1},
          {"start2", start2},
          {"velocity1", velocity1},
          {"velocity2", velocity2},
          {"orbit_radius", orbit_radius},
          {"orbit_start_angle", orbit_start_angle},
          {"orbit_sweep", orbit_sweep},
          {"intensity1", intensity1},
          {"intensity2", intensity2},
          {"seed", seed}};
}

RelationSpec RelationSpec::from_json(const nlohmann::json& j) {
  try {
    RelationSpec s;
    s.relation = relation_from_string(j.at("relation").get<std::string>());
    s.shape1 = shape_from_string(j.at("shape1").get<std::string>());
    s.shape2 = shape_from_string(j.at("shape2").get<std::string>());
    s.radius = j.at("radius").get<double>();
    s.start1 = j.at("start1").get<Point>();
    s.start2 = j.at("start2").get<Point>();
    s.velocity1 = j.at("velocity1").get<Point>();
    s.velocity2 = j.at("velocity2").get<Point>();
    s.orbit_radius = j.at("orbit_radius").get<double>();
    s.orbit_start_angle = j.at("orbit_start_angle").get<double>();
    s.orbit_sweep = j.at("orbit_sweep").get<double>();
    s.intensity1 = j.at("intensity1").get<double>();
    s.intensity2 = j.at("intensity2").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("relation spec: ") + e.what());
  }
}

std::vector<std::array<Point, 2>> trajectory(const RelationSpec& spec, std::size_t frames) {
  std::vector<std::array<Point, 2>> out(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const double kk = static_cast<double>(k);
    Point a, b;
    if (spec.relation == Relation::orbit) {
      a = spec.start1;
      const double frac = frames > 1 ? kk / static_cast<double>(frames - 1) : 0.0;
      const double angle = spec.orbit_start_angle + spec.orbit_sweep * frac;
      b = {a[0] + spec.orbit_radius * std::cos(angle), a[1] + spec.orbit_radius * std::sin(angle)};
    } else {
      a = {spec.start1[0] + kk * spec.velocity1[0], spec.start1[1] + kk * spec.velocity1[1]};
      b = {spec.start2[0] + kk * spec.velocity2[0], spec.start2[1] + kk * spec.velocity2[1]};
    }
    for (auto* p : {&a, &b}) {
      (*p)[0] = std::round((*p)[0]);
      (*p)[1] = std::round((*p)[1]);
    }
    out[k] = {a, b};
  }
  return out;
}

RelationSpec random_spec(Relation relation, std::uint64_t seed, std::size_t frames,
                         std::size_t height, std::size_t width) {
  Rng rng(seed ^ 0x5eedf00dULL);
  const int s1 = rand_int(rng, 0, 3);
  int s2 = rand_int(rng, 0, 2);
  if (s2 >= s1) ++s2;
  return random_spec(relation, static_cast<ShapeKind>(s1), static_cast<ShapeKind>(s2), seed, frames,
                     height, width);
}

RelationSpec random_spec(Relation relation, ShapeKind shape1, ShapeKind shape2, std::uint64_t seed,
                         std::size_t frames, std::size_t height, std::size_t width) {
  if (frames < 4) throw SpecError("relation videos need at least 4 frames");
  Rng rng(seed);
  RelationSpec s;
  s.relation = relation;
  s.shape1 = shape1;
  s.shape2 = shape2;
  s.seed = seed;
  const int r = static_cast<int>(s.radius);
  const int lo = r, hi_x = static_cast<int>(width) - 1 - r, hi_y = static_cast<int>(height) - 1 - r;
  const int span_x = hi_x - lo;
  const int min_gap = 2 * r + 2;  // centers this far apart never touch
  const int steps = static_cast<int>(frames) - 1;

  auto place_row = [&](int dy_max) {
    const int dy = rand_int(rng, -dy_max, dy_max);
    const int y1 = rand_int(rng, lo + std::max(0, -dy), hi_y - std::max(0, dy));
    return std::pair{y1, y1 + dy};
  };

  switch (relation) {
    case Relation::approach:
    case Relation::separate: {
      int speed = 2;
      while (speed > 0 && min_gap + speed * steps > span_x) --speed;
      if (speed == 0) throw SpecError("frame too narrow for " + std::string(to_string(relation)));
      const int extra = rand_int(rng, 0, std::min(2, span_x - min_gap - speed * steps));
      const int near_gap = min_gap + extra, far_gap = near_gap + speed * steps;
      const int v1 = rand_int(rng, 0, speed), v2 = speed - v1;
      const auto [y1, y2] = place_row(2);
      if (relation == Relation::approach) {
        const int x1 = rand_int(rng, lo, hi_x - far_gap);
        s.start1 = {double(x1), double(y1)};
        s.start2 = {double(x1 + far_gap), double(y2)};
        s.velocity1 = {double(v1), 0};
        s.velocity2 = {double(-v2), 0};
      } else {
        const int x1_end = rand_int(rng, lo, hi_x - far_gap);
        s.start1 = {double(x1_end + v1 * steps), double(y1)};
        s.start2 = {double(x1_end + v1 * steps + near_gap), double(y2)};
        s.velocity1 = {double(-v1), 0};
        s.velocity2 = {double(v2), 0};
      }
      break;
    }
    case Relation::collide: {
      // Separate for the first frames, overlapping over the final quarter.
      const int contact = static_cast<int>(frames) - std::max(1, static_cast<int>(frames) / 4);
      const int speed = min_gap - (2 * r - 1);
      const int far_gap = min_gap + speed * (contact - 1);
      if (far_gap > span_x || far_gap - speed * steps < -2 * r) {
        throw SpecError("frame too narrow for collide");
      }
      const int v1 = rand_int(rng, 1, speed - 1), v2 = speed - v1;
      const int y = rand_int(rng, lo, hi_y);
      const int x1 = rand_int(rng, lo, hi_x - far_gap);
      s.start1 = {double(x1), double(y)};
      s.start2 = {double(x1 + far_gap), double(y)};
      s.velocity1 = {double(v1), 0};
      s.velocity2 = {double(-v2), 0};
      break;
    }
    case Relation::orbit: {
      // Diagonal placements can bring shape corners into contact; redraw those.
      for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw SpecError("no contact-free orbit fits the frame");
        const int cx = static_cast<int>(width) / 2 + rand_int(rng, -1, 1);
        const int cy = static_cast<int>(height) / 2 + rand_int(rng, -1, 1);
        const int rho_hi = std::min({cx - lo, hi_x - cx, cy - lo, hi_y - cy});
        const int rho_lo = min_gap + 1;
        if (rho_hi < rho_lo) throw SpecError("frame too small for orbit");
        s.start1 = {double(cx), double(cy)};
        s.orbit_radius = rand_int(rng, rho_lo, rho_hi);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        s.orbit_start_angle = 2.0 * std::numbers::pi * u(rng);
        const double sweep = std::numbers::pi * (0.6 + 0.3 * u(rng));
        s.orbit_sweep = u(rng) < 0.5 ? sweep : -sweep;
        s.start2 = {cx + s.orbit_radius * std::cos(s.orbit_start_angle),
                    cy + s.orbit_radius * std::sin(s.orbit_start_angle)};
        if (!footprints_touch(s, frames) && centroid_distance_spread(s, frames) <= 0.05) break;
      }
      break;
    }
    case Relation::follow: {
      const int vx = rand_int(rng, 0, 1) ? 1 : -1;
      const int vy = rand_int(rng, -1, 1);
      const int gap = min_gap + rand_int(rng, 1, 3);
      const int dy = rand_int(rng, -2, 2);
      // Subject 2 trails subject 1 along the direction of travel.
      const int ox = -vx * gap, oy = dy;
      const int min_x = std::min({0, ox, vx * steps, ox + vx * steps});
      const int max_x = std::max({0, ox, vx * steps, ox + vx * steps});
      const int min_y = std::min({0, oy, vy * steps, oy + vy * steps});
      const int max_y = std::max({0, oy, vy * steps, oy + vy * steps});
      const int x1 = rand_int(rng, lo - min_x, hi_x - max_x);
      const int y1 = rand_int(rng, lo - min_y, hi_y - max_y);
      s.start1 = {double(x1), double(y1)};
      s.start2 = {double(x1 + ox), double(y1 + oy)};
      s.velocity1 = s.velocity2 = {double(vx), double(vy)};
      break;
    }
  }
  return s;
}

namespace {

bool footprints_touch(const RelationSpec& spec, std::size_t frames) {
  const int r = static_cast<int>(std::lround(spec.radius));
  const auto path = trajectory(spec, frames);
  for (const auto& c : path) {
    const int ox = static_cast<int>(c[1][0] - c[0][0]), oy = static_cast<int>(c[1][1] - c[0][1]);
    for (int ay = -r; ay <= r; ++ay)
      for (int ax = -r; ax <= r; ++ax) {
        if (!inside_shape(spec.shape1, ax, ay, r)) continue;
        for (int by = -r; by <= r; ++by)
          for (int bx = -r; bx <= r; ++bx) {
            if (!inside_shape(spec.shape2, bx, by, r)) continue;
            if (std::abs(ox + bx - ax) <= 1 && std::abs(oy + by - ay) <= 1) return true;
          }
      }
  }
  return false;
}

Point centroid_offset(ShapeKind shape, int r) {
  double sx = 0, sy = 0, n = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (inside_shape(shape, dx, dy, r)) {
        sx += dx;
        sy += dy;
        ++n;
      }
  return {sx / n, sy / n};
}

double centroid_distance_spread(const RelationSpec& spec, std::size_t frames) {
  const int r = static_cast<int>(std::lround(spec.radius));
  const Point o1 = centroid_offset(spec.shape1, r), o2 = centroid_offset(spec.shape2, r);
  std::vector<double> d;
  for (const auto& c : trajectory(spec, frames)) {
    d.push_back(std::hypot(c[1][0] + o2[0] - c[0][0] - o1[0], c[1][1] + o2[1] - c[0][1] - o1[1]));
  }
  double mean = 0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double worst = 0;
  for (double x : d) worst = std::max(worst, std::abs(x - mean) / mean);
  return worst;
}

}  // namespace

std::vector<int> relation_prompt(ShapeKind s1, Relation r, ShapeKind s2) {
  return {token_id(to_string(s1)), token_id(to_string(r)), token_id(to_string(s2))};
}

DatasetEntry gen_video(const RelationSpec& spec, std::size_t frames, std::size_t height,
                       std::size_t width) {
  if (frames < 4) throw SpecError("relation videos need at least 4 frames");
  const auto path = trajectory(spec, frames);
  const int r = static_cast<int>(std::lround(spec.radius));
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  for (std::size_t k = 0; k < frames; ++k) {
    for (const auto& p : path[k]) {
      if (p[0] - r < 0 || p[1] - r < 0 || p[0] + r > W - 1 || p[1] + r > H - 1) {
        throw SpecError("trajectory leaves the frame at frame " + std::to_string(k));
      }
    }
  }
  if (path[0][0] == path[0][1]) throw SpecError("subjects share a start position");

  const std::size_t n = frames * height * width;
  std::vector<double> video(n, 0.0), m1(n, 0.0), m2(n, 0.0);
  auto draw = [&](std::size_t k, const Point& c, ShapeKind shape, std::vector<double>& mask,
                  double intensity) {
    const int cx = static_cast<int>(c[0]), cy = static_cast<int>(c[1]);
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        if (!inside_shape(shape, dx, dy, r)) continue;
        const std::size_t idx = (k * height + static_cast<std::size_t>(cy + dy)) * width +
                                static_cast<std::size_t>(cx + dx);
        mask[idx] = 1.0;
        video[idx] = intensity;
      }
  };
  for (std::size_t k = 0; k < frames; ++k) {
    draw(k, path[k][1], spec.shape2, m2, spec.intensity2);
    draw(k, path[k][0], spec.shape1, m1, spec.intensity1);  // subject 1 on top
  }

  DatasetEntry e;
  e.video = Tensor::from({frames, height, width, 1}, std::move(video));
  e.masks.m_s1 = Tensor::from({frames, height, width}, std::move(m1));
  e.masks.m_s2 = Tensor::from({frames, height, width}, std::move(m2));
  e.masks.m_r = relation_mask(e.masks.m_s1, e.masks.m_s2);
  e.prompt = relation_prompt(spec.shape1, spec.relation, spec.shape2);
  e.relation = spec.relation;
  e.spec = spec;
  return e;
}

// --- oracle ----------------------------------------------------------------

double kendall_tau(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 2) return 0.0;
  double scale = 0.0;
  for (double v : series) scale = std::max(scale, std::abs(v));
  // Values equal up to rounding of centroid arithmetic count as ties.
  const double tol = 1e-9 * scale;
  double concordant = 0, discordant = 0, ties = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = series[j] - series[i];
      if (d > tol) ++concordant;
      else if (d < -tol) ++discordant;
      else ++ties;
    }
  const double pairs = static_cast<double>(n * (n - 1) / 2);
  const double denom = std::sqrt(pairs * (pairs - ties));
  return denom == 0.0 ? 0.0 : (concordant - discordant) / denom;
}

namespace {

struct Component {
  std::size_t area = 0;
  Point centroid{0, 0};
};

std::vector<Component> components(const Tensor& video, std::size_t frame, double threshold,
                                  std::size_t min_area) {
  const std::size_t H = video.dim(1), W = video.dim(2), C = video.dim(3);
  const auto& v = video.values();
  std::vector<char> on(H * W, 0), seen(H * W, 0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double mx = -1e300;
      for (std::size_t ch = 0; ch < C; ++ch) mx = std::max(mx, v[((frame * H + y) * W + x) * C + ch]);
      on[y * W + x] = mx > threshold;
    }
  std::vector<Component> out;
  std::queue<std::size_t> q;
  for (std::size_t start = 0; start < H * W; ++start) {
    if (!on[start] || seen[start]) continue;
    Component c;
    double sx = 0, sy = 0;
    seen[start] = 1;
    q.push(start);
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      const int py = static_cast<int>(p / W), px = static_cast<int>(p % W);
      ++c.area;
      sx += px;
      sy += py;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = py + dy, nx = px + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<int>(H) || nx >= static_cast<int>(W)) continue;
          const std::size_t np = static_cast<std::size_t>(ny) * W + static_cast<std::size_t>(nx);
          if (on[np] && !seen[np]) {
            seen[np] = 1;
            q.push(np);
          }
        }
    }
    if (c.area < min_area) continue;
    c.centroid = {sx / static_cast<double>(c.area), sy / static_cast<double>(c.area)};
    out.push_back(c);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.area > b.area; });
  return out;
}

double dist(const Point& a, const Point& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

double coefficient_of_variation(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double var = 0;
  for (double x : xs) var += (x - m) * (x - m);
  var /= static_cast<double>(xs.size());
  return m == 0.0 ? 0.0 : std::sqrt(var) / m;
}

}  // namespace

TrajectoryAnalysis analyze_trajectory(const Tensor& video, const OracleOptions& opt) {
  if (video.ndim() != 4) throw DimensionError("relation_oracle: expected [F, H, W, C] video");
  const std::size_t F = video.dim(0);
  TrajectoryAnalysis a;
  std::vector<std::size_t> counts(F);
  std::optional<std::array<Point, 2>> prev;
  std::size_t last_two = 0;
  bool any_two = false;
  for (std::size_t k = 0; k < F; ++k) {
    auto comps = components(video, k, opt.threshold, opt.min_area);
    counts[k] = std::min<std::size_t>(comps.size(), 2);
    if (comps.size() < 2) continue;
    std::array<Point, 2> c = {comps[0].centroid, comps[1].centroid};
    // Keep subject identity by nearest assignment to the previous frame.
    if (prev && dist(c[0], (*prev)[0]) + dist(c[1], (*prev)[1]) >
                    dist(c[0], (*prev)[1]) + dist(c[1], (*prev)[0])) {
      std::swap(c[0], c[1]);
    }
    prev = c;
    a.centers.push_back(c);
    a.distances.push_back(dist(c[0], c[1]));
    ++a.two_component_frames;
    last_two = k;
    any_two = true;
  }
  if (any_two) {
    for (std::size_t k = last_two + 1; k < F && counts[k] == 1; ++k) ++a.merged_tail;
    if (last_two + 1 + a.merged_tail != F) a.merged_tail = 0;
  }
  if (a.distances.empty()) return a;

  a.kendall_tau = kendall_tau(a.distances);
  a.distance_cv = coefficient_of_variation(a.distances);

  double sweep = 0.0;
  double prev_angle = 0.0;
  Point mean_off{0, 0};
  for (std::size_t i = 0; i < a.centers.size(); ++i) {
    const auto& c = a.centers[i];
    const double ang = std::atan2(c[1][1] - c[0][1], c[1][0] - c[0][0]);
    if (i > 0) {
      double d = ang - prev_angle;
      while (d > std::numbers::pi) d -= 2 * std::numbers::pi;
      while (d < -std::numbers::pi) d += 2 * std::numbers::pi;
      sweep += d;
    }
    prev_angle = ang;
    mean_off[0] += c[1][0] - c[0][0];
    mean_off[1] += c[1][1] - c[0][1];
  }
  a.angular_sweep = std::abs(sweep);
  const double n = static_cast<double>(a.centers.size());
  mean_off = {mean_off[0] / n, mean_off[1] / n};
  double spread = 0.0;
  for (const auto& c : a.centers) {
    const Point off{c[1][0] - c[0][0], c[1][1] - c[0][1]};
    spread += std::pow(off[0] - mean_off[0], 2) + std::pow(off[1] - mean_off[1], 2);
  }
  const double mnorm = std::hypot(mean_off[0], mean_off[1]);
  a.offset_cv = mnorm == 0.0 ? 1e300 : std::sqrt(spread / n) / mnorm;
  if (a.centers.size() >= 2) {
    const auto& f0 = a.centers.front();
    const auto& f1 = a.centers.back();
    const Point m0{(f0[0][0] + f0[1][0]) / 2, (f0[0][1] + f0[1][1]) / 2};
    const Point m1{(f1[0][0] + f1[1][0]) / 2, (f1[0][1] + f1[1][1]) / 2};
    a.mean_speed = dist(m0, m1) / (n - 1);
  }
  return a;
}

std::optional<Relation> relation_oracle(const Tensor& video, const OracleOptions& opt) {
  const auto a = analyze_trajectory(video, opt);
  const double F = static_cast<double>(video.dim(0));
  const double detected = static_cast<double>(a.two_component_frames + a.merged_tail);
  if (a.two_component_frames < 2 || detected < opt.detect_fraction * F) return std::nullopt;
  if (a.merged_tail > 0) {
    if (a.kendall_tau <= -opt.kendall_threshold) return Relation::collide;
    return std::nullopt;
  }
  if (a.two_component_frames < opt.detect_fraction * F) return std::nullopt;
  // Orbit first: rasterization jitter can fake a trend in an almost constant distance.
  if (a.distance_cv < opt.orbit_distance_cv && a.angular_sweep > opt.orbit_min_sweep) {
    return Relation::orbit;
  }
  if (a.kendall_tau <= -opt.kendall_threshold) return Relation::approach;
  if (a.kendall_tau >= opt.kendall_threshold) return Relation::separate;
  if (a.offset_cv < opt.follow_offset_cv && a.mean_speed >= opt.follow_min_speed) {
    return Relation::follow;
  }
  return std::nullopt;
}

std::optional<Relation> relation_oracle(const DatasetEntry& entry, const OracleOptions& opt) {
  return relation_oracle(entry.video, opt);
}

double temporal_consistency(const Tensor& video) {
  if (video.ndim() < 1 || video.dim(0) < 2) throw ContractError("temporal_consistency: need >= 2 frames");
  const std::size_t F = video.dim(0), per = video.numel() / F;
  const auto& v = video.values();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t k = 0; k + 1 < F; ++k) {
    double na = 0, nb = 0;
    for (std::size_t i = 0; i < per; ++i) {
      na += v[k * per + i] * v[k * per + i];
      nb += v[(k + 1) * per + i] * v[(k + 1) * per + i];
    }
    if (na == 0.0 || nb == 0.0) {
      warn("temporal_consistency: zero-norm frame, pair " + std::to_string(k) + " skipped");
      continue;
    }
    // cos = 1 - |a/|a| - b/|b||^2 / 2, exactly 1 for identical frames.
    const double ra = std::sqrt(na), rb = std::sqrt(nb);
    double dist2 = 0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = v[k * per + i] / ra - v[(k + 1) * per + i] / rb;
      dist2 += d * d;
    }
    total += std::clamp(1.0 - 0.5 * dist2, -1.0, 1.0);
    ++pairs;
  }
  if (pairs == 0) throw ContractError("temporal_consistency: every frame pair had a zero-norm frame");
  return total / static_cast<double>(pairs);
}

// --- dataset I/O -----------------------------------------------------------

void write_video(const std::filesystem::path& path, const Tensor& video) {
  Container c;
  c.tensors.emplace_back("video", video);
  write_container(path, c);
}

void write_dataset(std::span<const DatasetEntry> entries, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    char name[32];
    std::snprintf(name, sizeof(name), "entry_%04zu", i);
    const fs::path sub = dir / name;
    fs::create_directories(sub);
    write_video(sub / "video.ntv", e.video);
    Container masks;
    masks.tensors.emplace_back("m_s1", e.masks.m_s1);
    masks.tensors.emplace_back("m_s2", e.masks.m_s2);
    masks.tensors.emplace_back("m_r", e.masks.m_r);
    write_container(sub / "masks.ntv", masks);
    const nlohmann::json meta = {{"relation", to_string(e.relation)},
                                 {"prompt", e.prompt},
                                 {"spec", e.spec.to_json()},
                                 {"format_version", 1}};
    std::ofstream os(sub / "meta.json", std::ios::trunc);
    os << meta.dump(2) << '\n';
    if (!os) throw DatasetError("failed to write " + (sub / "meta.json").string());
  }
}

namespace {

DatasetEntry read_entry(const std::filesystem::path& sub) {
  const std::string entry = sub.filename().string();
  DatasetEntry e;
  nlohmann::json meta;
  try {
    std::ifstream is(sub / "meta.json");
    if (!is) throw DatasetError("entry " + entry + ": missing meta.json");
    meta = nlohmann::json::parse(is);
    const Container vc = read_container(sub / "video.ntv");
    const Container mc = read_container(sub / "masks.ntv");
    e.video = vc.tensor("video");
    if (mc.tensors.size() != 3) {
      throw ValidationError("entry " + entry + ": masks.ntv holds " +
                            std::to_string(mc.tensors.size()) + " masks, a two-subject relation needs 3");
    }
    e.masks.m_s1 = mc.tensor("m_s1");
    e.masks.m_s2 = mc.tensor("m_s2");
    e.masks.m_r = mc.tensor("m_r");
  } catch (const FormatError& ex) {
    throw DatasetError("entry " + entry + ": " + ex.what());
  } catch (const nlohmann::json::exception& ex) {
    throw DatasetError("entry " + entry + ": corrupt meta.json: " + ex.what());
  }

  try {
    if (meta.at("format_version").get<int>() != 1) {
      throw ValidationError("entry " + entry + ": unsupported format_version");
    }
    e.relation = relation_from_string(meta.at("relation").get<std::string>());
    e.prompt = meta.at("prompt").get<std::vector<int>>();
    e.spec = RelationSpec::from_json(meta.at("spec"));
  } catch (const SpecError& ex) {
    throw ValidationError("entry " + entry + ": " + ex.what());
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("entry " + entry + ": meta.json schema: " + ex.what());
  }
  if (e.spec.relation != e.relation) {
    throw ValidationError("entry " + entry + ": relation '" + std::string(to_string(e.relation)) +
                          "' disagrees with spec relation '" +
                          std::string(to_string(e.spec.relation)) + "'");
  }
  if (e.prompt.size() == 3 && e.prompt[1] != token_id(to_string(e.relation))) {
    throw ValidationError("entry " + entry + ": prompt relation token disagrees with relation");
  }
  if (e.video.ndim() != 4) throw ValidationError("entry " + entry + ": video must be [F, H, W, C]");
  const Shape mshape = {e.video.dim(0), e.video.dim(1), e.video.dim(2)};
  for (const Tensor* m : {&e.masks.m_s1, &e.masks.m_s2, &e.masks.m_r}) {
    if (m->shape() != mshape) throw ValidationError("entry " + entry + ": mask shape mismatch");
  }
  return e;
}

}  // namespace

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError("dataset directory " + dir.string() + " not found");
  std::vector<fs::path> subs;
  for (const auto& d : fs::directory_iterator(dir))
    if (d.is_directory()) subs.push_back(d.path());
  std::sort(subs.begin(), subs.end());
  std::vector<DatasetEntry> out;
  out.reserve(subs.size());
  for (const auto& s : subs) out.push_back(read_entry(s));
  return out;
}

std::vector<std::pair<std::filesystem::path, Tensor>> read_videos(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError("video directory " + dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& d : fs::recursive_directory_iterator(dir)) {
    if (d.is_regular_file() && d.path().extension() == ".ntv") files.push_back(d.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<fs::path, Tensor>> out;
  for (const auto& f : files) {
    Container c;
    try {
      c = read_container(f);
    } catch (const FormatError& e) {
      throw DatasetError(e.what());
    }
    if (const Tensor* v = c.find_tensor("video")) out.emplace_back(f, *v);
  }
  return out;
}

}  // namespace rlt
