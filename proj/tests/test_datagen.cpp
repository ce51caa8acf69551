#include <doctest.h>

#include <cmath>
#include <fstream>

#include "rlt/datagen.hpp"
#include "rlt/errors.hpp"
#include "rlt/log.hpp"
#include "rlt/tensor_io.hpp"
#include "rlt/vocab.hpp"
#include "test_util.hpp"

using namespace rlt;
using rlt::testing::bitwise_equal;
using rlt::testing::TempDir;

namespace {

constexpr std::size_t F = 8, H = 32, W = 32;

double distance(const std::array<Point, 2>& c) {
  return std::hypot(c[0][0] - c[1][0], c[0][1] - c[1][1]);
}

DatasetEntry entry(Relation r, std::uint64_t seed) { return gen_video(random_spec(r, seed, F, H, W), F, H, W); }

}  // namespace

TEST_CASE("approach distances strictly decrease, separate strictly increase") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto a = trajectory(random_spec(Relation::approach, seed, F, H, W), F);
    const auto s = trajectory(random_spec(Relation::separate, seed, F, H, W), F);
    for (std::size_t k = 1; k < F; ++k) {
      CHECK(distance(a[k]) < distance(a[k - 1]));
      CHECK(distance(s[k]) > distance(s[k - 1]));
    }
  }
}

TEST_CASE("orbit keeps its distance, follow keeps its offset") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto o = trajectory(random_spec(Relation::orbit, seed, F, H, W), F);
    const double d0 = distance(o[0]);
    for (const auto& c : o) CHECK(std::abs(distance(c) - d0) <= 0.15 * d0);  // pixel rounding
    const auto f = trajectory(random_spec(Relation::follow, seed, F, H, W), F);
    for (const auto& c : f) {
      CHECK(c[1][0] - c[0][0] == f[0][1][0] - f[0][0][0]);
      CHECK(c[1][1] - c[0][1] == f[0][1][1] - f[0][0][1]);
    }
  }
}

TEST_CASE("masks are disjoint for non-contact relations and faithful to pixels") {
  for (Relation r : {Relation::approach, Relation::separate, Relation::orbit, Relation::follow}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const DatasetEntry e = entry(r, seed);
      const auto& v = e.video.values();
      const auto& m1 = e.masks.m_s1.values();
      const auto& m2 = e.masks.m_s2.values();
      REQUIRE(m1.size() == v.size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(m1[i] * m2[i] == 0.0);
        if (v[i] > 0.85) CHECK(m1[i] == 1.0);            // subject 1 intensity
        if (v[i] > 0.5 && m1[i] == 0.0) CHECK(m2[i] == 1.0);
        if (v[i] == 0.0) CHECK(m1[i] + m2[i] == 0.0);
      }
    }
  }
}

TEST_CASE("collide overlaps in the final quarter") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DatasetEntry e = entry(Relation::collide, seed);
    const auto& m1 = e.masks.m_s1.values();
    const auto& m2 = e.masks.m_s2.values();
    bool overlap = false;
    for (std::size_t i = (F - F / 4) * H * W; i < m1.size(); ++i) overlap |= m1[i] * m2[i] > 0.0;
    CHECK(overlap);
  }
}

TEST_CASE("generation is deterministic") {
  const DatasetEntry a = entry(Relation::orbit, 42), b = entry(Relation::orbit, 42);
  CHECK(bitwise_equal(a.video, b.video));
  CHECK(bitwise_equal(a.masks.m_s1, b.masks.m_s1));
  CHECK(a.spec.to_json() == b.spec.to_json());
  CHECK_FALSE(bitwise_equal(a.video, entry(Relation::orbit, 43).video));
}

TEST_CASE("prompt decodes back to shapes and relation") {
  const DatasetEntry e = gen_video(random_spec(Relation::follow, ShapeKind::cross, ShapeKind::triangle, 3, F, H, W), F, H, W);
  CHECK(decode_prompt(e.prompt) == "cross follow triangle");
  CHECK(e.relation == Relation::follow);
}

TEST_CASE("gen_video: spec errors") {
  RelationSpec s = random_spec(Relation::approach, 1, F, H, W);
  s.velocity1 = {10, 0};
  CHECK_THROWS_AS(gen_video(s, F, H, W), SpecError);
  RelationSpec same = random_spec(Relation::approach, 1, F, H, W);
  same.start2 = same.start1;
  CHECK_THROWS_AS(gen_video(same, F, H, W), SpecError);
  CHECK_THROWS_AS(gen_video(random_spec(Relation::approach, 1, F, H, W), 3, H, W), SpecError);
  CHECK_THROWS_AS(relation_from_string("hug"), SpecError);
  CHECK_THROWS_AS(shape_from_string("star"), SpecError);
}

TEST_CASE("oracle recovers the generating relation") {
  for (Relation r : kAllRelations)
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      CAPTURE(to_string(r));
      CAPTURE(seed);
      const auto got = relation_oracle(entry(r, seed));
      REQUIRE(got.has_value());
      CHECK(*got == r);
    }
}

TEST_CASE("oracle: static video is unknown") {
  RelationSpec s = random_spec(Relation::approach, 5, F, H, W);
  s.velocity1 = {0, 0};
  s.velocity2 = {0, 0};
  CHECK_FALSE(relation_oracle(gen_video(s, F, H, W).video).has_value());
  CHECK_FALSE(relation_oracle(Tensor::zeros({F, H, W, 1})).has_value());
}

TEST_CASE("oracle: hand-built distance series 10, 8, 6, 4") {
  RelationSpec s;
  s.relation = Relation::approach;
  s.shape1 = ShapeKind::circle;
  s.shape2 = ShapeKind::circle;
  s.radius = 1.0;
  s.start1 = {6, 16};
  s.start2 = {16, 16};
  s.velocity1 = {2, 0};
  const DatasetEntry e = gen_video(s, 4, H, W);
  const TrajectoryAnalysis a = analyze_trajectory(e.video);
  CHECK(a.distances == std::vector<double>{10, 8, 6, 4});
  CHECK(a.kendall_tau == -1.0);
  CHECK(relation_oracle(e.video) == Relation::approach);
}

TEST_CASE("kendall_tau") {
  const std::vector<double> up = {1, 2, 3, 4}, down = {4, 3, 2, 1}, flat = {2, 2, 2};
  CHECK(kendall_tau(up) == 1.0);
  CHECK(kendall_tau(down) == -1.0);
  CHECK(kendall_tau(flat) == 0.0);
  // tau-b with one tie: concordant 5, discordant 0, ties in x 0, ties in y 1.
  const std::vector<double> tie = {1, 1, 2, 3};
  CHECK(kendall_tau(tie) == doctest::Approx(5.0 / std::sqrt(6.0 * 5.0)).epsilon(1e-14));
}

TEST_CASE("temporal_consistency") {
  Rng rng(1);
  const Tensor frame = uniform({1, 4, 4, 1}, 0.1, 1.0, rng);
  const Tensor same = concat({frame, frame, frame}, 0);
  CHECK(temporal_consistency(same) == 1.0);

  const Tensor alt = concat({frame, scale(frame, -1.0), frame, scale(frame, -1.0)}, 0);
  CHECK(std::abs(temporal_consistency(alt) + 1.0) < 1e-15);

  const Tensor v = uniform({5, 4, 4, 1}, 0.0, 1.0, rng);
  CHECK(std::abs(temporal_consistency(scale(v, 3.7)) - temporal_consistency(v)) < 1e-14);

  // Near-static: small per-frame jitter over a fixed frame.
  std::vector<Tensor> frames;
  for (int f = 0; f < 8; ++f) frames.push_back(add(frame, gaussian(frame.shape(), 0, 0.01, rng)));
  CHECK(temporal_consistency(concat(frames, 0)) > 0.99);

  set_warnings_silenced(true);
  const std::size_t before = warning_count();
  const Tensor with_zero = concat({frame, Tensor::zeros(frame.shape()), frame, frame}, 0);
  CHECK(temporal_consistency(with_zero) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(warning_count() == before + 2);
  CHECK_THROWS_AS(temporal_consistency(Tensor::zeros({3, 2, 2, 1})), ContractError);
  set_warnings_silenced(false);
  CHECK_THROWS_AS(temporal_consistency(frame), ContractError);
}

TEST_CASE("dataset round trip") {
  TempDir dir("datagen");
  std::vector<DatasetEntry> es;
  for (std::uint64_t i = 0; i < 5; ++i) es.push_back(entry(kAllRelations[i], 100 + i));
  write_dataset(es, dir.path);
  const auto back = read_dataset(dir.path);
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(bitwise_equal(back[i].video, es[i].video));
    CHECK(bitwise_equal(back[i].masks.m_s1, es[i].masks.m_s1));
    CHECK(bitwise_equal(back[i].masks.m_s2, es[i].masks.m_s2));
    CHECK(bitwise_equal(back[i].masks.m_r, es[i].masks.m_r));
    CHECK(back[i].prompt == es[i].prompt);
    CHECK(back[i].relation == es[i].relation);
    CHECK(back[i].spec.to_json() == es[i].spec.to_json());
  }
}

TEST_CASE("dataset: empty and missing directories") {
  TempDir dir("empty");
  CHECK(read_dataset(dir.path).empty());
  CHECK_THROWS_AS(read_dataset(dir / "nope"), DatasetError);
}

TEST_CASE("dataset: schema violations") {
  TempDir dir("bad");
  const std::vector<DatasetEntry> es = {entry(Relation::approach, 1)};
  write_dataset(es, dir.path);
  const auto entry_dir = dir / "entry_0000";

  SUBCASE("mask count") {
    Container c = read_container(entry_dir / "masks.ntv");
    c.tensors.pop_back();
    write_container(entry_dir / "masks.ntv", c);
    CHECK_THROWS_AS(read_dataset(dir.path), ValidationError);
  }
  SUBCASE("relation disagrees with spec") {
    std::ifstream in(entry_dir / "meta.json");
    nlohmann::json meta = nlohmann::json::parse(in);
    in.close();
    meta["relation"] = "separate";
    std::ofstream(entry_dir / "meta.json") << meta.dump();
    CHECK_THROWS_AS(read_dataset(dir.path), ValidationError);
  }
  SUBCASE("corrupt video names the entry") {
    std::ofstream(entry_dir / "video.ntv", std::ios::binary) << "RLT1";
    try {
      (void)read_dataset(dir.path);
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("entry_0000") != std::string::npos);
    }
  }
}

TEST_CASE("read_videos collects loose files and dataset entries") {
  TempDir dir("videos");
  write_video(dir / "b.ntv", entry(Relation::approach, 1).video);
  const std::vector<DatasetEntry> es = {entry(Relation::separate, 2)};
  write_dataset(es, dir / "set");
  const auto vs = read_videos(dir.path);
  REQUIRE(vs.size() == 2);
  CHECK(vs[0].first.filename() == "b.ntv");
  CHECK(bitwise_equal(vs[1].second, es[0].video));
}
