#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rlt/cli.hpp"
#include "rlt/config.hpp"
#include "rlt/errors.hpp"
#include "rlt/datagen.hpp"
#include "rlt/tensor_io.hpp"
#include "rlt/trainer.hpp"
#include "test_util.hpp"

using namespace rlt;
using rlt::testing::TempDir;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> small_model_flags() {
  return {"--model.frames", "4", "--model.d_model", "16", "--model.heads", "2", "--train.rank", "2"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"nonsense"}).code == 2);
  CHECK(run({"datagen"}).code == 2);  // --out is required
}

TEST_CASE("datagen is deterministic and validates the relation") {
  TempDir dir("cli_dg");
  const auto a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(run({"datagen", "--out", a, "--relation", "orbit", "--count", "3", "--seed", "4", "--frames", "4"}).code == 0);
  REQUIRE(run({"datagen", "--out", b, "--relation", "orbit", "--count", "3", "--seed", "4", "--frames", "4"}).code == 0);
  const auto da = read_dataset(a), db = read_dataset(b);
  REQUIRE(da.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(testing::bitwise_equal(da[i].video, db[i].video));
    CHECK(da[i].relation == Relation::orbit);
    CHECK(da[i].video.shape() == Shape{4, 32, 32, 1});
  }
  const Result bad = run({"datagen", "--out", (dir / "c").string(), "--relation", "hug"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("hug") != std::string::npos);
  CHECK(run({"datagen", "--out", (dir / "d").string(), "--shape1", "circle"}).code == 2);
}

TEST_CASE("train, infer, analyze, eval end to end") {
  TempDir dir("cli_e2e");
  const auto data = (dir / "data").string(), ckpt = (dir / "m.ntv").string();
  REQUIRE(run({"datagen", "--out", data, "--relation", "approach", "--count", "3", "--seed", "1", "--frames", "4"})
              .code == 0);

  const Result zero = run(cat({"train", "--data", data, "--out", ckpt, "--iters", "0", "--seed", "2"}, small_model_flags()));
  REQUIRE(zero.code == 0);
  const Checkpoint init = load_checkpoint(ckpt);
  CHECK(init.iteration == 0);
  CHECK(init.train.seed == 2);
  CHECK(init.model.d_model == 16);

  const Result tr = run(cat({"train", "--data", data, "--out", ckpt, "--iters", "4", "--seed", "2"}, small_model_flags()));
  REQUIRE(tr.code == 0);
  CHECK(load_checkpoint(ckpt).iteration == 4);
  std::istringstream metrics(slurp(ckpt + ".metrics.csv"));
  std::string line;
  std::getline(metrics, line);
  CHECK(line == "iter,choice,l_rec,l_rcl,l_total");
  int rows = 0;
  while (std::getline(metrics, line)) ++rows;
  CHECK(rows == 4);

  CHECK(run(cat({"train", "--data", data, "--out", ckpt, "--train.bogus", "1"}, small_model_flags())).code == 2);
  CHECK(run({"train", "--data", (dir / "missing").string(), "--out", ckpt}).code == 3);

  // Default guidance scale is 6; passing it explicitly gives the same video.
  const auto v1 = (dir / "v1.ntv").string(), v2 = (dir / "v2.ntv").string();
  REQUIRE(run({"infer", "--ckpt", ckpt, "--prompt", "circle approach square", "--steps", "3", "--seed", "7", "--out", v1})
              .code == 0);
  REQUIRE(run({"infer", "--ckpt", ckpt, "--prompt", "circle approach square", "--steps", "3", "--seed", "7",
               "--cfg-scale", "6", "--out", v2})
              .code == 0);
  CHECK(testing::bitwise_equal(read_container(v1).tensor("video"), read_container(v2).tensor("video")));
  CHECK(read_container(v1).tensor("video").shape() == Shape{4, 32, 32, 1});
  CHECK(run({"infer", "--ckpt", ckpt, "--prompt", "circle hugs square", "--out", v1}).code == 2);

  const Result sub = run({"analyze", "subspace", "--ckpt", ckpt, "--rank", "4"});
  REQUIRE(sub.code == 0);
  CHECK(sub.out.rfind("layer,branch,pair,rank,similarity\n", 0) == 0);
  CHECK(run({"analyze", "subspace", "--ckpt", ckpt, "--rank", "999"}).code == 2);

  const Result attn = run({"analyze", "attnmap", "--ckpt", ckpt, "--prompt", "circle approach square"});
  REQUIRE(attn.code == 0);
  CHECK(attn.out.rfind("frame,row,col,value\n", 0) == 0);
  CHECK(run({"analyze", "attnmap", "--ckpt", ckpt, "--prompt", "circle approach square", "--token", "orbit"}).code ==
        2);
  CHECK(run({"analyze", "featmap", "--ckpt", ckpt, "--prompt", "circle approach square", "--which", "k"}).code == 0);
}

TEST_CASE("eval relation accuracy and temporal consistency") {
  TempDir dir("cli_eval");
  for (std::uint64_t s = 0; s < 3; ++s)
    write_video(dir / ("a" + std::to_string(s) + ".ntv"),
                gen_video(random_spec(Relation::approach, s, 8, 32, 32), 8, 32, 32).video);
  write_video(dir / "s.ntv", gen_video(random_spec(Relation::separate, 9, 8, 32, 32), 8, 32, 32).video);
  const Result acc = run({"eval", "--videos", dir.path.string(), "--metric", "relation-accuracy", "--expected", "approach"});
  REQUIRE(acc.code == 0);
  CHECK(std::stod(acc.out) == 0.75);
  const Result tc = run({"eval", "--videos", dir.path.string(), "--metric", "temporal-consistency"});
  REQUIRE(tc.code == 0);
  CHECK(std::stod(tc.out) > 0.0);
  CHECK(std::stod(tc.out) <= 1.0);

  TempDir empty("cli_eval_empty");
  CHECK(run({"eval", "--videos", empty.path.string(), "--metric", "temporal-consistency"}).code == 2);
  CHECK(run({"eval", "--videos", dir.path.string(), "--metric", "relation-accuracy"}).code == 2);
  CHECK(run({"eval", "--videos", dir.path.string(), "--metric", "fvd"}).code == 2);
}

TEST_CASE("RLT_SEED is the seed fallback and must be an integer") {
  TempDir dir("cli_seed");
  ::setenv("RLT_SEED", "11", 1);
  REQUIRE(run({"datagen", "--out", (dir / "a").string(), "--count", "1", "--frames", "4"}).code == 0);
  ::unsetenv("RLT_SEED");
  REQUIRE(run({"datagen", "--out", (dir / "b").string(), "--count", "1", "--frames", "4", "--seed", "11"}).code == 0);
  CHECK(testing::bitwise_equal(read_dataset(dir / "a")[0].video, read_dataset(dir / "b")[0].video));
  ::setenv("RLT_SEED", "eleven", 1);
  CHECK(run({"datagen", "--out", (dir / "c").string(), "--count", "1"}).code == 2);
  ::unsetenv("RLT_SEED");
}

TEST_CASE("run config: file, overrides and unknown keys") {
  TempDir dir("cli_cfg");
  const auto cfg = (dir / "run.json").string();
  std::ofstream(cfg) << R"({"model": {"frames": 4},
    "data": {"relation": "follow", "count": 2, "seed": 3, "shape1": "cross", "shape2": "circle"}})";
  REQUIRE(run({"datagen", "--config", cfg, "--out", (dir / "d").string()}).code == 0);
  const auto ds = read_dataset(dir / "d");
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].relation == Relation::follow);
  CHECK(ds[0].spec.shape1 == ShapeKind::cross);
  CHECK(ds[0].video.shape() == Shape{4, 32, 32, 1});

  REQUIRE(run({"datagen", "--config", cfg, "--out", (dir / "e").string(), "--data.relation", "orbit"}).code == 0);
  CHECK(read_dataset(dir / "e")[0].relation == Relation::orbit);

  RunConfig rc;
  apply_override(rc, "train.lr", "0.002");
  CHECK(rc.train.lr == 0.002);
  CHECK_THROWS_AS(apply_override(rc, "train.nope", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(rc, "train.rank", "-1"), ConfigError);
  CHECK(run_config_from_json(to_json(rc)).train == rc.train);

  std::ofstream(dir / "bad.json") << R"({"model": {"dmodel": 3}})";
  const Result bad = run({"datagen", "--config", (dir / "bad.json").string(), "--out", (dir / "f").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("model.dmodel") != std::string::npos);
}
