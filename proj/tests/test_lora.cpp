#include <doctest.h>

#include <cmath>

#include "rlt/errors.hpp"
#include "rlt/lora.hpp"
#include "test_util.hpp"

using namespace rlt;
using rlt::testing::bitwise_equal;
using rlt::testing::max_grad_error;
using rlt::testing::random_param;
using rlt::testing::weighted_sum;

namespace {

ModelConfig cfg16() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  return c;
}

}  // namespace

TEST_CASE("init_triplet: bindings per placement") {
  const ModelConfig cfg = cfg16();
  const TripletConfig tri = init_triplet(cfg, 4, 1.0, 7);
  // Two layers, two branches.
  CHECK(tri.relation.size() == cfg.layers * 2 * 2);  // q, k
  CHECK(tri.subject1.size() == cfg.layers * 2);      // v
  CHECK(tri.subject2.size() == cfg.layers * 2);
  CHECK(tri.ffn.size() == cfg.layers * 2 * 3);       // ffn_in, ffn_out, attn_out
  for (const auto& [b, a] : tri.relation) CHECK((b.matrix == Target::q || b.matrix == Target::k));
  for (const auto& [b, a] : tri.subject1) CHECK(b.matrix == Target::v);
  CHECK(tri.max_layer() == cfg.layers - 1);

  const TripletConfig alt = init_triplet(cfg, 4, 1.0, 7, Placement::parse("V|QK"));
  for (const auto& [b, a] : alt.relation) CHECK(b.matrix == Target::v);
  CHECK(alt.subject1.size() == cfg.layers * 2 * 2);
}

TEST_CASE("init_triplet: up is zero, down has variance 1/r, seeded") {
  ModelConfig cfg;  // d_model 64
  const TripletConfig tri = init_triplet(cfg, 16, 1.0, 3);
  double s = 0, s2 = 0;
  std::size_t n = 0;
  for (SetKind k : kAllSets)
    for (const auto& [b, a] : tri.set(k)) {
      CHECK(a.down.shape() == Shape{16, a.d_in()});
      CHECK(a.up.shape() == Shape{a.d_out(), 16});
      for (double x : a.up.values()) CHECK(x == 0.0);
      for (double x : a.down.values()) {
        s += x;
        s2 += x * x;
        ++n;
      }
    }
  const double var = s2 / static_cast<double>(n) - std::pow(s / static_cast<double>(n), 2);
  CHECK(var == doctest::Approx(1.0 / 16.0).epsilon(0.03));

  const TripletConfig again = init_triplet(cfg, 16, 1.0, 3);
  CHECK(bitwise_equal(tri.relation.begin()->second.down, again.relation.begin()->second.down));
}

TEST_CASE("init_triplet: rank bounds") {
  const ModelConfig cfg = cfg16();
  CHECK_THROWS_AS(init_triplet(cfg, 17, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(init_triplet(cfg, 0, 1.0, 1), ConfigError);
  CHECK_NOTHROW(init_triplet(cfg, 16, 1.0, 1));
}

TEST_CASE("placement parsing") {
  CHECK(Placement::parse("QK|V").name() == "QK|V");
  CHECK(Placement::parse("q,k|v") == Placement{});
  CHECK(Placement::parse("KV|Q").name() == "KV|Q");
  CHECK(Placement::parse("Q|KV").subject.size() == 2);
  CHECK_THROWS_AS(Placement::parse("QK"), ConfigError);
  CHECK_THROWS_AS(Placement::parse("QK|K"), ConfigError);
  CHECK_THROWS_AS(Placement::parse("|V"), ConfigError);
  CHECK_THROWS_AS(Placement::parse("QX|V"), ConfigError);
}

TEST_CASE("apply_adapter: zero up factor is an exact no-op") {
  Rng rng(1);
  const Tensor W = gaussian({6, 5}, 0, 1, rng), x = gaussian({4, 5}, 0, 1, rng);
  LoraAdapter a{gaussian({2, 5}, 0, 1, rng), Tensor::zeros({6, 2}), 1.0};
  const std::vector<const LoraAdapter*> ads = {&a};
  CHECK(bitwise_equal(apply_adapter(W, x, ads), matmul_nt(x, W)));
}

TEST_CASE("apply_adapter: closed form with scale") {
  const Tensor W = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor x = Tensor::from({1, 2}, {1, 2});
  LoraAdapter a{Tensor::from({1, 2}, {1, 1}), Tensor::from({2, 1}, {1, -1}), 0.5};
  const std::vector<const LoraAdapter*> ads = {&a};
  // x W^T = [1, 2]; delta = 0.5 * (x.down^T = 3) * up^T = [1.5, -1.5].
  CHECK(apply_adapter(W, x, ads).values() == std::vector<double>{2.5, 0.5});
}

TEST_CASE("apply_adapter: dimension mismatch is a binding error") {
  Rng rng(2);
  const Tensor W = gaussian({6, 5}, 0, 1, rng), x = gaussian({4, 5}, 0, 1, rng);
  LoraAdapter bad{gaussian({2, 4}, 0, 1, rng), Tensor::zeros({6, 2}), 1.0};
  const std::vector<const LoraAdapter*> ads = {&bad};
  CHECK_THROWS_AS(apply_adapter(W, x, ads), BindingError);
  CHECK_THROWS_AS(apply_adapter(W, gaussian({4, 3}, 0, 1, rng), {}), BindingError);
}

TEST_CASE("apply_adapter: gradients w.r.t. factors") {
  Rng rng(3);
  const Tensor W = gaussian({6, 5}, 0, 1, rng), x = gaussian({4, 5}, 0, 1, rng);
  LoraAdapter a{random_param({2, 5}, rng), random_param({6, 2}, rng), 0.7};
  const std::vector<const LoraAdapter*> ads = {&a};
  CHECK(max_grad_error([&] { return weighted_sum(apply_adapter(W, x, ads)); }, {a.down, a.up}) < 1e-6);
}

TEST_CASE("selection contract") {
  const Selection r = make_selection(Choice::relation);
  CHECK(r.trainable.size() == 4);
  CHECK(r.mask_kind == MaskKind::relation);
  const Selection s1 = make_selection(Choice::subject1);
  CHECK(s1.trains(SetKind::subject1));
  CHECK(s1.trains(SetKind::ffn));
  CHECK_FALSE(s1.trains(SetKind::relation));
  CHECK_FALSE(s1.trains(SetKind::subject2));
  CHECK(s1.mask_kind == MaskKind::subject1);
  const Selection s2 = make_selection(Choice::subject2);
  CHECK(s2.mask_kind == MaskKind::subject2);
  CHECK_FALSE(s2.trains(SetKind::subject1));
}

TEST_CASE("select_active: uniform over three choices") {
  Rng rng(4);
  std::array<int, 3> counts{};
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(select_active(rng).choice)];
  // 3 sigma of a binomial(n, 1/3).
  const double sigma = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
  for (int c : counts) CHECK(std::abs(c - n / 3.0) < 3 * sigma);
}

TEST_CASE("inference_view drops subject adapters and shares the rest") {
  const TripletConfig tri = init_triplet(cfg16(), 4, 1.0, 5);
  const TripletConfig view = inference_view(tri);
  CHECK(view.subject1.empty());
  CHECK(view.subject2.empty());
  CHECK(view.relation.size() == tri.relation.size());
  CHECK(view.ffn.size() == tri.ffn.size());
  CHECK(view.relation.begin()->second.down.node() == tri.relation.begin()->second.down.node());
}

TEST_CASE("clone_triplet is deep") {
  TripletConfig tri = init_triplet(cfg16(), 4, 1.0, 6);
  const TripletConfig copy = clone_triplet(tri);
  auto d = tri.relation.begin()->second.up.mutable_data();
  d[0] = 1.0;
  CHECK(copy.relation.begin()->second.up.values()[0] == 0.0);
  CHECK(copy.relation.begin()->second.down.requires_grad());
}

TEST_CASE("adapters_for returns every set bound to a target") {
  const TripletConfig tri = init_triplet(cfg16(), 4, 1.0, 8, Placement::parse("Q|KV"));
  CHECK(tri.adapters_for({0, Target::q, Branch::vision}).size() == 1);
  CHECK(tri.adapters_for({0, Target::v, Branch::text}).size() == 2);  // subject1 + subject2
  CHECK(tri.adapters_for({1, Target::ffn_in, Branch::text}).size() == 1);
  CHECK(tri.adapters_for({5, Target::q, Branch::text}).empty());
}
