#include <doctest.h>

#include <cmath>

#include "rlt/denoiser.hpp"
#include "rlt/errors.hpp"
#include "rlt/masks.hpp"
#include "test_util.hpp"

using namespace rlt;

namespace {

Tensor random_mask(Shape s, Rng& rng) { return uniform(s, 0.0, 1.0, rng); }

double mean_of(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.numel());
}

}  // namespace

TEST_CASE("relation_mask: union semantics") {
  CHECK(relation_mask(Tensor::from({1, 1, 2}, {1, 0}), Tensor::from({1, 1, 2}, {0, 1})).values() ==
        std::vector<double>{1, 1});
  Rng rng(1);
  const Tensor m = random_mask({2, 3, 3}, rng);
  CHECK(relation_mask(m, Tensor::zeros({2, 3, 3})).values() == m.values());
  CHECK(relation_mask(Tensor::filled({1, 1, 1}, 0.5), Tensor::filled({1, 1, 1}, 0.8)).item() == 0.8);
}

TEST_CASE("relation_mask: lattice join laws") {
  Rng rng(2);
  const Tensor a = random_mask({2, 4, 4}, rng), b = random_mask({2, 4, 4}, rng), c = random_mask({2, 4, 4}, rng);
  CHECK(relation_mask(a, b).values() == relation_mask(b, a).values());
  CHECK(relation_mask(relation_mask(a, b), c).values() == relation_mask(a, relation_mask(b, c)).values());
  CHECK(relation_mask(a, a).values() == a.values());
}

TEST_CASE("relation_mask: range and shape errors") {
  CHECK_THROWS_AS(relation_mask(Tensor::filled({1, 1, 1}, 1.5), Tensor::zeros({1, 1, 1})), ValidationError);
  CHECK_THROWS_AS(relation_mask(Tensor::filled({1, 1, 1}, -0.1), Tensor::zeros({1, 1, 1})), ValidationError);
  CHECK_THROWS_AS(relation_mask(Tensor::zeros({1, 1, 2}), Tensor::zeros({1, 2, 1})), DimensionError);
}

TEST_CASE("to_latent: block means") {
  // Frames [1, 0] with T_c = 2 and uniform spatial content.
  std::vector<double> two(2 * 4 * 4, 0.0);
  std::fill(two.begin(), two.begin() + 16, 1.0);
  const Tensor halves = to_latent(Tensor::from({2, 4, 4}, two), 2, 4);
  for (double v : halves.values()) CHECK(v == 0.5);

  const Tensor ones = to_latent(Tensor::filled({4, 8, 8}, 1.0), 2, 4);
  for (double v : ones.values()) CHECK(v == 1.0);

  std::vector<double> checker(1 * 4 * 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) checker[y * 4 + x] = static_cast<double>((x + y) % 2);
  const Tensor l = to_latent(Tensor::from({1, 4, 4}, checker), 1, 2);
  CHECK(l.shape() == Shape{1, 2, 2});
  for (double v : l.values()) CHECK(v == 0.5);

  CHECK_THROWS_AS(to_latent(Tensor::zeros({3, 8, 8}), 2, 4), ConfigError);
  CHECK_THROWS_AS(to_latent(Tensor::zeros({4, 6, 8}), 2, 4), ConfigError);
}

TEST_CASE("to_latent: preserves range and mean") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor m = random_mask({8, 32, 32}, rng);
    const Tensor l = to_latent(m, 2, 4);
    CHECK(l.shape() == Shape{4, 8, 8});
    for (double v : l.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(std::abs(mean_of(l) - mean_of(m)) < 1e-12);
  }
}

TEST_CASE("build_mask_set wires latent masks to kinds") {
  Rng rng(4);
  const Tensor a = random_mask({4, 8, 8}, rng), b = random_mask({4, 8, 8}, rng);
  const MaskSet s = build_mask_set(a, b, 2, 4);
  CHECK(s.latent(MaskKind::subject1).values() == to_latent(a, 2, 4).values());
  CHECK(s.latent(MaskKind::subject2).values() == to_latent(b, 2, 4).values());
  CHECK(s.latent(MaskKind::relation).values() == to_latent(relation_mask(a, b), 2, 4).values());
}

TEST_CASE("masked_loss: degenerates to the plain objective") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor e = gaussian({2, 3, 3, 4}, 0, 1, rng), eh = gaussian({2, 3, 3, 4}, 0, 1, rng);
    const Tensor m = random_mask({2, 3, 3}, rng);
    CHECK(std::abs(masked_loss(e, eh, m, 0.0).item() - diffusion_loss(e, eh).item()) <= 1e-12);
    const double ones = masked_loss(e, eh, Tensor::filled({2, 3, 3}, 1.0), 50.0).item();
    CHECK(std::abs(ones - 51.0 * diffusion_loss(e, eh).item()) <= 1e-9);
  }
}

TEST_CASE("masked_loss: inside errors weigh (lambda+1) times more") {
  // Two error fields with equal unweighted MSE: one inside the mask, one outside.
  const Tensor mask = Tensor::from({1, 1, 2}, {1.0, 0.0});
  const Tensor zero = Tensor::zeros({1, 1, 2, 3});
  const Tensor inside = Tensor::from({1, 1, 2, 3}, {1, 2, 3, 0, 0, 0});
  const Tensor outside = Tensor::from({1, 1, 2, 3}, {0, 0, 0, 1, 2, 3});
  CHECK(diffusion_loss(zero, inside).item() == diffusion_loss(zero, outside).item());
  const double li = masked_loss(zero, inside, mask, 50.0).item();
  const double lo = masked_loss(zero, outside, mask, 50.0).item();
  CHECK(li == doctest::Approx(51.0 * lo).epsilon(1e-14));
}

TEST_CASE("masked_loss: monotone in lambda") {
  Rng rng(6);
  const Tensor e = gaussian({2, 2, 2, 3}, 0, 1, rng), eh = gaussian({2, 2, 2, 3}, 0, 1, rng);
  const Tensor m = random_mask({2, 2, 2}, rng);
  double prev = -1.0;
  for (double lam : {0.0, 0.5, 1.0, 10.0, 50.0, 100.0}) {
    const double l = masked_loss(e, eh, m, lam).item();
    CHECK(l >= prev);
    prev = l;
  }
}

TEST_CASE("masked_loss: errors") {
  const Tensor e = Tensor::zeros({1, 2, 2, 3});
  CHECK_THROWS_AS(masked_loss(e, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1, 2, 2}), 1.0), DimensionError);
  CHECK_THROWS_AS(masked_loss(e, e, Tensor::zeros({1, 2, 3}), 1.0), DimensionError);
  CHECK_THROWS_AS(masked_loss(e, e, Tensor::zeros({1, 2, 2}), -1.0), ConfigError);
}

TEST_CASE("masked_loss: gradient w.r.t. prediction") {
  Rng rng(7);
  const Tensor e = gaussian({2, 2, 2, 3}, 0, 1, rng);
  Tensor eh = testing::random_param({2, 2, 2, 3}, rng);
  const Tensor m = random_mask({2, 2, 2}, rng);
  CHECK(testing::max_grad_error([&] { return masked_loss(e, eh, m, 50.0); }, {eh}) < 1e-6);
}
