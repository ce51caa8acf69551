#include <doctest.h>

#include <cmath>

#include "rlt/denoiser.hpp"
#include "rlt/errors.hpp"
#include "rlt/lora.hpp"
#include "test_util.hpp"

using namespace rlt;
using rlt::testing::bitwise_equal;
using rlt::testing::central_difference;
using rlt::testing::rel_err;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.heads = 2;
  c.frames = 4;
  c.height = 8;
  c.width = 8;
  c.patch = 4;
  c.temporal_factor = 2;
  c.timesteps = 20;
  return c;
}

Shape latent_shape(const ModelConfig& c) {
  return {c.latent_frames(), c.latent_height(), c.latent_width(), c.latent_channels()};
}

}  // namespace

TEST_CASE("patchify: shape arithmetic on the default geometry") {
  ModelConfig cfg;
  Rng rng(1);
  const Tensor v = uniform({8, 32, 32, 1}, 0.0, 1.0, rng);
  const Tensor z = patchify(v, cfg);
  CHECK(z.shape() == Shape{4, 8, 8, 32});
  CHECK(bitwise_equal(unpatchify(z, cfg), v));
}

TEST_CASE("patchify: constant video gives constant latent") {
  ModelConfig cfg = small_config();
  const Tensor v = Tensor::filled({4, 8, 8, 1}, 0.25);
  const Tensor z = patchify(v, cfg);
  for (double x : z.values()) CHECK(x == 0.25);
}

TEST_CASE("patchify: channel order is (dt, dy, dx, C)") {
  ModelConfig cfg = small_config();
  cfg.channels = 2;
  std::vector<double> data(4 * 8 * 8 * 2);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(i);
  const Tensor v = Tensor::from({4, 8, 8, 2}, data);
  const Tensor z = patchify(v, cfg);
  // latent cell (1, 0, 1), channel for dt=1, dy=2, dx=3, C=1.
  const std::size_t F = 1 * 2 + 1, H = 0 * 4 + 2, W = 1 * 4 + 3;
  const double expected = v.at({F, H, W, 1});
  const std::size_t ch = ((1 * 4 + 2) * 4 + 3) * 2 + 1;
  CHECK(z.at({1, 0, 1, ch}) == expected);
}

TEST_CASE("patchify: non-divisible dims are a config error") {
  ModelConfig cfg = small_config();
  CHECK_THROWS_AS(patchify(Tensor::zeros({3, 8, 8, 1}), cfg), ConfigError);
  CHECK_THROWS_AS(patchify(Tensor::zeros({4, 9, 8, 1}), cfg), ConfigError);
  ModelConfig bad = cfg;
  bad.frames = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("noise schedule invariants") {
  const NoiseSchedule s(100, 1e-4, 0.02);
  CHECK(s.size() == 100);
  for (std::size_t t = 0; t < s.size(); ++t) {
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
    if (t > 0) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK(s.beta(0) == doctest::Approx(1e-4));
  CHECK(s.beta(99) == doctest::Approx(0.02));
}

TEST_CASE("add_noise: endpoints and closed form") {
  Rng rng(2);
  const Tensor z0 = gaussian({2, 2, 2, 3}, 0, 1, rng), eps = gaussian({2, 2, 2, 3}, 0, 1, rng);
  CHECK(bitwise_equal(add_noise_abar(z0, 1.0, eps), z0));
  CHECK(bitwise_equal(add_noise_abar(z0, 0.0, eps), eps));
  const Tensor half = add_noise_abar(Tensor::filled({2, 2}, 1.0), 0.25, Tensor::zeros({2, 2}));
  for (double v : half.values()) CHECK(v == 0.5);
  const NoiseSchedule s(10, 1e-3, 0.2);
  CHECK_THROWS_AS(add_noise(z0, 10, eps, s), RangeError);
  CHECK_THROWS_AS(add_noise(z0, 0, Tensor::zeros({1}), s), DimensionError);
}

TEST_CASE("diffusion_loss closed forms") {
  Rng rng(3);
  const Tensor e = gaussian({2, 3, 3, 4}, 0, 1, rng);
  CHECK(diffusion_loss(e, e).item() == 0.0);
  CHECK(diffusion_loss(Tensor::zeros({2, 2}), Tensor::filled({2, 2}, 2.0)).item() == 4.0);
  CHECK_THROWS_AS(diffusion_loss(e, Tensor::zeros({2})), DimensionError);
  // Perfect-oracle denoise: the prediction is the injected noise itself.
  const NoiseSchedule s(20, 1e-3, 0.2);
  const Tensor eps = gaussian(e.shape(), 0, 1, rng);
  const Tensor zt = add_noise(e, 7, eps, s);
  CHECK(zt.shape() == e.shape());
  CHECK(diffusion_loss(eps, eps.clone()).item() == 0.0);
}

TEST_CASE("forward: output shape and zero-LoRA identity") {
  const ModelConfig cfg = small_config();
  const Denoiser model(cfg, 11);
  const TripletConfig tri = init_triplet(cfg, 4, 1.0, 12);
  Rng rng(13);
  const std::vector<int> prompt = {1, 5, 2};
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor z = gaussian(latent_shape(cfg), 0, 1, rng);
    const std::size_t t = static_cast<std::size_t>(trial * 3);
    const Tensor base = model.forward(z, prompt, t).eps_hat;
    const Tensor with = model.forward(z, prompt, t, &tri).eps_hat;
    CHECK(base.shape() == z.shape());
    CHECK(bitwise_equal(base, with));
  }
}

TEST_CASE("forward: nonzero adapters change the output") {
  const ModelConfig cfg = small_config();
  const Denoiser model(cfg, 11);
  TripletConfig tri = init_triplet(cfg, 4, 1.0, 12);
  Rng rng(14);
  for (auto& [b, a] : tri.relation) {
    auto d = a.up.mutable_data();
    for (auto& x : d) x = 0.1;
  }
  const Tensor z = gaussian(latent_shape(cfg), 0, 1, rng);
  const std::vector<int> prompt = {1, 5, 2};
  CHECK_FALSE(bitwise_equal(model.forward(z, prompt, 3).eps_hat, model.forward(z, prompt, 3, &tri).eps_hat));
}

TEST_CASE("forward: calls are independent of order") {
  const ModelConfig cfg = small_config();
  const Denoiser model(cfg, 21);
  Rng rng(22);
  const Tensor a = gaussian(latent_shape(cfg), 0, 1, rng), b = gaussian(latent_shape(cfg), 0, 1, rng);
  const std::vector<int> p = {3, 6, 4};
  const Tensor a1 = model.forward(a, p, 1).eps_hat;
  const Tensor b1 = model.forward(b, p, 2).eps_hat;
  const Tensor b2 = model.forward(b, p, 2).eps_hat;
  const Tensor a2 = model.forward(a, p, 1).eps_hat;
  CHECK(bitwise_equal(a1, a2));
  CHECK(bitwise_equal(b1, b2));
}

TEST_CASE("forward: attention record rows sum to one") {
  const ModelConfig cfg = small_config();
  const Denoiser model(cfg, 31);
  Rng rng(32);
  const Tensor z = gaussian(latent_shape(cfg), 0, 1, rng);
  const std::vector<int> p = {1, 7, 3};
  const auto out = model.forward(z, p, 5, nullptr, true);
  REQUIRE(out.record.has_value());
  const AttentionRecord& rec = *out.record;
  CHECK(rec.layers.size() == cfg.layers);
  CHECK(rec.text_tokens == 3);
  CHECK(rec.timestep == 5);
  CHECK(rec.prompt == p);
  const std::size_t n = rec.sequence_length();
  for (const auto& layer : rec.layers) {
    CHECK(layer.q.shape() == Shape{cfg.vision_tokens(), cfg.d_model});
    CHECK(layer.attention.size() == cfg.heads);
    for (const Tensor& a : layer.attention) {
      REQUIRE(a.shape() == Shape{n, n});
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += a.values()[i * n + j];
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
    }
  }
  CHECK_FALSE(model.forward(z, p, 5).record.has_value());
}

TEST_CASE("forward: input validation") {
  const ModelConfig cfg = small_config();
  const Denoiser model(cfg, 41);
  const Tensor z = Tensor::zeros(latent_shape(cfg));
  const std::vector<int> bad_token = {1, 99};
  CHECK_THROWS_AS(model.forward(z, bad_token, 0), VocabError);
  const std::vector<int> too_long(cfg.text_len + 1, 1);
  CHECK_THROWS_AS(model.forward(z, too_long, 0), ContractError);
  const std::vector<int> ok = {1};
  CHECK_THROWS_AS(model.forward(z, ok, cfg.timesteps), RangeError);
  CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 2, 2, 2}), ok, 0), DimensionError);

  ModelConfig deeper = cfg;
  deeper.layers = 3;
  const TripletConfig tri = init_triplet(deeper, 2, 1.0, 1);
  CHECK_THROWS_AS(model.forward(z, ok, 0, &tri), BindingError);
}

TEST_CASE("forward: LoRA gradients match finite differences") {
  const ModelConfig cfg = small_config();
  const Denoiser model(cfg, 51);
  TripletConfig tri = init_triplet(cfg, 2, 1.0, 52);
  Rng rng(53);
  // Nonzero up factors so both factors carry gradient.
  for (SetKind k : kAllSets)
    for (auto& [b, a] : tri.set(k)) {
      auto d = a.up.mutable_data();
      const Tensor g = gaussian(a.up.shape(), 0.0, 0.1, rng);
      std::copy(g.values().begin(), g.values().end(), d.begin());
    }
  const Tensor z = gaussian(latent_shape(cfg), 0, 1, rng);
  const std::vector<int> p = {2, 8, 1};
  auto f = [&] { return mean(square(model.forward(z, p, 4, &tri).eps_hat)); };

  auto params = tri.parameters();
  {
    Graph g;
    backward(f());
  }
  std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
  int checked = 0;
  while (checked < 5) {
    Tensor& prm = params[pick_param(rng)];
    if (!prm.has_grad()) continue;  // text adapters of the last layer are unused
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, prm.numel() - 1)(rng);
    const double analytic = prm.grad()[i];
    const double numeric = central_difference(f, prm, i);
    CAPTURE(analytic);
    CAPTURE(numeric);
    CHECK(rel_err(analytic, numeric, 1e-7) < 1e-4);
    ++checked;
  }
}

TEST_CASE("sinusoidal embedding") {
  const auto e = sinusoidal_embedding(0.0, 8, 10000.0);
  for (std::size_t i = 0; i < 8; i += 2) {
    CHECK(e[i] == 0.0);
    CHECK(e[i + 1] == 1.0);
  }
}

TEST_CASE("weights: named entries and shape validation") {
  const ModelConfig cfg = small_config();
  const Denoiser model(cfg, 61);
  const auto named = model.weights().named();
  CHECK(named.size() == 5 + cfg.layers * 2 * 6);
  ModelWeights w = model.weights();
  w.layers[1].vision.k = Tensor::zeros({3, 3});
  CHECK_THROWS_AS(Denoiser(cfg, w), ShapeError);
}
