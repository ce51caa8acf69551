#pragma once

// Miniature MM-DiT epsilon-prediction network.
//
// Video is patchified into an f x h x w x c latent grid; each cell is a vision
// token. Text tokens come from an embedding table. Every block runs joint
// attention over [text; vision] with per-branch projection weights, then a
// per-branch SiLU feed-forward. A sinusoidal timestep embedding is added to all
// tokens at the input. Base weights are fixed at construction; only adapters
// passed through TripletConfig are trainable.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlt/lora.hpp"
#include "rlt/model_config.hpp"
#include "rlt/tensor.hpp"

namespace rlt {

// [F, H, W, C] -> [F/Tc, H/p, W/p, C*Tc*p*p]. Channel order is (dt, dy, dx, C).
Tensor patchify(const Tensor& video, const ModelConfig& cfg);
Tensor unpatchify(const Tensor& latent, const ModelConfig& cfg);

class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ModelConfig& cfg);
  NoiseSchedule(std::size_t timesteps, double beta_start, double beta_end);

  std::size_t size() const { return betas_.size(); }
  double beta(std::size_t t) const { return betas_.at(t); }
  double alpha_bar(std::size_t t) const { return alpha_bars_.at(t); }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

// z_t = sqrt(abar) z0 + sqrt(1 - abar) eps, abar taken from the schedule at t.
Tensor add_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);
// Same with an explicit cumulative alpha in [0, 1].
Tensor add_noise_abar(const Tensor& z0, double alpha_bar, const Tensor& eps);

// Mean squared error over all elements.
Tensor diffusion_loss(const Tensor& eps, const Tensor& eps_hat);

struct LayerRecord {
  Tensor q, k, v;                  // vision tokens only, [N_vision, d_model]
  std::vector<Tensor> attention;   // per head, [N_text + N_vision, N_text + N_vision]
};

// Activations captured during one forward pass. Sequence order is text first.
struct AttentionRecord {
  std::size_t text_tokens = 0;
  std::size_t frames = 0, height = 0, width = 0;
  std::size_t heads = 0;
  std::size_t timestep = 0;
  std::vector<int> prompt;
  std::vector<LayerRecord> layers;

  std::size_t vision_tokens() const { return frames * height * width; }
  std::size_t sequence_length() const { return text_tokens + vision_tokens(); }
};

struct DenoiserOutput {
  Tensor eps_hat;
  std::optional<AttentionRecord> record;
};

struct BranchWeights {
  Tensor q, k, v, attn_out;  // [d, d]
  Tensor ffn_in;             // [ffn, d]
  Tensor ffn_out;            // [d, ffn]

  Tensor& get(Target t);
  const Tensor& get(Target t) const;
};

struct LayerWeights {
  BranchWeights text;
  BranchWeights vision;

  BranchWeights& branch(Branch b) { return b == Branch::text ? text : vision; }
  const BranchWeights& branch(Branch b) const { return b == Branch::text ? text : vision; }
};

struct ModelWeights {
  Tensor patch_in;    // [d, c]
  Tensor patch_bias;  // [d]
  Tensor embed;       // [vocab, d]
  Tensor out;         // [c, d]
  Tensor out_bias;    // [c]
  std::vector<LayerWeights> layers;

  // Stable names ("base/...") for serialization and analysis.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

class Denoiser {
 public:
  Denoiser(const ModelConfig& cfg, std::uint64_t seed);
  Denoiser(const ModelConfig& cfg, ModelWeights weights);

  const ModelConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const ModelWeights& weights() const { return weights_; }
  ModelWeights& mutable_weights() { return weights_; }

  // z_t: [f, h, w, c]; text: token ids (1..text_len of them); t in [0, T).
  DenoiserOutput forward(const Tensor& z_t, std::span<const int> text, std::size_t t,
                         const TripletConfig* triplet = nullptr, bool record = false) const;

 private:
  void validate_inputs(const Tensor& z_t, std::span<const int> text, std::size_t t,
                       const TripletConfig* triplet) const;
  Tensor project(const Tensor& x, std::size_t layer, Target target, Branch branch,
                 const TripletConfig* triplet) const;

  ModelConfig cfg_;
  NoiseSchedule sched_;
  ModelWeights weights_;
  Tensor vision_pos_;  // [N_vision, d]
  Tensor text_pos_;    // [text_len, d]
};

// Sinusoidal embedding of a scalar position into `dim` values (sin/cos pairs).
std::vector<double> sinusoidal_embedding(double position, std::size_t dim, double base);

}  // namespace rlt
