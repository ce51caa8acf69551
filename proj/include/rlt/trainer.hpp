#pragma once

// Hybrid-mask training with the relational contrastive term, AdamW over the
// selected adapter sets, checkpoints, and guided DDIM sampling.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlt/config.hpp"
#include "rlt/datagen.hpp"
#include "rlt/denoiser.hpp"
#include "rlt/lora.hpp"
#include "rlt/masks.hpp"
#include "rlt/rcl.hpp"

namespace rlt {

// Videos in [0, 1] map to latents in [-1, 1].
Tensor encode_video(const Tensor& video, const ModelConfig& cfg);
Tensor decode_latent(const Tensor& latent, const ModelConfig& cfg);

struct TrainItem {
  Tensor z0;  // [f, h, w, c]
  MaskSet masks;
  std::vector<int> prompt;
  int relation_id = 0;
  std::int64_t video_id = 0;
};

TrainItem make_train_item(const DatasetEntry& entry, const ModelConfig& cfg, std::int64_t video_id);

// Everything random about one step, drawn up front.
struct StepDraws {
  Selection selection;
  std::size_t timestep = 0;
  Tensor eps;
  std::vector<int> prompt;
  bool prompt_dropped = false;
  std::optional<ContrastSamples> contrast;
};

struct LossTerms {
  Tensor l_rec;
  Tensor l_rcl;  // scalar 0 when the contrastive term is skipped
  Tensor l_total;
  Tensor eps_hat;
  Tensor anchors;      // [f-1, c]
  Tensor appearance;   // [f, c]
  bool rcl_applied = false;
};

struct StepMetrics {
  std::size_t iteration = 0;
  Choice choice = Choice::relation;
  double l_rec = 0.0;
  double l_rcl = 0.0;
  double l_total = 0.0;
  std::size_t timestep = 0;
  bool rcl_applied = false;
  bool prompt_dropped = false;
  std::int64_t video_id = 0;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
  bool operator==(const AdamState&) const = default;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ModelWeights base;
  TripletConfig triplet;
  std::map<std::string, AdamState> moments;
  std::uint64_t iteration = 0;
};

// "lora/<set>/<branch>/layer<L>/<matrix>/<down|up>" for every adapter factor.
std::vector<std::pair<std::string, Tensor>> named_lora_parameters(const TripletConfig& triplet);

class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

  const ModelConfig& model_config() const { return model_.config(); }
  const TrainConfig& train_config() const { return cfg_; }
  const Denoiser& model() const { return model_; }
  const TripletConfig& triplet() const { return triplet_; }
  TripletConfig& triplet() { return triplet_; }
  const MemoryBank& bank() const { return bank_; }
  const std::map<std::string, AdamState>& moments() const { return moments_; }
  std::uint64_t iteration() const { return iteration_; }

  // Consumes the main and contrast random streams. A forced choice still
  // consumes the selection draw so the rest of the stream is unchanged.
  StepDraws draw(const TrainItem& item, std::optional<Choice> force = std::nullopt);

  // Pure given draws; records a graph when one is active.
  LossTerms loss(const TrainItem& item, const StepDraws& draws) const;

  // Draw, forward, backward, update the selected sets, push features to the bank.
  StepMetrics step(const TrainItem& item, std::optional<Choice> force = std::nullopt);

  // Picks a dataset item uniformly from the main stream, then steps.
  StepMetrics step(std::span<const TrainItem> items);

  Checkpoint checkpoint() const;

 private:
  void apply_update(const Selection& sel);

  TrainConfig cfg_;
  Denoiser model_;
  TripletConfig triplet_;
  std::vector<std::pair<std::string, Tensor>> named_;
  std::map<const Node*, SetKind> set_of_;
  MemoryBank bank_;
  std::map<std::string, AdamState> moments_;
  Rng rng_;
  Rng contrast_rng_;
  std::uint64_t iteration_ = 0;
};

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const Checkpoint&)> on_checkpoint;  // every K iterations and at the end
};

// Throws DatasetError on an empty dataset or mismatched video dims.
Checkpoint train(std::span<const DatasetEntry> dataset, const ModelConfig& model_cfg,
                 const TrainConfig& train_cfg, const TrainHooks& hooks = {});

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// ShapeError naming the first tensor that does not fit `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// (1 - s) * eps_null + s * eps_cond; exact at s = 0 and s = 1.
Tensor guided_eps(const Tensor& eps_null, const Tensor& eps_cond, double cfg_scale);

// Descending DDIM timesteps from T-1 to 0.
std::vector<std::size_t> ddim_timesteps(std::size_t total, std::size_t steps);

// Deterministic DDIM from a Gaussian latent drawn from rng; returns [F, H, W, C] in [0, 1].
Tensor sample_with(const Denoiser& model, const TripletConfig* triplet, std::span<const int> prompt,
                   std::size_t steps, double cfg_scale, Rng& rng);
// Uses inference_view(ckpt.triplet): subject adapters are never applied.
Tensor sample(const Checkpoint& ckpt, std::span<const int> prompt, std::size_t steps,
              double cfg_scale, Rng& rng);

}  // namespace rlt
