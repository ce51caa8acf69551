#pragma once

#include <cstddef>
#include <string>

namespace rlt {

// Geometry and capacity of the denoiser. Video is frames x height x width x
// channels; the latent grid is (frames/temporal_factor) x (height/patch) x
// (width/patch) with temporal_factor * patch^2 * channels latent channels.
struct ModelConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t text_len = 8;
  std::size_t vocab = 12;
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t temporal_factor = 2;
  std::size_t patch = 4;
  std::size_t timesteps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  // Throws ConfigError on any violated divisibility or range constraint.
  void validate() const;

  std::size_t latent_frames() const { return frames / temporal_factor; }
  std::size_t latent_height() const { return height / patch; }
  std::size_t latent_width() const { return width / patch; }
  std::size_t latent_channels() const { return channels * temporal_factor * patch * patch; }
  std::size_t vision_tokens() const { return latent_frames() * latent_height() * latent_width(); }
  std::size_t head_dim() const { return d_model / heads; }
  std::size_t ffn_dim() const { return d_model * ffn_mult; }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace rlt
