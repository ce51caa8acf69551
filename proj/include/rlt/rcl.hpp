#pragma once

// Space-time relational contrastive loss.
//
// Anchors are spatial means of frame-to-frame differences of the model output
// (relational dynamics); positives are such features from other videos of the
// same relation; negatives are spatial means of single-frame outputs
// (appearance). Past features live in a bounded FIFO memory bank as detached
// constants.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "rlt/tensor.hpp"

namespace rlt {

// [f, h, w, c] -> [f-1, h, w, c], out[i] = x[i+1] - x[i].
Tensor frame_differences(const Tensor& eps_hat);
// [f-1, h, w, c] -> [f-1, c], mean over h and w.
Tensor dynamics_features(const Tensor& diffs);
// [f, h, w, c] -> [f, c], spatial mean of each frame.
Tensor appearance_features(const Tensor& eps_hat);

// anchors [n, c], positives [n, n_pos, c], negatives [n, n_neg, c]. Vectors are
// L2-normalized before dot products. Returns
//   sum_i -log( sum_j e^{a_i.p_ij/tau} / (sum_j e^{a_i.p_ij/tau} + sum_k e^{a_i.n_ik/tau}) ).
Tensor rcl_loss(const Tensor& anchors, const Tensor& positives, const Tensor& negatives, double tau);

enum class FeatureRole { dynamics, appearance };

struct DynamicsFeature {
  std::vector<double> vector;
  int relation_id = 0;
  FeatureRole role = FeatureRole::dynamics;
  std::int64_t video_id = 0;
  std::size_t frame = 0;
  std::size_t timestep = 0;

  bool operator==(const DynamicsFeature&) const = default;
};

class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity = 64);

  // Appends in order; evicts the oldest entries beyond capacity.
  void push(std::span<const DynamicsFeature> feats);
  void clear() { queue_.clear(); }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return queue_.size(); }
  const std::deque<DynamicsFeature>& entries() const { return queue_; }

  bool operator==(const MemoryBank&) const = default;

 private:
  std::size_t capacity_;
  std::deque<DynamicsFeature> queue_;
};

MemoryBank bank_push(MemoryBank bank, std::span<const DynamicsFeature> feats);

struct ContrastSamples {
  Tensor positives;  // [n_anchors, n_pos, c]
  Tensor negatives;  // [n_anchors, n_neg, c]
};

// Positives: dynamics features with the same relation from a different video.
// Negatives: appearance features from any video. Each anchor draws its own
// samples without replacement. Returns nullopt when the bank cannot supply
// n_pos positives and n_neg negatives (the loss term is skipped).
std::optional<ContrastSamples> sample_contrast(const MemoryBank& bank, int relation_id,
                                               std::int64_t current_video, std::size_t n_anchors,
                                               std::size_t n_pos, std::size_t n_neg, Rng& rng);

// Rows of a [rows, c] tensor as detached bank entries.
std::vector<DynamicsFeature> to_bank_features(const Tensor& features, FeatureRole role,
                                              int relation_id, std::int64_t video_id,
                                              std::size_t timestep);

}  // namespace rlt
