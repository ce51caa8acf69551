#include "rlt/rcl.hpp"

#include <algorithm>
#include <numeric>

#include "rlt/errors.hpp"

namespace rlt {

Tensor frame_differences(const Tensor& eps_hat) {
  if (eps_hat.ndim() != 4) {
    throw DimensionError("frame_differences: expected [f, h, w, c], got " + shape_str(eps_hat.shape()));
  }
  const std::size_t f = eps_hat.dim(0);
  if (f < 2) throw ContractError("frame_differences: need at least 2 frames");
  return sub(slice(eps_hat, 0, 1, f), slice(eps_hat, 0, 0, f - 1));
}

Tensor dynamics_features(const Tensor& diffs) {
  if (diffs.ndim() != 4) {
    throw DimensionError("dynamics_features: expected [f-1, h, w, c], got " + shape_str(diffs.shape()));
  }
  const std::size_t n = diffs.dim(0), hw = diffs.dim(1) * diffs.dim(2), c = diffs.dim(3);
  return mean(reshape(diffs, {n, hw, c}), 1);
}

Tensor appearance_features(const Tensor& eps_hat) {
  // Same spatial reduction as dynamics_features, applied to raw frames.
  return dynamics_features(eps_hat);
}

Tensor rcl_loss(const Tensor& anchors, const Tensor& positives, const Tensor& negatives, double tau) {
  if (!(tau > 0.0)) throw ConfigError("rcl_loss: temperature must be > 0");
  if (anchors.ndim() != 2 || positives.ndim() != 3 || negatives.ndim() != 3) {
    throw DimensionError("rcl_loss: expected anchors [n,c], positives [n,p,c], negatives [n,k,c]");
  }
  const std::size_t n = anchors.dim(0), c = anchors.dim(1);
  const std::size_t n_pos = positives.dim(1), n_neg = negatives.dim(1);
  if (positives.dim(0) != n || negatives.dim(0) != n || positives.dim(2) != c ||
      negatives.dim(2) != c) {
    throw DimensionError("rcl_loss: anchors " + shape_str(anchors.shape()) + ", positives " +
                         shape_str(positives.shape()) + ", negatives " +
                         shape_str(negatives.shape()) + " disagree");
  }
  if (n_pos < 1 || n_neg < 1) throw ContractError("rcl_loss: need n_pos >= 1 and n_neg >= 1");

  const Tensor a = l2_normalize(anchors, 1);
  const Tensor p = l2_normalize(positives, 2);
  const Tensor k = l2_normalize(negatives, 2);
  std::vector<Tensor> terms;
  terms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor ai = slice(a, 0, i, i + 1);                              // [1, c]
    const Tensor pi = reshape(slice(p, 0, i, i + 1), {n_pos, c});
    const Tensor ki = reshape(slice(k, 0, i, i + 1), {n_neg, c});
    const Tensor pos = scale(matmul_nt(pi, ai), 1.0 / tau);                // [n_pos, 1]
    const Tensor all = concat({pos, scale(matmul_nt(ki, ai), 1.0 / tau)}, 0);
    terms.push_back(sub(logsumexp(all, 0), logsumexp(pos, 0)));
  }
  return sum(concat(terms, 0));
}

// --- memory bank -----------------------------------------------------------

MemoryBank::MemoryBank(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("memory bank capacity must be >= 1");
}

void MemoryBank::push(std::span<const DynamicsFeature> feats) {
  for (const auto& f : feats) {
    queue_.push_back(f);
    if (queue_.size() > capacity_) queue_.pop_front();
  }
}

MemoryBank bank_push(MemoryBank bank, std::span<const DynamicsFeature> feats) {
  bank.push(feats);
  return bank;
}

std::optional<ContrastSamples> sample_contrast(const MemoryBank& bank, int relation_id,
                                               std::int64_t current_video, std::size_t n_anchors,
                                               std::size_t n_pos, std::size_t n_neg, Rng& rng) {
  if (n_pos < 1 || n_neg < 1) throw ConfigError("sample_contrast: n_pos and n_neg must be >= 1");
  std::vector<const DynamicsFeature*> pos_pool, neg_pool;
  for (const auto& e : bank.entries()) {
    if (e.role == FeatureRole::dynamics && e.relation_id == relation_id && e.video_id != current_video) {
      pos_pool.push_back(&e);
    } else if (e.role == FeatureRole::appearance) {
      neg_pool.push_back(&e);
    }
  }
  if (pos_pool.size() < n_pos || neg_pool.size() < n_neg || n_anchors == 0) return std::nullopt;
  const std::size_t c = pos_pool.front()->vector.size();

  auto draw = [&](const std::vector<const DynamicsFeature*>& pool, std::size_t count,
                  std::vector<double>& out) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `count` slots form the sample.
    for (std::size_t j = 0; j < count; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, idx.size() - 1);
      std::swap(idx[j], idx[pick(rng)]);
      const auto& v = pool[idx[j]]->vector;
      if (v.size() != c) throw DimensionError("sample_contrast: bank holds mixed feature widths");
      out.insert(out.end(), v.begin(), v.end());
    }
  };

  std::vector<double> p, n;
  p.reserve(n_anchors * n_pos * c);
  n.reserve(n_anchors * n_neg * c);
  for (std::size_t i = 0; i < n_anchors; ++i) {
    draw(pos_pool, n_pos, p);
    draw(neg_pool, n_neg, n);
  }
  return ContrastSamples{Tensor::from({n_anchors, n_pos, c}, std::move(p)),
                         Tensor::from({n_anchors, n_neg, c}, std::move(n))};
}

std::vector<DynamicsFeature> to_bank_features(const Tensor& features, FeatureRole role,
                                              int relation_id, std::int64_t video_id,
                                              std::size_t timestep) {
  if (features.ndim() != 2) throw DimensionError("to_bank_features: expected [rows, c]");
  const std::size_t rows = features.dim(0), c = features.dim(1);
  const auto& v = features.values();
  std::vector<DynamicsFeature> out;
  out.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    DynamicsFeature f;
    f.vector.assign(v.begin() + r * c, v.begin() + (r + 1) * c);
    f.relation_id = relation_id;
    f.role = role;
    f.video_id = video_id;
    f.frame = r;
    f.timestep = timestep;
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace rlt
