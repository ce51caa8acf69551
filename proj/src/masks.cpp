#include "rlt/masks.hpp"

#include <algorithm>

#include "rlt/errors.hpp"

namespace rlt {

namespace {

void check_range(const Tensor& m, const char* what) {
  for (double v : m.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError(std::string(what) + ": mask value " + std::to_string(v) +
                            " outside [0, 1]");
    }
  }
}

}  // namespace

const Tensor& MaskSet::latent(MaskKind kind) const {
  switch (kind) {
    case MaskKind::subject1:
      return latent_s1;
    case MaskKind::subject2:
      return latent_s2;
    default:
      return latent_r;
  }
}

Tensor relation_mask(const Tensor& m_s1, const Tensor& m_s2) {
  if (m_s1.shape() != m_s2.shape()) {
    throw DimensionError("relation_mask: " + shape_str(m_s1.shape()) + " vs " +
                         shape_str(m_s2.shape()));
  }
  check_range(m_s1, "relation_mask");
  check_range(m_s2, "relation_mask");
  std::vector<double> out(m_s1.numel());
  const auto& a = m_s1.values();
  const auto& b = m_s2.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a[i], b[i]);
  return Tensor::from(m_s1.shape(), std::move(out));
}

Tensor to_latent(const Tensor& mask, std::size_t temporal_factor, std::size_t patch) {
  if (mask.ndim() != 3) throw DimensionError("to_latent: expected [F, H, W], got " + shape_str(mask.shape()));
  const std::size_t F = mask.dim(0), H = mask.dim(1), W = mask.dim(2);
  if (temporal_factor == 0 || patch == 0 || F % temporal_factor != 0 || H % patch != 0 ||
      W % patch != 0) {
    throw ConfigError("to_latent: mask " + shape_str(mask.shape()) + " not divisible by (" +
                      std::to_string(temporal_factor) + ", " + std::to_string(patch) + ", " +
                      std::to_string(patch) + ")");
  }
  const std::size_t f = F / temporal_factor, h = H / patch, w = W / patch;
  const double inv = 1.0 / static_cast<double>(temporal_factor * patch * patch);
  const auto& m = mask.values();
  std::vector<double> out(f * h * w, 0.0);
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t hi = 0; hi < h; ++hi)
      for (std::size_t wi = 0; wi < w; ++wi) {
        double s = 0.0;
        for (std::size_t dt = 0; dt < temporal_factor; ++dt)
          for (std::size_t dy = 0; dy < patch; ++dy)
            for (std::size_t dx = 0; dx < patch; ++dx)
              s += m[((fi * temporal_factor + dt) * H + hi * patch + dy) * W + wi * patch + dx];
        out[(fi * h + hi) * w + wi] = s * inv;
      }
  return Tensor::from({f, h, w}, std::move(out));
}

MaskSet build_mask_set(const Tensor& m_s1, const Tensor& m_s2, std::size_t temporal_factor,
                       std::size_t patch) {
  MaskSet set;
  set.m_s1 = m_s1;
  set.m_s2 = m_s2;
  set.m_r = relation_mask(m_s1, m_s2);
  set.latent_s1 = to_latent(m_s1, temporal_factor, patch);
  set.latent_s2 = to_latent(m_s2, temporal_factor, patch);
  set.latent_r = to_latent(set.m_r, temporal_factor, patch);
  return set;
}

Tensor masked_loss(const Tensor& eps, const Tensor& eps_hat, const Tensor& latent_mask,
                   double lambda_m) {
  if (eps.shape() != eps_hat.shape()) {
    throw DimensionError("masked_loss: " + shape_str(eps.shape()) + " vs " + shape_str(eps_hat.shape()));
  }
  if (!(lambda_m >= 0.0)) throw ConfigError("masked_loss: lambda_m must be >= 0");
  if (eps.ndim() != 4 || latent_mask.ndim() != 3 ||
      !std::equal(latent_mask.shape().begin(), latent_mask.shape().end(), eps.shape().begin())) {
    throw DimensionError("masked_loss: mask " + shape_str(latent_mask.shape()) +
                         " does not cover latent " + shape_str(eps.shape()));
  }
  const std::size_t c = eps.dim(3);
  const auto& m = latent_mask.values();
  std::vector<double> weight(eps.numel());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double wv = lambda_m * m[i] + 1.0;
    std::fill_n(weight.begin() + i * c, c, wv);
  }
  return mean(mul(Tensor::from(eps.shape(), std::move(weight)), square(sub(eps, eps_hat))));
}

}  // namespace rlt
