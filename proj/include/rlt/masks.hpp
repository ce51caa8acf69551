#pragma once

// Subject / relation masks and the mask-weighted reconstruction loss.

#include <cstddef>

#include "rlt/lora.hpp"
#include "rlt/tensor.hpp"

namespace rlt {

struct MaskSet {
  Tensor m_s1, m_s2, m_r;                    // [F, H, W], values in [0, 1]
  Tensor latent_s1, latent_s2, latent_r;     // [F/Tc, H/p, W/p]

  const Tensor& latent(MaskKind kind) const;
};

// Elementwise max (soft union). Values must lie in [0, 1].
Tensor relation_mask(const Tensor& m_s1, const Tensor& m_s2);

// Block mean over every (temporal_factor x patch x patch) cell.
Tensor to_latent(const Tensor& mask, std::size_t temporal_factor, std::size_t patch);

MaskSet build_mask_set(const Tensor& m_s1, const Tensor& m_s2, std::size_t temporal_factor,
                       std::size_t patch);

// mean((lambda_m * M + 1) * (eps - eps_hat)^2), with M [f,h,w] broadcast over
// the latent channel axis of eps [f,h,w,c].
Tensor masked_loss(const Tensor& eps, const Tensor& eps_hat, const Tensor& latent_mask,
                   double lambda_m);

}  // namespace rlt
