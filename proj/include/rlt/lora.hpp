#pragma once

// Low-rank adapters and the relation LoRA triplet.
//
// Relation adapters sit on the query/key projections, one subject adapter set
// per subject sits on the value projection, and the FFN set sits on the
// linear layers around attention (FFN-in, FFN-out, attention output). Text and
// vision branches carry separate adapter objects.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlt/model_config.hpp"
#include "rlt/tensor.hpp"

namespace rlt {

enum class Branch { text, vision };
enum class Target { q, k, v, ffn_in, ffn_out, attn_out };

std::string_view to_string(Branch b);
std::string_view to_string(Target t);
Branch branch_from_string(std::string_view s);
Target target_from_string(std::string_view s);

struct LoraBinding {
  std::size_t layer = 0;
  Target matrix = Target::q;
  Branch branch = Branch::vision;

  auto operator<=>(const LoraBinding&) const = default;
};

// delta(x) = scale * up * (down * x); up == 0 makes the adapter an exact no-op.
struct LoraAdapter {
  Tensor down;  // [rank, d_in]
  Tensor up;    // [d_out, rank]
  double scale = 1.0;

  std::size_t rank() const { return down.dim(0); }
  std::size_t d_in() const { return down.dim(1); }
  std::size_t d_out() const { return up.dim(0); }
};

using LoraSet = std::map<LoraBinding, LoraAdapter>;

enum class SetKind { relation, subject1, subject2, ffn };
std::string_view to_string(SetKind k);
SetKind set_kind_from_string(std::string_view s);
inline constexpr std::array<SetKind, 4> kAllSets = {SetKind::relation, SetKind::subject1,
                                                     SetKind::subject2, SetKind::ffn};

// Which attention projections the relation and subject adapters occupy.
// Written "<relation>|<subject>", e.g. "QK|V" (default), "V|QK", "Q|KV", "KV|Q".
struct Placement {
  std::vector<Target> relation = {Target::q, Target::k};
  std::vector<Target> subject = {Target::v};

  static Placement parse(std::string_view text);
  std::string name() const;
  bool operator==(const Placement&) const = default;
};

struct TripletConfig {
  LoraSet relation;
  LoraSet subject1;
  LoraSet subject2;
  LoraSet ffn;
  std::array<std::string, 3> pattern = {"S1", "R", "S2"};
  Placement placement;

  const LoraSet& set(SetKind k) const;
  LoraSet& set(SetKind k);

  // Every adapter bound to b, in relation, subject1, subject2, ffn order.
  std::vector<const LoraAdapter*> adapters_for(const LoraBinding& b) const;
  std::vector<Tensor> parameters(SetKind k) const;
  std::vector<Tensor> parameters() const;
  std::size_t max_layer() const;
  bool has_target(Target t) const;
};

// down ~ N(0, 1/rank), up = 0. Deterministic given seed.
TripletConfig init_triplet(const ModelConfig& cfg, std::size_t rank, double scale,
                           std::uint64_t seed, const Placement& placement = {});

// x: [n, d_in], weight: [d_out, d_in]. Returns x W^T + sum_a scale_a (x down_a^T) up_a^T.
Tensor apply_adapter(const Tensor& weight, const Tensor& x,
                     std::span<const LoraAdapter* const> adapters);

enum class Choice { relation, subject1, subject2 };
enum class MaskKind { relation, subject1, subject2 };
std::string_view to_string(Choice c);

struct Selection {
  Choice choice = Choice::relation;
  std::vector<SetKind> trainable;
  MaskKind mask_kind = MaskKind::relation;

  bool trains(SetKind k) const;
};

Selection make_selection(Choice c);
// Uniform over {relation, subject1, subject2}.
Selection select_active(Rng& rng);

// Relation and FFN sets only; subject adapters are dropped for inference.
TripletConfig inference_view(const TripletConfig& triplet);

// Deep copy with fresh parameter leaves.
TripletConfig clone_triplet(const TripletConfig& triplet);

}  // namespace rlt
