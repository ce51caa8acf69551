#include "rlt/lora.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "rlt/errors.hpp"

namespace rlt {

namespace {

constexpr std::array<std::string_view, 6> kTargetNames = {"q", "k", "v", "ffn_in", "ffn_out",
                                                          "attn_out"};
constexpr std::array<std::string_view, 4> kSetNames = {"relation", "subject1", "subject2", "ffn"};

std::pair<std::size_t, std::size_t> target_dims(const ModelConfig& cfg, Target t) {
  switch (t) {
    case Target::ffn_in:
      return {cfg.d_model, cfg.ffn_dim()};
    case Target::ffn_out:
      return {cfg.ffn_dim(), cfg.d_model};
    default:
      return {cfg.d_model, cfg.d_model};
  }
}

bool is_attention_projection(Target t) { return t == Target::q || t == Target::k || t == Target::v; }

}  // namespace

std::string_view to_string(Branch b) { return b == Branch::text ? "text" : "vision"; }

std::string_view to_string(Target t) { return kTargetNames[static_cast<std::size_t>(t)]; }

std::string_view to_string(SetKind k) { return kSetNames[static_cast<std::size_t>(k)]; }

std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::relation:
      return "relation";
    case Choice::subject1:
      return "subject1";
    default:
      return "subject2";
  }
}

Branch branch_from_string(std::string_view s) {
  if (s == "text") return Branch::text;
  if (s == "vision") return Branch::vision;
  throw ConfigError("unknown branch '" + std::string(s) + "'");
}

Target target_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kTargetNames.size(); ++i)
    if (kTargetNames[i] == s) return static_cast<Target>(i);
  throw ConfigError("unknown LoRA target '" + std::string(s) + "'");
}

SetKind set_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kSetNames.size(); ++i)
    if (kSetNames[i] == s) return static_cast<SetKind>(i);
  throw ConfigError("unknown LoRA set '" + std::string(s) + "'");
}

// --- Placement -------------------------------------------------------------

Placement Placement::parse(std::string_view text) {
  const auto bar = text.find('|');
  if (bar == std::string_view::npos) {
    throw ConfigError("placement '" + std::string(text) + "' must look like QK|V");
  }
  auto letters = [&](std::string_view part) {
    std::vector<Target> out;
    for (char c : part) {
      switch (c) {
        case 'Q': case 'q': out.push_back(Target::q); break;
        case 'K': case 'k': out.push_back(Target::k); break;
        case 'V': case 'v': out.push_back(Target::v); break;
        case ',': case ' ': break;
        default:
          throw ConfigError("placement '" + std::string(text) + "': unexpected '" + c + "'");
      }
    }
    return out;
  };
  Placement p;
  p.relation = letters(text.substr(0, bar));
  p.subject = letters(text.substr(bar + 1));
  if (p.relation.empty() || p.subject.empty()) {
    throw ConfigError("placement '" + std::string(text) + "' needs targets on both sides");
  }
  for (Target t : p.relation) {
    if (std::count(p.relation.begin(), p.relation.end(), t) > 1 ||
        std::find(p.subject.begin(), p.subject.end(), t) != p.subject.end()) {
      throw ConfigError("placement '" + std::string(text) + "' reuses a projection");
    }
  }
  return p;
}

std::string Placement::name() const {
  std::string out;
  for (Target t : relation) out += static_cast<char>(std::toupper(to_string(t)[0]));
  out += '|';
  for (Target t : subject) out += static_cast<char>(std::toupper(to_string(t)[0]));
  return out;
}

// --- TripletConfig ---------------------------------------------------------

const LoraSet& TripletConfig::set(SetKind k) const {
  switch (k) {
    case SetKind::relation:
      return relation;
    case SetKind::subject1:
      return subject1;
    case SetKind::subject2:
      return subject2;
    default:
      return ffn;
  }
}

LoraSet& TripletConfig::set(SetKind k) {
  return const_cast<LoraSet&>(static_cast<const TripletConfig&>(*this).set(k));
}

std::vector<const LoraAdapter*> TripletConfig::adapters_for(const LoraBinding& b) const {
  std::vector<const LoraAdapter*> out;
  for (SetKind k : kAllSets) {
    const auto& s = set(k);
    if (auto it = s.find(b); it != s.end()) out.push_back(&it->second);
  }
  return out;
}

std::vector<Tensor> TripletConfig::parameters(SetKind k) const {
  std::vector<Tensor> out;
  for (const auto& [binding, a] : set(k)) {
    out.push_back(a.down);
    out.push_back(a.up);
  }
  return out;
}

std::vector<Tensor> TripletConfig::parameters() const {
  std::vector<Tensor> out;
  for (SetKind k : kAllSets) {
    auto p = parameters(k);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t TripletConfig::max_layer() const {
  std::size_t m = 0;
  for (SetKind k : kAllSets)
    for (const auto& [b, a] : set(k)) m = std::max(m, b.layer);
  return m;
}

bool TripletConfig::has_target(Target t) const {
  for (SetKind k : kAllSets)
    for (const auto& [b, a] : set(k))
      if (b.matrix == t) return true;
  return false;
}

// --- construction ----------------------------------------------------------

TripletConfig init_triplet(const ModelConfig& cfg, std::size_t rank, double scale,
                           std::uint64_t seed, const Placement& placement) {
  cfg.validate();
  if (rank < 1) throw ConfigError("LoRA rank must be >= 1");
  if (!(scale > 0.0)) throw ConfigError("LoRA scale must be positive");
  for (Target t : placement.relation)
    if (!is_attention_projection(t)) throw ConfigError("relation adapters must target Q/K/V");
  for (Target t : placement.subject)
    if (!is_attention_projection(t)) throw ConfigError("subject adapters must target Q/K/V");

  TripletConfig tri;
  tri.placement = placement;
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(rank));

  auto make = [&](Target t) {
    const auto [d_in, d_out] = target_dims(cfg, t);
    if (rank > std::min(d_in, d_out)) {
      throw ConfigError("LoRA rank " + std::to_string(rank) + " exceeds min(d_in, d_out) = " +
                        std::to_string(std::min(d_in, d_out)) + " for " + std::string(to_string(t)));
    }
    LoraAdapter a;
    a.down = Tensor::parameter({rank, d_in}, gaussian({rank, d_in}, 0.0, stddev, rng).values());
    a.up = Tensor::parameter({d_out, rank}, std::vector<double>(d_out * rank, 0.0));
    a.scale = scale;
    return a;
  };

  const std::array<Branch, 2> branches = {Branch::text, Branch::vision};
  for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
    for (Branch br : branches) {
      for (Target t : placement.relation) tri.relation.emplace(LoraBinding{layer, t, br}, make(t));
      for (Target t : placement.subject) tri.subject1.emplace(LoraBinding{layer, t, br}, make(t));
      for (Target t : placement.subject) tri.subject2.emplace(LoraBinding{layer, t, br}, make(t));
      for (Target t : {Target::ffn_in, Target::ffn_out, Target::attn_out})
        tri.ffn.emplace(LoraBinding{layer, t, br}, make(t));
    }
  }
  return tri;
}

Tensor apply_adapter(const Tensor& weight, const Tensor& x,
                     std::span<const LoraAdapter* const> adapters) {
  if (weight.ndim() != 2 || x.ndim() != 2 || x.dim(1) != weight.dim(1)) {
    throw BindingError("apply_adapter: activations " + shape_str(x.shape()) +
                       " do not match weight " + shape_str(weight.shape()));
  }
  Tensor y = matmul_nt(x, weight);
  for (const LoraAdapter* a : adapters) {
    if (a->d_in() != weight.dim(1) || a->d_out() != weight.dim(0) || a->up.dim(1) != a->rank()) {
      throw BindingError("apply_adapter: adapter down " + shape_str(a->down.shape()) + " / up " +
                         shape_str(a->up.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
    }
    Tensor delta = matmul_nt(matmul_nt(x, a->down), a->up);
    y = add(y, a->scale == 1.0 ? delta : scale(delta, a->scale));
  }
  return y;
}

// --- selection -------------------------------------------------------------

bool Selection::trains(SetKind k) const {
  return std::find(trainable.begin(), trainable.end(), k) != trainable.end();
}

Selection make_selection(Choice c) {
  Selection s;
  s.choice = c;
  switch (c) {
    case Choice::relation:
      s.trainable = {SetKind::relation, SetKind::subject1, SetKind::subject2, SetKind::ffn};
      s.mask_kind = MaskKind::relation;
      break;
    case Choice::subject1:
      s.trainable = {SetKind::subject1, SetKind::ffn};
      s.mask_kind = MaskKind::subject1;
      break;
    case Choice::subject2:
      s.trainable = {SetKind::subject2, SetKind::ffn};
      s.mask_kind = MaskKind::subject2;
      break;
  }
  return s;
}

Selection select_active(Rng& rng) {
  std::uniform_int_distribution<int> pick(0, 2);
  return make_selection(static_cast<Choice>(pick(rng)));
}

TripletConfig inference_view(const TripletConfig& triplet) {
  TripletConfig view;
  view.relation = triplet.relation;
  view.ffn = triplet.ffn;
  view.pattern = triplet.pattern;
  view.placement = triplet.placement;
  return view;
}

TripletConfig clone_triplet(const TripletConfig& triplet) {
  TripletConfig out;
  out.pattern = triplet.pattern;
  out.placement = triplet.placement;
  for (SetKind k : kAllSets) {
    for (const auto& [b, a] : triplet.set(k)) {
      out.set(k).emplace(b, LoraAdapter{a.down.clone(), a.up.clone(), a.scale});
    }
  }
  return out;
}

}  // namespace rlt
