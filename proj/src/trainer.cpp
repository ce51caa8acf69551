#include "rlt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rlt/errors.hpp"
#include "rlt/tensor_io.hpp"
#include "rlt/vocab.hpp"

namespace rlt {

Tensor encode_video(const Tensor& video, const ModelConfig& cfg) {
  Tensor p = patchify(video, cfg);
  std::vector<double> v = p.values();
  for (double& x : v) x = 2.0 * x - 1.0;
  return Tensor::from(p.shape(), std::move(v));
}

Tensor decode_latent(const Tensor& latent, const ModelConfig& cfg) {
  Tensor video = unpatchify(latent, cfg);
  std::vector<double> v = video.values();
  for (double& x : v) x = std::clamp(0.5 * (x + 1.0), 0.0, 1.0);
  return Tensor::from(video.shape(), std::move(v));
}

TrainItem make_train_item(const DatasetEntry& entry, const ModelConfig& cfg, std::int64_t video_id) {
  const Shape expected = {cfg.frames, cfg.height, cfg.width, cfg.channels};
  if (entry.video.shape() != expected) {
    throw DatasetError("video " + std::to_string(video_id) + " has shape " +
                       shape_str(entry.video.shape()) + ", model expects " + shape_str(expected));
  }
  TrainItem item;
  item.z0 = encode_video(entry.video, cfg);
  item.masks = build_mask_set(entry.masks.m_s1, entry.masks.m_s2, cfg.temporal_factor, cfg.patch);
  item.prompt = entry.prompt;
  item.relation_id = static_cast<int>(entry.relation);
  item.video_id = video_id;
  return item;
}

std::vector<std::pair<std::string, Tensor>> named_lora_parameters(const TripletConfig& triplet) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (SetKind k : kAllSets) {
    for (const auto& [b, a] : triplet.set(k)) {
      const std::string base = "lora/" + std::string(to_string(k)) + "/" +
                               std::string(to_string(b.branch)) + "/layer" +
                               std::to_string(b.layer) + "/" + std::string(to_string(b.matrix));
      out.emplace_back(base + "/down", a.down);
      out.emplace_back(base + "/up", a.up);
    }
  }
  return out;
}

// --- Trainer ---------------------------------------------------------------

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg)
    : cfg_((train_cfg.validate(), train_cfg)),
      model_(model_cfg, train_cfg.seed),
      triplet_(init_triplet(model_cfg, train_cfg.rank, train_cfg.lora_scale, train_cfg.seed + 1,
                            Placement::parse(train_cfg.placement))),
      bank_(train_cfg.bank_capacity),
      rng_(train_cfg.seed + 2),
      contrast_rng_(train_cfg.seed + 3) {
  named_ = named_lora_parameters(triplet_);
  for (SetKind k : kAllSets)
    for (const Tensor& p : triplet_.parameters(k)) set_of_[p.node()] = k;
}

StepDraws Trainer::draw(const TrainItem& item, std::optional<Choice> force) {
  StepDraws d;
  d.selection = select_active(rng_);
  if (force) d.selection = make_selection(*force);
  const auto& mc = model_.config();
  d.timestep = std::uniform_int_distribution<std::size_t>(0, mc.timesteps - 1)(rng_);
  d.eps = gaussian(item.z0.shape(), 0.0, 1.0, rng_);
  d.prompt_dropped = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < cfg_.prompt_dropout;
  d.prompt = d.prompt_dropped ? std::vector<int>{kNullToken} : item.prompt;
  d.contrast = sample_contrast(bank_, item.relation_id, item.video_id, item.z0.dim(0) - 1, cfg_.n_pos,
                               cfg_.n_neg, contrast_rng_);
  return d;
}

LossTerms Trainer::loss(const TrainItem& item, const StepDraws& d) const {
  LossTerms out;
  const Tensor z_t = add_noise(item.z0, d.timestep, d.eps, model_.schedule());
  out.eps_hat = model_.forward(z_t, d.prompt, d.timestep, &triplet_).eps_hat;
  out.l_rec = masked_loss(d.eps, out.eps_hat, item.masks.latent(d.selection.mask_kind), cfg_.lambda_m);
  out.anchors = dynamics_features(frame_differences(out.eps_hat));
  out.appearance = appearance_features(out.eps_hat);
  if (d.contrast) {
    out.rcl_applied = true;
    out.l_rcl = rcl_loss(out.anchors, d.contrast->positives, d.contrast->negatives, cfg_.tau);
    out.l_total = cfg_.lambda_1 == 0.0 ? out.l_rec : add(out.l_rec, scale(out.l_rcl, cfg_.lambda_1));
  } else {
    out.l_rcl = Tensor::scalar(0.0);
    out.l_total = out.l_rec;
  }
  return out;
}

namespace {

double l2(const Tensor& t) {
  double s = 0;
  for (double x : t.values()) s += x * x;
  return std::sqrt(s);
}

}  // namespace

StepMetrics Trainer::step(const TrainItem& item, std::optional<Choice> force) {
  const StepDraws d = draw(item, force);
  StepMetrics m;
  m.iteration = static_cast<std::size_t>(iteration_);
  m.choice = d.selection.choice;
  m.timestep = d.timestep;
  m.prompt_dropped = d.prompt_dropped;
  m.video_id = item.video_id;
  LossTerms terms;
  {
    Graph graph;
    terms = loss(item, d);
    m.l_rec = terms.l_rec.item();
    m.l_rcl = terms.l_rcl.item();
    m.l_total = terms.l_total.item();
    m.rcl_applied = terms.rcl_applied;
    if (!std::isfinite(m.l_total)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << iteration_ << ": l_rec=" << m.l_rec
         << " l_rcl=" << m.l_rcl << "; inputs: video_id=" << item.video_id
         << " timestep=" << d.timestep << " choice=" << to_string(d.selection.choice)
         << " prompt='" << decode_prompt(d.prompt) << "' |z0|=" << l2(item.z0)
         << " |eps|=" << l2(d.eps) << " |eps_hat|=" << l2(terms.eps_hat);
      throw NumericError(os.str());
    }
    backward(terms.l_total);
    apply_update(d.selection);
  }
  for (auto& [name, p] : named_) p.node()->grad.clear();

  const auto dyn = to_bank_features(terms.anchors.detach(), FeatureRole::dynamics, item.relation_id,
                                    item.video_id, d.timestep);
  const auto app = to_bank_features(terms.appearance.detach(), FeatureRole::appearance,
                                    item.relation_id, item.video_id, d.timestep);
  bank_.push(dyn);
  bank_.push(app);
  ++iteration_;
  return m;
}

StepMetrics Trainer::step(std::span<const TrainItem> items) {
  if (items.empty()) throw DatasetError("training needs at least one dataset entry");
  const std::size_t i = std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng_);
  return step(items[i]);
}

void Trainer::apply_update(const Selection& sel) {
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  for (auto& [name, p] : named_) {
    if (!sel.trains(set_of_.at(p.node())) || !p.has_grad()) continue;
    AdamState& st = moments_[name];
    if (st.m.empty()) {
      st.m.assign(p.numel(), 0.0);
      st.v.assign(p.numel(), 0.0);
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
      st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = st.m[i] / c1, vhat = st.v[i] / c2;
      w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) + cfg_.weight_decay * w[i]);
    }
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.model = model_.config();
  c.train = cfg_;
  c.base = model_.weights();
  c.triplet = clone_triplet(triplet_);
  c.moments = moments_;
  c.iteration = iteration_;
  return c;
}

Checkpoint train(std::span<const DatasetEntry> dataset, const ModelConfig& model_cfg,
                 const TrainConfig& train_cfg, const TrainHooks& hooks) {
  if (dataset.empty()) throw DatasetError("training dataset is empty");
  const Shape first = dataset.front().video.shape();
  for (std::size_t i = 1; i < dataset.size(); ++i) {
    if (dataset[i].video.shape() != first) {
      throw DatasetError("dataset entry " + std::to_string(i) + " has video shape " +
                         shape_str(dataset[i].video.shape()) + ", entry 0 has " + shape_str(first));
    }
  }
  Trainer trainer(model_cfg, train_cfg);
  std::vector<TrainItem> items;
  items.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    items.push_back(make_train_item(dataset[i], model_cfg, static_cast<std::int64_t>(i)));
  }
  for (std::size_t it = 0; it < train_cfg.iterations; ++it) {
    const StepMetrics m = trainer.step(items);
    if (hooks.on_step) hooks.on_step(m);
    const bool periodic = train_cfg.checkpoint_every > 0 && (it + 1) % train_cfg.checkpoint_every == 0 &&
                          it + 1 < train_cfg.iterations;
    if (periodic && hooks.on_checkpoint) hooks.on_checkpoint(trainer.checkpoint());
  }
  Checkpoint final_ckpt = trainer.checkpoint();
  if (hooks.on_checkpoint) hooks.on_checkpoint(final_ckpt);
  return final_ckpt;
}

// --- checkpoint I/O --------------------------------------------------------

namespace {

constexpr const char* kConfigBlob = "__config__";
constexpr const char* kIterationTensor = "__iteration__";

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Container c;
  const nlohmann::json cfg = {{"model", to_json(ckpt.model)}, {"train", to_json(ckpt.train)}};
  c.blobs.emplace_back(kConfigBlob, cfg.dump());
  c.tensors.emplace_back(kIterationTensor, Tensor::from({1}, {static_cast<double>(ckpt.iteration)}));
  for (const auto& [name, t] : ckpt.base.named()) c.tensors.emplace_back(name, *t);
  for (const auto& [name, t] : named_lora_parameters(ckpt.triplet)) c.tensors.emplace_back(name, t);
  for (const auto& [name, st] : ckpt.moments) {
    const Shape s = {st.m.size()};
    c.tensors.emplace_back("adam/m/" + name, Tensor::from(s, st.m));
    c.tensors.emplace_back("adam/v/" + name, Tensor::from(s, st.v));
    c.tensors.emplace_back("adam/step/" + name, Tensor::from({1}, {static_cast<double>(st.step)}));
  }
  write_container(path, c);
}

namespace {

struct StoredConfig {
  ModelConfig model;
  TrainConfig train;
};

StoredConfig stored_config(const Container& c) {
  const std::string* blob = c.find_blob(kConfigBlob);
  if (!blob) throw FormatError("checkpoint has no __config__ entry");
  try {
    const auto j = nlohmann::json::parse(*blob);
    return {model_config_from_json(j.at("model")), train_config_from_json(j.at("train"))};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint __config__ is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint __config__: ") + e.what());
  }
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  const Container c = read_container(path);
  const StoredConfig stored = stored_config(c);

  // Build the expected structure, then check every stored model tensor against it
  // in file order so the first offender is named.
  Denoiser shape_model(expected, 0);
  ModelWeights weights = shape_model.weights();
  TripletConfig triplet = init_triplet(expected, stored.train.rank, stored.train.lora_scale, 0,
                                       Placement::parse(stored.train.placement));
  std::map<std::string, Tensor*> base_slots;
  for (auto& [name, t] : weights.named()) base_slots[name] = t;
  std::map<std::string, Tensor> lora_slots;
  for (auto& [name, t] : named_lora_parameters(triplet)) lora_slots.emplace(name, t);

  std::size_t seen_base = 0, seen_lora = 0;
  Checkpoint ck;
  for (const auto& [name, t] : c.tensors) {
    const bool is_base = name.starts_with("base/"), is_lora = name.starts_with("lora/");
    if (!is_base && !is_lora) continue;
    Shape want;
    if (is_base) {
      auto it = base_slots.find(name);
      if (it == base_slots.end()) throw ShapeError("checkpoint tensor " + name + " has no place in the model");
      want = it->second->shape();
    } else {
      auto it = lora_slots.find(name);
      if (it == lora_slots.end()) throw ShapeError("checkpoint tensor " + name + " has no place in the model");
      want = it->second.shape();
    }
    if (t.shape() != want) {
      throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) +
                       ", model expects " + shape_str(want));
    }
    if (is_base) {
      *base_slots[name] = Tensor::from(want, t.values());
      ++seen_base;
    } else {
      auto dst = lora_slots.at(name).mutable_data();
      std::copy(t.values().begin(), t.values().end(), dst.begin());
      ++seen_lora;
    }
  }
  if (seen_base != base_slots.size() || seen_lora != lora_slots.size()) {
    for (const auto& [name, slot] : base_slots)
      if (!c.find_tensor(name)) throw ShapeError("checkpoint is missing tensor " + name);
    for (const auto& [name, slot] : lora_slots)
      if (!c.find_tensor(name)) throw ShapeError("checkpoint is missing tensor " + name);
  }

  ck.model = expected;
  ck.train = stored.train;
  ck.base = std::move(weights);
  ck.triplet = std::move(triplet);
  const Tensor* iter = c.find_tensor(kIterationTensor);
  if (!iter || iter->numel() != 1) throw FormatError("checkpoint has no iteration counter");
  ck.iteration = static_cast<std::uint64_t>(iter->values()[0]);
  for (const auto& [name, t] : c.tensors) {
    if (!name.starts_with("adam/m/")) continue;
    const std::string param = name.substr(7);
    const Tensor* v = c.find_tensor("adam/v/" + param);
    const Tensor* s = c.find_tensor("adam/step/" + param);
    if (!v || !s || !lora_slots.contains(param) || t.numel() != lora_slots.at(param).numel() ||
        v->numel() != t.numel()) {
      throw FormatError("checkpoint optimizer state for " + param + " is inconsistent");
    }
    ck.moments[param] = AdamState{t.values(), v->values(), static_cast<std::uint64_t>(s->values()[0])};
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path);
  return load_checkpoint(path, stored_config(c).model);
}

// --- sampling --------------------------------------------------------------

Tensor guided_eps(const Tensor& eps_null, const Tensor& eps_cond, double s) {
  if (eps_null.shape() != eps_cond.shape()) {
    throw DimensionError("guided_eps: " + shape_str(eps_null.shape()) + " vs " +
                         shape_str(eps_cond.shape()));
  }
  if (s == 0.0) return eps_null;
  if (s == 1.0) return eps_cond;
  std::vector<double> out(eps_null.numel());
  const auto& u = eps_null.values();
  const auto& c = eps_cond.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - s) * u[i] + s * c[i];
  return Tensor::from(eps_null.shape(), std::move(out));
}

std::vector<std::size_t> ddim_timesteps(std::size_t total, std::size_t steps) {
  if (steps < 1) throw ConfigError("sampling steps must be >= 1");
  if (steps > total) {
    throw ConfigError("sampling steps " + std::to_string(steps) + " exceed training timesteps " +
                      std::to_string(total));
  }
  std::vector<std::size_t> ts(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 1.0 : static_cast<double>(steps - 1 - i) / static_cast<double>(steps - 1);
    ts[i] = static_cast<std::size_t>(std::lround(frac * static_cast<double>(total - 1)));
  }
  return ts;
}

Tensor sample_with(const Denoiser& model, const TripletConfig* triplet, std::span<const int> prompt,
                   std::size_t steps, double cfg_scale, Rng& rng) {
  const ModelConfig& mc = model.config();
  const auto ts = ddim_timesteps(mc.timesteps, steps);
  if (!std::isfinite(cfg_scale)) throw ConfigError("cfg scale must be finite");
  NoGradGuard no_grad;
  const Shape latent = {mc.latent_frames(), mc.latent_height(), mc.latent_width(), mc.latent_channels()};
  std::vector<double> z = gaussian(latent, 0.0, 1.0, rng).values();
  const std::vector<int> null_prompt = {kNullToken};
  // Both guidance branches coincide for the null prompt.
  const bool unconditional = std::equal(prompt.begin(), prompt.end(), null_prompt.begin(), null_prompt.end());

  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const Tensor zt = Tensor::from(latent, z);
    Tensor eps;
    if (unconditional || cfg_scale == 0.0) {
      eps = model.forward(zt, null_prompt, t, triplet).eps_hat;
    } else if (cfg_scale == 1.0) {
      eps = model.forward(zt, prompt, t, triplet).eps_hat;
    } else {
      eps = guided_eps(model.forward(zt, null_prompt, t, triplet).eps_hat,
                       model.forward(zt, prompt, t, triplet).eps_hat, cfg_scale);
    }
    const double ab = model.schedule().alpha_bar(t);
    const double ab_prev = i + 1 < ts.size() ? model.schedule().alpha_bar(ts[i + 1]) : 1.0;
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const auto& e = eps.values();
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double x0 = std::clamp((z[k] - sb * e[k]) / sa, -1.0, 1.0);
      const double e2 = (z[k] - sa * x0) / sb;
      z[k] = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * e2;
    }
    for (double v : z)
      if (!std::isfinite(v)) throw NumericError("sampling produced a non-finite latent at timestep " + std::to_string(t));
  }
  return decode_latent(Tensor::from(latent, std::move(z)), mc);
}

Tensor sample(const Checkpoint& ckpt, std::span<const int> prompt, std::size_t steps,
              double cfg_scale, Rng& rng) {
  const Denoiser model(ckpt.model, ckpt.base);
  const TripletConfig view = inference_view(ckpt.triplet);
  return sample_with(model, &view, prompt, steps, cfg_scale, rng);
}

}  // namespace rlt
