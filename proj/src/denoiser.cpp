#include "rlt/denoiser.hpp"

#include <cmath>

#include "rlt/errors.hpp"

namespace rlt {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (layers == 0) fail("layers must be >= 1");
  if (d_model == 0 || heads == 0) fail("d_model and heads must be positive");
  if (d_model % heads != 0) fail("d_model must be divisible by heads");
  if (d_model % 2 != 0 || d_model < 8) fail("d_model must be even and >= 8");
  if (ffn_mult == 0) fail("ffn_mult must be >= 1");
  if (text_len == 0 || vocab == 0) fail("text_len and vocab must be positive");
  if (frames == 0 || height == 0 || width == 0 || channels == 0) fail("video dims must be positive");
  if (temporal_factor == 0 || patch == 0) fail("temporal_factor and patch must be positive");
  if (frames % temporal_factor != 0) {
    fail("frames " + std::to_string(frames) + " not divisible by temporal_factor " +
         std::to_string(temporal_factor));
  }
  if (height % patch != 0 || width % patch != 0) {
    fail("height/width " + std::to_string(height) + "x" + std::to_string(width) +
         " not divisible by patch " + std::to_string(patch));
  }
  if (timesteps < 1) fail("timesteps must be >= 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    fail("betas must satisfy 0 < beta_start <= beta_end < 1");
  }
}

// --- patchify --------------------------------------------------------------

Tensor patchify(const Tensor& video, const ModelConfig& cfg) {
  cfg.validate();
  const Shape want = {cfg.frames, cfg.height, cfg.width, cfg.channels};
  if (video.shape() != want) {
    throw ConfigError("patchify: video " + shape_str(video.shape()) + " does not match config " +
                      shape_str(want));
  }
  const std::size_t tc = cfg.temporal_factor, p = cfg.patch, C = cfg.channels;
  const std::size_t f = cfg.latent_frames(), h = cfg.latent_height(), w = cfg.latent_width();
  const std::size_t c = cfg.latent_channels();
  const auto& v = video.values();
  std::vector<double> out(v.size());
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t hi = 0; hi < h; ++hi)
      for (std::size_t wi = 0; wi < w; ++wi)
        for (std::size_t dt = 0; dt < tc; ++dt)
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
              for (std::size_t ch = 0; ch < C; ++ch) {
                const std::size_t src =
                    (((fi * tc + dt) * cfg.height + hi * p + dy) * cfg.width + wi * p + dx) * C + ch;
                const std::size_t lc = ((dt * p + dy) * p + dx) * C + ch;
                out[((fi * h + hi) * w + wi) * c + lc] = v[src];
              }
  return Tensor::from({f, h, w, c}, std::move(out));
}

Tensor unpatchify(const Tensor& latent, const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t tc = cfg.temporal_factor, p = cfg.patch, C = cfg.channels;
  const std::size_t f = cfg.latent_frames(), h = cfg.latent_height(), w = cfg.latent_width();
  const std::size_t c = cfg.latent_channels();
  if (latent.shape() != Shape{f, h, w, c}) {
    throw ConfigError("unpatchify: latent " + shape_str(latent.shape()) + " does not match config " +
                      shape_str({f, h, w, c}));
  }
  const auto& v = latent.values();
  std::vector<double> out(v.size());
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t hi = 0; hi < h; ++hi)
      for (std::size_t wi = 0; wi < w; ++wi)
        for (std::size_t dt = 0; dt < tc; ++dt)
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
              for (std::size_t ch = 0; ch < C; ++ch) {
                const std::size_t dst =
                    (((fi * tc + dt) * cfg.height + hi * p + dy) * cfg.width + wi * p + dx) * C + ch;
                const std::size_t lc = ((dt * p + dy) * p + dx) * C + ch;
                out[dst] = v[((fi * h + hi) * w + wi) * c + lc];
              }
  return Tensor::from({cfg.frames, cfg.height, cfg.width, C}, std::move(out));
}

// --- noise -----------------------------------------------------------------

NoiseSchedule::NoiseSchedule(const ModelConfig& cfg)
    : NoiseSchedule(cfg.timesteps, cfg.beta_start, cfg.beta_end) {}

NoiseSchedule::NoiseSchedule(std::size_t timesteps, double beta_start, double beta_end) {
  if (timesteps < 1) throw ConfigError("noise schedule: timesteps must be >= 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ConfigError("noise schedule: need 0 < beta_start <= beta_end < 1");
  }
  betas_.resize(timesteps);
  alpha_bars_.resize(timesteps);
  double prod = 1.0;
  for (std::size_t t = 0; t < timesteps; ++t) {
    const double frac = timesteps == 1 ? 0.0 : static_cast<double>(t) / (timesteps - 1);
    betas_[t] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - betas_[t];
    alpha_bars_[t] = prod;
  }
}

Tensor add_noise_abar(const Tensor& z0, double alpha_bar, const Tensor& eps) {
  if (z0.shape() != eps.shape()) {
    throw DimensionError("add_noise: noise " + shape_str(eps.shape()) + " does not match latent " +
                         shape_str(z0.shape()));
  }
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw RangeError("add_noise: alpha_bar outside [0, 1]");
  return add(scale(z0, std::sqrt(alpha_bar)), scale(eps, std::sqrt(1.0 - alpha_bar)));
}

Tensor add_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t >= sched.size()) {
    throw RangeError("add_noise: timestep " + std::to_string(t) + " outside [0, " +
                     std::to_string(sched.size()) + ")");
  }
  return add_noise_abar(z0, sched.alpha_bar(t), eps);
}

Tensor diffusion_loss(const Tensor& eps, const Tensor& eps_hat) {
  if (eps.shape() != eps_hat.shape()) {
    throw DimensionError("diffusion_loss: " + shape_str(eps.shape()) + " vs " +
                         shape_str(eps_hat.shape()));
  }
  return mean(square(sub(eps, eps_hat)));
}

// --- weights ---------------------------------------------------------------

Tensor& BranchWeights::get(Target t) {
  return const_cast<Tensor&>(static_cast<const BranchWeights&>(*this).get(t));
}

const Tensor& BranchWeights::get(Target t) const {
  switch (t) {
    case Target::q:
      return q;
    case Target::k:
      return k;
    case Target::v:
      return v;
    case Target::attn_out:
      return attn_out;
    case Target::ffn_in:
      return ffn_in;
    default:
      return ffn_out;
  }
}

std::vector<std::pair<std::string, Tensor*>> ModelWeights::named() {
  std::vector<std::pair<std::string, Tensor*>> names = {{"base/patch_in", &patch_in},
                                                      {"base/patch_bias", &patch_bias},
                                                      {"base/embed", &embed},
                                                      {"base/out", &out},
                                                      {"base/out_bias", &out_bias}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (Branch b : {Branch::text, Branch::vision}) {
      for (Target t : {Target::q, Target::k, Target::v, Target::attn_out, Target::ffn_in,
                       Target::ffn_out}) {
        names.emplace_back("base/" + std::string(to_string(b)) + "/layer" + std::to_string(l) + "/" +
                             std::string(to_string(t)),
                           &layers[l].branch(b).get(t));
      }
    }
  }
  return names;
}

std::vector<std::pair<std::string, const Tensor*>> ModelWeights::named() const {
  auto m = const_cast<ModelWeights*>(this)->named();
  return {m.begin(), m.end()};
}

std::vector<double> sinusoidal_embedding(double position, std::size_t dim, double base) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(base, -static_cast<double>(i) / static_cast<double>(half));
    out[2 * i] = std::sin(position * freq);
    out[2 * i + 1] = std::cos(position * freq);
  }
  return out;
}

namespace {

constexpr double kPositionBase = 100.0;
constexpr double kTimestepBase = 10000.0;

Tensor init_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  return gaussian({rows, cols}, 0.0, 1.0 / std::sqrt(static_cast<double>(cols)), rng);
}

ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = cfg.d_model, c = cfg.latent_channels(), ffn = cfg.ffn_dim();
  ModelWeights w;
  w.patch_in = init_matrix(d, c, rng);
  w.patch_bias = Tensor::zeros({d});
  w.embed = gaussian({cfg.vocab, d}, 0.0, 1.0, rng);
  w.out = init_matrix(c, d, rng);
  w.out_bias = Tensor::zeros({c});
  w.layers.resize(cfg.layers);
  for (auto& layer : w.layers) {
    for (Branch b : {Branch::text, Branch::vision}) {
      auto& bw = layer.branch(b);
      bw.q = init_matrix(d, d, rng);
      bw.k = init_matrix(d, d, rng);
      bw.v = init_matrix(d, d, rng);
      bw.attn_out = init_matrix(d, d, rng);
      bw.ffn_in = init_matrix(ffn, d, rng);
      bw.ffn_out = init_matrix(d, ffn, rng);
    }
  }
  return w;
}

void check_weights(const ModelConfig& cfg, const ModelWeights& w) {
  const std::size_t d = cfg.d_model, c = cfg.latent_channels(), ffn = cfg.ffn_dim();
  auto expect = [](const Tensor& t, Shape s, const std::string& name) {
    if (t.shape() != s) {
      throw ShapeError("weight " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(s));
    }
  };
  expect(w.patch_in, {d, c}, "base/patch_in");
  expect(w.patch_bias, {d}, "base/patch_bias");
  expect(w.embed, {cfg.vocab, d}, "base/embed");
  expect(w.out, {c, d}, "base/out");
  expect(w.out_bias, {c}, "base/out_bias");
  if (w.layers.size() != cfg.layers) throw ShapeError("weights: layer count mismatch");
  for (const auto& [name, t] : w.named()) {
    if (name.find("/layer") == std::string::npos) continue;
    Shape s = {d, d};
    if (name.ends_with("/ffn_in")) s = {ffn, d};
    if (name.ends_with("/ffn_out")) s = {d, ffn};
    expect(*t, s, name);
  }
}

}  // namespace

Denoiser::Denoiser(const ModelConfig& cfg, std::uint64_t seed)
    : Denoiser(cfg, (cfg.validate(), init_weights(cfg, seed))) {}

Denoiser::Denoiser(const ModelConfig& cfg, ModelWeights weights)
    : cfg_(cfg), sched_(cfg), weights_(std::move(weights)) {
  cfg_.validate();
  check_weights(cfg_, weights_);

  // Vision positions: frame / row / column sinusoids concatenated.
  const std::size_t d = cfg_.d_model;
  const std::size_t dh = 2 * ((3 * d) / 16), dw = dh, df = d - dh - dw;
  const std::size_t f = cfg_.latent_frames(), h = cfg_.latent_height(), w = cfg_.latent_width();
  std::vector<double> pos;
  pos.reserve(f * h * w * d);
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t hi = 0; hi < h; ++hi)
      for (std::size_t wi = 0; wi < w; ++wi) {
        for (double v : sinusoidal_embedding(static_cast<double>(fi), df, kPositionBase)) pos.push_back(v);
        for (double v : sinusoidal_embedding(static_cast<double>(hi), dh, kPositionBase)) pos.push_back(v);
        for (double v : sinusoidal_embedding(static_cast<double>(wi), dw, kPositionBase)) pos.push_back(v);
      }
  vision_pos_ = Tensor::from({f * h * w, d}, std::move(pos));

  std::vector<double> tpos;
  for (std::size_t i = 0; i < cfg_.text_len; ++i) {
    for (double v : sinusoidal_embedding(static_cast<double>(i), d, kPositionBase)) tpos.push_back(v);
  }
  text_pos_ = Tensor::from({cfg_.text_len, d}, std::move(tpos));
}

void Denoiser::validate_inputs(const Tensor& z_t, std::span<const int> text, std::size_t t,
                               const TripletConfig* triplet) const {
  const Shape want = {cfg_.latent_frames(), cfg_.latent_height(), cfg_.latent_width(),
                      cfg_.latent_channels()};
  if (z_t.shape() != want) {
    throw DimensionError("forward: latent " + shape_str(z_t.shape()) + ", expected " +
                         shape_str(want));
  }
  if (text.empty() || text.size() > cfg_.text_len) {
    throw ContractError("forward: text length " + std::to_string(text.size()) + " outside [1, " +
                        std::to_string(cfg_.text_len) + "]");
  }
  for (int id : text) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab) {
      throw VocabError("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg_.vocab));
    }
  }
  if (t >= cfg_.timesteps) {
    throw RangeError("forward: timestep " + std::to_string(t) + " outside [0, " +
                     std::to_string(cfg_.timesteps) + ")");
  }
  if (triplet != nullptr) {
    for (SetKind k : kAllSets) {
      for (const auto& [b, a] : triplet->set(k)) {
        if (b.layer >= cfg_.layers) {
          throw BindingError("forward: " + std::string(to_string(k)) + " adapter bound to layer " +
                             std::to_string(b.layer) + " but model has " +
                             std::to_string(cfg_.layers));
        }
      }
    }
  }
}

Tensor Denoiser::project(const Tensor& x, std::size_t layer, Target target, Branch branch,
                         const TripletConfig* triplet) const {
  const Tensor& w = weights_.layers[layer].branch(branch).get(target);
  if (triplet == nullptr) return matmul_nt(x, w);
  const auto adapters = triplet->adapters_for({layer, target, branch});
  return apply_adapter(w, x, adapters);
}

DenoiserOutput Denoiser::forward(const Tensor& z_t, std::span<const int> text, std::size_t t,
                                 const TripletConfig* triplet, bool record) const {
  validate_inputs(z_t, text, t, triplet);
  const std::size_t nv = cfg_.vision_tokens(), nt = text.size(), n = nt + nv;
  const std::size_t c = cfg_.latent_channels(), d = cfg_.d_model;
  const std::size_t heads = cfg_.heads, dh = cfg_.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tensor temb =
      Tensor::from({d}, sinusoidal_embedding(static_cast<double>(t), d, kTimestepBase));

  Tensor xv = matmul_nt(reshape(z_t, {nv, c}), weights_.patch_in);
  xv = add_row(add(add_row(xv, weights_.patch_bias), vision_pos_), temb);

  std::vector<std::size_t> ids(text.begin(), text.end());
  Tensor xt = gather_rows(weights_.embed, ids);
  xt = add_row(add(xt, slice(text_pos_, 0, 0, nt)), temb);

  DenoiserOutput result;
  AttentionRecord rec;
  if (record) {
    rec.text_tokens = nt;
    rec.frames = cfg_.latent_frames();
    rec.height = cfg_.latent_height();
    rec.width = cfg_.latent_width();
    rec.heads = heads;
    rec.timestep = t;
    rec.prompt.assign(text.begin(), text.end());
  }

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const Tensor ht = rms_norm(xt);
    const Tensor hv = rms_norm(xv);
    const Tensor q = concat({project(ht, l, Target::q, Branch::text, triplet),
                             project(hv, l, Target::q, Branch::vision, triplet)}, 0);
    const Tensor k = concat({project(ht, l, Target::k, Branch::text, triplet),
                             project(hv, l, Target::k, Branch::vision, triplet)}, 0);
    const Tensor v = concat({project(ht, l, Target::v, Branch::text, triplet),
                             project(hv, l, Target::v, Branch::vision, triplet)}, 0);

    LayerRecord lrec;
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const Tensor qh = slice(q, 1, hd * dh, (hd + 1) * dh);
      const Tensor kh = slice(k, 1, hd * dh, (hd + 1) * dh);
      const Tensor vh = slice(v, 1, hd * dh, (hd + 1) * dh);
      const Tensor attn = softmax(scale(matmul_nt(qh, kh), attn_scale), 1);
      if (record) lrec.attention.push_back(attn.detach());
      head_out.push_back(matmul(attn, vh));
    }
    const Tensor o = heads == 1 ? head_out[0] : concat(head_out, 1);
    if (record) {
      lrec.q = slice(q, 0, nt, n).detach();
      lrec.k = slice(k, 0, nt, n).detach();
      lrec.v = slice(v, 0, nt, n).detach();
      rec.layers.push_back(std::move(lrec));
    }

    // Text tokens after the last attention cannot reach the output.
    if (l + 1 < cfg_.layers) {
      xt = add(xt, project(slice(o, 0, 0, nt), l, Target::attn_out, Branch::text, triplet));
      const Tensor ft = silu(project(rms_norm(xt), l, Target::ffn_in, Branch::text, triplet));
      xt = add(xt, project(ft, l, Target::ffn_out, Branch::text, triplet));
    }
    xv = add(xv, project(slice(o, 0, nt, n), l, Target::attn_out, Branch::vision, triplet));
    const Tensor fv = silu(project(rms_norm(xv), l, Target::ffn_in, Branch::vision, triplet));
    xv = add(xv, project(fv, l, Target::ffn_out, Branch::vision, triplet));
  }

  Tensor out = add_row(matmul_nt(rms_norm(xv), weights_.out), weights_.out_bias);
  result.eps_hat = reshape(out, {cfg_.latent_frames(), cfg_.latent_height(), cfg_.latent_width(), c});
  if (record) result.record = std::move(rec);
  return result;
}

}  // namespace rlt
