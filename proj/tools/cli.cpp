#include "rlt/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "rlt/analysis.hpp"
#include "rlt/config.hpp"
#include "rlt/datagen.hpp"
#include "rlt/errors.hpp"
#include "rlt/tensor_io.hpp"
#include "rlt/trainer.hpp"
#include "rlt/vocab.hpp"

namespace rlt {

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Pulls "--model.x V", "--train.x V", "--data.x V" (or "=V") out of argv.
std::vector<std::string> extract_overrides(const std::vector<std::string>& args, Overrides& ov) {
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.starts_with("--model.") || a.starts_with("--train.") || a.starts_with("--data.")) {
      std::string key = a.substr(2), value;
      if (auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= args.size()) throw ConfigError("override --" + key + " needs a value");
        value = args[++i];
      }
      ov.emplace_back(key, value);
    } else {
      rest.push_back(a);
    }
  }
  return rest;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("RLT_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("RLT_SEED='") + s + "' is not a non-negative integer");
  }
}

std::uint64_t pick_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto e = env_seed()) return *e;
  return fallback;
}

RunConfig resolve_config(const std::string& path, const Overrides& ov) {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  for (const auto& [k, v] : ov) apply_override(c, k, v);
  c.model.validate();
  c.train.validate();
  return c;
}

std::uint64_t entry_seed(std::uint64_t seed, std::size_t i) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i);
}

void open_out(std::ofstream& f, const std::string& path) {
  f.open(path, std::ios::trunc);
  if (!f) throw DatasetError("cannot write " + path);
}

struct RecordOptions {
  std::string ckpt, prompt, video;
  std::optional<std::size_t> timestep;
  std::optional<std::uint64_t> seed;
};

AttentionRecord capture_record(const RecordOptions& o, const Checkpoint& ck) {
  const Denoiser model(ck.model, ck.base);
  const TripletConfig view = inference_view(ck.triplet);
  const std::vector<int> prompt = encode_prompt(o.prompt);
  const std::size_t t = o.timestep.value_or(analysis_timestep(ck.model.timesteps));
  Rng rng(pick_seed(o.seed, ck.train.seed));
  const auto& mc = ck.model;
  const Shape latent = {mc.latent_frames(), mc.latent_height(), mc.latent_width(), mc.latent_channels()};
  const Tensor eps = gaussian(latent, 0.0, 1.0, rng);
  Tensor z_t = eps;
  if (!o.video.empty()) {
    const Container c = read_container(o.video);
    z_t = add_noise(encode_video(c.tensor("video"), mc), t, eps, model.schedule());
  }
  NoGradGuard no_grad;
  return *model.forward(z_t, prompt, t, &view, true).record;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Relation LoRA triplet training and analysis on synthetic relation videos", "rlt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "rlt 0.1.0");

  // datagen
  auto* dg = app.add_subcommand("datagen", "Generate a synthetic relation dataset");
  std::string dg_out, dg_relation, dg_config, dg_shape1, dg_shape2;
  std::optional<std::size_t> dg_count, dg_frames, dg_size;
  std::optional<std::uint64_t> dg_seed;
  dg->add_option("--out", dg_out, "Output dataset directory")->required();
  dg->add_option("--relation", dg_relation, "approach|separate|orbit|follow|collide");
  dg->add_option("--count", dg_count, "Number of videos");
  dg->add_option("--seed", dg_seed, "Base seed (falls back to RLT_SEED)");
  dg->add_option("--frames", dg_frames, "Frames per video");
  dg->add_option("--size", dg_size, "Frame height and width");
  dg->add_option("--shape1", dg_shape1, "Fix subject 1 shape");
  dg->add_option("--shape2", dg_shape2, "Fix subject 2 shape");
  dg->add_option("--config", dg_config, "Run config JSON");

  // train
  auto* tr = app.add_subcommand("train", "Train the relation LoRA triplet");
  std::string tr_data, tr_config, tr_out, tr_metrics;
  std::optional<std::size_t> tr_iters;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--config", tr_config, "Run config JSON");
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--iters", tr_iters, "Training iterations");
  tr->add_option("--seed", tr_seed, "Training seed (falls back to RLT_SEED)");
  tr->add_option("--metrics", tr_metrics, "Metrics CSV path (default <out>.metrics.csv)");

  // infer
  auto* in = app.add_subcommand("infer", "Sample a video from a checkpoint");
  std::string in_ckpt, in_prompt, in_out;
  std::size_t in_steps = 32;
  double in_scale = 6.0;
  std::optional<std::uint64_t> in_seed;
  in->add_option("--ckpt", in_ckpt, "Checkpoint")->required();
  in->add_option("--prompt", in_prompt, "Prompt, e.g. \"circle approach square\"")->required();
  in->add_option("--steps", in_steps, "Sampling steps")->capture_default_str();
  in->add_option("--cfg-scale", in_scale, "Classifier-free guidance scale")->capture_default_str();
  in->add_option("--seed", in_seed, "Sampling seed (falls back to RLT_SEED)");
  in->add_option("--out", in_out, "Output video container")->required();

  // analyze
  auto* an = app.add_subcommand("analyze", "Weight and activation analysis");
  an->require_subcommand(1);
  std::string an_out;
  auto* sub = an->add_subcommand("subspace", "Q/K/V subspace similarity per layer and branch");
  std::string sub_ckpt;
  std::size_t sub_rank = 8;
  bool sub_base_only = false;
  sub->add_option("--ckpt", sub_ckpt, "Checkpoint")->required();
  sub->add_option("--rank", sub_rank, "Subspace rank r")->capture_default_str();
  sub->add_flag("--base-only", sub_base_only, "Ignore adapter deltas");
  sub->add_option("--out", an_out, "CSV path (default stdout)");

  RecordOptions rec;
  std::string attn_token, feat_which = "q";
  auto add_record_opts = [&](CLI::App* c) {
    c->add_option("--ckpt", rec.ckpt, "Checkpoint")->required();
    c->add_option("--prompt", rec.prompt, "Prompt")->required();
    c->add_option("--video", rec.video, "Video container to noise (default: pure noise)");
    c->add_option("--timestep", rec.timestep, "Timestep (default round(60/64 T))");
    c->add_option("--seed", rec.seed, "Noise seed");
    c->add_option("--out", an_out, "CSV path (default stdout)");
  };
  auto* attn = an->add_subcommand("attnmap", "Attention map of one text token over vision tokens");
  add_record_opts(attn);
  attn->add_option("--token", attn_token, "Prompt word (default: the relation word)");
  auto* feat = an->add_subcommand("featmap", "Averaged |Q|, |K| or |V| feature map");
  add_record_opts(feat);
  feat->add_option("--which", feat_which, "q|k|v")->check(CLI::IsMember({"q", "k", "v"}));

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a directory of videos");
  std::string ev_videos, ev_metric, ev_expected;
  ev->add_option("--videos", ev_videos, "Directory of video containers")->required();
  ev->add_option("--metric", ev_metric, "relation-accuracy|temporal-consistency")
      ->required()
      ->check(CLI::IsMember({"relation-accuracy", "temporal-consistency"}));
  ev->add_option("--expected", ev_expected, "Expected relation for relation-accuracy");

  try {
    Overrides ov;
    std::vector<std::string> args = extract_overrides(raw_args, ov);
    std::reverse(args.begin(), args.end());
    app.parse(args);

    if (*dg) {
      RunConfig cfg = resolve_config(dg_config, ov);
      const Relation rel = relation_from_string(dg_relation.empty() ? cfg.data.relation : dg_relation);
      const std::size_t count = dg_count.value_or(cfg.data.count);
      const std::uint64_t seed = pick_seed(dg_seed, cfg.data.seed);
      const std::size_t F = dg_frames.value_or(cfg.model.frames);
      const std::size_t H = dg_size.value_or(cfg.model.height), W = dg_size.value_or(cfg.model.width);
      if (dg_shape1.empty()) dg_shape1 = cfg.data.shape1;
      if (dg_shape2.empty()) dg_shape2 = cfg.data.shape2;
      if (dg_shape1.empty() != dg_shape2.empty()) throw ConfigError("--shape1 and --shape2 go together");
      std::vector<DatasetEntry> entries;
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t s = entry_seed(seed, i);
        const RelationSpec spec =
            dg_shape1.empty()
                ? random_spec(rel, s, F, H, W)
                : random_spec(rel, shape_from_string(dg_shape1), shape_from_string(dg_shape2), s, F, H, W);
        entries.push_back(gen_video(spec, F, H, W));
      }
      write_dataset(entries, dg_out);
      out << "wrote " << count << " entries to " << dg_out << '\n';
    } else if (*tr) {
      RunConfig cfg = resolve_config(tr_config, ov);
      if (tr_iters) cfg.train.iterations = *tr_iters;
      cfg.train.seed = pick_seed(tr_seed, cfg.train.seed);
      const auto data = read_dataset(tr_data);
      std::ofstream metrics;
      open_out(metrics, tr_metrics.empty() ? tr_out + ".metrics.csv" : tr_metrics);
      metrics << "iter,choice,l_rec,l_rcl,l_total\n" << std::setprecision(17);
      TrainHooks hooks;
      hooks.on_step = [&](const StepMetrics& m) {
        metrics << m.iteration << ',' << to_string(m.choice) << ',' << m.l_rec << ',' << m.l_rcl << ','
                << m.l_total << '\n';
      };
      hooks.on_checkpoint = [&](const Checkpoint& ck) { save_checkpoint(ck, tr_out); };
      const Checkpoint ck = train(data, cfg.model, cfg.train, hooks);
      out << "trained " << ck.iteration << " iterations; checkpoint " << tr_out << '\n';
    } else if (*in) {
      const Checkpoint ck = load_checkpoint(in_ckpt);
      const std::vector<int> prompt = encode_prompt(in_prompt);
      Rng rng(pick_seed(in_seed, ck.train.seed));
      const Tensor video = sample(ck, prompt, in_steps, in_scale, rng);
      write_video(in_out, video);
      out << "wrote " << in_out << '\n';
    } else if (*an) {
      std::ofstream file;
      if (!an_out.empty()) open_out(file, an_out);
      std::ostream& dst = an_out.empty() ? out : file;
      if (*sub) {
        const Checkpoint ck = load_checkpoint(sub_ckpt);
        const TripletConfig view = inference_view(ck.triplet);
        write_similarity_csv(dst, qkv_similarity_report(ck.base, sub_base_only ? nullptr : &view, sub_rank));
      } else if (*attn) {
        const Checkpoint ck = load_checkpoint(rec.ckpt);
        const AttentionRecord record = capture_record(rec, ck);
        std::size_t pos = 0;
        if (!attn_token.empty()) {
          pos = prompt_position(record, token_id(attn_token));
        } else {
          pos = record.prompt.size() == 3 ? 1 : 0;
        }
        write_map_csv(dst, attention_map(record, pos));
      } else {
        const Checkpoint ck = load_checkpoint(rec.ckpt);
        const AttentionRecord record = capture_record(rec, ck);
        const Proj which = feat_which == "q" ? Proj::q : feat_which == "k" ? Proj::k : Proj::v;
        write_map_csv(dst, feature_map(record, which));
      }
    } else if (*ev) {
      const auto videos = read_videos(ev_videos);
      if (videos.empty()) throw ConfigError("no videos found in " + ev_videos);
      double value = 0.0;
      if (ev_metric == "relation-accuracy") {
        if (ev_expected.empty()) throw ConfigError("--expected is required for relation-accuracy");
        const Relation expected = relation_from_string(ev_expected);
        std::size_t hits = 0;
        for (const auto& [path, v] : videos) {
          const auto r = relation_oracle(v);
          if (r && *r == expected) ++hits;
        }
        value = static_cast<double>(hits) / static_cast<double>(videos.size());
      } else {
        for (const auto& [path, v] : videos) value += temporal_consistency(v);
        value /= static_cast<double>(videos.size());
      }
      out << std::setprecision(17) << value << '\n';
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::Success& e) {
    out << e.what() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "rlt: " << e.what() << '\n' << app.help();
    return 2;
  } catch (const NumericError& e) {
    err << "rlt: numeric error: " << e.what() << '\n';
    return 4;
  } catch (const FormatError& e) {
    err << "rlt: format error: " << e.what() << '\n';
    return 3;
  } catch (const ShapeError& e) {
    err << "rlt: shape error: " << e.what() << '\n';
    return 3;
  } catch (const DatasetError& e) {
    err << "rlt: dataset error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    err << "rlt: validation error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    err << "rlt: " << e.what() << '\n';
    if (*dg || *tr || *in || *an || *ev) err << "run with --help for usage\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "rlt: " << e.what() << '\n';
    return 3;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace rlt
