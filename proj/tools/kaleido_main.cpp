// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
//
// kaleido <command>: dataset generation, training, rendering, evaluation,
// activation probing and sampler visualisation. Every command is
// deterministic under --seed. Exit codes: 0 success, 1 usage/config/runtime
// error, 3 training divergence (non-finite loss).
#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "kaleido/checkpoint.hpp"
#include "kaleido/config.hpp"
#include "kaleido/evalkit.hpp"
#include "kaleido/flow.hpp"
#include "kaleido/image.hpp"
#include "kaleido/synth.hpp"
#include "kaleido/threading.hpp"
#include "kaleido/trainer.hpp"

namespace fs = std::filesystem;
using namespace kaleido;

namespace {

std::string cache_dir_default() {
  const char* env = std::getenv("KALEIDO_CACHE");
  return env ? std::string(env) : std::string("kaleido_cache");
}

std::vector<Sample> load_dataset_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ksmp") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .ksmp samples in " + dir);
  std::vector<Sample> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_sample(f));
  return out;
}

// The known config keys, shared between file parsing and CLI overrides.
TrainConfig config_to_train(const Config& c) {
  static const std::set<std::string> known = {
      "mode",       "steps",        "batch",      "views",        "res",        "scenes",     "seed",
      "lr",         "weight_decay", "beta1",      "beta2",        "adam_eps",   "clip",       "warmup",
      "lr_decay",   "final_lr_frac", "sampler",   "shift",        "sampler_scale", "cfg_dropout",
      "eval_every", "checkpoint_every", "out_dir", "threads",     "layers",     "hidden",     "q_heads",
      "kv_heads",   "window",       "patch",      "registers",    "aux_dim",    "ffn_hidden", "time_dim",
      "time_sin_dim"};
  for (const auto& [k, v] : c.values())
    if (!known.count(k)) throw std::runtime_error("unknown config key: " + k);

  TrainConfig t;
  t.mode = c.get_str("mode", t.mode);
  t.steps = static_cast<int>(c.get_int("steps", t.steps));
  t.batch = static_cast<int>(c.get_int("batch", t.batch));
  t.views = static_cast<int>(c.get_int("views", t.views));
  t.res = static_cast<int>(c.get_int("res", t.res));
  t.scenes = static_cast<int>(c.get_int("scenes", t.scenes));
  t.seed = static_cast<uint64_t>(c.get_int("seed", 0));
  t.lr = c.get_float("lr", t.lr);
  t.weight_decay = c.get_float("weight_decay", t.weight_decay);
  t.beta1 = c.get_float("beta1", t.beta1);
  t.beta2 = c.get_float("beta2", t.beta2);
  t.adam_eps = c.get_float("adam_eps", t.adam_eps);
  t.clip = c.get_float("clip", t.clip);
  t.warmup = static_cast<int>(c.get_int("warmup", t.warmup));
  t.lr_decay = c.get_str("lr_decay", t.lr_decay);
  t.final_lr_frac = c.get_float("final_lr_frac", t.final_lr_frac);
  t.sampler = parse_sampler(c.get_str("sampler", "mode"));
  t.sampler.shift = c.get_float("shift", 3.0);
  t.sampler.mode_scale = c.get_float("sampler_scale", 0.8);
  t.cfg_dropout = c.get_float("cfg_dropout", t.cfg_dropout);
  t.eval_every = static_cast<int>(c.get_int("eval_every", t.eval_every));
  t.checkpoint_every = static_cast<int>(c.get_int("checkpoint_every", t.checkpoint_every));
  t.out_dir = c.get_str("out_dir", t.out_dir);
  t.threads = static_cast<int>(c.get_int("threads", 0));
  t.model.layers = static_cast<int>(c.get_int("layers", t.model.layers));
  t.model.hidden = static_cast<int>(c.get_int("hidden", t.model.hidden));
  t.model.q_heads = static_cast<int>(c.get_int("q_heads", t.model.q_heads));
  t.model.kv_heads = static_cast<int>(c.get_int("kv_heads", t.model.kv_heads));
  t.model.window = static_cast<int>(c.get_int("window", t.model.window));
  t.model.patch = static_cast<int>(c.get_int("patch", t.model.patch));
  t.model.registers = static_cast<int>(c.get_int("registers", t.model.registers));
  t.model.aux_dim = static_cast<int>(c.get_int("aux_dim", t.model.aux_dim));
  t.model.ffn_hidden = static_cast<int>(c.get_int("ffn_hidden", t.model.ffn_hidden));
  t.model.time_dim = static_cast<int>(c.get_int("time_dim", t.model.time_dim));
  t.model.time_sin_dim = static_cast<int>(c.get_int("time_sin_dim", t.model.time_sin_dim));
  return t;
}

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value pairs from flags
};

int cmd_gen_data(const std::string& out_dir, int scenes, int views, int res, uint64_t seed, const std::string& mode) {
  fs::create_directories(out_dir);
  AttrMode m = mode == "video" ? AttrMode::Video : AttrMode::ThreeD;
  for (int i = 0; i < scenes; ++i) {
    Sample s = m == AttrMode::Video ? make_video_sample(Rng::mix(seed, i), views, res)
                                    : make_3d_sample(Rng::mix(seed, i), views, res);
    save_sample((fs::path(out_dir) / sample_filename(i)).string(), s);
  }
  std::cout << "wrote " << scenes << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const Config& merged, const std::string& resume) {
  TrainConfig cfg = config_to_train(merged);
  cfg.validate();
  ParamStore<float> params = init_params<float>(cfg.model, cfg.seed);
  AdamState opt;
  uint64_t start_step = 0;
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    if (!(ck.config == cfg.model)) throw std::runtime_error("resume: checkpoint model config mismatch");
    params = ck.params;
    start_step = ck.step;
    if (ck.has_opt) {
      opt.m = ck.adam_m;
      opt.v = ck.adam_v;
      opt.t = ck.adam_t;
    }
  }
  TrainHooks hooks;
  hooks.on_step = [&](uint64_t step, float loss) {
    if ((step + 1) % 100 == 0) std::cout << "step " << (step + 1) << " loss " << loss << "\n";
  };
  TrainResult r = train(cfg, params, opt, start_step, hooks);
  std::cout << "done: " << r.final_step << " steps, final loss " << (r.losses.empty() ? 0.0f : r.losses.back())
            << "\n";
  return 0;
}

int cmd_render(const std::string& ckpt_path, const std::string& refs_dir, const std::string& poses_path,
               const std::string& schedule_name, int schedule_steps, double cfg_scale, uint64_t seed,
               const std::string& out_dir, int ar_group, int res, int threads) {
  if (threads > 0) set_num_threads(threads);
  Checkpoint ck = load_checkpoint(ckpt_path);
  PoseSet targets = load_pose_file(poses_path);
  if (targets.size() == 0) throw std::runtime_error("no target poses in " + poses_path);

  std::vector<Image> refs;
  PoseSet ref_poses;
  if (!refs_dir.empty()) {
    ref_poses = load_pose_file((fs::path(refs_dir) / "poses.txt").string());
    std::vector<std::string> imgs;
    for (const auto& e : fs::directory_iterator(refs_dir)) {
      auto ext = e.path().extension();
      if (ext == ".ppm" || ext == ".png") imgs.push_back(e.path().string());
    }
    std::sort(imgs.begin(), imgs.end());
    if (imgs.size() != ref_poses.size())
      throw std::runtime_error("reference image count does not match poses.txt in " + refs_dir);
    for (const auto& p : imgs)
      refs.push_back(fs::path(p).extension() == ".ppm" ? read_ppm(p) : read_png(p));
  }

  VelocityFn<float> vfn = [&](const SceneInput<float>& in) { return net_forward(ck.params, in); };
  GenerateOptions opts;
  opts.schedule = build_schedule(parse_schedule(schedule_name), schedule_steps);
  opts.cfg_scale = cfg_scale;
  opts.seed = seed;
  opts.autoregressive_group = ar_group;
  opts.img_h = opts.img_w = res;
  std::vector<Image> out = generate<float>(vfn, ck.config.patch, ck.config.channels, refs, ref_poses, targets, opts);

  fs::create_directories(out_dir);
  for (size_t i = 0; i < out.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "target_%03zu", i);
    write_ppm((fs::path(out_dir) / (std::string(name) + ".ppm")).string(), out[i]);
    write_png((fs::path(out_dir) / (std::string(name) + ".png")).string(), out[i]);
  }
  std::cout << "wrote " << out.size() << " views to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& n_refs_csv,
             const std::string& schedule_name, int schedule_steps, double cfg_scale, uint64_t seed,
             const std::string& out_csv, int threads) {
  if (threads > 0) set_num_threads(threads);
  Checkpoint ck = load_checkpoint(ckpt_path);
  std::vector<Sample> data = load_dataset_dir(data_dir);

  std::vector<int> n_refs;
  std::stringstream ss(n_refs_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) n_refs.push_back(std::stoi(tok));
  if (n_refs.empty()) throw std::runtime_error("empty --n-refs list");
  int pool = *std::max_element(n_refs.begin(), n_refs.end());

  Schedule sched = build_schedule(parse_schedule(schedule_name), schedule_steps);
  std::ofstream csv(out_csv);
  if (!csv) throw std::runtime_error("cannot open for writing: " + out_csv);
  csv << "n_ref,psnr,ssim,baseline_psnr,baseline_ssim\n";
  for (int n : n_refs) {
    EvalResult ev = evaluate_nvs(ck.params, data, n, pool, sched, cfg_scale, seed);
    csv << n << "," << ev.mean_psnr << "," << ev.mean_ssim << "," << ev.baseline_psnr << "," << ev.baseline_ssim
        << "\n";
    std::cout << "n_ref=" << n << " psnr=" << ev.mean_psnr << " ssim=" << ev.mean_ssim
              << " baseline_psnr=" << ev.baseline_psnr << "\n";
  }
  return 0;
}

int cmd_probe(const std::string& ckpt_path, uint64_t seed, int views, int res, const std::string& out_csv) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  Sample s = make_3d_sample(Rng::mix(seed, 0x70726f6265ull), views, res);
  Rng rng(seed);
  SceneInput<float> in;
  in.mode = AttrMode::ThreeD;
  in.V = views;
  in.patch = ck.config.patch;
  in.channels = ck.config.channels;
  in.gh = res / ck.config.patch;
  in.gw = res / ck.config.patch;
  in.poses = s.poses.poses;
  in.split = partition(views, std::max(1, views / 4), rng);
  in.t = 0.5;
  std::vector<Image> noised = s.images;
  for (int v = 0; v < views; ++v)
    if (in.split.roles[v] == ViewRole::Target)
      for (auto& x : noised[v].data) x = 0.5f * x + 0.5f * static_cast<float>(rng.normal());
  in.patches = patchify<float>(noised, in.patch);
  in.aux.resize(ck.config.aux_dim, in.num_tokens());
  in.aux.setZero();

  ActivationStats stats = probe_activations(ck.params, in);
  write_probe_csv(out_csv, stats);
  std::cout << "wrote " << stats.layers.size() << " layer rows to " << out_csv << "\n";
  return 0;
}

int cmd_sampler_viz(const std::string& family, double shift, double scale, long samples, int bins,
                    uint64_t seed, const std::string& out_csv) {
  SamplerSpec spec = parse_sampler(family);
  spec.shift = shift;
  spec.mode_scale = scale;
  spec.validate();
  Rng rng(seed);
  std::vector<double> hist(bins, 0.0);
  for (long i = 0; i < samples; ++i) {
    double t = sample_t(spec, rng);
    hist[std::min(bins - 1, static_cast<int>(t * bins))] += 1.0;
  }
  std::ofstream csv(out_csv);
  if (!csv) throw std::runtime_error("cannot open for writing: " + out_csv);
  csv << "t,density,empirical_frequency\n";
  for (int b = 0; b < bins; ++b) {
    double center = (b + 0.5) / bins;
    csv << center << "," << sampler_density(spec, center) << "," << hist[b] / samples * bins << "\n";
  }
  std::cout << "wrote " << bins << " bins to " << out_csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kaleido: pose-conditioned generative rendering at desk scale"};
  app.require_subcommand(1);

  // gen-data ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset into a cache directory");
  std::string gen_out = cache_dir_default(), gen_mode = "3d";
  int gen_scenes = 100, gen_views = 12, gen_res = 32;
  uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "Output directory (default: $KALEIDO_CACHE or ./kaleido_cache)");
  gen->add_option("--scenes", gen_scenes, "Number of scenes");
  gen->add_option("--views", gen_views, "Views per scene");
  gen->add_option("--res", gen_res, "Image resolution");
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--mode", gen_mode, "3d | video");

  // train ---------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_config, tr_resume;
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  std::map<std::string, std::string> tr_flags;
  for (const char* key : {"mode", "steps", "batch", "views", "res", "scenes", "seed", "lr", "warmup", "out",
                          "sampler", "shift", "sampler_scale", "window", "registers", "layers", "hidden",
                          "q_heads", "kv_heads", "patch", "threads", "eval_every", "checkpoint_every"}) {
    tr_flags[key] = "";
    std::string flag = std::string("--") + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    tr->add_option(flag, tr_flags[key], "Override config key '" + std::string(key) + "'");
  }

  // render --------------------------------------------------------------
  auto* rd = app.add_subcommand("render", "Generate target views from reference views");
  std::string rd_ckpt, rd_refs, rd_poses, rd_out = "renders", rd_schedule = "linquad";
  int rd_steps = 32, rd_ar = 0, rd_res = 32, rd_threads = 0;
  double rd_cfg = 1.5;
  uint64_t rd_seed = 0;
  rd->add_option("--checkpoint", rd_ckpt, "Model checkpoint")->required();
  rd->add_option("--refs", rd_refs, "Directory with reference images + poses.txt");
  rd->add_option("--poses", rd_poses, "Target pose file")->required();
  rd->add_option("--schedule", rd_schedule, "linspace | trailing | linquad");
  rd->add_option("--schedule-steps", rd_steps, "Number of integration steps");
  rd->add_option("--cfg-scale", rd_cfg, "Classifier-free guidance scale");
  rd->add_option("--seed", rd_seed, "Noise seed");
  rd->add_option("--out", rd_out, "Output directory");
  rd->add_option("--res", rd_res, "Image resolution when no references are given");
  rd->add_option("--threads", rd_threads, "Worker threads (0 = auto)");
  rd->add_flag_function("--autoregressive", [&](int64_t) { rd_ar = 1; },
                        "Generate targets one by one, feeding outputs back as references");

  // eval ------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM over a held-out dataset");
  std::string ev_ckpt, ev_data = cache_dir_default(), ev_nrefs = "1,3,5", ev_out = "eval.csv",
              ev_schedule = "linquad";
  int ev_steps = 16, ev_threads = 0;
  double ev_cfg = 1.0;
  uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory (default: $KALEIDO_CACHE)");
  ev->add_option("--n-refs", ev_nrefs, "Comma-separated reference counts");
  ev->add_option("--schedule", ev_schedule, "linspace | trailing | linquad");
  ev->add_option("--schedule-steps", ev_steps, "Integration steps");
  ev->add_option("--cfg-scale", ev_cfg, "Guidance scale");
  ev->add_option("--seed", ev_seed, "Evaluation seed");
  ev->add_option("--out", ev_out, "Output CSV path");
  ev->add_option("--threads", ev_threads, "Worker threads (0 = auto)");

  // probe -------------------------------------------------------------------
  auto* pr = app.add_subcommand("probe", "Activation-magnitude probe CSV");
  std::string pr_ckpt, pr_out = "probe.csv";
  uint64_t pr_seed = 0;
  int pr_views = 6, pr_res = 32;
  pr->add_option("--checkpoint", pr_ckpt, "Model checkpoint")->required();
  pr->add_option("--seed", pr_seed, "Probe batch seed");
  pr->add_option("--views", pr_views, "Views in the probe batch");
  pr->add_option("--res", pr_res, "Probe resolution");
  pr->add_option("--out", pr_out, "Output CSV path");

  // sampler-viz ---------------------------------------------------------------
  auto* sv = app.add_subcommand("sampler-viz", "Timestep sampler density CSV");
  std::string sv_family = "mode", sv_out = "sampler.csv";
  double sv_shift = 3.0, sv_scale = 0.8;
  long sv_samples = 1000000;
  int sv_bins = 50;
  uint64_t sv_seed = 0;
  sv->add_option("--sampler", sv_family, "uniform | logitnormal | mode");
  sv->add_option("--shift", sv_shift, "Shift sigma >= 1");
  sv->add_option("--sampler-scale", sv_scale, "Mode family scale");
  sv->add_option("--samples", sv_samples, "Number of draws");
  sv->add_option("--bins", sv_bins, "Histogram bins");
  sv->add_option("--seed", sv_seed, "Sampler seed");
  sv->add_option("--out", sv_out, "Output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_scenes, gen_views, gen_res, gen_seed, gen_mode);
    if (tr->parsed()) {
      Config merged = tr_config.empty() ? Config() : Config::from_file(tr_config);
      for (auto& [key, value] : tr_flags)
        if (!value.empty()) merged.set(key == "out" ? "out_dir" : key, value);
      return cmd_train(merged, tr_resume);
    }
    if (rd->parsed())
      return cmd_render(rd_ckpt, rd_refs, rd_poses, rd_schedule, rd_steps, rd_cfg, rd_seed, rd_out, rd_ar, rd_res,
                        rd_threads);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_nrefs, ev_schedule, ev_steps, ev_cfg, ev_seed, ev_out, ev_threads);
    if (pr->parsed()) return cmd_probe(pr_ckpt, pr_seed, pr_views, pr_res, pr_out);
    if (sv->parsed()) return cmd_sampler_viz(sv_family, sv_shift, sv_scale, sv_samples, sv_bins, sv_seed, sv_out);
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
