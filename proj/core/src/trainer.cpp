// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "kaleido/evalkit.hpp"
#include "kaleido/threading.hpp"

namespace kaleido {

namespace {
constexpr uint64_t kTag3D = 0x64617461336400ull;
constexpr uint64_t kTagVideo = 0x646174617669ull;
constexpr uint64_t kTagHoldout = 0x686f6c646f7574ull;
constexpr uint64_t kTagStep = 0x73746570ull;
}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (mode != "3d" && mode != "video" && mode != "mixed") throw std::invalid_argument("TrainConfig: bad mode");
  if (steps < 1 || batch < 1 || views < 2 || scenes < 1) throw std::invalid_argument("TrainConfig: bad sizes");
  if (mode == "mixed" && (mixed_ratio <= 0.0 || mixed_ratio >= 1.0))
    throw std::invalid_argument("TrainConfig: mixed ratio must lie in (0, 1)");
  if (res % model.patch != 0) throw std::invalid_argument("TrainConfig: res must divide by patch size");
  if (lr < 0.0 || weight_decay < 0.0) throw std::invalid_argument("TrainConfig: bad optimiser settings");
  if (lr_decay != "cosine" && lr_decay != "constant") throw std::invalid_argument("TrainConfig: bad lr_decay");
  sampler.validate();
}

uint64_t dataset_seed(uint64_t run_seed, AttrMode mode, bool holdout, int index) {
  uint64_t tag = mode == AttrMode::Video ? kTagVideo : kTag3D;
  if (holdout) tag ^= kTagHoldout;
  return Rng::mix(Rng::mix(run_seed, tag), static_cast<uint64_t>(index));
}

std::vector<Sample> build_dataset(uint64_t run_seed, AttrMode mode, bool holdout, int scenes, int views, int res) {
  std::vector<Sample> out(scenes);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < scenes; ++i) {
    uint64_t s = dataset_seed(run_seed, mode, holdout, i);
    out[i] = mode == AttrMode::Video ? make_video_sample(s, views, res) : make_3d_sample(s, views, res);
  }
  return out;
}

namespace {

double lr_at(const TrainConfig& cfg, uint64_t step) {
  double lr = cfg.lr;
  if (cfg.warmup > 0 && step < static_cast<uint64_t>(cfg.warmup))
    return lr * static_cast<double>(step + 1) / cfg.warmup;
  if (cfg.lr_decay == "cosine") {
    double total = std::max<double>(1.0, cfg.steps - cfg.warmup);
    double a = std::clamp((static_cast<double>(step) - cfg.warmup) / total, 0.0, 1.0);
    double floor = cfg.final_lr_frac * lr;
    return floor + (lr - floor) * 0.5 * (1.0 + std::cos(M_PI * a));
  }
  return lr;
}

// Builds the noised scene input and the velocity target for one sample.
struct PreparedScene {
  SceneInput<float> in;
  MatX<float> vtar;
};

PreparedScene prepare_scene(const TrainConfig& cfg, const Sample& sample, Rng& rng) {
  const int V = static_cast<int>(sample.images.size());
  PreparedScene ps;
  SceneInput<float>& in = ps.in;
  in.mode = sample.mode;
  in.V = V;
  in.patch = cfg.model.patch;
  in.channels = cfg.model.channels;
  const int h = sample.images[0].h, w = sample.images[0].w;
  in.gh = h / in.patch;
  in.gw = w / in.patch;
  if (sample.mode == AttrMode::ThreeD) {
    in.poses.resize(V);
    for (int v = 0; v < V; ++v) in.poses[v] = sample.poses.poses[v];
  } else {
    in.frames = sample.frames;
    in.num_frames = V;
  }

  int n_ref = sample_num_refs(V, rng);
  in.split = partition(V, n_ref, rng);
  if (rng.uniform() < cfg.cfg_dropout)
    mask_all_references(in.split);
  else
    random_mask(in.split, rng);

  in.t = sample_t(cfg.sampler, rng);

  // Noise target views in pixel space, then patchify both the model input
  // and the velocity target eps - z.
  std::vector<Image> noised = sample.images;
  std::vector<Image> vel(V);
  for (int v = 0; v < V; ++v) {
    if (in.split.roles[v] != ViewRole::Target) {
      vel[v] = Image(h, w, cfg.model.channels);  // unused, zero
      continue;
    }
    Image eps(h, w, cfg.model.channels);
    for (auto& e : eps.data) e = static_cast<float>(rng.normal());
    vel[v] = eps;
    const float t = static_cast<float>(in.t);
    for (size_t i = 0; i < eps.data.size(); ++i) {
      float z = sample.images[v].data[i];
      vel[v].data[i] = eps.data[i] - z;
      noised[v].data[i] = (1.0f - t) * z + t * eps.data[i];
    }
  }
  in.patches = patchify<float>(noised, in.patch);
  in.aux.resize(cfg.model.aux_dim, in.num_tokens());
  in.aux.setZero();
  ps.vtar = patchify<float>(vel, in.patch);
  return ps;
}

void adam_update(const TrainConfig& cfg, uint64_t step, ParamStore<float>& params, const ParamStore<float>& grads,
                 AdamState& opt) {
  const size_t n = params.data.size();
  if (opt.m.size() != n) {
    opt.m.assign(n, 0.0f);
    opt.v.assign(n, 0.0f);
    opt.t = 0;
  }
  opt.t += 1;
  const float lr = static_cast<float>(lr_at(cfg, step));
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float eps = static_cast<float>(cfg.adam_eps), wd = static_cast<float>(cfg.weight_decay);
  const float bc1 = 1.0f - std::pow(b1, static_cast<float>(opt.t));
  const float bc2 = 1.0f - std::pow(b2, static_cast<float>(opt.t));
  float* p = params.data.data();
  const float* g = grads.data.data();
  float* m = opt.m.data();
  float* v = opt.v.data();
  for (size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    float mhat = m[i] / bc1;
    float vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

}  // namespace

float train_step(const TrainConfig& cfg, uint64_t step, const std::vector<Sample>& data_3d,
                 const std::vector<Sample>& data_video, ParamStore<float>& params, AdamState& opt) {
  Rng step_rng(Rng::mix(Rng::mix(cfg.seed, kTagStep), step));
  ParamStore<float> grads(cfg.model);
  double loss_acc = 0.0;
  for (int b = 0; b < cfg.batch; ++b) {
    Rng rng = step_rng.fork(static_cast<uint64_t>(b));
    bool video = cfg.mode == "video" || (cfg.mode == "mixed" && rng.uniform() < cfg.mixed_ratio);
    const auto& data = video ? data_video : data_3d;
    const Sample& sample = data[rng.uniform_int(0, static_cast<int>(data.size()) - 1)];
    PreparedScene ps = prepare_scene(cfg, sample, rng);

    ForwardCacheHandle<float> cache;
    ForwardExtras<float> extras;
    extras.cache = cache.get();
    MatX<float> vel = net_forward(params, ps.in, extras);
    auto mask = target_token_mask(ps.in);
    float loss = flow_loss(vel, ps.vtar, mask);
    loss_acc += loss;
    MatX<float> dvel = flow_loss_grad(vel, ps.vtar, mask);
    dvel *= 1.0f / static_cast<float>(cfg.batch);
    net_backward(params, ps.in, *cache.get(), dvel, grads);
  }
  float loss = static_cast<float>(loss_acc / cfg.batch);
  if (!std::isfinite(loss)) {
    double max_p = 0, max_g = 0;
    for (float x : params.data) max_p = std::max(max_p, std::abs(static_cast<double>(x)));
    for (float x : grads.data) max_g = std::max(max_g, std::abs(static_cast<double>(x)));
    throw TrainingDiverged("non-finite loss at step " + std::to_string(step) + " (max|param|=" + std::to_string(max_p) +
                           ", max|grad|=" + std::to_string(max_g) + ")");
  }
  if (cfg.clip > 0.0) {
    double sq = 0.0;
    for (float x : grads.data) sq += static_cast<double>(x) * x;
    double norm = std::sqrt(sq);
    if (norm > cfg.clip) {
      float scale = static_cast<float>(cfg.clip / norm);
      for (float& x : grads.data) x *= scale;
    }
  }
  adam_update(cfg, step, params, grads, opt);
  return loss;
}

TrainResult train(const TrainConfig& cfg, ParamStore<float>& params, AdamState& opt, uint64_t start_step,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.threads > 0) set_num_threads(cfg.threads);
  const bool want_3d = cfg.mode != "video";
  const bool want_video = cfg.mode != "3d";
  std::vector<Sample> data_3d, data_video;
  if (want_3d) data_3d = build_dataset(cfg.seed, AttrMode::ThreeD, false, cfg.scenes, cfg.views, cfg.res);
  if (want_video) data_video = build_dataset(cfg.seed, AttrMode::Video, false, cfg.scenes, cfg.views, cfg.res);

  std::vector<Sample> eval_scenes;
  if (want_3d) eval_scenes = build_dataset(cfg.seed, AttrMode::ThreeD, true, 2, cfg.views, cfg.res);

  std::filesystem::path out = cfg.out_dir;
  std::ofstream metrics;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(out);
    bool fresh = start_step == 0;
    metrics.open(out / "metrics.csv", fresh ? std::ios::trunc : std::ios::app);
    if (fresh) metrics << "step,loss,psnr,ssim,throughput,lr\n";
  }

  auto save = [&](uint64_t step, const std::string& name) {
    if (cfg.out_dir.empty()) return;
    Checkpoint ck{.config = cfg.model, .step = step, .params = params};
    ck.has_opt = !opt.m.empty();
    ck.adam_t = opt.t;
    ck.adam_m = opt.m;
    ck.adam_v = opt.v;
    save_checkpoint((out / name).string(), ck);
  };

  TrainResult result;
  result.losses.reserve(cfg.steps);
  double window_loss = 0.0;
  int window_n = 0;
  auto window_t0 = std::chrono::steady_clock::now();

  for (uint64_t step = start_step; step < start_step + static_cast<uint64_t>(cfg.steps); ++step) {
    float loss = train_step(cfg, step, data_3d, data_video, params, opt);
    result.losses.push_back(loss);
    result.final_step = step + 1;
    window_loss += loss;
    ++window_n;
    if (hooks.on_step) hooks.on_step(step, loss);

    bool last = step + 1 == start_step + static_cast<uint64_t>(cfg.steps);
    if (cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last)) {
      double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - window_t0).count();
      double tput = throughput(static_cast<long long>(window_n) * cfg.batch, std::max(elapsed, 1e-9));
      double ps = 0.0, ss = 0.0;
      if (!eval_scenes.empty()) {
        Schedule sched = build_schedule(ScheduleKind::LinearQuadratic, 8);
        EvalResult ev = evaluate_nvs(params, eval_scenes, std::min(3, cfg.views - 1),
                                     std::min(3, cfg.views - 1), sched, 1.0, cfg.seed);
        ps = ev.mean_psnr;
        ss = ev.mean_ssim;
      }
      if (metrics.is_open()) {
        metrics << (step + 1) << "," << window_loss / window_n << "," << ps << "," << ss << "," << tput << ","
                << lr_at(cfg, step) << "\n";
        metrics.flush();
      }
      window_loss = 0.0;
      window_n = 0;
      window_t0 = std::chrono::steady_clock::now();
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && !last)
      save(step + 1, "ckpt_" + std::to_string(step + 1) + ".kldc");
  }
  save(result.final_step, "ckpt_final.kldc");
  return result;
}

ParamStore<float> pretrain_then_finetune(const TrainConfig& cfg_video, const TrainConfig& cfg_3d,
                                         TrainResult* video_result, TrainResult* finetune_result) {
  if (!(cfg_video.model == cfg_3d.model))
    throw std::invalid_argument("pretrain_then_finetune: model configs must match across stages");
  ParamStore<float> params = init_params<float>(cfg_video.model, cfg_video.seed);
  if (cfg_video.steps > 0) {
    AdamState opt;
    TrainResult r = train(cfg_video, params, opt);
    if (video_result) *video_result = r;
  } else if (video_result) {
    *video_result = {};
  }
  AdamState opt;
  TrainResult r = train(cfg_3d, params, opt);
  if (finetune_result) *finetune_result = r;
  return params;
}

int nearest_reference(const PoseSet& poses, const std::vector<int>& ref_views, int target_view) {
  const Eigen::Vector3d t = poses.poses[target_view].t.normalized();
  int best = ref_views[0];
  double best_angle = 10.0;
  for (int r : ref_views) {
    Eigen::Vector3d tr = poses.poses[r].t.normalized();
    double angle = std::acos(std::clamp(t.dot(tr), -1.0, 1.0));
    if (angle < best_angle) {
      best_angle = angle;
      best = r;
    }
  }
  return best;
}

EvalResult evaluate_nvs(const ParamStore<float>& params, const std::vector<Sample>& holdout, int n_ref, int ref_pool,
                        const Schedule& schedule, double cfg_scale, uint64_t seed) {
  if (holdout.empty()) throw std::invalid_argument("evaluate_nvs: empty dataset");
  const int V = static_cast<int>(holdout[0].images.size());
  if (n_ref < 1 || n_ref > ref_pool || ref_pool >= V) throw std::invalid_argument("evaluate_nvs: bad n_ref/ref_pool");

  VelocityFn<float> vfn = [&](const SceneInput<float>& in) { return net_forward(params, in); };
  EvalResult out;
  out.scenes = static_cast<int>(holdout.size());
  out.targets_per_scene = V - ref_pool;

  for (size_t s = 0; s < holdout.size(); ++s) {
    const Sample& sample = holdout[s];
    std::vector<Image> refs(sample.images.begin(), sample.images.begin() + n_ref);
    PoseSet ref_poses, tgt_poses;
    std::vector<int> ref_ids;
    for (int v = 0; v < n_ref; ++v) {
      ref_poses.poses.push_back(sample.poses.poses[v]);
      ref_ids.push_back(v);
    }
    for (int v = ref_pool; v < V; ++v) tgt_poses.poses.push_back(sample.poses.poses[v]);

    GenerateOptions opts;
    opts.schedule = schedule;
    opts.cfg_scale = cfg_scale;
    opts.seed = Rng::mix(seed, static_cast<uint64_t>(s));
    std::vector<Image> gen = generate<float>(vfn, params.cfg.patch, params.cfg.channels, refs, ref_poses, tgt_poses, opts);

    for (int j = 0; j < out.targets_per_scene; ++j) {
      const Image& gt = sample.images[ref_pool + j];
      out.mean_psnr += psnr(gen[j], gt);
      out.mean_ssim += ssim(gen[j], gt);
      int nb = nearest_reference(sample.poses, ref_ids, ref_pool + j);
      out.baseline_psnr += psnr(sample.images[nb], gt);
      out.baseline_ssim += ssim(sample.images[nb], gt);
    }
  }
  double count = static_cast<double>(out.scenes) * out.targets_per_scene;
  out.mean_psnr /= count;
  out.mean_ssim /= count;
  out.baseline_psnr /= count;
  out.baseline_ssim /= count;
  return out;
}

}  // namespace kaleido
