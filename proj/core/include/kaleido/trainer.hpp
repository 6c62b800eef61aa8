// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kaleido/checkpoint.hpp"
#include "kaleido/flow.hpp"
#include "kaleido/net.hpp"
#include "kaleido/synth.hpp"

namespace kaleido {

struct TrainConfig {
  ModelConfig model;
  std::string mode = "3d";   // "3d" | "video" | "mixed"
  double mixed_ratio = 0.5;  // probability of a video batch in mixed mode
  int steps = 20000;
  int batch = 1;
  int views = 12;
  int res = 32;
  int scenes = 1000;
  uint64_t seed = 0;
  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9, beta2 = 0.95, adam_eps = 1e-8;
  double clip = 1.0;  // global grad-norm clip, <= 0 disables
  int warmup = 200;
  std::string lr_decay = "cosine";  // "cosine" | "constant"
  double final_lr_frac = 0.1;
  SamplerSpec sampler{SamplerFamily::Mode, 3.0, 0.8};
  double cfg_dropout = 0.1;  // probability of masking every reference view
  int eval_every = 1000;
  int checkpoint_every = 5000;
  std::string out_dir;  // empty: no metrics/checkpoint files
  int threads = 0;

  void validate() const;
};

// Deterministic dataset seeds: training and held-out scenes come from
// disjoint streams of the run seed.
uint64_t dataset_seed(uint64_t run_seed, AttrMode mode, bool holdout, int index);
std::vector<Sample> build_dataset(uint64_t run_seed, AttrMode mode, bool holdout, int scenes, int views, int res);

struct AdamState {
  std::vector<float> m, v;
  uint64_t t = 0;
};

// Thrown when the loss goes non-finite; carries a diagnostic summary.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

struct TrainResult {
  std::vector<float> losses;  // one entry per optimisation step
  uint64_t final_step = 0;
};

struct TrainHooks {
  std::function<void(uint64_t step, float loss)> on_step;
};

// One optimisation step (batch scenes, AdamW update). Exposed for tests; the
// step index seeds all randomness, so a fixed (seed, step) pair reproduces
// the exact update.
float train_step(const TrainConfig& cfg, uint64_t step, const std::vector<Sample>& data_3d,
                 const std::vector<Sample>& data_video, ParamStore<float>& params, AdamState& opt);

// Full loop: builds datasets from the config seed, runs cfg.steps steps from
// start_step, writes metrics/checkpoints into cfg.out_dir when set.
TrainResult train(const TrainConfig& cfg, ParamStore<float>& params, AdamState& opt, uint64_t start_step = 0,
                  const TrainHooks& hooks = {});

// Video pre-training followed by 3D fine-tuning on the same parameter set;
// the architecture is unchanged between stages (only the attribute mode
// switches). Returns the per-stage losses through the two out-params.
ParamStore<float> pretrain_then_finetune(const TrainConfig& cfg_video, const TrainConfig& cfg_3d,
                                         TrainResult* video_result, TrainResult* finetune_result);

// Held-out novel-view evaluation: for each scene, the first n_ref views of
// the reference pool condition the model and the views from ref_pool onward
// are generated and scored, so different n_ref values share one target set.
struct EvalResult {
  double mean_psnr = 0, mean_ssim = 0;
  double baseline_psnr = 0, baseline_ssim = 0;  // copy nearest reference view
  int scenes = 0, targets_per_scene = 0;
};

EvalResult evaluate_nvs(const ParamStore<float>& params, const std::vector<Sample>& holdout, int n_ref, int ref_pool,
                        const Schedule& schedule, double cfg_scale, uint64_t seed);

// Nearest reference by angular distance between camera directions.
int nearest_reference(const PoseSet& poses, const std::vector<int>& ref_views, int target_view);

}  // namespace kaleido
