// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "kaleido/trainer.hpp"

using namespace kaleido;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.layers = 2;
  cfg.model.hidden = 32;
  cfg.model.q_heads = 2;
  cfg.model.kv_heads = 1;
  cfg.model.window = 2;
  cfg.model.registers = 1;
  cfg.model.time_sin_dim = 16;
  cfg.model.time_dim = 16;
  cfg.views = 4;
  cfg.res = 16;
  cfg.scenes = 4;
  cfg.steps = 20;
  cfg.warmup = 5;
  cfg.eval_every = 0;
  cfg.checkpoint_every = 0;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged") {
  TrainConfig cfg = tiny_config();
  cfg.lr = 0.0;
  cfg.steps = 3;
  auto params = init_params<float>(cfg.model, 1);
  auto before = params.data;
  AdamState opt;
  TrainResult r = train(cfg, params, opt);
  CHECK(r.losses.size() == 3);
  for (float l : r.losses) CHECK(std::isfinite(l));
  CHECK(std::memcmp(params.data.data(), before.data(), before.size() * sizeof(float)) == 0);
}

TEST_CASE("identical seeds give identical loss trajectories and parameters") {
  TrainConfig cfg = tiny_config();
  cfg.steps = 10;
  auto pa = init_params<float>(cfg.model, 2);
  auto pb = init_params<float>(cfg.model, 2);
  AdamState oa, ob;
  TrainResult ra = train(cfg, pa, oa);
  TrainResult rb = train(cfg, pb, ob);
  CHECK(ra.losses == rb.losses);
  CHECK(std::memcmp(pa.data.data(), pb.data.data(), pa.data.size() * sizeof(float)) == 0);
}

TEST_CASE("memorising four scenes reduces the loss") {
  TrainConfig cfg = tiny_config();
  cfg.steps = 500;
  cfg.lr = 2e-3;
  cfg.warmup = 20;
  cfg.lr_decay = "constant";
  cfg.batch = 1;
  auto params = init_params<float>(cfg.model, 3);
  AdamState opt;
  TrainResult r = train(cfg, params, opt);
  double initial = 0, final = 0;
  for (int i = 0; i < 25; ++i) initial += r.losses[i];
  for (int i = 0; i < 25; ++i) final += r.losses[r.losses.size() - 1 - i];
  CHECK(final < 0.2 * initial);
}

TEST_CASE("video and 3d stages share one parameter layout") {
  TrainConfig video = tiny_config();
  video.mode = "video";
  video.steps = 5;
  TrainConfig fine = tiny_config();
  fine.mode = "3d";
  fine.steps = 5;
  TrainResult vr, fr;
  ParamStore<float> params = pretrain_then_finetune(video, fine, &vr, &fr);
  CHECK(vr.losses.size() == 5);
  CHECK(fr.losses.size() == 5);
  CHECK(params.layout->total == init_params<float>(fine.model, 0).layout->total);

  // Zero video steps reduces to plain 3D training from the same init.
  TrainConfig none = video;
  none.steps = 0;
  none.seed = fine.seed;
  TrainResult fr2;
  ParamStore<float> plain = pretrain_then_finetune(none, fine, nullptr, &fr2);
  auto direct = init_params<float>(fine.model, fine.seed);
  AdamState opt;
  TrainResult fr3 = train(fine, direct, opt);
  CHECK(fr2.losses == fr3.losses);
  CHECK(std::memcmp(plain.data.data(), direct.data.data(), plain.data.size() * sizeof(float)) == 0);
}

TEST_CASE("mixed mode draws both kinds of batches") {
  TrainConfig cfg = tiny_config();
  cfg.mode = "mixed";
  cfg.mixed_ratio = 0.5;
  cfg.steps = 8;
  auto params = init_params<float>(cfg.model, 4);
  AdamState opt;
  TrainResult r = train(cfg, params, opt);
  CHECK(r.losses.size() == 8);
  for (float l : r.losses) CHECK(std::isfinite(l));
}

TEST_CASE("training writes metrics and checkpoints that resume") {
  auto dir = std::filesystem::temp_directory_path() / "kaleido_trainer_test";
  std::filesystem::remove_all(dir);
  TrainConfig cfg = tiny_config();
  cfg.steps = 6;
  cfg.eval_every = 3;
  cfg.out_dir = dir.string();
  auto params = init_params<float>(cfg.model, 5);
  AdamState opt;
  train(cfg, params, opt);

  CHECK(std::filesystem::exists(dir / "metrics.csv"));
  Checkpoint ck = load_checkpoint((dir / "ckpt_final.kldc").string());
  CHECK(ck.step == 6);
  CHECK(ck.has_opt);
  CHECK(std::memcmp(ck.params.data.data(), params.data.data(), params.data.size() * sizeof(float)) == 0);

  // Resuming continues the step numbering.
  TrainConfig more = cfg;
  more.steps = 2;
  AdamState opt2;
  opt2.m = ck.adam_m;
  opt2.v = ck.adam_v;
  opt2.t = ck.adam_t;
  TrainResult r2 = train(more, params, opt2, ck.step);
  CHECK(r2.final_step == 8);
  std::filesystem::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  TrainConfig cfg = tiny_config();
  cfg.steps = 1;
  cfg.clip = 0.0;
  auto params = init_params<float>(cfg.model, 6);
  params.mat("embed.w").setConstant(std::numeric_limits<float>::quiet_NaN());
  AdamState opt;
  CHECK_THROWS_AS(train(cfg, params, opt), TrainingDiverged);
}

TEST_CASE("nearest reference picks the smallest angular distance") {
  PoseSet ps;
  ps.poses.push_back(look_at_origin(orbit_position(0.0, 0.0, 1.0)));
  ps.poses.push_back(look_at_origin(orbit_position(1.5, 0.0, 1.0)));
  ps.poses.push_back(look_at_origin(orbit_position(0.4, 0.0, 1.0)));
  CHECK(nearest_reference(ps, {0, 1}, 2) == 0);
  CHECK(nearest_reference(ps, {1}, 2) == 1);
}

TEST_CASE("evaluate_nvs scores a tiny model without error") {
  TrainConfig cfg = tiny_config();
  auto params = init_params<float>(cfg.model, 7);
  auto holdout = build_dataset(cfg.seed, AttrMode::ThreeD, true, 2, cfg.views, cfg.res);
  Schedule sched = build_schedule(ScheduleKind::LinearQuadratic, 4);
  EvalResult ev = evaluate_nvs(params, holdout, 2, 2, sched, 1.0, 9);
  CHECK(ev.scenes == 2);
  CHECK(ev.targets_per_scene == 2);
  CHECK(std::isfinite(ev.mean_psnr));
  CHECK(std::isfinite(ev.baseline_psnr));
  CHECK(ev.baseline_psnr > 0.0);

  // Same seed, same numbers.
  EvalResult ev2 = evaluate_nvs(params, holdout, 2, 2, sched, 1.0, 9);
  CHECK(ev.mean_psnr == ev2.mean_psnr);
  CHECK(ev.mean_ssim == ev2.mean_ssim);
}
