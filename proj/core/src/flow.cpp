// Copyright (c) 2026 Kaleido Authors
// SPDX-License-Identifier: Apache-2.0
#include "kaleido/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kaleido {

namespace {
constexpr double kPi = 3.14159265358979323846264338328;
}

void SamplerSpec::validate() const {
  if (shift < 1.0) throw std::invalid_argument("SamplerSpec: shift must be >= 1");
  if (family == SamplerFamily::Mode && (mode_scale < 0.0 || mode_scale > 1.0))
    throw std::invalid_argument("SamplerSpec: mode scale must lie in [0, 1]");
}

SamplerSpec parse_sampler(const std::string& name) {
  SamplerSpec s;
  if (name == "uniform")
    s.family = SamplerFamily::Uniform;
  else if (name == "logitnormal")
    s.family = SamplerFamily::LogitNormal;
  else if (name == "mode")
    s.family = SamplerFamily::Mode;
  else
    throw std::invalid_argument("unknown sampler family: " + name);
  return s;
}

double modulate(double t, double sigma) {
  if (sigma < 1.0) throw std::invalid_argument("modulate: sigma must be >= 1");
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("modulate: t must lie in [0, 1]");
  return sigma * t / (1.0 + (sigma - 1.0) * t);
}

double modulate_inverse(double t_prime, double sigma) {
  if (sigma < 1.0) throw std::invalid_argument("modulate_inverse: sigma must be >= 1");
  return t_prime / (sigma - (sigma - 1.0) * t_prime);
}

double mode_base_map(double u, double scale) {
  double c = std::cos(kPi * 0.5 * u);
  return 1.0 - u - scale * (c * c - 1.0 + u);
}

double sample_t(const SamplerSpec& spec, Rng& rng) {
  spec.validate();
  double base;
  switch (spec.family) {
    case SamplerFamily::Uniform: base = rng.uniform(); break;
    case SamplerFamily::LogitNormal: base = 1.0 / (1.0 + std::exp(-rng.normal())); break;
    case SamplerFamily::Mode: base = std::clamp(mode_base_map(rng.uniform(), spec.mode_scale), 0.0, 1.0); break;
    default: base = rng.uniform();
  }
  return modulate(base, spec.shift);
}

namespace {

// Base-family pdf before the shift.
double base_density(const SamplerSpec& spec, double t) {
  switch (spec.family) {
    case SamplerFamily::Uniform: return (t >= 0.0 && t <= 1.0) ? 1.0 : 0.0;
    case SamplerFamily::LogitNormal: {
      if (t <= 0.0 || t >= 1.0) return 0.0;
      double x = std::log(t / (1.0 - t));
      double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
      return phi / (t * (1.0 - t));
    }
    case SamplerFamily::Mode: {
      if (t < 0.0 || t > 1.0) return 0.0;
      // t = f(u) is strictly decreasing for s in [0, 1]; invert by bisection.
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mode_base_map(mid, spec.mode_scale) > t)
          lo = mid;
        else
          hi = mid;
      }
      double u = 0.5 * (lo + hi);
      double dfdu = -1.0 - spec.mode_scale * (1.0 - kPi * 0.5 * std::sin(kPi * u));
      return 1.0 / std::abs(dfdu);
    }
  }
  return 0.0;
}

double base_cdf(const SamplerSpec& spec, double t) {
  switch (spec.family) {
    case SamplerFamily::Uniform: return std::clamp(t, 0.0, 1.0);
    case SamplerFamily::LogitNormal: {
      if (t <= 0.0) return 0.0;
      if (t >= 1.0) return 1.0;
      double x = std::log(t / (1.0 - t));
      return 0.5 * std::erfc(-x / std::sqrt(2.0));
    }
    case SamplerFamily::Mode: {
      if (t <= 0.0) return 0.0;
      if (t >= 1.0) return 1.0;
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mode_base_map(mid, spec.mode_scale) > t)
          lo = mid;
        else
          hi = mid;
      }
      // u is decreasing in t, so P(T <= t) = P(U >= u) = 1 - u.
      return 1.0 - 0.5 * (lo + hi);
    }
  }
  return 0.0;
}

}  // namespace

double sampler_density(const SamplerSpec& spec, double t) {
  spec.validate();
  if (t < 0.0 || t > 1.0) return 0.0;
  double base = modulate_inverse(t, spec.shift);
  double denom = spec.shift - (spec.shift - 1.0) * t;
  double dinv = spec.shift / (denom * denom);  // d(base)/dt
  return base_density(spec, base) * dinv;
}

double sampler_cdf(const SamplerSpec& spec, double t) {
  spec.validate();
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return base_cdf(spec, modulate_inverse(t, spec.shift));
}

ScheduleKind parse_schedule(const std::string& name) {
  if (name == "linspace") return ScheduleKind::Linspace;
  if (name == "trailing") return ScheduleKind::Trailing;
  if (name == "linquad") return ScheduleKind::LinearQuadratic;
  throw std::invalid_argument("unknown schedule kind: " + name);
}

Schedule build_schedule(ScheduleKind kind, int steps, double t_max) {
  if (steps < 2) throw std::invalid_argument("build_schedule: need at least 2 steps");
  if (t_max <= 0.0 || t_max > 1.0) throw std::invalid_argument("build_schedule: t_max must lie in (0, 1]");
  Schedule s;
  s.kind = kind;
  s.t.resize(steps + 1);
  switch (kind) {
    case ScheduleKind::Linspace:
      for (int i = 0; i <= steps; ++i) s.t[i] = t_max * (1.0 - static_cast<double>(i) / steps);
      break;
    case ScheduleKind::Trailing: {
      // Uniform over the inner 1000-convention index range [1, 980]; the data
      // endpoint is reached with one final step.
      double hi = 0.980 * (t_max / 0.999);
      double lo = std::min(0.001, hi / steps);
      for (int i = 0; i < steps; ++i) s.t[i] = hi - (hi - lo) * static_cast<double>(i) / (steps - 1);
      s.t[steps] = 0.0;
      break;
    }
    case ScheduleKind::LinearQuadratic: {
      const double unit = 1e-3;  // constant step of the linear half
      int n_lin = (steps + 1) / 2;
      int n_quad = steps - n_lin;
      if (t_max - n_lin * unit <= 0.0) throw std::invalid_argument("build_schedule: too many steps for unit step");
      for (int i = 0; i <= n_lin; ++i) s.t[i] = t_max - unit * i;
      double knee = t_max - unit * n_lin;
      for (int j = 1; j <= n_quad; ++j) {
        double a = static_cast<double>(j) / n_quad;
        s.t[n_lin + j] = knee * (1.0 - a * a);
      }
      s.t[steps] = 0.0;
      break;
    }
  }
  for (int i = 0; i < steps; ++i)
    if (!(s.t[i] > s.t[i + 1])) throw std::logic_error("build_schedule: grid not strictly decreasing");
  return s;
}

template <typename T>
MatX<T> interpolate(const MatX<T>& z, const MatX<T>& eps, double t) {
  if (z.rows() != eps.rows() || z.cols() != eps.cols()) throw std::invalid_argument("interpolate: shape mismatch");
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  return (T(1) - T(t)) * z + T(t) * eps;
}

template <typename T>
MatX<T> velocity_target(const MatX<T>& z, const MatX<T>& eps) {
  if (z.rows() != eps.rows() || z.cols() != eps.cols()) throw std::invalid_argument("velocity_target: shape mismatch");
  return eps - z;
}

template <typename T>
T flow_loss(const MatX<T>& pred, const MatX<T>& target, const std::vector<uint8_t>& token_mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("flow_loss: shape mismatch");
  long long count = 0;
  T acc = T(0);
  for (Eigen::Index n = 0; n < pred.cols(); ++n) {
    if (!token_mask[static_cast<size_t>(n)]) continue;
    ++count;
    acc += (pred.col(n) - target.col(n)).squaredNorm();
  }
  if (count == 0) throw std::invalid_argument("flow_loss: empty target mask");
  return acc / static_cast<T>(count * pred.rows());
}

template <typename T>
MatX<T> flow_loss_grad(const MatX<T>& pred, const MatX<T>& target, const std::vector<uint8_t>& token_mask) {
  long long count = 0;
  for (Eigen::Index n = 0; n < pred.cols(); ++n) count += token_mask[static_cast<size_t>(n)] ? 1 : 0;
  if (count == 0) throw std::invalid_argument("flow_loss_grad: empty target mask");
  MatX<T> g = MatX<T>::Zero(pred.rows(), pred.cols());
  T scale = T(2) / static_cast<T>(count * pred.rows());
  for (Eigen::Index n = 0; n < pred.cols(); ++n)
    if (token_mask[static_cast<size_t>(n)]) g.col(n) = scale * (pred.col(n) - target.col(n));
  return g;
}

template <typename T>
std::vector<Image> generate(const VelocityFn<T>& velocity, int patch, int channels,
                            const std::vector<Image>& ref_images, const PoseSet& ref_poses,
                            const PoseSet& target_poses, const GenerateOptions& opts) {
  const int n_ref = static_cast<int>(ref_images.size());
  const int n_tgt = static_cast<int>(target_poses.size());
  if (n_tgt < 1) throw std::invalid_argument("generate: need at least one target pose");
  if (ref_poses.size() != ref_images.size()) throw std::invalid_argument("generate: ref pose/image count mismatch");
  if (opts.schedule.steps() < 1 || opts.schedule.t.back() != 0.0)
    throw std::invalid_argument("generate: invalid schedule");
  int h = opts.img_h, w = opts.img_w;
  if (n_ref > 0) {
    h = ref_images[0].h;
    w = ref_images[0].w;
  }
  if (h <= 0 || w <= 0) throw std::invalid_argument("generate: image size unknown (no refs, no img_h/img_w)");
  if (opts.noise && static_cast<int>(opts.noise->size()) != n_tgt)
    throw std::invalid_argument("generate: noise override must have one image per target");

  // One shared normalisation over every view present in this call.
  PoseSet all;
  all.poses = ref_poses.poses;
  all.poses.insert(all.poses.end(), target_poses.poses.begin(), target_poses.poses.end());
  all = normalize_translations(all);

  // The ODE state is kept at full T precision; images are only materialised
  // at the end (and when a finished group re-enters as a reference).
  const int gh = h / patch, gw = w / patch;
  const int L = gh * gw;
  std::vector<VecX<T>> state(n_tgt);
  for (int j = 0; j < n_tgt; ++j) {
    state[j].resize(static_cast<Eigen::Index>(h) * w * channels);
    if (opts.noise) {
      const Image& ni = (*opts.noise)[j];
      if (ni.h != h || ni.w != w) throw std::invalid_argument("generate: noise image size mismatch");
      for (Eigen::Index i = 0; i < state[j].size(); ++i) state[j][i] = static_cast<T>(ni.data[i]);
    } else {
      Rng rng(Rng::mix(opts.seed, 0x7a6765ull + j));
      for (Eigen::Index i = 0; i < state[j].size(); ++i) state[j][i] = static_cast<T>(rng.normal());
    }
  }

  // Patchify one T pixel buffer into the given column block.
  auto patchify_state = [&](const VecX<T>& pix, MatX<T>& patches, Eigen::Index col0) {
    for (int i = 0; i < gh; ++i)
      for (int j = 0; j < gw; ++j) {
        Eigen::Index col = col0 + i * gw + j;
        int row = 0;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            for (int ch = 0; ch < channels; ++ch)
              patches(row++, col) = pix[(static_cast<Eigen::Index>(i * patch + dy) * w + (j * patch + dx)) * channels + ch];
      }
  };
  auto unpatchify_state = [&](const MatX<T>& tokens, Eigen::Index col0, VecX<T>& pix) {
    for (int i = 0; i < gh; ++i)
      for (int j = 0; j < gw; ++j) {
        Eigen::Index col = col0 + i * gw + j;
        int row = 0;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            for (int ch = 0; ch < channels; ++ch)
              pix[(static_cast<Eigen::Index>(i * patch + dy) * w + (j * patch + dx)) * channels + ch] = tokens(row++, col);
      }
  };

  std::vector<Image> done(n_tgt);
  const int group = opts.autoregressive_group > 0 ? opts.autoregressive_group : n_tgt;

  for (int g0 = 0; g0 < n_tgt; g0 += group) {
    const int gn = std::min(group, n_tgt - g0);
    // Scene = refs + previously generated (as references) + this group.
    std::vector<Image> ref_views = ref_images;
    std::vector<CameraPose> poses(all.poses.begin(), all.poses.begin() + n_ref);
    for (int j = 0; j < g0; ++j) {
      ref_views.push_back(done[j]);
      poses.push_back(all.poses[n_ref + j]);
    }
    const int first_tgt = static_cast<int>(ref_views.size());
    for (int j = g0; j < g0 + gn; ++j) poses.push_back(all.poses[n_ref + j]);

    SceneInput<T> in;
    in.mode = AttrMode::ThreeD;
    in.V = first_tgt + gn;
    in.gh = gh;
    in.gw = gw;
    in.patch = patch;
    in.channels = channels;
    in.poses = poses;
    in.split.roles.assign(in.V, ViewRole::Reference);
    in.split.visible.assign(in.V, 1);
    for (int v = first_tgt; v < in.V; ++v) in.split.roles[v] = ViewRole::Target;
    in.aux.resize(0, in.num_tokens());
    in.patches.resize(patch * patch * channels, in.num_tokens());
    if (first_tgt > 0) in.patches.leftCols(static_cast<Eigen::Index>(first_tgt) * L) = patchify<T>(ref_views, patch);

    for (int si = 0; si < opts.schedule.steps(); ++si) {
      const double t_cur = opts.schedule.t[si];
      const double t_next = opts.schedule.t[si + 1];
      for (int j = 0; j < gn; ++j)
        patchify_state(state[g0 + j], in.patches, static_cast<Eigen::Index>(first_tgt + j) * L);
      in.t = t_cur;

      MatX<T> v_hat = velocity(in);
      if (opts.cfg_scale != 1.0 && first_tgt > 0) {
        SceneInput<T> un = in;
        mask_all_references(un.split);
        MatX<T> v_un = velocity(un);
        v_hat = v_un + T(opts.cfg_scale) * (v_hat - v_un);
      }
      const T dt = static_cast<T>(t_next - t_cur);
      VecX<T> vel(static_cast<Eigen::Index>(h) * w * channels);
      for (int j = 0; j < gn; ++j) {
        unpatchify_state(v_hat, static_cast<Eigen::Index>(first_tgt + j) * L, vel);
        state[g0 + j] += dt * vel;
      }
    }
    for (int j = g0; j < g0 + gn; ++j) {
      done[j] = Image(h, w, channels);
      for (Eigen::Index i = 0; i < state[j].size(); ++i)
        done[j].data[i] = std::clamp(static_cast<float>(state[j][i]), -1.0f, 1.0f);
    }
  }
  return done;
}

template MatX<float> interpolate<float>(const MatX<float>&, const MatX<float>&, double);
template MatX<double> interpolate<double>(const MatX<double>&, const MatX<double>&, double);
template MatX<float> velocity_target<float>(const MatX<float>&, const MatX<float>&);
template MatX<double> velocity_target<double>(const MatX<double>&, const MatX<double>&);
template float flow_loss<float>(const MatX<float>&, const MatX<float>&, const std::vector<uint8_t>&);
template double flow_loss<double>(const MatX<double>&, const MatX<double>&, const std::vector<uint8_t>&);
template MatX<float> flow_loss_grad<float>(const MatX<float>&, const MatX<float>&, const std::vector<uint8_t>&);
template MatX<double> flow_loss_grad<double>(const MatX<double>&, const MatX<double>&, const std::vector<uint8_t>&);
template std::vector<Image> generate<float>(const VelocityFn<float>&, int, int, const std::vector<Image>&,
                                            const PoseSet&, const PoseSet&, const GenerateOptions&);
template std::vector<Image> generate<double>(const VelocityFn<double>&, int, int, const std::vector<Image>&,
                                             const PoseSet&, const PoseSet&, const GenerateOptions&);

}  // namespace kaleido
