#include "dfr/backbone.hpp"

#include <cmath>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "dfr/error.hpp"
#include "dfr/nn_blocks.hpp"
#include "dfr/rng.hpp"

namespace dfr {

NoiseSchedule::NoiseSchedule(int64_t steps, double beta_start, double beta_end) : steps_(steps) {
  if (steps < 1) throw ValidationError("schedule needs at least one step");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    throw ValidationError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  betas_.resize(steps);
  alpha_bars_.resize(steps + 1);
  alpha_bars_[0] = 1.0;
  for (int64_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas_[i] = beta_start + (beta_end - beta_start) * frac;
    alpha_bars_[i + 1] = alpha_bars_[i] * (1.0 - betas_[i]);
  }
}

NoiseSchedule NoiseSchedule::from_config(const ScheduleConfig& cfg) {
  return NoiseSchedule(cfg.steps, cfg.beta_start, cfg.beta_end);
}

void NoiseSchedule::check(int64_t t) const {
  if (t < 1 || t > steps_) {
    throw ValidationError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
  }
}

double NoiseSchedule::beta(int64_t t) const {
  check(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int64_t t) const {
  if (t == 0) return 1.0;
  check(t);
  return alpha_bars_[t];
}

torch::Tensor NoiseSchedule::alpha_bar(const torch::Tensor& t) const {
  auto tc = t.to(torch::kInt64).contiguous();
  std::vector<double> out(tc.numel());
  const int64_t* p = tc.data_ptr<int64_t>();
  for (int64_t i = 0; i < tc.numel(); ++i) {
    check(p[i]);
    out[i] = alpha_bars_[p[i]];
  }
  return torch::tensor(out, torch::kFloat64);
}

torch::Tensor diffuse_at(const torch::Tensor& z0, double alpha_bar, const torch::Tensor& eps) {
  if (eps.sizes() != z0.sizes()) throw ValidationError("noise shape must equal latent shape");
  return std::sqrt(alpha_bar) * z0 + std::sqrt(1.0 - alpha_bar) * eps;
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, int64_t t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) {
    throw ValidationError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
  }
  return diffuse_at(z0, schedule.alpha_bar(t), eps);
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
  if (eps.sizes() != z0.sizes()) throw ValidationError("noise shape must equal latent shape");
  if (t.dim() != 1 || t.size(0) != z0.size(0)) throw ValidationError("timestep tensor must be [B]");
  auto ab = schedule.alpha_bar(t).to(z0.dtype()).view({-1, 1, 1, 1});
  return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps;
}

torch::Tensor predict_noise(UNetImpl& unet, const torch::Tensor& z_t, const torch::Tensor& t,
                            const torch::Tensor& context, const std::vector<torch::Tensor>& control) {
  return unet.forward(z_t, t, context, control);
}

torch::Tensor diffusion_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat) {
  return nn::mse(eps, eps_hat, "diffusion loss");
}

std::vector<int64_t> sampling_timesteps(int64_t total_steps, int64_t steps) {
  if (steps < 1 || steps > total_steps) {
    throw ValidationError("sampler steps must be in [1, " + std::to_string(total_steps) + "], got " +
                          std::to_string(steps));
  }
  std::vector<int64_t> ts;
  for (int64_t i = 0; i < steps; ++i) ts.push_back(total_steps - (i * total_steps) / steps);
  return ts;
}

torch::Tensor DdimSampler::run(const NoisePredictor& predictor, const torch::Tensor& z_T,
                               const NoiseSchedule& schedule, int64_t steps) const {
  const auto ts = sampling_timesteps(schedule.steps(), steps);
  auto z = z_T;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int64_t t = ts[i];
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
    const auto eps = predictor(z, t);
    if (eps.sizes() != z.sizes()) throw ValidationError("noise predictor returned a wrongly shaped tensor");
    const auto z0 = (z - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    z = std::sqrt(ab_prev) * z0 + std::sqrt(1.0 - ab_prev) * eps;
  }
  return z;
}

torch::Tensor initial_noise(const std::vector<int64_t>& shape, uint64_t seed, torch::ScalarType dtype) {
  if (shape.empty()) throw ValidationError("noise shape must not be empty");
  std::vector<int64_t> per(shape.begin() + 1, shape.end());
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < shape[0]; ++i) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, static_cast<uint64_t>(i)));
    parts.push_back(torch::randn(per, gen, torch::TensorOptions().dtype(torch::kFloat64)).to(dtype));
  }
  return torch::stack(parts);
}

}  // namespace dfr
