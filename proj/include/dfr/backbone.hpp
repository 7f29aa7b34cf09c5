#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "dfr/config.hpp"
#include "dfr/unet.hpp"

namespace dfr {

// Linear beta schedule over steps 1..T. alpha_bar(t) = prod_{s<=t} (1 - beta_s).
class NoiseSchedule {
 public:
  NoiseSchedule(int64_t steps, double beta_start, double beta_end);
  static NoiseSchedule from_config(const ScheduleConfig& cfg);

  int64_t steps() const { return steps_; }
  double beta(int64_t t) const;
  double alpha_bar(int64_t t) const;  // t in [1, T]; alpha_bar(0) == 1
  // alpha_bar gathered for a [B] tensor of steps, as float64.
  torch::Tensor alpha_bar(const torch::Tensor& t) const;

 private:
  void check(int64_t t) const;
  int64_t steps_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // index 0 holds 1.0
};

// z_t = sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps, for a single step or a [B] step tensor.
torch::Tensor forward_diffuse(const torch::Tensor& z0, int64_t t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);
torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);
// Closed form at an explicit alpha_bar, for analysis and tests.
torch::Tensor diffuse_at(const torch::Tensor& z0, double alpha_bar, const torch::Tensor& eps);

torch::Tensor predict_noise(UNetImpl& unet, const torch::Tensor& z_t, const torch::Tensor& t,
                            const torch::Tensor& context, const std::vector<torch::Tensor>& control = {});

// Mean squared error between true and predicted noise.
torch::Tensor diffusion_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat);

// Noise estimate for z_t at integer step t (batch-wide).
using NoisePredictor = std::function<torch::Tensor(const torch::Tensor& z_t, int64_t t)>;

// Evenly spaced descending steps from T; the last entry is the smallest visited step.
std::vector<int64_t> sampling_timesteps(int64_t total_steps, int64_t steps);

class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual torch::Tensor run(const NoisePredictor& predictor, const torch::Tensor& z_T,
                            const NoiseSchedule& schedule, int64_t steps) const = 0;
};

// Deterministic DDIM update (eta = 0); the final step lands on alpha_bar = 1.
class DdimSampler : public Sampler {
 public:
  torch::Tensor run(const NoisePredictor& predictor, const torch::Tensor& z_T, const NoiseSchedule& schedule,
                    int64_t steps) const override;
};

// Standard normal starting latents; image i draws from derive_seed(seed, i).
torch::Tensor initial_noise(const std::vector<int64_t>& shape, uint64_t seed,
                            torch::ScalarType dtype = torch::kFloat32);

}  // namespace dfr
