#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dfr::test {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
};

// Compares autograd gradients of loss() against central differences for up to
// `per_tensor` entries of every tensor in `params` (all float64). The relative error of an
// entry is |analytic - numeric| / max(|analytic|, |numeric|, s), where s is the larger of
// `floor` and 1e-3 times the largest analytic gradient among the checked entries. The scale
// term keeps parameters whose true gradient is exactly zero (a conv bias feeding a
// per-channel GroupNorm, say) from turning round-off into a huge ratio.
inline GradCheckResult grad_check(const std::vector<std::pair<std::string, torch::Tensor>>& params,
                                  const std::function<torch::Tensor()>& loss, int per_tensor = 6, double h = 1e-6,
                                  double floor = 1e-7) {
  for (auto& [name, p] : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  loss().backward();
  struct Entry {
    std::string name;
    double analytic;
    double numeric;
  };
  std::vector<Entry> entries;
  torch::NoGradGuard guard;
  for (auto& [name, p] : params) {
    const auto grad = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
    auto flat = p.view({-1});
    const auto gflat = grad.view({-1});
    const int64_t n = flat.numel();
    const int64_t stride = std::max<int64_t>(1, n / per_tensor);
    for (int64_t i = 0; i < n; i += stride) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = loss().item<double>();
      flat[i] = orig - h;
      const double down = loss().item<double>();
      flat[i] = orig;
      entries.push_back({name + "[" + std::to_string(i) + "]", gflat[i].item<double>(), (up - down) / (2 * h)});
    }
  }
  double scale = 0.0;
  for (const auto& e : entries) scale = std::max(scale, std::abs(e.analytic));
  const double denom_floor = std::max(floor, 1e-3 * scale);
  GradCheckResult r;
  for (const auto& e : entries) {
    const double rel =
        std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), denom_floor});
    ++r.checked;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      std::ostringstream os;
      os << e.name << " analytic=" << e.analytic << " numeric=" << e.numeric << " scale=" << scale;
      r.worst = os.str();
    }
  }
  return r;
}

inline std::vector<std::pair<std::string, torch::Tensor>> named(torch::nn::Module& m, const std::string& prefix = "") {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (auto& item : m.named_parameters(true)) out.emplace_back(prefix + item.key(), item.value());
  return out;
}

}  // namespace dfr::test
