#include "dfr/prompt_processor.hpp"

#include <sstream>

#include "dfr/error.hpp"

namespace F = torch::nn::functional;

namespace dfr {

namespace {

torch::nn::Sequential mlp(int64_t in, int64_t width, int layers) {
  torch::nn::Sequential seq;
  int64_t cur = in;
  for (int i = 0; i < layers; ++i) {
    seq->push_back(torch::nn::Linear(cur, width));
    if (i + 1 < layers) {
      seq->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
      seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    }
    cur = width;
  }
  return seq;
}

}  // namespace

PromptProcessorImpl::PromptProcessorImpl(const PromptDims& dims) : dims_(dims) {
  if (dims.d_e <= 0 || dims.d_s <= 0 || dims.d_d <= 0 || dims.num_kinds < 2) {
    throw ValidationError("prompt processor dims must be positive with at least 2 kinds");
  }
  b_s_ = register_module("b_s", mlp(dims.d_e, dims.d_s, 3));
  b_d_ = register_module("b_d", mlp(dims.d_e, dims.d_d, 2));
  c_ = register_module("c", torch::nn::Linear(dims.d_d, dims.num_kinds));
}

void PromptProcessorImpl::check_input(const torch::Tensor& x, int64_t dim, const char* what) const {
  if (x.dim() != 2 || x.size(1) != dim) {
    std::ostringstream os;
    os << what << ": expected [B, " << dim << "] input, got " << x.sizes();
    throw ValidationError(os.str());
  }
}

torch::Tensor PromptProcessorImpl::semantic(const torch::Tensor& p_clip) {
  check_input(p_clip, dims_.d_e, "semantic branch");
  return b_s_->forward(p_clip);
}

torch::Tensor PromptProcessorImpl::degradation(const torch::Tensor& p_clip) {
  check_input(p_clip, dims_.d_e, "degradation branch");
  return b_d_->forward(p_clip);
}

torch::Tensor PromptProcessorImpl::classify(const torch::Tensor& p_d) {
  check_input(p_d, dims_.d_d, "classifier");
  return c_(p_d);
}

int64_t PromptProcessorImpl::expected_parameter_count(const PromptDims& d) {
  const auto linear = [](int64_t in, int64_t out) { return in * out + out; };
  const auto norm = [](int64_t w) { return 2 * w; };
  const int64_t b_s = linear(d.d_e, d.d_s) + norm(d.d_s) + linear(d.d_s, d.d_s) + norm(d.d_s) +
                      linear(d.d_s, d.d_s);
  const int64_t b_d = linear(d.d_e, d.d_d) + norm(d.d_d) + linear(d.d_d, d.d_d);
  return b_s + b_d + linear(d.d_d, d.num_kinds);
}

torch::Tensor deg_guidance_loss(PromptProcessorImpl& pp, const torch::Tensor& p_d, const torch::Tensor& labels) {
  const int64_t n = pp.dims().num_kinds;
  if (labels.numel() > 0) {
    const auto lo = labels.min().item<int64_t>();
    const auto hi = labels.max().item<int64_t>();
    if (lo < 0 || hi >= n) {
      throw ValidationError("degradation label out of range [0, " + std::to_string(n) + "): got " +
                            std::to_string(lo < 0 ? lo : hi));
    }
  }
  return F::cross_entropy(pp.classify(p_d), labels.to(torch::kInt64));
}

}  // namespace dfr
