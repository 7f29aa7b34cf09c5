#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace dfr {

struct PromptDims {
  int64_t d_e = 64;
  int64_t d_s = 768;
  int64_t d_d = 256;
  int64_t num_kinds = 8;
};

// Two branches over the encoder embedding P_CLIP:
//   B_s: 3 linear layers (LayerNorm + LeakyReLU(0.2) after the first two), d_e -> d_s -> d_s -> d_s
//   B_d: 2 linear layers (LayerNorm + LeakyReLU after the first),         d_e -> d_d -> d_d
// and the classifier C: d_d -> N logits applied to P_D.
class PromptProcessorImpl : public torch::nn::Module {
 public:
  explicit PromptProcessorImpl(const PromptDims& dims);

  torch::Tensor semantic(const torch::Tensor& p_clip);     // P_S, [B, d_s]
  torch::Tensor degradation(const torch::Tensor& p_clip);  // P_D, [B, d_d]
  torch::Tensor classify(const torch::Tensor& p_d);        // logits, [B, N]

  const PromptDims& dims() const { return dims_; }
  torch::nn::Sequential& semantic_branch() { return b_s_; }
  torch::nn::Sequential& degradation_branch() { return b_d_; }
  torch::nn::Linear& classifier() { return c_; }

  // Parameter count implied by the dimensions alone.
  static int64_t expected_parameter_count(const PromptDims& dims);

 private:
  void check_input(const torch::Tensor& x, int64_t dim, const char* what) const;

  PromptDims dims_;
  torch::nn::Sequential b_s_{nullptr};
  torch::nn::Sequential b_d_{nullptr};
  torch::nn::Linear c_{nullptr};
};
TORCH_MODULE(PromptProcessor);

// Cross-entropy of C(p_d) against integer labels in [0, N); mean over the batch.
torch::Tensor deg_guidance_loss(PromptProcessorImpl& pp, const torch::Tensor& p_d, const torch::Tensor& labels);

}  // namespace dfr
