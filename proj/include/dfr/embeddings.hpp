#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dfr/checkpoint.hpp"
#include "dfr/config.hpp"
#include "dfr/image.hpp"

namespace dfr {

// Frozen image encoder contract (the role a pretrained vision-language image tower plays).
// encode() returns unit-norm embeddings; features() exposes intermediate activations that
// serve as the perceptual feature space for decoder training.
class VisionEncoder {
 public:
  virtual ~VisionEncoder() = default;
  virtual int64_t dim() const = 0;
  virtual bool loaded() const = 0;
  // images: [B, 3, H, W] in [0,1] -> [B, dim], each row unit norm.
  virtual torch::Tensor encode(const torch::Tensor& images) = 0;
  virtual std::vector<torch::Tensor> features(const torch::Tensor& images) = 0;
};

struct ToyEncoderOptions {
  int64_t embed_dim = 64;
  std::vector<int64_t> widths{16, 32, 64};
  int64_t input_side = 64;
};

// Conv trunk -> global average pooling -> linear projection -> L2 normalization.
class ToyVisionEncoderImpl : public torch::nn::Module, public VisionEncoder {
 public:
  explicit ToyVisionEncoderImpl(const ToyEncoderOptions& options);

  int64_t dim() const override { return options_.embed_dim; }
  bool loaded() const override { return loaded_; }
  // Marks the current weights as usable (after training, loading, or a deliberate random init).
  void mark_loaded() { loaded_ = true; }

  torch::Tensor encode(const torch::Tensor& images) override;
  std::vector<torch::Tensor> features(const torch::Tensor& images) override;
  // Pre-normalization embedding, for training.
  torch::Tensor forward(const torch::Tensor& images);
  const ToyEncoderOptions& options() const { return options_; }

 private:
  torch::Tensor prepare(const torch::Tensor& images) const;
  std::vector<torch::Tensor> trunk(const torch::Tensor& x);

  ToyEncoderOptions options_;
  bool loaded_ = false;
  torch::nn::ModuleList convs_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(ToyVisionEncoder);

// Labelled prototype embeddings standing in for text-prompt embeddings, one per kind.
struct PrototypeBank {
  std::vector<std::string> labels;
  torch::Tensor prototypes;  // [n, d], rows unit norm

  std::size_t size() const { return labels.size(); }
  void validate() const;
  // Rows for the given labels, in the given order.
  PrototypeBank subset(const std::vector<std::string>& wanted) const;
  // Index of a label, or -1.
  int index_of(const std::string& label) const;
};

// s_i = exp(cos(e, p_i)) / sum_j exp(cos(e, p_j)) with temperature fixed at 1.
// embeddings: [B, d] or [d]; returns [B, n] (or [n]).
torch::Tensor similarity_scores(const torch::Tensor& embeddings, const PrototypeBank& bank);

std::vector<double> degradation_similarity(VisionEncoder& encoder, const Image& img,
                                           const PrototypeBank& bank);

ToyEncoderOptions encoder_options(const RunConfig& cfg);

struct EncoderBundle {
  ToyVisionEncoder encoder{nullptr};
  PrototypeBank bank;
};

// Stores "vision_encoder.*", "bank.prototypes" and the bank labels / encoder shape in meta.
void export_encoder(Checkpoint& ckpt, const EncoderBundle& bundle);
EncoderBundle encoder_from_checkpoint(const Checkpoint& ckpt);
// Loads an encoder from a provider directory (the common checkpoint layout). Absent or
// incomplete directories raise ProviderNotLoaded.
EncoderBundle load_encoder_provider(const std::filesystem::path& dir);

struct EncoderTrainResult {
  EncoderBundle bundle;
  std::vector<double> epoch_losses;
  Checkpoint checkpoint;
};

// Jointly learns the encoder and one prototype per degradation kind present among the
// single-degradation training records: cross-entropy over cos(e, p_j) / temperature.
// Fewer than two kinds is rejected.
EncoderTrainResult train_toy_encoder(const std::filesystem::path& manifest, const RunConfig& cfg);

}  // namespace dfr
