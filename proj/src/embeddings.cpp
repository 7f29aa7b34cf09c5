#include "dfr/embeddings.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "dfr/data_synth.hpp"
#include "dfr/error.hpp"
#include "dfr/log.hpp"
#include "dfr/rng.hpp"
#include "dfr/tensor_image.hpp"

namespace F = torch::nn::functional;

namespace dfr {

ToyVisionEncoderImpl::ToyVisionEncoderImpl(const ToyEncoderOptions& options) : options_(options) {
  if (options_.widths.size() != 3) throw ValidationError("toy encoder needs exactly 3 widths");
  convs_ = register_module("convs", torch::nn::ModuleList());
  int64_t in = 3;
  const int64_t strides[4] = {1, 2, 2, 2};
  const int64_t outs[4] = {options_.widths[0], options_.widths[1], options_.widths[2], options_.widths[2]};
  for (int i = 0; i < 4; ++i) {
    convs_->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(in, outs[i], 3).stride(strides[i]).padding(1)));
    in = outs[i];
  }
  proj_ = register_module("proj", torch::nn::Linear(in, options_.embed_dim));
}

torch::Tensor ToyVisionEncoderImpl::prepare(const torch::Tensor& images) const {
  auto x = images;
  if (x.dim() == 3) x = x.unsqueeze(0);
  if (x.dim() != 4 || x.size(1) != 3) throw ValidationError("encoder expects [B, 3, H, W] images");
  if (x.size(2) != options_.input_side || x.size(3) != options_.input_side) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{options_.input_side, options_.input_side})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  return x * 2.0 - 1.0;
}

std::vector<torch::Tensor> ToyVisionEncoderImpl::trunk(const torch::Tensor& x) {
  std::vector<torch::Tensor> acts;
  auto h = x;
  for (const auto& m : *convs_) {
    h = F::leaky_relu(m->as<torch::nn::Conv2d>()->forward(h), F::LeakyReLUFuncOptions().negative_slope(0.2));
    acts.push_back(h);
  }
  return acts;
}

torch::Tensor ToyVisionEncoderImpl::forward(const torch::Tensor& images) {
  auto acts = trunk(prepare(images));
  return proj_(acts.back().mean({2, 3}));
}

torch::Tensor ToyVisionEncoderImpl::encode(const torch::Tensor& images) {
  if (!loaded_) throw ProviderNotLoaded("vision encoder");
  return F::normalize(forward(images), F::NormalizeFuncOptions().dim(1).eps(1e-12));
}

std::vector<torch::Tensor> ToyVisionEncoderImpl::features(const torch::Tensor& images) {
  if (!loaded_) throw ProviderNotLoaded("vision encoder");
  auto acts = trunk(prepare(images));
  acts.pop_back();
  return acts;
}

void PrototypeBank::validate() const {
  if (labels.size() < 2) {
    throw ValidationError("prototype bank needs at least 2 entries for similarity probing");
  }
  if (!prototypes.defined() || prototypes.dim() != 2 ||
      prototypes.size(0) != static_cast<int64_t>(labels.size())) {
    throw ValidationError("prototype tensor must be [n, d] with one row per label");
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j)
      if (labels[i] == labels[j]) throw ValidationError("duplicate prototype label '" + labels[i] + "'");
}

PrototypeBank PrototypeBank::subset(const std::vector<std::string>& wanted) const {
  PrototypeBank out;
  std::vector<int64_t> rows;
  for (const auto& label : wanted) {
    const int i = index_of(label);
    if (i < 0) throw ValidationError("prototype bank has no label '" + label + "'");
    rows.push_back(i);
    out.labels.push_back(label);
  }
  out.prototypes = prototypes.index_select(0, torch::tensor(rows, torch::kInt64));
  return out;
}

int PrototypeBank::index_of(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

torch::Tensor similarity_scores(const torch::Tensor& embeddings, const PrototypeBank& bank) {
  bank.validate();
  const bool single = embeddings.dim() == 1;
  auto e = single ? embeddings.unsqueeze(0) : embeddings;
  if (e.size(1) != bank.prototypes.size(1)) {
    std::ostringstream os;
    os << "embedding dim " << e.size(1) << " does not match prototype dim " << bank.prototypes.size(1);
    throw ValidationError(os.str());
  }
  auto p = bank.prototypes.to(e.dtype());
  auto cos = torch::matmul(F::normalize(e, F::NormalizeFuncOptions().dim(1)),
                           F::normalize(p, F::NormalizeFuncOptions().dim(1)).t());
  auto s = torch::softmax(cos, 1);
  return single ? s[0] : s;
}

std::vector<double> degradation_similarity(VisionEncoder& encoder, const Image& img,
                                           const PrototypeBank& bank) {
  bank.validate();
  torch::NoGradGuard guard;
  auto e = encoder.encode(image_to_tensor(img).unsqueeze(0));
  auto s = similarity_scores(e.to(torch::kFloat64), bank).contiguous();
  return std::vector<double>(s.data_ptr<double>(), s.data_ptr<double>() + s.size(1));
}

ToyEncoderOptions encoder_options(const RunConfig& cfg) {
  ToyEncoderOptions o;
  o.embed_dim = cfg.dims.d_e;
  o.widths = cfg.encoder.widths;
  o.input_side = cfg.encoder.input_side;
  return o;
}

void export_encoder(Checkpoint& ckpt, const EncoderBundle& bundle) {
  export_module(ckpt, "vision_encoder", *bundle.encoder);
  ckpt.params["bank.prototypes"] = bundle.bank.prototypes.detach().cpu().to(torch::kFloat32).clone();
  const auto& o = bundle.encoder->options();
  ckpt.meta["encoder"] = {{"embed_dim", o.embed_dim}, {"widths", o.widths}, {"input_side", o.input_side}};
  ckpt.meta["bank_labels"] = bundle.bank.labels;
}

EncoderBundle encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("encoder") || !ckpt.meta.contains("bank_labels") || !ckpt.has_prefix("vision_encoder")) {
    throw ProviderNotLoaded("vision encoder (checkpoint has no encoder weights)");
  }
  ToyEncoderOptions o;
  const auto& m = ckpt.meta.at("encoder");
  o.embed_dim = m.at("embed_dim").get<int64_t>();
  o.widths = m.at("widths").get<std::vector<int64_t>>();
  o.input_side = m.at("input_side").get<int64_t>();
  EncoderBundle b;
  b.encoder = ToyVisionEncoder(o);
  import_module(ckpt, "vision_encoder", *b.encoder);
  b.encoder->mark_loaded();
  b.encoder->eval();
  b.bank.labels = ckpt.meta.at("bank_labels").get<std::vector<std::string>>();
  const auto it = ckpt.params.find("bank.prototypes");
  if (it == ckpt.params.end()) throw RuntimeFailure("checkpoint is missing bank.prototypes");
  b.bank.prototypes = it->second.clone();
  b.bank.validate();
  return b;
}

EncoderBundle load_encoder_provider(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "params.bin") || !std::filesystem::exists(dir / "meta.json")) {
    throw ProviderNotLoaded("vision encoder (no weights at " + dir.string() + ")");
  }
  return encoder_from_checkpoint(load_checkpoint(dir));
}

EncoderTrainResult train_toy_encoder(const std::filesystem::path& manifest, const RunConfig& cfg) {
  const auto samples = load_samples(manifest, Split::train, /*single_only=*/true);
  std::set<int> present;
  for (const auto& s : samples) present.insert(s.label);
  if (present.size() < 2) {
    throw ValidationError("train-encoder needs at least 2 degradation kinds in the training split, found " +
                          std::to_string(present.size()));
  }
  std::vector<std::string> labels;
  std::map<int, int64_t> class_of;
  for (int k : present) {
    class_of[k] = static_cast<int64_t>(labels.size());
    labels.push_back(std::string(kind_name(kAllKinds[k])));
  }

  torch::manual_seed(cfg.seed);
  EncoderTrainResult result;
  auto& bundle = result.bundle;
  bundle.encoder = ToyVisionEncoder(encoder_options(cfg));
  auto prototypes = torch::randn({static_cast<int64_t>(labels.size()), cfg.dims.d_e}).set_requires_grad(true);

  std::vector<Image> images;
  std::vector<int64_t> targets;
  for (const auto& s : samples) {
    images.push_back(s.lq);
    targets.push_back(class_of.at(s.label));
  }
  const auto all_x = images_to_batch(images);
  const auto all_y = torch::tensor(targets, torch::kInt64);

  auto params = bundle.encoder->parameters();
  params.push_back(prototypes);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.encoder.lr));
  Rng rng(derive_seed(cfg.seed, 0xE1C0DE));
  const int64_t n = all_x.size(0);
  const int64_t bs = std::min<int64_t>(cfg.encoder.batch_size, n);
  std::vector<int64_t> order(n);
  bundle.encoder->train();
  for (int64_t epoch = 0; epoch < cfg.encoder.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += bs) {
      const int64_t end = std::min(n, start + bs);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + end));
      auto x = all_x.index_select(0, idx);
      if (rng.uniform() < 0.5) x = x.flip({3});
      auto y = all_y.index_select(0, idx);
      auto e = F::normalize(bundle.encoder->forward(x), F::NormalizeFuncOptions().dim(1));
      auto p = F::normalize(prototypes, F::NormalizeFuncOptions().dim(1));
      auto logits = torch::matmul(e, p.t()) / cfg.encoder.temperature;
      auto loss = F::cross_entropy(logits, y);
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += loss.item<double>();
      ++batches;
    }
    const double mean = total / static_cast<double>(std::max<int64_t>(batches, 1));
    result.epoch_losses.push_back(mean);
    log::info("encoder_epoch", {{"epoch", log::str(epoch + 1)}, {"loss", log::str(mean)}});
  }
  bundle.encoder->eval();
  bundle.encoder->mark_loaded();
  bundle.bank.labels = labels;
  bundle.bank.prototypes =
      F::normalize(prototypes.detach(), F::NormalizeFuncOptions().dim(1)).contiguous();

  result.checkpoint.meta["stage"] = "encoder";
  result.checkpoint.meta["epoch"] = cfg.encoder.epochs;
  result.checkpoint.meta["seed"] = cfg.seed;
  result.checkpoint.meta["loss_history"] = result.epoch_losses;
  export_encoder(result.checkpoint, bundle);
  return result;
}

}  // namespace dfr
