#include "dfr/tensor_image.hpp"

#include "dfr/error.hpp"

namespace dfr {

torch::Tensor image_to_tensor(const Image& img) {
  const int h = img.height(), w = img.width();
  auto t = torch::empty({3, h, w}, torch::kFloat32);
  auto acc = t.accessor<float, 3>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) acc[c][y][x] = static_cast<float>(img.at(y, x, c));
  return t;
}

torch::Tensor images_to_batch(std::span<const Image> images) {
  if (images.empty()) throw ValidationError("cannot batch an empty image list");
  std::vector<torch::Tensor> items;
  items.reserve(images.size());
  for (const auto& img : images) {
    if (!img.same_shape(images.front())) throw ValidationError("batched images must share a shape");
    items.push_back(image_to_tensor(img));
  }
  return torch::stack(items);
}

Image tensor_to_image(const torch::Tensor& t) {
  auto x = t.detach().to(torch::kCPU, torch::kFloat64);
  if (x.dim() == 4) {
    if (x.size(0) != 1) throw ValidationError("tensor_to_image expects a single image");
    x = x[0];
  }
  if (x.dim() != 3 || x.size(0) != 3) throw ValidationError("tensor_to_image expects [3, H, W]");
  x = x.clamp(0.0, 1.0).contiguous();
  const int h = static_cast<int>(x.size(1)), w = static_cast<int>(x.size(2));
  Image img(h, w);
  auto acc = x.accessor<double, 3>();
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < 3; ++c) img.at(y, xx, c) = acc[c][y][xx];
  return img;
}

std::vector<Image> batch_to_images(const torch::Tensor& batch) {
  std::vector<Image> out;
  for (int64_t i = 0; i < batch.size(0); ++i) out.push_back(tensor_to_image(batch[i]));
  return out;
}

}  // namespace dfr
