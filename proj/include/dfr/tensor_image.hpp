#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "dfr/image.hpp"

namespace dfr {

// Image (H x W x 3) -> float tensor [3, H, W].
torch::Tensor image_to_tensor(const Image& img);
// Stacks equally sized images into [N, 3, H, W].
torch::Tensor images_to_batch(std::span<const Image> images);
// [3, H, W] or [1, 3, H, W] tensor -> Image, clamped to [0,1].
Image tensor_to_image(const torch::Tensor& t);
std::vector<Image> batch_to_images(const torch::Tensor& batch);

}  // namespace dfr
