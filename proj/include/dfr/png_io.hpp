#pragma once

#include <filesystem>

#include "dfr/image.hpp"

namespace dfr {

// 8-bit sRGB PNG. Gray and RGBA inputs are converted to RGB; 16-bit is reduced.
Image read_png(const std::filesystem::path& path);

// Writes an 8-bit RGB PNG; output bytes depend only on the pixel values.
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace dfr
