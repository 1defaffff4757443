// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ocg/config.hpp"
#include "ocg/tensor.hpp"

namespace ocg::image {

/// 8-bit RGB, row-major HWC.
struct RgbImage {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> pixels;

  ImageSize size() const { return {height, width}; }
  uint8_t* px(int64_t y, int64_t x) { return pixels.data() + 3 * (y * width + x); }
};

/// PNG or JPEG bytes to RGB. Throws DecodeError.
RgbImage decode(std::span<const uint8_t> bytes);
/// Throws IoError when the file is missing, DecodeError when corrupt.
RgbImage read(const std::filesystem::path& path);
std::vector<uint8_t> encode_png(const RgbImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);

/// Area averaging when shrinking, bilinear when enlarging.
RgbImage resize(const RgbImage& img, ImageSize to);

/// [3, H, W] with (v / 255 - mean) / std per channel.
Tensor<float> to_tensor(const RgbImage& img, const std::array<double, 3>& mean,
                        const std::array<double, 3>& std);

}  // namespace ocg::image
