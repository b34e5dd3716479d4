#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdcn/tensor.hpp"

namespace cdcn {

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;  // height * width * channels

  bool valid() const {
    return width > 0 && height > 0 && (channels == 1 || channels == 3) &&
           pixels.size() == size_t(width) * size_t(height) * size_t(channels);
  }
};

// PNG read normalizes to 8-bit gray or RGB (palette expanded, 16-bit
// stripped, alpha dropped). Write emits 8-bit gray or RGB.
Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& image);

// (C,H,W) float tensor in [0,1] <-> interleaved bytes. tensor_to_image
// clamps to [0,1] and rounds to the nearest byte.
TensorT<float> image_to_tensor(const Image8& image);
Image8 tensor_to_image(const TensorT<float>& chw);

}  // namespace cdcn
