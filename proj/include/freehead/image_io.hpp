#pragma once

#include "freehead/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace freehead {

// Images are float tensors (C, H, W) with values in [0, 1]; C is 1 or 3.

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decodes any 8/16-bit PNG into RGB.
Tensor<float> decode_png(const std::vector<std::uint8_t>& bytes);
Tensor<float> read_png(const std::string& path);

/// 8-bit encoding, values x255 rounded; fixed zlib settings and no
/// ancillary chunks, so equal inputs give equal bytes.
std::vector<std::uint8_t> encode_png(const Tensor<float>& image);
void write_png(const std::string& path, const Tensor<float>& image);

/// [0,1] -> [-1,1] and back, with the batch axis added or removed.
Tensor<float> to_network_range(const Tensor<float>& image);
Tensor<float> from_network_range(const Tensor<float>& batch, int index = 0);

/// Bilinear (align_corners = false) resize of a (C,H,W) image.
Tensor<float> resize_image(const Tensor<float>& image, int height, int width);

/// Square window of side `size` pixels centred at (cx, cy), bilinearly
/// sampled onto an out x out grid; zero outside the image.
Tensor<float> crop_square(const Tensor<float>& image, double cx, double cy, double size, int out);

}  // namespace freehead
