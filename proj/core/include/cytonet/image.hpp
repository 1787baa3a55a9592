#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cytonet/tensor.hpp"

namespace cytonet {

/// Interleaved 8-bit RGB image, rows top to bottom.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
  }
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// PNG: 8-bit gray / gray+alpha / palette / RGB / RGBA, non-interlaced.
// Alpha is dropped on decode. Encoding always writes 8-bit RGB.
ImageU8 decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png(const ImageU8& img);

// BMP: uncompressed 24-bit.
ImageU8 decode_bmp(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_bmp(const ImageU8& img);

/// Sniffs PNG/BMP magic and decodes; `hint` names the source in errors.
ImageU8 decode_image(const std::vector<std::uint8_t>& bytes, const std::string& hint);

/// (3,H,W) float tensor in [0,1] <-> 8-bit image.
Tensor<float> image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor<float>& t);

/// Bilinear resize, align-corners-false, per channel.
Tensor<float> resize_bilinear(const Tensor<float>& chw, int target_h, int target_w);

}  // namespace cytonet
