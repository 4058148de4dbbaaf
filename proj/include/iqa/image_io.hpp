#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "iqa/tensor.hpp"

namespace iqa::io {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads PNG (any bit depth / color type) or binary PNM (P5/P6). Values are
/// re-quantized to 8 bits per channel; alpha is dropped.
ImageTensor read_image(const std::filesystem::path& path);

/// Encodes as 8-bit gray or 24-bit RGB PNG. Pixels are quantized first.
std::vector<std::uint8_t> encode_png(const ImageTensor& img);
ImageTensor decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::filesystem::path& path, const ImageTensor& img);

}  // namespace iqa::io
