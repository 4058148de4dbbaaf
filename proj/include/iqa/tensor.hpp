#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iqa {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names the op and
/// both shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& what);
};

/// Dense row-major tensor of doubles. Images use (height, width, channels).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-3 (H, W, C) access
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  double item() const;
  void fill(double v);
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// H x W x C image with C in {1, 3}. Pixel values are nominally in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);
  explicit ImageTensor(Tensor t);

  std::size_t height() const { return t_.dim(0); }
  std::size_t width() const { return t_.dim(1); }
  std::size_t channels() const { return t_.dim(2); }
  std::size_t size() const { return t_.size(); }
  const Shape& shape() const { return t_.shape(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) { return t_.at(y, x, c); }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return t_.at(y, x, c); }
  double& operator[](std::size_t i) { return t_[i]; }
  double operator[](std::size_t i) const { return t_[i]; }
  std::span<double> values() { return t_.values(); }
  std::span<const double> values() const { return t_.values(); }

  const Tensor& tensor() const { return t_; }

  bool in_unit_range() const;
  void clamp_unit();
  /// Rounds every value to the nearest multiple of 1/255 (ties to even) and
  /// clamps to [0, 1].
  void quantize();
  bool is_quantized() const;

  /// Luminance with weights (0.299, 0.587, 0.114); identity for 1 channel.
  ImageTensor to_gray() const;

  bool operator==(const ImageTensor& other) const = default;

 private:
  Tensor t_;
};

double quantize_level(double v);

}  // namespace iqa
