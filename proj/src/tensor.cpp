#include "iqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace iqa {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument("op '" + op + "': incompatible shapes " + to_string(a) + " and " +
                            to_string(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& what)
    : std::invalid_argument("op '" + op + "': " + what) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_)) {
    throw ShapeError("tensor", "data length " + std::to_string(data_.size()) +
                                   " does not match shape " + to_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item", "tensor of shape " + to_string(shape_) + " is not a scalar");
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) throw ShapeError("reshape", shape_, shape);
  return Tensor(std::move(shape), data_);
}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : ImageTensor(Tensor(Shape{height, width, channels}, fill)) {}

ImageTensor::ImageTensor(Tensor t) : t_(std::move(t)) {
  const auto& s = t_.shape();
  if (s.size() != 3 || s[0] == 0 || s[1] == 0 || (s[2] != 1 && s[2] != 3)) {
    throw ShapeError("image", "expected (H x W x C) with C in {1,3}, got " + to_string(s));
  }
}

bool ImageTensor::in_unit_range() const {
  return std::all_of(t_.values().begin(), t_.values().end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

void ImageTensor::clamp_unit() {
  for (auto& v : t_.values()) v = std::clamp(v, 0.0, 1.0);
}

double quantize_level(double v) {
  // nearbyint honours the default round-to-nearest-even mode.
  double level = std::nearbyint(std::clamp(v, 0.0, 1.0) * 255.0);
  return level / 255.0;
}

void ImageTensor::quantize() {
  for (auto& v : t_.values()) v = quantize_level(v);
}

bool ImageTensor::is_quantized() const {
  return std::all_of(t_.values().begin(), t_.values().end(), [](double v) {
    double level = v * 255.0;
    return v >= 0.0 && v <= 1.0 && level == std::nearbyint(level) && std::nearbyint(level) / 255.0 == v;
  });
}

ImageTensor ImageTensor::to_gray() const {
  if (channels() == 1) return *this;
  ImageTensor g(height(), width(), 1);
  for (std::size_t y = 0; y < height(); ++y) {
    for (std::size_t x = 0; x < width(); ++x) {
      g.at(y, x, 0) = 0.299 * at(y, x, 0) + 0.587 * at(y, x, 1) + 0.114 * at(y, x, 2);
    }
  }
  return g;
}

}  // namespace iqa
