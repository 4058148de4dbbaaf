#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "iqa/tensor.hpp"

namespace iqa {

class WeightError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named tensors backed by the "IQAW1" container:
///
///   "IQAW1"
///   repeated until EOF:
///     u32 name_length, name bytes (UTF-8)
///     u32 rank, rank x u32 dims
///     prod(dims) x f32 values (row-major)
///
/// All integers and floats are little-endian.
class WeightStore {
 public:
  static constexpr char kMagic[] = "IQAW1";

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  const Tensor& get(const std::string& name, const Shape& expected) const;
  void put(std::string name, Tensor t);
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  /// Rounds every value to float32, as stored on disk.
  void round_to_storage();

  static WeightStore load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace iqa
