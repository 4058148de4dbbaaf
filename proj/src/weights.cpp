#include "iqa/weights.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace iqa {

namespace {

static_assert(std::endian::native == std::endian::little, "weight I/O assumes a little-endian host");

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}
  bool done() const { return pos_ == bytes_.size(); }
  bool read(void* dst, std::size_t n) {
    if (bytes_.size() - pos_ < n) return false;
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
    return true;
  }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

}  // namespace

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw WeightError("weight tensor '" + name + "' is missing");
  return it->second;
}

const Tensor& WeightStore::get(const std::string& name, const Shape& expected) const {
  const Tensor& t = get(name);
  if (t.shape() != expected) {
    throw WeightError("weight tensor '" + name + "' has shape " + to_string(t.shape()) + ", expected " +
                      to_string(expected));
  }
  return t;
}

void WeightStore::put(std::string name, Tensor t) { tensors_[std::move(name)] = std::move(t); }

void WeightStore::round_to_storage() {
  for (auto& [name, t] : tensors_)
    for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

WeightStore WeightStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightError("cannot open weight file " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  char magic[5];
  if (!r.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
    throw WeightError("weight file " + path.string() + " lacks the IQAW1 header");
  }
  WeightStore store;
  while (!r.done()) {
    std::uint32_t name_len = 0;
    if (!r.read(&name_len, 4) || name_len == 0 || name_len > 4096) {
      throw WeightError("weight file " + path.string() + ": corrupt tensor name length");
    }
    std::string name(name_len, '\0');
    if (!r.read(name.data(), name_len)) throw WeightError("weight file " + path.string() + ": truncated tensor name");
    std::uint32_t rank = 0;
    if (!r.read(&rank, 4) || rank > 8) throw WeightError("weight tensor '" + name + "': corrupt rank");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      if (!r.read(&v, 4)) throw WeightError("weight tensor '" + name + "': truncated dims");
      d = v;
    }
    const std::size_t n = numel(shape);
    if (n > (std::size_t{1} << 28)) throw WeightError("weight tensor '" + name + "': implausible size");
    std::vector<float> raw(n);
    if (!r.read(raw.data(), n * sizeof(float))) throw WeightError("weight tensor '" + name + "': truncated data");
    std::vector<double> data(raw.begin(), raw.end());
    if (store.has(name)) throw WeightError("weight tensor '" + name + "' appears twice");
    store.put(name, Tensor(std::move(shape), std::move(data)));
  }
  return store;
}

void WeightStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WeightError("cannot write weight file " + path.string());
  out.write(kMagic, 5);
  for (const auto& [name, t] : tensors_) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) throw WeightError("write failed for " + path.string());
}

}  // namespace iqa
