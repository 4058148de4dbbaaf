#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "iqa/image_io.hpp"
#include "iqa/tensor.hpp"
#include "iqa/weights.hpp"
#include "oracles.hpp"

using namespace iqa;

TEST_CASE("image tensor validates its shape") {
  CHECK_THROWS_AS(ImageTensor(0, 4, 1), ShapeError);
  CHECK_THROWS_AS(ImageTensor(4, 4, 2), ShapeError);
  CHECK_NOTHROW(ImageTensor(4, 4, 3));
}

TEST_CASE("quantization rounds half to even on the 1/255 grid") {
  CHECK(quantize_level(0.5 / 255.0) == 0.0);
  CHECK(quantize_level(1.5 / 255.0) == 2.0 / 255.0);
  CHECK(quantize_level(2.5 / 255.0) == 2.0 / 255.0);
  CHECK(quantize_level(-0.3) == 0.0);
  CHECK(quantize_level(1.7) == 1.0);
  std::mt19937_64 rng(3);
  auto img = oracle::random_image(8, 8, 3, rng);
  CHECK_FALSE(img.is_quantized());
  img.quantize();
  CHECK(img.is_quantized());
  for (double v : img.values()) CHECK(v * 255.0 == std::nearbyint(v * 255.0));
}

TEST_CASE("grayscale conversion uses fixed luminance weights") {
  ImageTensor img(1, 1, 3);
  img.at(0, 0, 0) = 1.0;
  img.at(0, 0, 1) = 0.5;
  img.at(0, 0, 2) = 0.25;
  CHECK(img.to_gray().at(0, 0, 0) == doctest::Approx(0.299 + 0.2935 + 0.0285));
}

TEST_CASE("weight file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "iqa_weights_roundtrip.iqaw";
  WeightStore s;
  s.put("a.weight", Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6.5}));
  s.put("b", Tensor(Shape{1}, {-0.25}));
  s.save(path);
  const auto r = WeightStore::load(path);
  CHECK(r.get("a.weight") == s.get("a.weight"));
  CHECK(r.get("b").item() == -0.25);
  CHECK_THROWS_WITH_AS(r.get("missing.tensor"), doctest::Contains("missing.tensor"), WeightError);
  CHECK_THROWS_WITH_AS(r.get("a.weight", Shape{3, 2}), doctest::Contains("a.weight"), WeightError);

  // truncated file: the error names the tensor being read
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 6));
  }
  CHECK_THROWS_AS(WeightStore::load(path), WeightError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "NOTIQAW";
  }
  CHECK_THROWS_AS(WeightStore::load(path), WeightError);
  std::filesystem::remove(path);
}

TEST_CASE("png round trip is lossless for quantized images") {
  std::mt19937_64 rng(11);
  for (std::size_t c : {1u, 3u}) {
    auto img = oracle::random_image(9, 13, c, rng);
    img.quantize();
    const auto bytes = io::encode_png(img);
    CHECK(io::decode_png(bytes) == img);
    CHECK(io::encode_png(io::decode_png(bytes)) == bytes);
  }
  std::vector<std::uint8_t> garbage = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a, 1, 2, 3};
  CHECK_THROWS_AS(io::decode_png(garbage), io::ImageIoError);
}

TEST_CASE("pnm images are decoded") {
  const auto path = std::filesystem::temp_directory_path() / "iqa_test.ppm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n# comment\n2 1\n255\n";
    const unsigned char px[] = {255, 0, 0, 0, 128, 255};
    out.write(reinterpret_cast<const char*>(px), 6);
  }
  const auto img = io::read_image(path);
  CHECK(img.height() == 1);
  CHECK(img.width() == 2);
  CHECK(img.at(0, 0, 0) == 1.0);
  CHECK(img.at(0, 1, 1) == 128.0 / 255.0);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(io::read_image(path), io::ImageIoError);
}
