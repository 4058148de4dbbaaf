#include "iqa/image_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

namespace iqa::io {

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

struct PngReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->bytes->size() - cur->pos < n) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes->data() + cur->pos, n);
  cur->pos += n;
}

void png_write_to_memory(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_noop(png_structp) {}

void png_error_throw(png_structp, png_const_charp msg) { throw ImageIoError(std::string("PNG: ") + msg); }
void png_warning_ignore(png_structp, png_const_charp) {}

ImageTensor decode_pnm(const std::vector<std::uint8_t>& bytes) {
  std::string header(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(bytes.size(), 256)));
  std::istringstream hs(header);
  std::string magic;
  hs >> magic;
  if (magic != "P5" && magic != "P6") throw ImageIoError("unsupported PNM variant " + magic);
  auto next_int = [&hs]() {
    hs >> std::ws;
    while (hs.peek() == '#') {
      std::string line;
      std::getline(hs, line);
      hs >> std::ws;
    }
    long v = -1;
    hs >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw ImageIoError("unsupported PNM header");
  const auto data_start = static_cast<std::size_t>(hs.tellg()) + 1;
  const std::size_t c = magic == "P6" ? 3 : 1;
  const std::size_t n = static_cast<std::size_t>(w * h) * c;
  if (bytes.size() < data_start + n) throw ImageIoError("truncated PNM data");
  ImageTensor img(static_cast<std::size_t>(h), static_cast<std::size_t>(w), c);
  for (std::size_t i = 0; i < n; ++i) {
    img[i] = quantize_level(static_cast<double>(bytes[data_start + i]) / static_cast<double>(maxval));
  }
  return img;
}

}  // namespace

ImageTensor decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ImageIoError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw, png_warning_ignore);
  if (!png) throw ImageIoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  PngReadCursor cursor{&bytes, 0};
  ImageTensor img;
  try {
    png_set_read_fn(png, &cursor, png_read_from_memory);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) throw ImageIoError("unsupported PNG channel count");
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h * static_cast<std::size_t>(channels));
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * static_cast<std::size_t>(channels);
    png_read_image(png, rows.data());
    img = ImageTensor(h, w, static_cast<std::size_t>(channels));
    for (std::size_t i = 0; i < pixels.size(); ++i) img[i] = static_cast<double>(pixels[i]) / 255.0;
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

ImageTensor read_image(const std::filesystem::path& path) {
  auto bytes = read_bytes(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
  throw ImageIoError("unrecognised image format: " + path.string());
}

std::vector<std::uint8_t> encode_png(const ImageTensor& img) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw, png_warning_ignore);
  if (!png) throw ImageIoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  const auto w = static_cast<png_uint_32>(img.width());
  const auto h = static_cast<png_uint_32>(img.height());
  const std::size_t c = img.channels();
  std::vector<std::uint8_t> pixels(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    pixels[i] = static_cast<std::uint8_t>(quantize_level(img[i]) * 255.0 + 0.5);
  }
  try {
    png_set_write_fn(png, &out, png_write_to_memory, png_flush_noop);
    png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 y = 0; y < h; ++y) png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * w * c);
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const ImageTensor& img) {
  auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace iqa::io
