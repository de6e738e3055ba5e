#include "hmix/elicit/image_io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <fstream>
#include <sstream>

#include "hmix/errors.hpp"

namespace hmix {
namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const ImageTensor& image, int scale) {
  const int c = image.channels();
  if (c != 1 && c != 3) throw ShapeError("png: expected 1 or 3 channels, got " + std::to_string(c));
  if (scale < 1 || scale > 64) throw ValidationError("scale", "must be in [1, 64]");
  if (image.height() <= 0 || image.width() <= 0) throw ShapeError("png: empty image");

  const std::vector<std::uint8_t> bytes = image.to_bytes();
  const int w = image.width() * scale;
  const int h = image.height() * scale;
  const std::size_t stride = static_cast<std::size_t>(w) * c;
  std::vector<std::uint8_t> pixels(stride * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        pixels[stride * y + static_cast<std::size_t>(x) * c + k] = bytes[image.index(y / scale, x / scale, k)];
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + stride * y;

  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: cannot allocate encoder");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string png_data_url(const ImageTensor& image, int scale) {
  return "data:image/png;base64," + base64_encode(encode_png(image, scale));
}

void write_ppm(const ImageTensor& image, const std::filesystem::path& path) {
  const int c = image.channels();
  if (c != 1 && c != 3) throw ShapeError("ppm: expected 1 or 3 channels, got " + std::to_string(c));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << (c == 3 ? "P6" : "P5") << '\n' << image.width() << ' ' << image.height() << "\n255\n";
  const auto bytes = image.to_bytes();
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  // Header tokens may be separated by comments.
  auto token = [&in](auto& value) {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    in >> value;
  };
  token(magic);
  if (magic != "P6" && magic != "P5") throw SchemaError(path.string() + ": not a binary PPM/PGM");
  token(w);
  token(h);
  token(maxval);
  if (!in || w <= 0 || h <= 0 || maxval != 255) throw SchemaError(path.string() + ": unsupported header");
  in.get();
  const int c = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * c);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw SchemaError(path.string() + ": truncated pixel data");
  return ImageTensor::from_bytes(h, w, c, bytes);
}

}  // namespace hmix
