#include "facedr/core/image_io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "facedr/core/errors.hpp"

namespace facedr::io {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint16_t quantize16(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint16_t>(std::lround(c * 65535.0f));
}

}  // namespace

void write_png_rgb16(const std::filesystem::path& path, const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw BadShape("write_png_rgb16 expects [3,H,W]");
  const int64_t H = chw.dim(1), W = chw.dim(2);
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IOFailure("cannot open for write: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IOFailure("libpng write error: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 16,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(W) * 6);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        const uint16_t v = quantize16(chw.at3(c, y, x));
        row[static_cast<size_t>(x * 6 + c * 2)] = static_cast<uint8_t>(v >> 8);
        row[static_cast<size_t>(x * 6 + c * 2 + 1)] = static_cast<uint8_t>(v & 0xFF);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png_rgb16(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw MissingFile(path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IOFailure("libpng read error: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_uint_32 W = png_get_image_width(png, info);
  const png_uint_32 H = png_get_image_height(png, info);
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IOFailure("expected 16-bit RGB PNG: " + path.string());
  }

  Tensor out({3, static_cast<int64_t>(H), static_cast<int64_t>(W)});
  std::vector<uint8_t> row(static_cast<size_t>(W) * 6);
  for (png_uint_32 y = 0; y < H; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const uint16_t v =
            static_cast<uint16_t>((row[x * 6 + c * 2] << 8) | row[x * 6 + c * 2 + 1]);
        out.at3(c, y, x) = static_cast<float>(v) / 65535.0f;
      }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_gray8(const std::filesystem::path& path, int64_t h, int64_t w,
                     const std::vector<uint8_t>& labels) {
  if (static_cast<int64_t>(labels.size()) != h * w) throw BadShape("write_png_gray8 size");
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IOFailure("cannot open for write: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IOFailure("libpng write error: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int64_t y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(labels.data() + y * w));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png_gray8(const std::filesystem::path& path, int64_t& h, int64_t& w) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw MissingFile(path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IOFailure("libpng read error: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  if (png_get_bit_depth(png, info) != 8 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IOFailure("expected 8-bit gray PNG: " + path.string());
  }
  std::vector<uint8_t> out(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y) png_read_row(png, out.data() + y * w, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_rgb8(const std::filesystem::path& path, const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw BadShape("write_png_rgb8 expects [3,H,W]");
  const int64_t H = chw.dim(1), W = chw.dim(2);
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IOFailure("cannot open for write: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IOFailure("libpng write error: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<uint8_t>(std::lround(std::clamp(chw.at3(c, y, x), 0.0f, 1.0f) * 255.0f));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::string sha256_bytes(const void* data, size_t n) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, data, n);
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_bytes(bytes.data(), bytes.size());
}

}  // namespace facedr::io
