#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "facedr/core/tensor.hpp"

namespace facedr::io {

// Images on disk: inputs and truths as 16-bit RGB PNG, parsing maps as 8-bit
// grayscale label PNGs. In-memory images are float CHW in [0,1].

void write_png_rgb16(const std::filesystem::path& path, const Tensor& chw);
Tensor read_png_rgb16(const std::filesystem::path& path);

void write_png_gray8(const std::filesystem::path& path, int64_t h, int64_t w,
                     const std::vector<uint8_t>& labels);
std::vector<uint8_t> read_png_gray8(const std::filesystem::path& path, int64_t& h, int64_t& w);

// 8-bit RGB, for sample grids, flow visualizations and charts.
void write_png_rgb8(const std::filesystem::path& path, const Tensor& chw);

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const void* data, size_t n);

}  // namespace facedr::io
