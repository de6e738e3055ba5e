#pragma once

// Lossless image payloads for stimuli: binary PPM for pool storage, PNG for transport.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hmix/mixcore.hpp"

namespace hmix {

// 8-bit RGB/gray PNG, unfiltered scanlines. `scale` > 1 upsamples with nearest neighbour.
std::vector<std::uint8_t> encode_png(const ImageTensor& image, int scale = 1);
std::string png_data_url(const ImageTensor& image, int scale = 1);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

// Binary P6 (3 channels) or P5 (1 channel), maxval 255.
void write_ppm(const ImageTensor& image, const std::filesystem::path& path);
ImageTensor read_ppm(const std::filesystem::path& path);

}  // namespace hmix
