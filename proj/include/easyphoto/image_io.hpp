#pragma once

#include "easyphoto/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace easyphoto {

/// 8-bit RGB PNG. Float channels are quantized with round(v * 255).
std::vector<std::uint8_t> encode_png(const Image& img);
std::vector<std::uint8_t> encode_png(const Mask& mask);

/// Decodes PNG or JPEG (sniffed from the signature). Samples map to value / 255.0.
/// Throws UndecodableImage.
Image decode_image(std::string_view bytes);

Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Round-trip through 8-bit quantization.
Image quantize8(const Image& img);

}  // namespace easyphoto
