#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "citta/imgcore.hpp"

namespace citta::io {

// IMGF: "IMGF", u32 LE H, W, C, then H*W*C float32 LE in (y, x, c) order.
Image read_imgf(const std::filesystem::path& path);
void write_imgf(const std::filesystem::path& path, const Image& img);
std::vector<std::uint8_t> encode_imgf(const Image& img);
Image decode_imgf(std::span<const std::uint8_t> bytes);

// Binary PPM (P6, maxval 255), samples mapped to [0,1] by v/255.
Image read_ppm(const std::filesystem::path& path);

// Dispatches on the leading magic bytes.
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Little-endian helpers shared by the binary formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::uint32_t u32();
  float f32();

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace citta::io
