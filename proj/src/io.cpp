#include "citta/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace citta::io {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t ByteReader::u32() {
  if (!has(4)) throw IoError("unexpected end of data");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::uint8_t> encode_imgf(const Image& img) {
  std::vector<std::uint8_t> out{'I', 'M', 'G', 'F'};
  out.reserve(16 + img.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(img.height()));
  put_u32(out, static_cast<std::uint32_t>(img.width()));
  put_u32(out, static_cast<std::uint32_t>(img.channels()));
  for (double v : img.data()) put_f32(out, static_cast<float>(v));
  return out;
}

Image decode_imgf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "IMGF", 4) != 0) throw IoError("not an IMGF file");
  ByteReader r(bytes.subspan(4));
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  const std::uint32_t c = r.u32();
  if (h == 0 || w == 0 || c == 0 || h > (1u << 16) || w > (1u << 16) || c > 4096) {
    throw IoError("IMGF dimensions out of range");
  }
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  if (r.remaining() != n * 4) throw IoError("IMGF payload length does not match H*W*C");
  std::vector<double> data(n);
  for (auto& v : data) v = r.f32();
  try {
    return Image(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::move(data));
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("IMGF: ") + e.what());
  }
}

Image read_imgf(const std::filesystem::path& path) { return decode_imgf(read_file(path)); }

void write_imgf(const std::filesystem::path& path, const Image& img) { write_file(path, encode_imgf(img)); }

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
  return tok;
}

int ppm_int(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  const std::string tok = ppm_token(bytes, pos);
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 6) {
    throw IoError("malformed PPM header");
  }
  return std::stoi(tok);
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  if (ppm_token(bytes, pos) != "P6") throw IoError("not a binary PPM (P6): " + path.string());
  const int w = ppm_int(bytes, pos);
  const int h = ppm_int(bytes, pos);
  const int maxval = ppm_int(bytes, pos);
  if (maxval != 255) throw IoError("only maxval 255 PPM is supported");
  if (w < 1 || h < 1) throw IoError("PPM dimensions must be positive");
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + n) throw IoError("truncated PPM raster");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = bytes[pos + i] / 255.0;
  return Image(h, w, 3, std::move(data));
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() >= 2 && magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
  return read_imgf(path);
}

}  // namespace citta::io
