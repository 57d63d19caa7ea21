#pragma once

// Minimal PNG container for 8-bit RGB images: IHDR/IDAT/IEND, filter 0 on
// write, all five filters accepted on read. Deflate via zlib.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hodiff::png {

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

inline uint32_t get_u32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& payload) {
  put_u32(out, uint32_t(payload.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uint32_t crc =
      ::crc32(0L, out.data() + start, uInt(out.size() - start));
  put_u32(out, crc);
}

inline uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return uint8_t(a);
  if (pb <= pc) return uint8_t(b);
  return uint8_t(c);
}

}  // namespace detail

/// Encode interleaved RGB rows (height*width*3 bytes) to PNG bytes.
inline std::vector<uint8_t> encode_rgb8(const std::vector<uint8_t>& rgb, int width, int height) {
  if (rgb.size() != size_t(width) * height * 3) throw std::invalid_argument("png: bad buffer size");
  std::vector<uint8_t> raw;
  raw.reserve(size_t(height) * (1 + size_t(width) * 3));
  for (int r = 0; r < height; ++r) {
    raw.push_back(0);  // filter type 0
    raw.insert(raw.end(), rgb.begin() + size_t(r) * width * 3,
               rgb.begin() + size_t(r + 1) * width * 3);
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  comp.resize(comp_len);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  detail::put_u32(ihdr, uint32_t(width));
  detail::put_u32(ihdr, uint32_t(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", comp);
  detail::put_chunk(out, "IEND", {});
  return out;
}

/// Decode an 8-bit RGB PNG produced by this codec (or any non-interlaced
/// truecolor PNG).
inline std::vector<uint8_t> decode_rgb8(const std::vector<uint8_t>& bytes, int& width,
                                        int& height) {
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw std::runtime_error("png: bad signature");
  size_t pos = 8;
  width = height = 0;
  std::vector<uint8_t> idat;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = detail::get_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* payload = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = int(detail::get_u32(payload));
      height = int(detail::get_u32(payload + 4));
      if (payload[8] != 8 || payload[9] != 2 || payload[12] != 0)
        throw std::runtime_error("png: only 8-bit non-interlaced RGB supported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw std::runtime_error("png: missing IHDR");

  const size_t stride = size_t(width) * 3;
  std::vector<uint8_t> raw(size_t(height) * (stride + 1));
  uLongf raw_len = uLongf(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("png: inflate failed");

  std::vector<uint8_t> rgb(size_t(height) * stride);
  for (int r = 0; r < height; ++r) {
    const uint8_t filter = raw[size_t(r) * (stride + 1)];
    const uint8_t* src = raw.data() + size_t(r) * (stride + 1) + 1;
    uint8_t* dst = rgb.data() + size_t(r) * stride;
    const uint8_t* prev = r > 0 ? rgb.data() + size_t(r - 1) * stride : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      const int left = i >= 3 ? dst[i - 3] : 0;
      const int up = prev ? prev[i] : 0;
      const int ul = (prev && i >= 3) ? prev[i - 3] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) / 2; break;
        case 4: v += detail::paeth(left, up, ul); break;
        default: throw std::runtime_error("png: unknown filter");
      }
      dst[i] = uint8_t(v & 0xff);
    }
  }
  return rgb;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<uint8_t> bytes(size_t(f.tellg()));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  return bytes;
}

}  // namespace hodiff::png
