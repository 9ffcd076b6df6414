#include "embsurg/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace embsurg {
namespace {

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void write_chunk(std::vector<unsigned char>& out, const char type[4],
                 const unsigned char* data, std::size_t len) {
  put_u32_be(out, static_cast<std::uint32_t>(len));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len) out.insert(out.end(), data, data + len);
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(4 + len));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, const float* img, int h, int w,
               int ch) {
  if (ch != 1 && ch != 3)
    throw ShapeError("write_png: only 1- or 3-channel images supported");

  // Scanlines: filter byte 0 then RGB (grayscale replicated).
  const int plane = h * w;
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (1 + 3 * w));
  std::size_t pos = 0;
  for (int y = 0; y < h; ++y) {
    raw[pos++] = 0;
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = ch == 3 ? c : 0;
        const float v = img[src * plane + y * w + x];
        const double scaled = std::lround(255.0 * (v + 1.0) / 2.0);
        raw[pos++] = static_cast<unsigned char>(
            std::min(255.0, std::max(0.0, scaled)));
      }
    }
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(),
                static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw IntegrityError("write_png: deflate failed");
  }

  std::vector<unsigned char> out;
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n',
                                       0x1a, '\n'};
  out.insert(out.end(), sig, sig + 8);
  unsigned char ihdr[13];
  ihdr[0] = static_cast<unsigned char>(w >> 24);
  ihdr[1] = static_cast<unsigned char>(w >> 16);
  ihdr[2] = static_cast<unsigned char>(w >> 8);
  ihdr[3] = static_cast<unsigned char>(w);
  ihdr[4] = static_cast<unsigned char>(h >> 24);
  ihdr[5] = static_cast<unsigned char>(h >> 16);
  ihdr[6] = static_cast<unsigned char>(h >> 8);
  ihdr[7] = static_cast<unsigned char>(h);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // color type: truecolor
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter
  ihdr[12] = 0;  // interlace
  write_chunk(out, "IHDR", ihdr, sizeof(ihdr));
  write_chunk(out, "IDAT", comp.data(), comp_len);
  write_chunk(out, "IEND", nullptr, 0);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IntegrityError("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IntegrityError("write_png: short write to " + path);
}

}  // namespace embsurg
