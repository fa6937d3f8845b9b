#include "mtcvae/pngio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstring>

namespace mtc {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("write_png: channels must be 1 or 3");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw IoError("write_png: pixel buffer size mismatch");

  // Raw stream: one zero filter byte before each scanline.
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<unsigned char> raw((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw[y * (stride + 1)] = 0;
    std::memcpy(raw.data() + y * (stride + 1) + 1, img.pixels.data() + y * stride, stride);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("write_png: deflate failed");
  comp.resize(comp_len);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<unsigned char> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                     // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);             // gray / truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", {});

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("write_png: cannot open " + path);
  const std::size_t written = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (written != out.size()) throw IoError("write_png: short write to " + path);
}

ImageU8 video_grid(const std::vector<Tensor<float>>& videos, int pad) {
  if (videos.empty()) throw IoError("video_grid: no videos");
  const Index h = videos[0].shape[1], w = videos[0].shape[2];
  Index max_frames = 0;
  bool rgb = true;
  for (const auto& v : videos) {
    if (v.ndim() != 4 || v.shape[1] != h || v.shape[2] != w)
      throw ShapeError("video_grid: inconsistent frame sizes");
    max_frames = std::max(max_frames, v.shape[0]);
    rgb = rgb && v.shape[3] == 3;
  }
  const int ch = rgb ? 3 : 1;
  ImageU8 img;
  img.channels = ch;
  img.width = static_cast<int>(max_frames * (w + pad) - pad);
  img.height = static_cast<int>(videos.size() * (h + pad) - pad);
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * ch, 64);

  auto to_u8 = [](float v) {
    return static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
  };
  for (std::size_t row = 0; row < videos.size(); ++row) {
    const auto& v = videos[row];
    const Index frames = v.shape[0], c = v.shape[3];
    for (Index t = 0; t < frames; ++t)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const std::size_t px =
              (row * (h + pad) + y) * img.width + t * (w + pad) + x;
          if (rgb) {
            for (Index k = 0; k < 3; ++k)
              img.pixels[px * 3 + k] = to_u8(v.data[((t * h + y) * w + x) * c + k]);
          } else {
            float acc = 0.0f;
            for (Index k = 0; k < c; ++k) acc += v.data[((t * h + y) * w + x) * c + k];
            img.pixels[px] = to_u8(acc / static_cast<float>(c));
          }
        }
  }
  return img;
}

}  // namespace mtc
