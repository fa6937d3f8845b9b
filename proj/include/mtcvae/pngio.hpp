#pragma once

#include <string>
#include <vector>

#include "mtcvae/tensor.hpp"

namespace mtc {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit interleaved image, row-major. channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<unsigned char> pixels;
};

void write_png(const std::string& path, const ImageU8& img);

/// Lays out videos as an image grid: one row per video, one column per
/// frame, with a light separator between cells. Videos are T x H x W x C
/// tensors with values in [0,1]; C==3 renders RGB, anything else renders the
/// channel mean as gray.
ImageU8 video_grid(const std::vector<Tensor<float>>& videos, int pad = 2);

}  // namespace mtc
