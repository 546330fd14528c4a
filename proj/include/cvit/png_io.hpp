#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cvit {

// Minimal 8-bit PNG read/write (grayscale or RGB, interleaved rows).
struct ImageU8 {
  int w = 0, h = 0, c = 0;  // c in {1, 3}
  std::vector<uint8_t> px;  // h * w * c
};

// Reads a PNG; normalizes to 8-bit, drops alpha, expands palettes. Throws
// IoError on missing/corrupt files and unsupported layouts.
ImageU8 read_png(const std::string& path);

// Writes gray (c==1) or RGB (c==3) with fixed settings, so identical pixels
// give identical bytes.
void write_png(const std::string& path, const ImageU8& img);

}  // namespace cvit
