#pragma once

#include <filesystem>
#include <vector>

namespace crossinit {

/// Interleaved row-major pixels in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> pixels;

  double at(int x, int y, int c = 0) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  bool empty() const { return pixels.empty(); }
};

/// PNG, or binary/ASCII netpbm (P2, P3, P5, P6).
Image load_image(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);
void write_pgm(const Image& image, const std::filesystem::path& path);

/// Luma-average to grayscale and box-resample to size x size.
Image to_gray_thumbnail(const Image& image, int size);

/// Deterministic grayscale face drawing (oval, eyes, mouth) used when a run
/// names no reference image.
Image synthetic_face(int size = 32);

}  // namespace crossinit
