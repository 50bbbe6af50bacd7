#pragma once

#include <string>

#include "pmx/tensor.hpp"

namespace pmx {

enum class Modality { RGB, IR, MIX };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::RGB: return "RGB";
    case Modality::IR: return "IR";
    case Modality::MIX: return "MIX";
  }
  return "?";
}

Modality modality_from_name(const std::string& name);

// One image with its retrieval labels. Pixels are H x W x 3 in [0,1];
// IR images are stored channel-replicated so every modality shares the shape.
struct ModalityImage {
  Tensor pixels;  // {H,W,3}
  Modality modality = Modality::RGB;
  int identity = -1;
  int camera = -1;

  int height() const { return pixels.dim(0); }
  int width() const { return pixels.dim(1); }
  real& px(int y, int x, int c) { return pixels[(static_cast<long long>(y) * width() + x) * 3 + c]; }
  real px(int y, int x, int c) const {
    return pixels[(static_cast<long long>(y) * width() + x) * 3 + c];
  }
};

ModalityImage make_image(int height, int width, Modality m, int identity = -1, int camera = -1);

// Bilinear resize to (out_h, out_w); labels carried over.
ModalityImage resize(const ModalityImage& img, int out_h, int out_w);

// Binary PPM (P6) with 8-bit channels is the project's on-disk image format.
void write_ppm(const std::string& path, const ModalityImage& img);
ModalityImage read_ppm(const std::string& path);

}  // namespace pmx
