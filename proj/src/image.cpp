#include "pmx/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pmx {

Modality modality_from_name(const std::string& name) {
  if (name == "RGB" || name == "rgb") return Modality::RGB;
  if (name == "IR" || name == "ir") return Modality::IR;
  if (name == "MIX" || name == "mix") return Modality::MIX;
  throw std::invalid_argument("unknown modality name: " + name);
}

ModalityImage make_image(int height, int width, Modality m, int identity, int camera) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("make_image: non-positive dims");
  ModalityImage img;
  img.pixels = Tensor({height, width, 3});
  img.modality = m;
  img.identity = identity;
  img.camera = camera;
  return img;
}

ModalityImage resize(const ModalityImage& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: non-positive dims");
  const int h = img.height(), w = img.width();
  if (h == out_h && w == out_w) return img;
  ModalityImage out = make_image(out_h, out_w, img.modality, img.identity, img.camera);
  const real sy = static_cast<real>(h) / out_h;
  const real sx = static_cast<real>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const real fy = std::min(std::max((y + real(0.5)) * sy - real(0.5), real(0)), real(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const real wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const real fx = std::min(std::max((x + real(0.5)) * sx - real(0.5), real(0)), real(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const real wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const real top = img.px(y0, x0, c) * (1 - wx) + img.px(y0, x1, c) * wx;
        const real bot = img.px(y1, x0, c) * (1 - wx) + img.px(y1, x1, c) * wx;
        out.px(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

void write_ppm(const std::string& path, const ModalityImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const real v = std::min(std::max(img.px(y, x, c), real(0)), real(1));
        f.put(static_cast<char>(std::lround(v * 255)));
      }
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

ModalityImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a binary PPM: " + path);
  auto next_int = [&f, &path] {
    // Skip whitespace and '#' comment lines.
    while (true) {
      int ch = f.peek();
      if (ch == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(ch)) {
        f.get();
      } else {
        break;
      }
    }
    int v;
    if (!(f >> v)) throw std::runtime_error("read_ppm: malformed header in " + path);
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_ppm: only 8-bit PPMs supported: " + path);
  f.get();  // single whitespace after maxval
  ModalityImage img = make_image(h, w, Modality::RGB);
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  for (size_t i = 0; i < raw.size(); ++i) img.pixels[static_cast<long long>(i)] = raw[i] / real(255);
  return img;
}

}  // namespace pmx
