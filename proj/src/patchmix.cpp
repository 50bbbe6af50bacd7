#include "pmx/patchmix.hpp"

#include <cmath>

namespace pmx {

std::pair<int, int> mix_grid_dims(const MixConfig& cfg, int image_h, int image_w) {
  cfg.validate();
  if (image_h % cfg.patch_height != 0 || image_w % cfg.patch_width != 0)
    throw std::invalid_argument("mix_grid_dims: image " + std::to_string(image_h) + "x" +
                                std::to_string(image_w) + " not divisible by patch " +
                                std::to_string(cfg.patch_height) + "x" +
                                std::to_string(cfg.patch_width));
  return {image_h / cfg.patch_height, image_w / cfg.patch_width};
}

MixMask sample_mix_mask(const MixConfig& cfg, int rows, int cols, Rng& rng) {
  cfg.validate();
  MixMask mask(rows, cols);
  std::uniform_real_distribution<real> unit(0.0, 1.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) mask.set(r, c, unit(rng) < cfg.ratio_p);
  return mask;
}

ModalityImage apply_patch_mix(const ModalityImage& rgb, const ModalityImage& ir,
                              const MixMask& mask, const MixConfig& cfg) {
  if (rgb.height() != ir.height() || rgb.width() != ir.width())
    throw std::invalid_argument("apply_patch_mix: image shape mismatch");
  if (rgb.identity != ir.identity)
    throw std::invalid_argument("apply_patch_mix: identity mismatch (" +
                                std::to_string(rgb.identity) + " vs " +
                                std::to_string(ir.identity) + ")");
  auto [rows, cols] = mix_grid_dims(cfg, rgb.height(), rgb.width());
  if (mask.rows != rows || mask.cols != cols)
    throw std::invalid_argument("apply_patch_mix: mask grid mismatch");

  ModalityImage out = make_image(rgb.height(), rgb.width(), Modality::MIX, rgb.identity);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const ModalityImage& src = mask.at(r, c) ? rgb : ir;
      for (int y = r * cfg.patch_height; y < (r + 1) * cfg.patch_height; ++y)
        for (int x = c * cfg.patch_width; x < (c + 1) * cfg.patch_width; ++x)
          for (int ch = 0; ch < 3; ++ch) out.px(y, x, ch) = src.px(y, x, ch);
    }
  }
  return out;
}

MixStrategy mix_strategy_from_name(const std::string& name) {
  if (name == "mixup") return MixStrategy::MIXUP;
  if (name == "cutmix") return MixStrategy::CUTMIX;
  if (name == "grayscale") return MixStrategy::GRAYSCALE;
  if (name == "random_erasing") return MixStrategy::RANDOM_ERASING;
  throw std::invalid_argument("unknown intermediate-modality strategy: " + name);
}

const char* mix_strategy_name(MixStrategy s) {
  switch (s) {
    case MixStrategy::MIXUP: return "mixup";
    case MixStrategy::CUTMIX: return "cutmix";
    case MixStrategy::GRAYSCALE: return "grayscale";
    case MixStrategy::RANDOM_ERASING: return "random_erasing";
  }
  return "?";
}

namespace {

real sample_beta(real alpha, Rng& rng) {
  std::gamma_distribution<real> g(alpha, 1.0);
  const real a = g(rng);
  const real b = g(rng);
  return (a + b) > 0 ? a / (a + b) : real(0.5);
}

void require_pair(const ModalityImage& rgb, const ModalityImage& ir, const char* what) {
  if (rgb.height() != ir.height() || rgb.width() != ir.width())
    throw std::invalid_argument(std::string(what) + ": image shape mismatch");
  if (rgb.identity != ir.identity)
    throw std::invalid_argument(std::string(what) + ": identity mismatch");
}

ModalityImage mixup(const ModalityImage& rgb, const ModalityImage& ir,
                    const ComparatorParams& p, Rng& rng) {
  require_pair(rgb, ir, "mixup");
  const real lam = p.fixed_lambda ? *p.fixed_lambda : sample_beta(p.mixup_alpha, rng);
  ModalityImage out = make_image(rgb.height(), rgb.width(), Modality::MIX, rgb.identity);
  for (long long i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = lam * rgb.pixels[i] + (1 - lam) * ir.pixels[i];
  return out;
}

// Base is the infrared image; one rectangle of the visible donor is pasted in.
ModalityImage cutmix(const ModalityImage& rgb, const ModalityImage& ir,
                     const ComparatorParams& p, Rng& rng) {
  require_pair(rgb, ir, "cutmix");
  const int h = rgb.height(), w = rgb.width();
  Rect rect;
  if (p.fixed_rect) {
    rect = *p.fixed_rect;
  } else {
    const real lam = p.fixed_lambda ? *p.fixed_lambda : sample_beta(p.mixup_alpha, rng);
    rect.w = static_cast<int>(std::round(w * std::sqrt(lam)));
    rect.h = static_cast<int>(std::round(h * std::sqrt(lam)));
    std::uniform_int_distribution<int> dx(0, std::max(0, w - rect.w));
    std::uniform_int_distribution<int> dy(0, std::max(0, h - rect.h));
    rect.x0 = dx(rng);
    rect.y0 = dy(rng);
  }
  ModalityImage out = ir;
  out.modality = Modality::MIX;
  for (int y = rect.y0; y < std::min(h, rect.y0 + rect.h); ++y)
    for (int x = rect.x0; x < std::min(w, rect.x0 + rect.w); ++x)
      for (int c = 0; c < 3; ++c) out.px(y, x, c) = rgb.px(y, x, c);
  return out;
}

ModalityImage grayscale(const ModalityImage& img) {
  ModalityImage out = make_image(img.height(), img.width(), Modality::MIX, img.identity,
                                 img.camera);
  // r + wg*(g-r) + wb*(b-r) is algebraically the usual luminance but exactly
  // reproduces gray inputs.
  constexpr real wg = 0.587, wb = 0.114;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const real r = img.px(y, x, 0), g = img.px(y, x, 1), b = img.px(y, x, 2);
      const real lum = r + wg * (g - r) + wb * (b - r);
      for (int c = 0; c < 3; ++c) out.px(y, x, c) = lum;
    }
  return out;
}

ModalityImage random_erasing(const ModalityImage& img, const ComparatorParams& p, Rng& rng) {
  const int h = img.height(), w = img.width();
  Rect rect;
  if (p.fixed_rect) {
    rect = *p.fixed_rect;
  } else {
    std::uniform_real_distribution<real> area_d(p.erase_area_lo, p.erase_area_hi);
    std::uniform_real_distribution<real> aspect_d(std::log(p.erase_aspect_lo),
                                                  std::log(p.erase_aspect_hi));
    for (int attempt = 0; attempt < 32; ++attempt) {
      const real area = area_d(rng) * h * w;
      const real aspect = std::exp(aspect_d(rng));
      const int rh = static_cast<int>(std::round(std::sqrt(area * aspect)));
      const int rw = static_cast<int>(std::round(std::sqrt(area / aspect)));
      if (rh < 1 || rw < 1 || rh > h || rw > w) continue;
      std::uniform_int_distribution<int> dx(0, w - rw);
      std::uniform_int_distribution<int> dy(0, h - rh);
      rect = {dx(rng), dy(rng), rw, rh};
      break;
    }
  }
  ModalityImage out = img;
  out.modality = Modality::MIX;
  for (int y = rect.y0; y < std::min(h, rect.y0 + rect.h); ++y)
    for (int x = rect.x0; x < std::min(w, rect.x0 + rect.w); ++x)
      for (int c = 0; c < 3; ++c) out.px(y, x, c) = p.erase_fill;
  return out;
}

}  // namespace

ModalityImage generate_comparator(MixStrategy strategy, const ModalityImage& rgb,
                                  const ModalityImage& ir, const ComparatorParams& params,
                                  Rng& rng) {
  switch (strategy) {
    case MixStrategy::MIXUP: return mixup(rgb, ir, params, rng);
    case MixStrategy::CUTMIX: return cutmix(rgb, ir, params, rng);
    case MixStrategy::GRAYSCALE: return grayscale(rgb);
    case MixStrategy::RANDOM_ERASING: return random_erasing(rgb, params, rng);
  }
  throw std::invalid_argument("generate_comparator: unsupported strategy");
}

}  // namespace pmx
