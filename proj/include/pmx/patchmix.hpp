#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "pmx/common.hpp"
#include "pmx/image.hpp"

namespace pmx {

// Patch-mix settings: fixed patch geometry plus the probability p of drawing
// an RGB patch (1-p gives an infrared patch).
struct MixConfig {
  int patch_height = 16;
  int patch_width = 16;
  real ratio_p = 0.1;

  MixConfig() = default;
  MixConfig(int ph, int pw, real p) : patch_height(ph), patch_width(pw), ratio_p(p) { validate(); }
  void validate() const {
    if (patch_height <= 0 || patch_width <= 0)
      throw std::invalid_argument("MixConfig: patch dims must be positive");
    if (!(ratio_p >= 0 && ratio_p <= 1))
      throw std::invalid_argument("MixConfig: ratio_p must lie in [0,1]");
  }
};

// Per-patch source selector; true = take the RGB patch.
struct MixMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> grid;

  MixMask() = default;
  MixMask(int r, int c) : rows(r), cols(c), grid(static_cast<size_t>(r) * c, 0) {
    if (r <= 0 || c <= 0) throw std::invalid_argument("MixMask: non-positive grid dims");
  }
  bool at(int r, int c) const { return grid[static_cast<size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { grid[static_cast<size_t>(r) * cols + c] = v ? 1 : 0; }
  int count_true() const {
    int n = 0;
    for (auto v : grid) n += v != 0;
    return n;
  }
};

// Patch grid dimensions for an image of the given size; the image must tile
// exactly (padding would break the pixel-provenance guarantee).
std::pair<int, int> mix_grid_dims(const MixConfig& cfg, int image_h, int image_w);

// Each cell is independently true with probability cfg.ratio_p.
MixMask sample_mix_mask(const MixConfig& cfg, int rows, int cols, Rng& rng);

// Stitches a MIX-modality image: every patch is copied verbatim from the
// mask-selected source. Inputs must be a same-identity, same-size pair.
ModalityImage apply_patch_mix(const ModalityImage& rgb, const ModalityImage& ir,
                              const MixMask& mask, const MixConfig& cfg);

// Alternative intermediate-modality generators used for ablation comparisons.
enum class MixStrategy { MIXUP, CUTMIX, GRAYSCALE, RANDOM_ERASING };

MixStrategy mix_strategy_from_name(const std::string& name);
const char* mix_strategy_name(MixStrategy s);

struct Rect {
  int x0 = 0, y0 = 0, w = 0, h = 0;
};

struct ComparatorParams {
  real mixup_alpha = 1.0;             // Beta(alpha, alpha) coefficient for MIXUP/CUTMIX
  real erase_area_lo = 0.02;          // RANDOM_ERASING area fraction range
  real erase_area_hi = 0.4;
  real erase_aspect_lo = 0.3;
  real erase_aspect_hi = 3.3;
  real erase_fill = 0.5;
  std::optional<real> fixed_lambda;   // overrides the sampled coefficient
  std::optional<Rect> fixed_rect;     // overrides the sampled rectangle
};

ModalityImage generate_comparator(MixStrategy strategy, const ModalityImage& rgb,
                                  const ModalityImage& ir, const ComparatorParams& params,
                                  Rng& rng);

}  // namespace pmx
