#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pmx/common.hpp"
#include "pmx/image.hpp"

namespace pmx {

enum class DatasetLayout { SYSU_LIKE, REGDB_LIKE, FLAT };

DatasetLayout layout_from_name(const std::string& name);

struct DatasetRecord {
  std::string path;                      // on-disk source, empty for in-memory
  std::optional<ModalityImage> pixels;   // in-memory source (synthetic data)
  Modality modality = Modality::RGB;
  int identity = -1;
  int camera = -1;

  ModalityImage load() const;
};

// Indexed dataset with identities densely relabeled 0..Y-1. Every identity
// is present in both original modalities.
struct DatasetIndex {
  std::vector<DatasetRecord> records;
  int identity_count = 0;

  int count(Modality m) const;
  // Record indices per (identity, modality).
  std::vector<int> records_of(int identity, Modality m) const;
  void validate() const;  // both-modality coverage, dense labels
};

DatasetIndex load_dataset(const std::string& root, DatasetLayout layout);

// Writes all records as PPM files in FLAT layout:
//   <root>/<identity>/<RGB|IR>/cam<k>_<n>.ppm
void materialize_flat(const DatasetIndex& index, const std::string& root);

// ---------------------------------------------------------------------------
// Synthetic paired-modality data
// ---------------------------------------------------------------------------

// Procedural person renderer: each identity gets a distinctive geometric
// layout (head/torso/leg proportions, torso stripe pattern, colors). RGB
// renders the colors directly; IR collapses them through a hue-lossy
// intensity curve with its own contrast and noise, so identity structure
// survives across modalities while raw pixel statistics do not.
struct SynthSpec {
  int identities = 16;
  int rgb_per_id = 12;
  int ir_per_id = 4;
  int height = 96;
  int width = 48;
  real noise = 0.05;  // scales pixel noise and all per-image jitter
  int split = 0;      // splits share identity appearances but render fresh images

  void validate() const {
    if (identities < 2) throw std::invalid_argument("SynthSpec: need at least 2 identities");
    if (rgb_per_id < 1 || ir_per_id < 1)
      throw std::invalid_argument("SynthSpec: per-identity counts must be >= 1");
    if (height < 8 || width < 8) throw std::invalid_argument("SynthSpec: image too small");
  }
};

DatasetIndex synth_dataset(const SynthSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  int target_height = 384;
  int target_width = 192;
  real hflip_prob = 0.5;
  real channel_erase_prob = 0.5;  // RGB images only

  void validate() const {
    if (hflip_prob < 0 || hflip_prob > 1 || channel_erase_prob < 0 || channel_erase_prob > 1)
      throw std::invalid_argument("AugmentConfig: probabilities must lie in [0,1]");
    if (target_height <= 0 || target_width <= 0)
      throw std::invalid_argument("AugmentConfig: non-positive target size");
  }
};

ModalityImage augment(const ModalityImage& img, const AugmentConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// PK sampling
// ---------------------------------------------------------------------------

struct PKConfig {
  int identities_per_batch = 4;
  int images_per_identity_per_modality = 4;

  int batch_images_per_modality() const {
    return identities_per_batch * images_per_identity_per_modality;
  }
  void validate() const {
    if (identities_per_batch < 1 || images_per_identity_per_modality < 1)
      throw std::invalid_argument("PKConfig: counts must be positive");
  }
};

// Cross-modality PK batch. Position i of the RGB half and position i of the
// IR half carry the same identity, which is what the paired sample losses
// and patch mixing rely on.
struct Batch {
  std::vector<ModalityImage> rgb;
  std::vector<ModalityImage> ir;
  std::vector<int> labels;  // shared by both halves, position-wise
};

Batch sample_batch(const DatasetIndex& index, const PKConfig& cfg, Rng& rng);

}  // namespace pmx
