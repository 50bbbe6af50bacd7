#include "pmx/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace pmx {

DatasetLayout layout_from_name(const std::string& name) {
  if (name == "flat") return DatasetLayout::FLAT;
  if (name == "sysu_like") return DatasetLayout::SYSU_LIKE;
  if (name == "regdb_like") return DatasetLayout::REGDB_LIKE;
  throw std::invalid_argument("unknown dataset layout: " + name);
}

ModalityImage DatasetRecord::load() const {
  if (pixels) return *pixels;
  ModalityImage img = read_ppm(path);
  img.modality = modality;
  img.identity = identity;
  img.camera = camera;
  return img;
}

int DatasetIndex::count(Modality m) const {
  int n = 0;
  for (const auto& r : records) n += r.modality == m;
  return n;
}

std::vector<int> DatasetIndex::records_of(int identity, Modality m) const {
  std::vector<int> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].identity == identity && records[i].modality == m)
      out.push_back(static_cast<int>(i));
  return out;
}

void DatasetIndex::validate() const {
  if (records.empty()) throw std::runtime_error("dataset: index is empty");
  std::vector<std::pair<bool, bool>> seen(static_cast<size_t>(identity_count), {false, false});
  for (const auto& r : records) {
    if (r.identity < 0 || r.identity >= identity_count)
      throw std::runtime_error("dataset: identity label out of range");
    if (r.modality == Modality::RGB) seen[static_cast<size_t>(r.identity)].first = true;
    if (r.modality == Modality::IR) seen[static_cast<size_t>(r.identity)].second = true;
  }
  for (int i = 0; i < identity_count; ++i) {
    if (!seen[static_cast<size_t>(i)].first || !seen[static_cast<size_t>(i)].second)
      throw std::runtime_error("dataset: identity " + std::to_string(i) +
                               " is missing one modality");
  }
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

namespace {

struct RawRecord {
  std::string path;
  std::string label;
  Modality modality;
  int camera;
};

// Dense relabeling; numeric labels sort numerically so folder "10" follows "9".
std::map<std::string, int> relabel(const std::vector<RawRecord>& raw) {
  std::set<std::string> labels;
  for (const auto& r : raw) labels.insert(r.label);
  std::vector<std::string> ordered(labels.begin(), labels.end());
  const bool all_numeric = std::all_of(ordered.begin(), ordered.end(), [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(c); });
  });
  if (all_numeric)
    std::sort(ordered.begin(), ordered.end(), [](const std::string& a, const std::string& b) {
      return std::stoll(a) != std::stoll(b) ? std::stoll(a) < std::stoll(b) : a < b;
    });
  std::map<std::string, int> ids;
  for (const auto& l : ordered) ids.emplace(l, static_cast<int>(ids.size()));
  return ids;
}

DatasetIndex finish_index(std::vector<RawRecord> raw) {
  if (raw.empty()) throw std::runtime_error("dataset: no images found");
  auto ids = relabel(raw);

  // Both-modality coverage, reported with the original label.
  std::map<std::string, std::pair<bool, bool>> seen;
  for (const auto& r : raw) {
    if (r.modality == Modality::RGB) seen[r.label].first = true;
    if (r.modality == Modality::IR) seen[r.label].second = true;
  }
  for (const auto& [label, cover] : seen) {
    if (!cover.first || !cover.second)
      throw std::runtime_error("dataset: identity '" + label + "' has no " +
                               (cover.first ? "IR" : "RGB") + " images");
  }

  DatasetIndex index;
  index.identity_count = static_cast<int>(ids.size());
  for (auto& r : raw) {
    DatasetRecord rec;
    rec.path = r.path;
    rec.modality = r.modality;
    rec.identity = ids.at(r.label);
    rec.camera = r.camera;
    index.records.push_back(std::move(rec));
  }
  index.validate();
  return index;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs_only) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (dirs_only ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Optional "cam<k>_" filename prefix carries the camera label in FLAT layout.
int camera_from_filename(const std::string& stem, int fallback) {
  if (stem.rfind("cam", 0) != 0) return fallback;
  size_t i = 3;
  int cam = 0;
  bool any = false;
  while (i < stem.size() && std::isdigit(stem[i])) {
    cam = cam * 10 + (stem[i] - '0');
    ++i;
    any = true;
  }
  return (any && i < stem.size() && stem[i] == '_') ? cam : fallback;
}

DatasetIndex load_flat(const fs::path& root) {
  std::vector<RawRecord> raw;
  for (const auto& person : sorted_entries(root, true)) {
    const std::string label = person.filename().string();
    for (const char* mod_name : {"RGB", "IR"}) {
      const fs::path mod_dir = person / mod_name;
      if (!fs::is_directory(mod_dir)) continue;
      const Modality m = modality_from_name(mod_name);
      for (const auto& file : sorted_entries(mod_dir, false)) {
        const int fallback = m == Modality::RGB ? 1 : 3;
        raw.push_back({file.string(), label, m,
                       camera_from_filename(file.stem().string(), fallback)});
      }
    }
  }
  return finish_index(std::move(raw));
}

DatasetIndex load_sysu_like(const fs::path& root) {
  // SYSU camera convention: cameras 1,2,4,5 are visible, 3 and 6 infrared.
  const std::map<int, Modality> cam_modality = {
      {1, Modality::RGB}, {2, Modality::RGB}, {3, Modality::IR},
      {4, Modality::RGB}, {5, Modality::RGB}, {6, Modality::IR}};
  std::vector<RawRecord> raw;
  for (const auto& [cam, modality] : cam_modality) {
    const fs::path cam_dir = root / ("cam" + std::to_string(cam));
    if (!fs::is_directory(cam_dir)) continue;
    for (const auto& person : sorted_entries(cam_dir, true)) {
      const std::string label = person.filename().string();
      for (const auto& file : sorted_entries(person, false))
        raw.push_back({file.string(), label, modality, cam});
    }
  }
  return finish_index(std::move(raw));
}

DatasetIndex load_regdb_like(const fs::path& root) {
  std::vector<RawRecord> raw;
  const std::pair<const char*, Modality> indexes[] = {{"index_rgb.txt", Modality::RGB},
                                                      {"index_ir.txt", Modality::IR}};
  for (const auto& [name, modality] : indexes) {
    const fs::path index_file = root / name;
    std::ifstream f(index_file);
    if (!f) throw std::runtime_error("dataset: cannot open " + index_file.string());
    std::string rel, label;
    while (f >> rel >> label) {
      raw.push_back({(root / rel).string(), label, modality,
                     modality == Modality::RGB ? 1 : 2});
    }
  }
  return finish_index(std::move(raw));
}

}  // namespace

DatasetIndex load_dataset(const std::string& root, DatasetLayout layout) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset: no such directory: " + root);
  switch (layout) {
    case DatasetLayout::FLAT: return load_flat(root);
    case DatasetLayout::SYSU_LIKE: return load_sysu_like(root);
    case DatasetLayout::REGDB_LIKE: return load_regdb_like(root);
  }
  throw std::invalid_argument("load_dataset: bad layout");
}

void materialize_flat(const DatasetIndex& index, const std::string& root) {
  std::map<std::pair<int, Modality>, int> counters;
  for (const auto& rec : index.records) {
    const fs::path dir = fs::path(root) / std::to_string(rec.identity) /
                         (rec.modality == Modality::IR ? "IR" : "RGB");
    fs::create_directories(dir);
    int& n = counters[{rec.identity, rec.modality}];
    char name[48];
    std::snprintf(name, sizeof(name), "cam%d_%04d.ppm", rec.camera, n++);
    write_ppm((dir / name).string(), rec.load());
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct Color {
  real r, g, b;
};

struct Appearance {
  real head_tone;
  real head_rx, head_ry;           // ellipse radii in unit coords
  real torso_w, torso_h;           // torso box (unit fractions)
  int stripe_count;
  Color torso_a, torso_b;
  Color legs;
  real leg_w, leg_gap;
};

Appearance draw_appearance(Rng& rng) {
  std::uniform_real_distribution<real> u(0.0, 1.0);
  auto in = [&u, &rng](real lo, real hi) { return lo + (hi - lo) * u(rng); };
  auto color = [&in] { return Color{in(0.08, 0.95), in(0.08, 0.95), in(0.08, 0.95)}; };
  Appearance a;
  a.head_tone = in(0.35, 0.9);
  a.head_rx = in(0.10, 0.17);
  a.head_ry = in(0.055, 0.09);
  a.torso_w = in(0.42, 0.74);
  a.torso_h = in(0.30, 0.42);
  a.stripe_count = 1 + static_cast<int>(in(0.0, 3.999));
  a.torso_a = color();
  a.torso_b = color();
  a.legs = color();
  a.leg_w = in(0.10, 0.17);
  a.leg_gap = in(0.04, 0.12);
  return a;
}

// Layout color at unit coordinates (u horizontal, v vertical), or background.
std::optional<Color> layout_color(const Appearance& a, real u, real v) {
  const real head_cy = 0.13;
  const real torso_top = 0.22;
  const real torso_bot = torso_top + a.torso_h;
  const real legs_bot = 0.93;

  const real du = (u - 0.5) / a.head_rx;
  const real dv = (v - head_cy) / a.head_ry;
  if (du * du + dv * dv <= 1)
    return Color{a.head_tone, a.head_tone * real(0.84), a.head_tone * real(0.70)};

  if (v >= torso_top && v < torso_bot && std::abs(u - 0.5) <= a.torso_w / 2) {
    const int stripe =
        static_cast<int>((v - torso_top) / a.torso_h * (2 * a.stripe_count)) % 2;
    return stripe == 0 ? a.torso_a : a.torso_b;
  }

  if (v >= torso_bot && v < legs_bot) {
    const real off = std::abs(u - 0.5);
    if (off >= a.leg_gap / 2 && off <= a.leg_gap / 2 + a.leg_w) return a.legs;
  }
  return std::nullopt;
}

// Hue-lossy intensity map: thermal-style bright body on a dark background.
real ir_intensity(const Color& c) {
  const real dot = real(0.06) * c.r + real(0.34) * c.g + real(0.60) * c.b;
  return real(0.35) + real(0.60) * std::pow(std::max(dot, real(0)), real(0.6));
}

ModalityImage render_sample(const Appearance& a, Modality modality, int identity, int camera,
                            int h, int w, real noise, Rng& rng) {
  std::uniform_real_distribution<real> sym(-1.0, 1.0);
  std::normal_distribution<real> gauss(0.0, 1.0);
  const real dx = sym(rng) * real(0.8) * noise;
  const real dy = sym(rng) * real(0.4) * noise;
  const real scale = 1 + sym(rng) * real(0.6) * noise;
  const real brightness = sym(rng) * real(0.8) * noise;

  const bool is_ir = modality == Modality::IR;
  const real bg_rgb = real(0.30) + real(0.06) * (camera % 3);
  const real bg_ir = real(0.10) + real(0.04) * (camera % 3);
  const real sigma = is_ir ? real(0.9) * noise : real(0.6) * noise;

  ModalityImage img = make_image(h, w, modality, identity, camera);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const real u = (x + real(0.5)) / w;
      const real v = (y + real(0.5)) / h;
      const real uu = (u - real(0.5)) / scale + real(0.5) - dx;
      const real vv = (v - real(0.5)) / scale + real(0.5) - dy;
      const auto c = layout_color(a, uu, vv);
      real out[3];
      if (is_ir) {
        const real base = c ? ir_intensity(*c) : bg_ir;
        const real val = base + real(0.5) * brightness + sigma * gauss(rng);
        out[0] = out[1] = out[2] = val;
      } else {
        const Color base = c ? *c : Color{bg_rgb, bg_rgb, bg_rgb};
        out[0] = base.r + brightness + sigma * gauss(rng);
        out[1] = base.g + brightness + sigma * gauss(rng);
        out[2] = base.b + brightness + sigma * gauss(rng);
      }
      for (int ch = 0; ch < 3; ++ch)
        img.px(y, x, ch) = std::min(std::max(out[ch], real(0)), real(1));
    }
  }
  return img;
}

}  // namespace

DatasetIndex synth_dataset(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  // One base draw keys the whole dataset. Identity appearances depend only on
  // (base, identity), so two specs differing in counts or split still render
  // the same people; per-image draws additionally mix in the split tag so the
  // test split gets fresh renders of the training identities.
  const std::uint64_t base = rng();
  DatasetIndex index;
  index.identity_count = spec.identities;
  for (int id = 0; id < spec.identities; ++id) {
    Rng appearance_rng = make_rng(mix_seed(base, 0xA11CE), static_cast<std::uint64_t>(id));
    const Appearance a = draw_appearance(appearance_rng);
    Rng img_rng =
        make_rng(mix_seed(base, 0xB0D7 + static_cast<std::uint64_t>(spec.split) * 0x9E37ULL),
                 static_cast<std::uint64_t>(id));
    for (int j = 0; j < spec.rgb_per_id; ++j) {
      const int camera = 1 + (j % 2);  // visible cameras 1,2
      DatasetRecord rec;
      rec.modality = Modality::RGB;
      rec.identity = id;
      rec.camera = camera;
      rec.pixels = render_sample(a, Modality::RGB, id, camera, spec.height, spec.width,
                                 spec.noise, img_rng);
      index.records.push_back(std::move(rec));
    }
    for (int j = 0; j < spec.ir_per_id; ++j) {
      const int camera = j % 2 == 0 ? 3 : 6;  // infrared cameras 3,6
      DatasetRecord rec;
      rec.modality = Modality::IR;
      rec.identity = id;
      rec.camera = camera;
      rec.pixels = render_sample(a, Modality::IR, id, camera, spec.height, spec.width,
                                 spec.noise, img_rng);
      index.records.push_back(std::move(rec));
    }
  }
  index.validate();
  return index;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

ModalityImage augment(const ModalityImage& img, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  ModalityImage out = resize(img, cfg.target_height, cfg.target_width);
  std::uniform_real_distribution<real> unit(0.0, 1.0);

  if (unit(rng) < cfg.hflip_prob) {
    const int w = out.width();
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < w / 2; ++x)
        for (int c = 0; c < 3; ++c) std::swap(out.px(y, x, c), out.px(y, w - 1 - x, c));
  }

  if (out.modality == Modality::RGB && unit(rng) < cfg.channel_erase_prob) {
    std::uniform_int_distribution<int> pick(0, 2);
    const int keep = pick(rng);
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        const real v = out.px(y, x, keep);
        for (int c = 0; c < 3; ++c) out.px(y, x, c) = v;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PK sampling
// ---------------------------------------------------------------------------

Batch sample_batch(const DatasetIndex& index, const PKConfig& cfg, Rng& rng) {
  cfg.validate();
  if (index.identity_count < cfg.identities_per_batch)
    throw std::runtime_error("sample_batch: fewer identities than identities_per_batch");

  std::vector<int> ids(static_cast<size_t>(index.identity_count));
  for (int i = 0; i < index.identity_count; ++i) ids[static_cast<size_t>(i)] = i;
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<size_t>(cfg.identities_per_batch));

  auto pick = [&rng](const std::vector<int>& pool, int k) {
    std::vector<int> chosen;
    if (static_cast<int>(pool.size()) >= k) {
      std::vector<int> shuffled = pool;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      chosen.assign(shuffled.begin(), shuffled.begin() + k);
    } else {
      // Too few images for this identity: sample with replacement.
      std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
      for (int i = 0; i < k; ++i) chosen.push_back(pool[d(rng)]);
    }
    return chosen;
  };

  Batch batch;
  const int k = cfg.images_per_identity_per_modality;
  for (int id : ids) {
    const auto rgb_pool = index.records_of(id, Modality::RGB);
    const auto ir_pool = index.records_of(id, Modality::IR);
    if (rgb_pool.empty() || ir_pool.empty())
      throw std::runtime_error("sample_batch: identity " + std::to_string(id) +
                               " is missing a modality");
    for (int rec : pick(rgb_pool, k)) batch.rgb.push_back(index.records[static_cast<size_t>(rec)].load());
    for (int rec : pick(ir_pool, k)) batch.ir.push_back(index.records[static_cast<size_t>(rec)].load());
    for (int i = 0; i < k; ++i) batch.labels.push_back(id);
  }
  return batch;
}

}  // namespace pmx
