#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "pmx/data.hpp"

using namespace pmx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("pmx_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModalityImage tiny_image(Modality m, int id, real value) {
  ModalityImage img = make_image(8, 8, m, id);
  img.pixels.fill(value);
  return img;
}

real pixel_dist(const ModalityImage& a, const ModalityImage& b) {
  real s = 0;
  for (long long i = 0; i < a.pixels.size(); ++i) {
    const real d = a.pixels[i] - b.pixels[i];
    s += d * d;
  }
  return s;
}

}  // namespace

TEST_CASE("synthetic dataset obeys the requested counts") {
  Rng rng = make_rng(7, rng_stream::kSynth);
  SynthSpec spec;
  spec.identities = 8;
  spec.rgb_per_id = 12;
  spec.ir_per_id = 4;
  DatasetIndex idx = synth_dataset(spec, rng);
  CHECK(idx.identity_count == 8);
  CHECK(idx.count(Modality::RGB) == 96);
  CHECK(idx.count(Modality::IR) == 32);
  CHECK(idx.records.size() == 128);
  for (const auto& r : idx.records) {
    CHECK(r.pixels.has_value());
    CHECK(r.pixels->height() == spec.height);
    CHECK(r.pixels->width() == spec.width);
  }
}

TEST_CASE("zero noise makes the renderer deterministic per identity") {
  Rng rng = make_rng(9, rng_stream::kSynth);
  SynthSpec spec;
  spec.identities = 2;
  spec.rgb_per_id = 3;
  spec.ir_per_id = 2;
  spec.noise = 0;
  DatasetIndex idx = synth_dataset(spec, rng);
  auto rgb0 = idx.records_of(0, Modality::RGB);
  // Same identity, same camera parity -> identical render at zero noise.
  const ModalityImage a = idx.records[rgb0[0]].load();
  const ModalityImage c = idx.records[rgb0[2]].load();
  CHECK(a.camera == c.camera);
  for (long long i = 0; i < a.pixels.size(); ++i) CHECK(a.pixels[i] == c.pixels[i]);
}

TEST_CASE("synthetic generation is reproducible under a fixed seed") {
  SynthSpec spec;
  spec.identities = 3;
  spec.rgb_per_id = 2;
  spec.ir_per_id = 2;
  Rng r1 = make_rng(123, rng_stream::kSynth);
  Rng r2 = make_rng(123, rng_stream::kSynth);
  DatasetIndex a = synth_dataset(spec, r1);
  DatasetIndex b = synth_dataset(spec, r2);
  for (size_t i = 0; i < a.records.size(); ++i) {
    const Tensor& pa = a.records[i].pixels->pixels;
    const Tensor& pb = b.records[i].pixels->pixels;
    for (long long j = 0; j < pa.size(); ++j) CHECK(pa[j] == pb[j]);
  }
}

TEST_CASE("raw-pixel retrieval within RGB beats chance on synthetic data") {
  // Brute-force pixel-space oracle: nearest neighbour by L2 distance.
  Rng rng = make_rng(21, rng_stream::kSynth);
  SynthSpec spec;
  spec.identities = 8;
  spec.rgb_per_id = 6;
  spec.ir_per_id = 1;
  DatasetIndex idx = synth_dataset(spec, rng);

  std::vector<ModalityImage> rgb;
  for (const auto& r : idx.records)
    if (r.modality == Modality::RGB) rgb.push_back(r.load());

  int hits = 0;
  for (size_t q = 0; q < rgb.size(); ++q) {
    real best = 1e30;
    int best_id = -1;
    for (size_t g = 0; g < rgb.size(); ++g) {
      if (g == q) continue;
      const real d = pixel_dist(rgb[q], rgb[g]);
      if (d < best) {
        best = d;
        best_id = rgb[g].identity;
      }
    }
    hits += best_id == rgb[q].identity;
  }
  const real rank1 = real(hits) / real(rgb.size());
  CHECK(rank1 > 1.0 / spec.identities);
  CHECK(rank1 > 0.5);  // the identity signal should be strong within a modality
}

TEST_CASE("flat layout round-trips through materialization") {
  TempDir dir("flat");
  Rng rng = make_rng(3, rng_stream::kSynth);
  SynthSpec spec;
  spec.identities = 2;
  spec.rgb_per_id = 3;
  spec.ir_per_id = 3;
  spec.height = 16;
  spec.width = 8;
  DatasetIndex idx = synth_dataset(spec, rng);
  materialize_flat(idx, dir.path.string());

  DatasetIndex loaded = load_dataset(dir.path.string(), DatasetLayout::FLAT);
  CHECK(loaded.records.size() == 12);
  CHECK(loaded.identity_count == 2);
  CHECK(loaded.count(Modality::RGB) == 6);
  CHECK(loaded.count(Modality::IR) == 6);
  // Camera labels survive the filename convention.
  std::map<int, int> cams;
  for (const auto& r : loaded.records) cams[r.camera]++;
  CHECK(cams.count(1) == 1);
  CHECK(cams.count(3) == 1);

  const ModalityImage img = loaded.records[0].load();
  CHECK(img.height() == 16);
  CHECK(img.width() == 8);
}

TEST_CASE("identity with a single modality is a dataset error naming it") {
  TempDir dir("missing");
  fs::create_directories(dir.path / "7" / "RGB");
  fs::create_directories(dir.path / "8" / "RGB");
  fs::create_directories(dir.path / "8" / "IR");
  write_ppm((dir.path / "7" / "RGB" / "a.ppm").string(), tiny_image(Modality::RGB, 0, 0.5));
  write_ppm((dir.path / "8" / "RGB" / "a.ppm").string(), tiny_image(Modality::RGB, 1, 0.5));
  write_ppm((dir.path / "8" / "IR" / "a.ppm").string(), tiny_image(Modality::IR, 1, 0.5));
  try {
    load_dataset(dir.path.string(), DatasetLayout::FLAT);
    FAIL("expected dataset error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("'7'") != std::string::npos);
  }
}

TEST_CASE("missing root and empty directory are I/O errors") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/pmx", DatasetLayout::FLAT), std::runtime_error);
  TempDir dir("empty");
  CHECK_THROWS_AS(load_dataset(dir.path.string(), DatasetLayout::FLAT), std::runtime_error);
}

TEST_CASE("sysu-like layout maps cameras to modalities") {
  TempDir dir("sysu");
  for (int cam : {1, 3, 6}) {
    for (const char* person : {"0001", "0002"}) {
      fs::create_directories(dir.path / ("cam" + std::to_string(cam)) / person);
      write_ppm((dir.path / ("cam" + std::to_string(cam)) / person / "0.ppm").string(),
                tiny_image(Modality::RGB, 0, 0.25));
    }
  }
  DatasetIndex idx = load_dataset(dir.path.string(), DatasetLayout::SYSU_LIKE);
  CHECK(idx.identity_count == 2);
  CHECK(idx.records.size() == 6);
  for (const auto& r : idx.records) {
    if (r.camera == 1) CHECK(r.modality == Modality::RGB);
    if (r.camera == 3 || r.camera == 6) CHECK(r.modality == Modality::IR);
  }
}

TEST_CASE("regdb-like layout reads per-modality index files") {
  TempDir dir("regdb");
  fs::create_directories(dir.path / "img");
  write_ppm((dir.path / "img" / "v0.ppm").string(), tiny_image(Modality::RGB, 0, 0.3));
  write_ppm((dir.path / "img" / "v1.ppm").string(), tiny_image(Modality::RGB, 1, 0.4));
  write_ppm((dir.path / "img" / "t0.ppm").string(), tiny_image(Modality::IR, 0, 0.5));
  write_ppm((dir.path / "img" / "t1.ppm").string(), tiny_image(Modality::IR, 1, 0.6));
  std::ofstream(dir.path / "index_rgb.txt") << "img/v0.ppm 10\nimg/v1.ppm 11\n";
  std::ofstream(dir.path / "index_ir.txt") << "img/t0.ppm 10\nimg/t1.ppm 11\n";
  DatasetIndex idx = load_dataset(dir.path.string(), DatasetLayout::REGDB_LIKE);
  CHECK(idx.identity_count == 2);
  CHECK(idx.count(Modality::RGB) == 2);
  CHECK(idx.count(Modality::IR) == 2);
}

TEST_CASE("augment with zero probabilities only resizes") {
  Rng rng(5);
  ModalityImage img = tiny_image(Modality::RGB, 0, 0.0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img.px(y, x, 0) = (y * 8 + x) / 64.0;
  AugmentConfig cfg;
  cfg.target_height = 16;
  cfg.target_width = 16;
  cfg.hflip_prob = 0;
  cfg.channel_erase_prob = 0;
  ModalityImage out = augment(img, cfg, rng);
  ModalityImage expect = resize(img, 16, 16);
  CHECK(out.height() == 16);
  CHECK(out.width() == 16);
  CHECK(out.modality == img.modality);
  CHECK(out.identity == img.identity);
  for (long long i = 0; i < out.pixels.size(); ++i) CHECK(out.pixels[i] == expect.pixels[i]);
}

TEST_CASE("forced horizontal flip is an involution") {
  Rng rng(6);
  ModalityImage img = tiny_image(Modality::IR, 1, 0.0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) img.px(y, x, c) = (y * 8 + x) / 64.0;
  AugmentConfig cfg;
  cfg.target_height = 8;
  cfg.target_width = 8;
  cfg.hflip_prob = 1;
  cfg.channel_erase_prob = 0;
  ModalityImage once = augment(img, cfg, rng);
  ModalityImage twice = augment(once, cfg, rng);
  bool flipped = false;
  for (long long i = 0; i < img.pixels.size(); ++i) flipped |= once.pixels[i] != img.pixels[i];
  CHECK(flipped);
  for (long long i = 0; i < img.pixels.size(); ++i) CHECK(twice.pixels[i] == img.pixels[i]);
}

TEST_CASE("channel erasing replicates one channel over all three") {
  AugmentConfig cfg;
  cfg.target_height = 1;
  cfg.target_width = 1;
  cfg.hflip_prob = 0;
  cfg.channel_erase_prob = 1;
  ModalityImage px = make_image(1, 1, Modality::RGB, 0);
  px.px(0, 0, 0) = 0.2;
  px.px(0, 0, 1) = 0.5;
  px.px(0, 0, 2) = 0.8;

  bool saw_green_case = false;
  for (unsigned seed = 0; seed < 24; ++seed) {
    Rng rng(seed);
    ModalityImage out = augment(px, cfg, rng);
    const real v = out.px(0, 0, 0);
    CHECK(out.px(0, 0, 1) == v);
    CHECK(out.px(0, 0, 2) == v);
    CHECK((v == 0.2 || v == 0.5 || v == 0.8));
    saw_green_case |= v == 0.5;  // the (0.2,0.5,0.8) -> (0.5,0.5,0.5) case
  }
  CHECK(saw_green_case);

  // IR images are never channel-erased.
  ModalityImage ir = make_image(1, 1, Modality::IR, 0);
  ir.px(0, 0, 0) = 0.1;
  ir.px(0, 0, 1) = 0.1;
  ir.px(0, 0, 2) = 0.1;
  Rng rng(3);
  ModalityImage out = augment(ir, cfg, rng);
  for (int c = 0; c < 3; ++c) CHECK(out.px(0, 0, c) == 0.1);
}

TEST_CASE("PK batches align identities across the modality halves") {
  Rng rng = make_rng(11, rng_stream::kSynth);
  SynthSpec spec;
  spec.identities = 6;
  spec.rgb_per_id = 5;
  spec.ir_per_id = 5;
  spec.height = 16;
  spec.width = 8;
  DatasetIndex idx = synth_dataset(spec, rng);

  PKConfig cfg;
  Rng srng = make_rng(11, rng_stream::kSampler);
  Batch b = sample_batch(idx, cfg, srng);
  CHECK(b.rgb.size() == 16);
  CHECK(b.ir.size() == 16);
  CHECK(b.labels.size() == 16);
  for (size_t i = 0; i < b.labels.size(); ++i) {
    CHECK(b.rgb[i].identity == b.labels[i]);
    CHECK(b.ir[i].identity == b.labels[i]);
    CHECK(b.rgb[i].modality == Modality::RGB);
    CHECK(b.ir[i].modality == Modality::IR);
  }

  PKConfig tiny;
  tiny.identities_per_batch = 1;
  tiny.images_per_identity_per_modality = 1;
  Batch one = sample_batch(idx, tiny, srng);
  CHECK(one.rgb.size() == 1);
  CHECK(one.ir.size() == 1);
  CHECK(one.rgb[0].identity == one.ir[0].identity);
}

TEST_CASE("under-populated identities are sampled with replacement") {
  Rng rng = make_rng(13, rng_stream::kSynth);
  SynthSpec spec;
  spec.identities = 2;
  spec.rgb_per_id = 4;
  spec.ir_per_id = 1;  // one IR image per identity
  spec.height = 16;
  spec.width = 8;
  DatasetIndex idx = synth_dataset(spec, rng);

  PKConfig cfg;
  cfg.identities_per_batch = 1;
  cfg.images_per_identity_per_modality = 4;
  Rng srng = make_rng(13, rng_stream::kSampler);
  Batch b = sample_batch(idx, cfg, srng);
  CHECK(b.ir.size() == 4);
  for (size_t i = 1; i < b.ir.size(); ++i) {
    CHECK(b.ir[i].identity == b.ir[0].identity);
    for (long long j = 0; j < b.ir[i].pixels.size(); ++j)
      CHECK(b.ir[i].pixels[j] == b.ir[0].pixels[j]);  // the single image, repeated
  }
}

TEST_CASE("sampling errors on impossible configurations") {
  Rng rng = make_rng(17, rng_stream::kSynth);
  SynthSpec spec;
  spec.identities = 2;
  spec.rgb_per_id = 2;
  spec.ir_per_id = 2;
  spec.height = 16;
  spec.width = 8;
  DatasetIndex idx = synth_dataset(spec, rng);

  PKConfig wide;
  wide.identities_per_batch = 4;
  Rng srng(1);
  CHECK_THROWS_AS(sample_batch(idx, wide, srng), std::runtime_error);

  // Hand-build an index violating the both-modality invariant.
  DatasetIndex broken;
  broken.identity_count = 2;
  for (int id = 0; id < 2; ++id) {
    DatasetRecord rec;
    rec.modality = Modality::RGB;
    rec.identity = id;
    rec.camera = 1;
    rec.pixels = tiny_image(Modality::RGB, id, 0.5);
    broken.records.push_back(rec);
  }
  CHECK_THROWS_AS(broken.validate(), std::runtime_error);
}
