#include "pmx/runner.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "pmx/patchmix.hpp"

namespace fs = std::filesystem;

namespace pmx {

real lr_schedule(int epoch, real base_lr, int total_epochs) {
  if (epoch < 0 || epoch > total_epochs)
    throw std::out_of_range("lr_schedule: epoch " + std::to_string(epoch) + " outside [0," +
                            std::to_string(total_epochs) + "]");
  if (epoch <= 10) return base_lr * (static_cast<real>(epoch) / 10);
  real lr = base_lr;
  if (epoch > 30) lr /= 10;
  if (epoch > 60) lr /= 10;
  if (epoch > 90) lr /= 10;
  return lr;
}

real cmc_at(const EvalResult& r, int rank) {
  if (r.cmc.empty()) return 0;
  const size_t idx = static_cast<size_t>(std::min<int>(rank, static_cast<int>(r.cmc.size()))) - 1;
  return r.cmc[idx];
}

std::string resolve_run_dir(const ExperimentConfig& cfg) {
  if (!cfg.run_dir.empty()) return cfg.run_dir;
  const char* root = std::getenv("PMX_RUN_ROOT");
  return std::string(root ? root : "runs") + "/seed" + std::to_string(cfg.seed);
}

// ---------------------------------------------------------------------------
// dataset plumbing
// ---------------------------------------------------------------------------

namespace {

DatasetIndex load_split(const ExperimentConfig& cfg, const char* split) {
  if (cfg.dataset.root.empty())
    throw std::runtime_error("dataset: '" + cfg.dataset.kind + "' needs dataset.root");
  return load_dataset((fs::path(cfg.dataset.root) / split).string(),
                      layout_from_name(cfg.dataset.kind));
}

}  // namespace

DatasetIndex build_train_index(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == "synth") {
    Rng rng = make_rng(cfg.dataset.seed, rng_stream::kSynth);
    return synth_dataset(cfg.dataset.train, rng);
  }
  return load_split(cfg, "train");
}

DatasetIndex build_test_index(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == "synth") {
    Rng rng = make_rng(cfg.dataset.seed, rng_stream::kSynth);
    return synth_dataset(cfg.dataset.test, rng);
  }
  return load_split(cfg, "test");
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

using Json = nlohmann::ordered_json;

BatchBundles slice_bundles(const BatchBundles& b, int begin, int count) {
  BatchBundles out;
  out.global_feat = slice_rows(b.global_feat, begin, count);
  out.embedding = slice_rows(b.embedding, begin, count);
  out.global_logits = slice_rows(b.global_logits, begin, count);
  for (const auto& f : b.part_feats) out.part_feats.push_back(slice_rows(f, begin, count));
  for (const auto& l : b.part_logits) out.part_logits.push_back(slice_rows(l, begin, count));
  return out;
}

void write_step_line(std::ofstream& f, const StepRecord& rec) {
  Json j{{"type", "step"}, {"step", rec.step}, {"epoch", rec.epoch},
         {"lr", rec.lr},   {"mu", rec.mu},     {"losses", rec.losses}};
  f << j.dump() << "\n";
}

struct EmbeddingTable {
  std::vector<Tensor> embeddings;
  std::vector<int> labels;
  std::vector<int> cameras;
  std::vector<Modality> modalities;
};

EmbeddingTable extract_embeddings(Encoder& enc, const DatasetIndex& index) {
  EmbeddingTable out;
  const int h = enc.config().input_height, w = enc.config().input_width;
  constexpr size_t kChunk = 32;
  std::vector<ModalityImage> chunk;
  auto flush = [&] {
    if (chunk.empty()) return;
    for (auto& bundle : enc.forward(chunk)) out.embeddings.push_back(bundle.embedding);
    chunk.clear();
  };
  for (const auto& rec : index.records) {
    chunk.push_back(resize(rec.load(), h, w));
    out.labels.push_back(rec.identity);
    out.cameras.push_back(rec.camera);
    out.modalities.push_back(rec.modality);
    if (chunk.size() == kChunk) flush();
  }
  flush();
  return out;
}

}  // namespace

TrainResult train(const ExperimentConfig& config) {
  ExperimentConfig cfg = config;
  cfg.validate();

  DatasetIndex index = build_train_index(cfg);
  if (cfg.model.class_count == 0) cfg.model.class_count = index.identity_count;
  if (cfg.model.class_count != index.identity_count)
    throw std::runtime_error("train: model.class_count disagrees with the dataset (" +
                             std::to_string(cfg.model.class_count) + " vs " +
                             std::to_string(index.identity_count) + ")");
  cfg.model.validate();

  const std::string run_dir = resolve_run_dir(cfg);
  fs::create_directories(run_dir);
  {
    std::ofstream echo(run_dir + "/config.json");
    echo << config_to_json(cfg) << "\n";
  }
  std::ofstream metrics(run_dir + "/metrics.jsonl");
  if (!metrics) throw std::runtime_error("train: cannot write metrics log in " + run_dir);

  Rng init_rng = make_rng(cfg.seed, rng_stream::kInit);
  Rng sampler_rng = make_rng(cfg.seed, rng_stream::kSampler);
  Rng augment_rng = make_rng(cfg.seed, rng_stream::kAugment);
  Rng mix_rng = make_rng(cfg.seed, rng_stream::kMix);

  Encoder enc(cfg.model, init_rng);
  S2SProjector proj_g(cfg.model.feature_dim, init_rng);
  S2SProjector proj_p(cfg.model.feature_dim, init_rng);
  CenterBank bank(cfg.model.class_count, cfg.enable.parts ? cfg.model.part_count : 0,
                  cfg.model.feature_dim, cfg.bank);

  std::vector<Var> params = enc.parameters();
  for (const auto& p : proj_g.parameters()) params.push_back(p);
  for (const auto& p : proj_p.parameters()) params.push_back(p);
  nn::Sgd opt(cfg.optimizer.momentum, cfg.optimizer.weight_decay);

  const int batch_images = 2 * cfg.pk.batch_images_per_modality();
  const int steps_per_epoch =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : std::max<int>(1, (static_cast<int>(index.records.size()) + batch_images - 1) /
                                 batch_images);

  TrainResult result;
  result.run_dir = run_dir;
  result.config = cfg;

  const int half = cfg.pk.batch_images_per_modality();
  int global_step = 0;
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const real lr = lr_schedule(epoch, cfg.optimizer.base_lr, cfg.total_epochs);
    const real mu = mu_schedule(epoch, cfg.mu);

    for (int step = 0; step < steps_per_epoch; ++step) {
      Batch batch = sample_batch(index, cfg.pk, sampler_rng);
      for (auto& img : batch.rgb) img = augment(img, cfg.augment, augment_rng);
      for (auto& img : batch.ir) img = augment(img, cfg.augment, augment_rng);

      std::vector<ModalityImage> images;
      images.reserve(static_cast<size_t>(batch_images) + batch.rgb.size());
      images.insert(images.end(), batch.rgb.begin(), batch.rgb.end());
      images.insert(images.end(), batch.ir.begin(), batch.ir.end());
      if (cfg.enable.patchmix) {
        auto [rows, cols] = mix_grid_dims(cfg.mix, cfg.augment.target_height,
                                          cfg.augment.target_width);
        for (size_t i = 0; i < batch.rgb.size(); ++i) {
          MixMask mask = sample_mix_mask(cfg.mix, rows, cols, mix_rng);
          images.push_back(apply_patch_mix(batch.rgb[i], batch.ir[i], mask, cfg.mix));
        }
      }
      std::vector<const ModalityImage*> ptrs;
      for (const auto& img : images) ptrs.push_back(&img);

      std::vector<int> labels2(batch.labels);  // RGB half + IR half
      labels2.insert(labels2.end(), batch.labels.begin(), batch.labels.end());
      std::vector<int> labels_all(labels2);
      if (cfg.enable.patchmix)
        labels_all.insert(labels_all.end(), batch.labels.begin(), batch.labels.end());

      BatchBundles bundles = enc.forward_batch(ptrs, /*training=*/true);
      BatchBundles rgb_b = slice_bundles(bundles, 0, half);
      BatchBundles ir_b = slice_bundles(bundles, half, half);

      LossTerms terms;
      StepRecord rec;
      rec.step = global_step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.mu = mu;

      terms.id_g = id_loss(bundles.global_logits, labels_all);
      rec.losses["id_g"] = terms.id_g->value.item();

      Var both_feats = slice_rows(bundles.global_feat, 0, 2 * half);
      terms.tri = hard_triplet_loss(both_feats, labels2, cfg.losses.triplet_margin);
      rec.losses["tri"] = terms.tri->value.item();

      terms.s2s_g = s2s_loss(rgb_b.global_feat, ir_b.global_feat, proj_g);
      rec.losses["s2s_g"] = terms.s2s_g->value.item();

      if (cfg.enable.parts) {
        std::vector<Var> id_terms, s2s_terms;
        for (int k = 0; k < cfg.model.part_count; ++k) {
          id_terms.push_back(id_loss(bundles.part_logits[static_cast<size_t>(k)], labels_all));
          s2s_terms.push_back(s2s_loss(rgb_b.part_feats[static_cast<size_t>(k)],
                                       ir_b.part_feats[static_cast<size_t>(k)], proj_p));
        }
        const std::vector<real> inv_p(static_cast<size_t>(cfg.model.part_count),
                                      real(1) / cfg.model.part_count);
        terms.id_p = weighted_sum(id_terms, inv_p);
        terms.s2s_p = weighted_sum(s2s_terms, inv_p);
        rec.losses["id_p"] = terms.id_p->value.item();
        rec.losses["s2s_p"] = terms.s2s_p->value.item();

        if (cfg.enable.part_align) {
          Var g2 = slice_rows(bundles.global_logits, 0, 2 * half);
          std::vector<Var> parts2;
          for (const auto& p : bundles.part_logits) parts2.push_back(slice_rows(p, 0, 2 * half));
          terms.part_align = scale(part_align_loss(g2, parts2), cfg.part_align_weight);
          rec.losses["part_align"] = terms.part_align->value.item();
        }
      }

      if (cfg.enable.c2c) {
        std::vector<Modality> mods2(static_cast<size_t>(half), Modality::RGB);
        mods2.insert(mods2.end(), static_cast<size_t>(half), Modality::IR);
        std::vector<Var> part_feats2;
        for (int k = 0; k < bank.parts(); ++k)
          part_feats2.push_back(slice_rows(bundles.part_feats[static_cast<size_t>(k)], 0, 2 * half));
        bank.update(both_feats, part_feats2, labels2, mods2);
        auto c2c = bank.c2c_loss(epoch, mu, cfg.losses);
        terms.c2c = c2c.combined;
        rec.losses["c2c_g"] = c2c.global_value;
        if (bank.parts() > 0) rec.losses["c2c_p"] = c2c.part_value;
      }

      if (cfg.enable.patchmix && cfg.enable.pmml) {
        BatchBundles mix_b = slice_bundles(bundles, 2 * half, half);
        terms.pmml = scale(pmml_loss(rgb_b, ir_b, mix_b, cfg.losses.mix_ratio), cfg.pmml_weight);
        rec.losses["pmml"] = terms.pmml->value.item();
      }

      Var total = total_loss(terms, cfg.losses, mu);
      rec.losses["total"] = total->value.item();

      backward(total);
      opt.step(params, lr);
      nn::Sgd::zero_grad(params);
      bank.end_step();

      write_step_line(metrics, rec);
      result.log.steps.push_back(std::move(rec));
      ++global_step;
    }

    const bool last = epoch + 1 == cfg.total_epochs;
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && !last) {
      Checkpoint ckpt = snapshot_state(enc, proj_g, proj_p, bank, epoch);
      save_checkpoint(run_dir + "/checkpoint_epoch" + std::to_string(epoch) + ".pmx", ckpt);
    }
    if (cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      Checkpoint ckpt = snapshot_state(enc, proj_g, proj_p, bank, epoch);
      EvalOutput out = evaluate(ckpt, cfg);
      EvalSnapshot snap{epoch, cmc_at(out.result, 1), out.result.map};
      Json j{{"type", "eval"}, {"epoch", epoch}, {"rank1", snap.rank1}, {"map", snap.map}};
      metrics << j.dump() << "\n";
      result.log.evals.push_back(snap);
    }
  }

  Checkpoint final_ckpt = snapshot_state(enc, proj_g, proj_p, bank, cfg.total_epochs - 1);
  result.checkpoint_path = run_dir + "/checkpoint.pmx";
  save_checkpoint(result.checkpoint_path, final_ckpt);
  return result;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

EvalOutput evaluate(const Checkpoint& ckpt, const ExperimentConfig& config) {
  ExperimentConfig cfg = config;
  // The checkpoint's model is authoritative; a conflicting explicit config is
  // a version error.
  if (cfg.model.class_count != 0 && cfg.model.class_count != ckpt.model.class_count)
    throw std::runtime_error("evaluate: checkpoint/config class count mismatch");
  if (cfg.model.input_height != ckpt.model.input_height ||
      cfg.model.input_width != ckpt.model.input_width ||
      cfg.model.part_count != ckpt.model.part_count ||
      cfg.model.feature_dim != ckpt.model.feature_dim)
    throw std::runtime_error("evaluate: checkpoint/config model mismatch");
  cfg.model = ckpt.model;

  Rng init_rng = make_rng(cfg.seed, rng_stream::kInit);
  Encoder enc(cfg.model, init_rng);
  S2SProjector proj_g(cfg.model.feature_dim, init_rng);
  S2SProjector proj_p(cfg.model.feature_dim, init_rng);
  CenterBank bank(cfg.model.class_count, cfg.model.part_count, cfg.model.feature_dim);
  // Checkpoints written by runs without part centers carry a smaller bank.
  if (!ckpt.has("bank.centers") || ckpt.find("bank.centers").same_shape(bank.storage())) {
    restore_state(ckpt, enc, proj_g, proj_p, bank);
  } else {
    CenterBank slim(cfg.model.class_count, 0, cfg.model.feature_dim);
    restore_state(ckpt, enc, proj_g, proj_p, slim);
  }

  DatasetIndex test = build_test_index(cfg);
  EmbeddingTable table = extract_embeddings(enc, test);

  std::vector<TrialResult> trials;
  std::vector<int> gallery_size_check;
  for (int t = 0; t < cfg.eval.trials; ++t) {
    auto [queries, gallery] = build_eval_split(test, cfg.eval, t);
    std::vector<Tensor> gallery_embs;
    std::vector<int> gallery_labels;
    for (int g : gallery) {
      gallery_embs.push_back(table.embeddings[static_cast<size_t>(g)]);
      gallery_labels.push_back(table.labels[static_cast<size_t>(g)]);
    }
    std::vector<std::vector<int>> rankings;
    std::vector<int> query_labels;
    for (int q : queries) {
      rankings.push_back(rank_gallery(table.embeddings[static_cast<size_t>(q)], gallery_embs));
      query_labels.push_back(table.labels[static_cast<size_t>(q)]);
    }
    trials.push_back(cmc_map(rankings, query_labels, gallery_labels));
  }
  EvalOutput out;
  out.result = average_trials(trials);

  const std::string run_dir = resolve_run_dir(cfg);
  fs::create_directories(run_dir);
  out.report_path = run_dir + "/report.txt";
  out.table_path = run_dir + "/results.csv";
  out.histogram_path = run_dir + "/cosine_hist.csv";

  {
    std::ofstream rep(out.report_path);
    rep << "retrieval report\n";
    rep << "query " << modality_name(cfg.eval.query_modality) << " -> gallery "
        << modality_name(cfg.eval.gallery_modality)
        << (cfg.eval.shots == Shots::SINGLE ? ", single-shot" : ", multi-shot") << ", "
        << cfg.eval.trials << " trial(s)\n\n";
    char line[160];
    for (size_t t = 0; t < out.result.per_trial.size(); ++t) {
      const auto& tr = out.result.per_trial[t];
      EvalResult one;
      one.cmc = tr.cmc;
      std::snprintf(line, sizeof(line),
                    "trial %2zu  rank1 %.4f  rank10 %.4f  rank20 %.4f  mAP %.4f  skipped %d\n", t,
                    cmc_at(one, 1), cmc_at(one, 10), cmc_at(one, 20), tr.map, tr.skipped_queries);
      rep << line;
    }
    std::snprintf(line, sizeof(line),
                  "\naverage   rank1 %.4f  rank10 %.4f  rank20 %.4f  mAP %.4f\n",
                  cmc_at(out.result, 1), cmc_at(out.result, 10), cmc_at(out.result, 20),
                  out.result.map);
    rep << line;
  }
  {
    std::ofstream csv(out.table_path);
    csv << "trial,rank1,rank10,rank20,map,skipped\n";
    for (size_t t = 0; t < out.result.per_trial.size(); ++t) {
      const auto& tr = out.result.per_trial[t];
      EvalResult one;
      one.cmc = tr.cmc;
      csv << t << "," << cmc_at(one, 1) << "," << cmc_at(one, 10) << "," << cmc_at(one, 20) << ","
          << tr.map << "," << tr.skipped_queries << "\n";
    }
    csv << "avg," << cmc_at(out.result, 1) << "," << cmc_at(out.result, 10) << ","
        << cmc_at(out.result, 20) << "," << out.result.map << ","
        << out.result.mean_skipped_queries << "\n";
  }
  {
    CosineDistribution dist =
        cosine_distribution(table.embeddings, table.labels, table.modalities);
    std::ofstream csv(out.histogram_path);
    csv << "bin_low,bin_high,inter_positive,intra_negative\n";
    for (size_t b = 0; b < dist.positive_hist.size(); ++b) {
      const real lo = -1 + 2.0 * static_cast<real>(b) / dist.positive_hist.size();
      const real hi = -1 + 2.0 * static_cast<real>(b + 1) / dist.positive_hist.size();
      csv << lo << "," << hi << "," << dist.positive_hist[b] << "," << dist.negative_hist[b]
          << "\n";
    }
  }
  return out;
}

EvalOutput evaluate(const std::string& checkpoint_path, const ExperimentConfig& cfg) {
  return evaluate(load_checkpoint(checkpoint_path), cfg);
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

namespace {

std::string sanitize(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return s;
}

}  // namespace

std::vector<SweepRow> sweep(const std::string& param, const std::vector<std::string>& values,
                            const ExperimentConfig& base) {
  if (values.empty()) throw std::invalid_argument("sweep: no values");
  const std::string base_dir = resolve_run_dir(base);
  fs::create_directories(base_dir);

  std::vector<SweepRow> rows;
  for (const auto& value : values) {
    ExperimentConfig cfg = base;
    apply_override(cfg, param + "=" + value);  // unknown paths throw here
    cfg.run_dir = base_dir + "/" + sanitize(param) + "_" + sanitize(value);
    TrainResult trained = train(cfg);
    EvalOutput eval_out = evaluate(trained.checkpoint_path, trained.config);
    rows.push_back({value, cmc_at(eval_out.result, 1), cmc_at(eval_out.result, 10),
                    eval_out.result.map});
  }

  std::ofstream csv(base_dir + "/sweep_" + sanitize(param) + ".csv");
  csv << param << ",rank1,rank10,map\n";
  for (const auto& row : rows)
    csv << row.value << "," << row.rank1 << "," << row.rank10 << "," << row.map << "\n";
  return rows;
}

}  // namespace pmx
