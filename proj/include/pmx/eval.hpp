#pragma once

#include "pmx/data.hpp"

namespace pmx {

enum class Shots { SINGLE, MULTI };

struct EvalProtocol {
  Modality query_modality = Modality::IR;
  Modality gallery_modality = Modality::RGB;
  Shots shots = Shots::SINGLE;
  int multi_shot_n = 10;
  std::vector<int> gallery_cameras;  // empty = every camera
  int trials = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (query_modality == gallery_modality)
      throw std::invalid_argument("EvalProtocol: query and gallery modality must differ");
    if (trials < 1) throw std::invalid_argument("EvalProtocol: trials must be >= 1");
    if (shots == Shots::MULTI && multi_shot_n < 1)
      throw std::invalid_argument("EvalProtocol: multi_shot_n must be >= 1");
  }
  bool camera_allowed(int cam) const {
    if (gallery_cameras.empty()) return true;
    return std::find(gallery_cameras.begin(), gallery_cameras.end(), cam) !=
           gallery_cameras.end();
  }
};

struct TrialResult {
  std::vector<real> cmc;  // cmc[r] = fraction of queries matched within rank r+1
  real map = 0;
  int skipped_queries = 0;  // queries with no same-identity gallery item
};

struct EvalResult {
  std::vector<real> cmc;
  real map = 0;
  real mean_skipped_queries = 0;
  std::vector<TrialResult> per_trial;
};

// Query and gallery record indices into the dataset for one trial. The query
// side takes every image of the query modality; the gallery draws one
// (SINGLE) or up to n (MULTI) images per (identity, camera) with the
// trial-specific seed, restricted to the allowed cameras.
std::pair<std::vector<int>, std::vector<int>> build_eval_split(const DatasetIndex& index,
                                                               const EvalProtocol& proto,
                                                               int trial);

// Gallery indices in descending cosine similarity; ties keep original order.
std::vector<int> rank_gallery(const Tensor& query_embedding,
                              const std::vector<Tensor>& gallery_embeddings);

// rankings[q] is the gallery ordering for query q (as produced by
// rank_gallery). Queries without any same-identity gallery item are skipped
// and counted.
TrialResult cmc_map(const std::vector<std::vector<int>>& rankings,
                    const std::vector<int>& query_labels,
                    const std::vector<int>& gallery_labels);

EvalResult average_trials(const std::vector<TrialResult>& trials);

// Fig. 7-style pair populations: cosine similarities of inter-modality
// positive pairs and intra-modality negative pairs, with fixed 51-bin
// histograms over [-1,1].
struct CosineDistribution {
  std::vector<real> positive;  // inter-modality, same identity
  std::vector<real> negative;  // intra-modality, different identity
  std::vector<int> positive_hist;  // 51 bins
  std::vector<int> negative_hist;
};

CosineDistribution cosine_distribution(const std::vector<Tensor>& embeddings,
                                       const std::vector<int>& labels,
                                       const std::vector<Modality>& modalities);

real cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace pmx
