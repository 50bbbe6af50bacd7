#include "pmx/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace pmx {

real cosine_similarity(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("cosine_similarity: shape mismatch");
  real dot = 0, na = 0, nb = 0;
  for (long long i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0)
    throw std::runtime_error("cosine_similarity: zero-norm embedding");
  const real sim = dot / (std::sqrt(na) * std::sqrt(nb));
  if (!std::isfinite(sim)) throw std::runtime_error("cosine_similarity: non-finite value");
  return sim;
}

std::pair<std::vector<int>, std::vector<int>> build_eval_split(const DatasetIndex& index,
                                                               const EvalProtocol& proto,
                                                               int trial) {
  proto.validate();
  std::vector<int> queries;
  std::map<std::pair<int, int>, std::vector<int>> gallery_groups;  // (identity, camera)
  for (size_t i = 0; i < index.records.size(); ++i) {
    const auto& r = index.records[i];
    if (r.modality == proto.query_modality) queries.push_back(static_cast<int>(i));
    if (r.modality == proto.gallery_modality && proto.camera_allowed(r.camera))
      gallery_groups[{r.identity, r.camera}].push_back(static_cast<int>(i));
  }
  if (queries.empty()) throw std::runtime_error("build_eval_split: no query images");
  if (gallery_groups.empty()) throw std::runtime_error("build_eval_split: empty gallery");

  Rng rng = make_rng(mix_seed(proto.seed, static_cast<std::uint64_t>(trial)), rng_stream::kEval);
  const int want = proto.shots == Shots::SINGLE ? 1 : proto.multi_shot_n;
  std::vector<int> gallery;
  for (auto& [key, pool] : gallery_groups) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const int take = std::min<int>(want, static_cast<int>(pool.size()));
    gallery.insert(gallery.end(), pool.begin(), pool.begin() + take);
  }
  std::sort(gallery.begin(), gallery.end());  // stable gallery order across trials
  return {queries, gallery};
}

std::vector<int> rank_gallery(const Tensor& query_embedding,
                              const std::vector<Tensor>& gallery_embeddings) {
  std::vector<real> sims(gallery_embeddings.size());
  for (size_t i = 0; i < gallery_embeddings.size(); ++i)
    sims[i] = cosine_similarity(query_embedding, gallery_embeddings[i]);
  std::vector<int> order(gallery_embeddings.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&sims](int a, int b) { return sims[static_cast<size_t>(a)] > sims[static_cast<size_t>(b)]; });
  return order;
}

TrialResult cmc_map(const std::vector<std::vector<int>>& rankings,
                    const std::vector<int>& query_labels,
                    const std::vector<int>& gallery_labels) {
  if (rankings.size() != query_labels.size())
    throw std::invalid_argument("cmc_map: ranking/label count mismatch");
  const size_t depth = gallery_labels.size();

  TrialResult out;
  out.cmc.assign(depth, 0);
  real ap_sum = 0;
  int evaluated = 0;

  for (size_t q = 0; q < rankings.size(); ++q) {
    const auto& order = rankings[q];
    if (order.size() != depth) throw std::invalid_argument("cmc_map: ranking depth mismatch");
    const int label = query_labels[q];

    int first_hit = -1;
    int correct_so_far = 0;
    real ap = 0;
    for (size_t pos = 0; pos < depth; ++pos) {
      if (gallery_labels[static_cast<size_t>(order[pos])] == label) {
        if (first_hit < 0) first_hit = static_cast<int>(pos);
        ++correct_so_far;
        ap += static_cast<real>(correct_so_far) / static_cast<real>(pos + 1);
      }
    }
    if (correct_so_far == 0) {
      ++out.skipped_queries;  // no valid match anywhere in this gallery
      continue;
    }
    ++evaluated;
    ap_sum += ap / correct_so_far;
    for (size_t r = static_cast<size_t>(first_hit); r < depth; ++r) out.cmc[r] += 1;
  }

  if (evaluated > 0) {
    for (auto& v : out.cmc) v /= evaluated;
    out.map = ap_sum / evaluated;
  }
  return out;
}

EvalResult average_trials(const std::vector<TrialResult>& trials) {
  if (trials.empty()) throw std::invalid_argument("average_trials: no trials");
  const size_t depth = trials[0].cmc.size();
  for (const auto& t : trials)
    if (t.cmc.size() != depth)
      throw std::invalid_argument("average_trials: CMC length mismatch between trials");

  // Anchored mean: exact when every trial agrees (degenerate sampling).
  const real n = static_cast<real>(trials.size());
  auto mean_of = [n](auto&& get) {
    real base = get(0), delta = 0;
    for (size_t t = 1; t < static_cast<size_t>(n); ++t) delta += get(t) - base;
    return base + delta / n;
  };

  EvalResult out;
  out.cmc.assign(depth, 0);
  for (size_t r = 0; r < depth; ++r)
    out.cmc[r] = mean_of([&](size_t t) { return trials[t].cmc[r]; });
  out.map = mean_of([&](size_t t) { return trials[t].map; });
  out.mean_skipped_queries =
      mean_of([&](size_t t) { return static_cast<real>(trials[t].skipped_queries); });
  out.per_trial = trials;
  return out;
}

CosineDistribution cosine_distribution(const std::vector<Tensor>& embeddings,
                                       const std::vector<int>& labels,
                                       const std::vector<Modality>& modalities) {
  if (embeddings.size() != labels.size() || embeddings.size() != modalities.size())
    throw std::invalid_argument("cosine_distribution: input size mismatch");

  CosineDistribution out;
  for (size_t i = 0; i < embeddings.size(); ++i) {
    for (size_t j = i + 1; j < embeddings.size(); ++j) {
      const bool same_id = labels[i] == labels[j];
      const bool same_mod = modalities[i] == modalities[j];
      if (same_id && !same_mod)
        out.positive.push_back(cosine_similarity(embeddings[i], embeddings[j]));
      else if (!same_id && same_mod)
        out.negative.push_back(cosine_similarity(embeddings[i], embeddings[j]));
    }
  }

  constexpr int kBins = 51;
  auto histogram = [](const std::vector<real>& values) {
    std::vector<int> hist(kBins, 0);
    for (real v : values) {
      int bin = static_cast<int>((v + 1) / 2 * kBins);
      bin = std::min(std::max(bin, 0), kBins - 1);
      hist[static_cast<size_t>(bin)]++;
    }
    return hist;
  };
  out.positive_hist = histogram(out.positive);
  out.negative_hist = histogram(out.negative);
  return out;
}

}  // namespace pmx
