#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hcl/augment.hpp"
#include "hcl/contrast.hpp"
#include "hcl/data.hpp"
#include "hcl/pca.hpp"
#include "hcl/rng.hpp"

// Offline analysis protocols: frozen-encoder instance-discrimination testing
// over a rolling gallery, IoU-binned retrieval accuracy, and the PCA
// dimensionality sweep.
namespace hcl::eval {

// Per-branch embedding as produced by an encoder; either branch may be empty
// (for example a semantic-only encoder has no spatial part).
struct BranchEmbedding {
  Eigen::VectorXd semantic;
  Eigen::VectorXd spatial;
};

struct ViewSample {
  std::int64_t id = 0;
  Image<float> view;
  augment::ViewRect rect;
};

using Encoder = std::function<BranchEmbedding(const ViewSample&)>;

// How query/key embeddings are assembled for scoring: which branches
// participate and the per-branch PCA target (0 = leave the branch raw).
struct ScoringSpec {
  bool use_semantic = true;
  bool use_spatial = true;
  int sem_dim = 0;
  int spa_dim = 0;
  bool renormalize = true;

  bool needs_fit() const {
    return (use_semantic && sem_dim > 0) || (use_spatial && spa_dim > 0);
  }
};

struct ProtocolConfig {
  Index gallery_capacity = 512;
  augment::AugConfig aug;
  std::uint64_t seed = 0;
  int passes = 1;  // shuffled passes over the dataset
};

struct QueryTraceRow {
  std::int64_t id = 0;
  double iou = 0.0;
  bool hit = false;
};

struct ContrastiveTestResult {
  long total = 0;
  long hits = 0;
  double accuracy = 0.0;
};

// 's' = query scored, 'e' = key enqueued
using ProtocolObserver = std::function<void(char event, std::int64_t id)>;

namespace detail {

struct BranchProjectors {
  std::optional<PCAProjector> semantic;
  std::optional<PCAProjector> spatial;
};

inline Eigen::VectorXd scoring_embedding(const BranchEmbedding& emb, const ScoringSpec& spec,
                                         const BranchProjectors& proj) {
  std::vector<Eigen::VectorXd> parts;
  if (spec.use_semantic && emb.semantic.size() > 0) {
    parts.push_back(proj.semantic ? project(*proj.semantic, emb.semantic, spec.renormalize)
                                  : emb.semantic);
  }
  if (spec.use_spatial && emb.spatial.size() > 0) {
    parts.push_back(proj.spatial ? project(*proj.spatial, emb.spatial, spec.renormalize)
                                 : emb.spatial);
  }
  if (parts.empty()) throw ShapeError("scoring_embedding: no branches available for scoring");
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.size();
  Eigen::VectorXd out(total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

inline ViewSample draw_view(const data::ImageRecord& rec, const augment::AugConfig& aug,
                            std::uint64_t seed, std::uint64_t pass, std::uint64_t view_tag) {
  Rng rng = derive_rng(seed, {stream::kEval, pass, std::uint64_t(rec.id), view_tag});
  ViewSample s;
  s.id = rec.id;
  s.rect = augment::sample_view(rng, rec.pixels.height, rec.pixels.width, aug);
  s.view = augment::apply_view(rec.pixels, s.rect, aug, rng);
  return s;
}

}  // namespace detail

// Frozen-encoder retrieval over a rolling FIFO gallery. Per image: draw two
// views, embed both, score the query against {positive} u gallery by inner
// product, then enqueue the positive key. The gallery starts empty, so a
// query never competes against a stale key of its own image within a pass.
// Ties go against the positive. When `spec` asks for PCA, the projections
// are fitted per branch on an initial gallery fill (key embeddings of the
// first min(capacity, n) records of a dedicated shuffled pass) and the
// gallery is reset before scoring begins.
inline ContrastiveTestResult contrastive_test(const Encoder& encoder,
                                              const data::Dataset& dataset,
                                              const ProtocolConfig& cfg, const ScoringSpec& spec,
                                              std::vector<QueryTraceRow>* trace = nullptr,
                                              const ProtocolObserver& observer = {}) {
  if (cfg.gallery_capacity < 1)
    throw ShapeError("contrastive_test: gallery capacity must be >= 1");
  if (dataset.records.empty()) throw ShapeError("contrastive_test: empty dataset");
  augment::validate_aug_config(cfg.aug);
  const Index n = Index(dataset.records.size());

  detail::BranchProjectors projectors;
  if (spec.needs_fit()) {
    const Index fill = std::min(cfg.gallery_capacity, n);
    const auto order = data::epoch_batches(n, n, mix_seed(cfg.seed, 0xF177), 0)[0];
    std::vector<Eigen::VectorXd> sem_rows, spa_rows;
    for (Index i = 0; i < fill; ++i) {
      const auto& rec = dataset.records[std::size_t(order[std::size_t(i)])];
      auto key = detail::draw_view(rec, cfg.aug, cfg.seed, 0xF177, 2);
      auto emb = encoder(key);
      if (spec.use_semantic && spec.sem_dim > 0) sem_rows.push_back(emb.semantic);
      if (spec.use_spatial && spec.spa_dim > 0) spa_rows.push_back(emb.spatial);
    }
    auto fit_rows = [](const std::vector<Eigen::VectorXd>& rows, int d_out) {
      Eigen::MatrixXd m(Eigen::Index(rows.size()), rows.front().size());
      for (std::size_t r = 0; r < rows.size(); ++r) m.row(Eigen::Index(r)) = rows[r].transpose();
      return fit_pca(m, d_out);
    };
    if (!sem_rows.empty()) projectors.semantic = fit_rows(sem_rows, spec.sem_dim);
    if (!spa_rows.empty()) projectors.spatial = fit_rows(spa_rows, spec.spa_dim);
  }

  ContrastiveTestResult res;
  std::optional<contrast::MemoryQueue<double>> gallery;
  for (int pass = 0; pass < cfg.passes; ++pass) {
    const auto order = data::epoch_batches(n, n, mix_seed(cfg.seed, 0x5C04E), Index(pass))[0];
    for (Index idx : order) {
      const auto& rec = dataset.records[std::size_t(idx)];
      auto query_view = detail::draw_view(rec, cfg.aug, cfg.seed, std::uint64_t(pass), 1);
      auto key_view = detail::draw_view(rec, cfg.aug, cfg.seed, std::uint64_t(pass), 2);
      const Eigen::VectorXd q = detail::scoring_embedding(encoder(query_view), spec, projectors);
      const Eigen::VectorXd k = detail::scoring_embedding(encoder(key_view), spec, projectors);
      if (!gallery) gallery.emplace(cfg.gallery_capacity, q.size());

      const double s_pos = q.dot(k);
      double s_max = -std::numeric_limits<double>::infinity();
      for (Index i = 0; i < gallery->filled(); ++i)
        s_max = std::max(s_max, q.dot(gallery->row_by_age(i)));
      const bool hit = s_pos > s_max;  // the positive loses ties

      if (observer) observer('s', rec.id);
      if (trace) trace->push_back({rec.id, augment::view_iou(query_view.rect, key_view.rect), hit});
      res.hits += hit;
      res.total += 1;

      gallery->push(k);
      if (observer) observer('e', rec.id);
    }
  }
  res.accuracy = res.total > 0 ? double(res.hits) / double(res.total) : 0.0;
  return res;
}

struct IoUBinReport {
  std::vector<double> bin_edges;  // B+1 edges spanning [0,1]
  std::vector<long> counts;
  std::vector<double> accuracy;  // per bin; 0 when the bin is empty
  long total = 0;
  double overall_accuracy = 0.0;
};

// Crop-only contrastive testing with per-query view IoU recorded and
// aggregated into equal-width bins.
inline IoUBinReport iou_binned_accuracy(const Encoder& encoder, const data::Dataset& dataset,
                                        const ProtocolConfig& cfg, int bins,
                                        const ScoringSpec& spec = {}) {
  if (bins < 2) throw ShapeError("iou_binned_accuracy: need at least 2 bins");
  ProtocolConfig crop_cfg = cfg;
  crop_cfg.aug = cfg.aug.crop_only();

  std::vector<QueryTraceRow> trace;
  const auto res = contrastive_test(encoder, dataset, crop_cfg, spec, &trace);

  IoUBinReport rep;
  rep.bin_edges.resize(std::size_t(bins) + 1);
  for (int b = 0; b <= bins; ++b) rep.bin_edges[std::size_t(b)] = double(b) / bins;
  rep.counts.assign(std::size_t(bins), 0);
  std::vector<long> hits(std::size_t(bins), 0);
  for (const auto& row : trace) {
    const int b = std::min(bins - 1, int(row.iou * bins));
    ++rep.counts[std::size_t(b)];
    hits[std::size_t(b)] += row.hit;
  }
  rep.accuracy.resize(std::size_t(bins));
  for (int b = 0; b < bins; ++b)
    rep.accuracy[std::size_t(b)] =
        rep.counts[std::size_t(b)] > 0 ? double(hits[std::size_t(b)]) / rep.counts[std::size_t(b)]
                                       : 0.0;
  rep.total = res.total;
  rep.overall_accuracy = res.accuracy;
  return rep;
}

enum class SweepMode { SemanticOnly, HclHalfHalf };

inline std::string sweep_mode_name(SweepMode m) {
  return m == SweepMode::SemanticOnly ? "semantic-only" : "hcl-half-half";
}

struct DimSweepRow {
  int total_dim = 0;
  int sem_dim = 0;
  int spa_dim = 0;
  double accuracy = 0.0;
};

struct DimSweepReport {
  std::string mode;
  std::vector<DimSweepRow> rows;
};

// Accuracy under PCA compression to each target dimensionality. In half-half
// mode each branch contributes half of the feature length.
inline DimSweepReport dim_sweep(const Encoder& encoder, const data::Dataset& dataset,
                                const ProtocolConfig& cfg, const std::vector<int>& dims,
                                SweepMode mode, bool renormalize = true) {
  DimSweepReport rep;
  rep.mode = sweep_mode_name(mode);
  for (int dim : dims) {
    if (dim < 1) throw ShapeError("dim_sweep: dims must be >= 1");
    ScoringSpec spec;
    spec.renormalize = renormalize;
    if (mode == SweepMode::SemanticOnly) {
      spec.use_spatial = false;
      spec.sem_dim = dim;
    } else {
      if (dim % 2 != 0)
        throw ShapeError("dim_sweep: dim " + std::to_string(dim) +
                         " is odd; half-half mode needs even dims");
      spec.sem_dim = dim / 2;
      spec.spa_dim = dim / 2;
    }
    const auto res = contrastive_test(encoder, dataset, cfg, spec);
    rep.rows.push_back({dim, spec.sem_dim, spec.spa_dim, res.accuracy});
  }
  return rep;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman_rank_correlation(const std::vector<double>& x,
                                        const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ShapeError("spearman: need two equally sized samples of length >= 2");
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (double(i) + double(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= double(n);
  my /= double(n);
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace hcl::eval
