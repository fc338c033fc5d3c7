#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hcl/ops.hpp"
#include "hcl/rng.hpp"
#include "hcl/tape.hpp"
#include "hcl/tensor.hpp"

namespace hcl::models {

struct BackboneConfig {
  int input_size = 64;
  std::array<int, 4> stage_channels{16, 32, 64, 128};  // C2..C5
  std::array<int, 4> blocks_per_stage{1, 1, 1, 1};
  int group_norm_groups = 4;
};

struct HeadConfig {
  int d_sem = 64;       // semantic embedding length
  int hidden_sem = 128; // MLP hidden width
  int fpn_channels = 32;
  int spatial_res = 8;  // final map side R; embedding length R^2
};

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
  double gn_eps = 1e-5;
  double embed_eps = 1e-12;

  int stage_resolution(int stage) const {  // stage 0..3 -> C2..C5
    return backbone.input_size >> (2 + stage);
  }
  int concat_dim() const { return head.d_sem + head.spatial_res * head.spatial_res; }
};

inline void validate_model_config(const ModelConfig& cfg) {
  const auto& b = cfg.backbone;
  if (b.input_size < 32 || b.input_size % 32 != 0)
    throw ShapeError("model config: input_size must be a positive multiple of 32");
  for (int s = 0; s < 4; ++s) {
    if (b.stage_channels[s] < 1 || b.blocks_per_stage[s] < 1)
      throw ShapeError("model config: stage channels and block counts must be >= 1");
    if (b.stage_channels[s] % b.group_norm_groups != 0)
      throw ShapeError("model config: stage channels must be divisible by group_norm_groups");
  }
  const int R = cfg.head.spatial_res;
  auto pow2_ratio = [](int a, int c) {
    const int lo = std::min(a, c), hi = std::max(a, c);
    return hi % lo == 0 && (hi / lo & (hi / lo - 1)) == 0;
  };
  for (int s = 0; s < 4; ++s) {
    const int r = cfg.stage_resolution(s);
    if (r < 1) throw ShapeError("model config: input_size too small for four stages");
    if (R < 1 || !pow2_ratio(r, R))
      throw ShapeError("model config: spatial_res must relate to every stage resolution by a power of two");
  }
  if (cfg.head.d_sem < 1 || cfg.head.hidden_sem < 1 || cfg.head.fpn_channels < 1)
    throw ShapeError("model config: head widths must be >= 1");
}

// Ordered, name-addressed collection of parameter tensors. Iteration order is
// registration order, which keeps optimizer updates and serialization
// deterministic.
template <class S>
class ParamSet {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (index_.count(name)) throw ShapeError("ParamSet: duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("ParamSet: missing parameter " + name);
    return items_[it->second].second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("ParamSet: missing parameter " + name);
    return items_[it->second].second;
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Tensor<S>>>& items() const { return items_; }

  void zero_grads() const {
    for (const auto& [name, t] : items_) t.zero_grad();
  }

  ParamSet clone_values(bool requires_grad) const {
    ParamSet out;
    for (const auto& [name, t] : items_) out.add(name, t.detached_copy(requires_grad));
    return out;
  }

  // FNV-1a over names, shapes and raw value bytes
  std::uint64_t value_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [name, t] : items_) {
      feed(name.data(), name.size());
      for (Index d : t.shape()) feed(&d, sizeof d);
      feed(t.data(), sizeof(S) * static_cast<std::size_t>(t.numel()));
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> items_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

template <class S>
Tensor<S> he_weight(Shape shape, Index fan_in, Rng& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  const double std_dev = std::sqrt(2.0 / double(fan_in));
  for (Index i = 0; i < t.numel(); ++i) t.values()[i] = S(rng.normal() * std_dev);
  return t;
}

template <class S>
void add_conv(ParamSet<S>& ps, const std::string& name, int co, int ci, int k, Rng& rng,
              bool bias) {
  ps.add(name + ".w", he_weight<S>({co, ci, k, k}, Index(ci) * k * k, rng));
  if (bias) ps.add(name + ".b", Tensor<S>::zeros({co}));
}

template <class S>
void add_norm(ParamSet<S>& ps, const std::string& name, int channels) {
  ps.add(name + ".gamma", Tensor<S>::full({channels}, S(1)));
  ps.add(name + ".beta", Tensor<S>::zeros({channels}));
}

template <class S>
void add_linear(ParamSet<S>& ps, const std::string& name, int m, int n, Rng& rng) {
  ps.add(name + ".w", he_weight<S>({m, n}, n, rng));
  ps.add(name + ".b", Tensor<S>::zeros({m}));
}

}  // namespace detail

// Creates backbone + semantic-head parameters in canonical order.
template <class S>
ParamSet<S> init_backbone_g1_params(const ModelConfig& cfg, Rng& rng) {
  validate_model_config(cfg);
  ParamSet<S> ps;
  const auto& b = cfg.backbone;
  detail::add_conv(ps, "backbone.stem.conv1", b.stage_channels[0], 3, 3, rng, false);
  detail::add_norm(ps, "backbone.stem.norm1", b.stage_channels[0]);
  detail::add_conv(ps, "backbone.stem.conv2", b.stage_channels[0], b.stage_channels[0], 3, rng,
                   false);
  detail::add_norm(ps, "backbone.stem.norm2", b.stage_channels[0]);
  int in_ch = b.stage_channels[0];
  for (int s = 0; s < 4; ++s) {
    const int out_ch = b.stage_channels[s];
    for (int blk = 0; blk < b.blocks_per_stage[s]; ++blk) {
      const std::string base = "backbone.stage" + std::to_string(s) + ".block" +
                               std::to_string(blk);
      const int stride = (blk == 0 && s > 0) ? 2 : 1;
      detail::add_conv(ps, base + ".conv1", out_ch, in_ch, 3, rng, false);
      detail::add_norm(ps, base + ".norm1", out_ch);
      detail::add_conv(ps, base + ".conv2", out_ch, out_ch, 3, rng, false);
      detail::add_norm(ps, base + ".norm2", out_ch);
      if (stride != 1 || in_ch != out_ch) {
        detail::add_conv(ps, base + ".proj", out_ch, in_ch, 1, rng, false);
        detail::add_norm(ps, base + ".projnorm", out_ch);
      }
      in_ch = out_ch;
    }
  }
  detail::add_linear(ps, "g1.fc1", cfg.head.hidden_sem, b.stage_channels[3], rng);
  detail::add_linear(ps, "g1.fc2", cfg.head.d_sem, cfg.head.hidden_sem, rng);
  return ps;
}

template <class S>
void add_g2_params(ParamSet<S>& ps, const ModelConfig& cfg, Rng& rng) {
  const auto& b = cfg.backbone;
  for (int s = 0; s < 4; ++s)
    detail::add_conv(ps, "g2.lateral" + std::to_string(s + 2), cfg.head.fpn_channels,
                     b.stage_channels[s], 1, rng, true);
  detail::add_conv(ps, "g2.reduce", 1, cfg.head.fpn_channels, 1, rng, true);
}

template <class S>
struct StageFeatures {
  Tensor<S> c2, c3, c4, c5;
};

namespace detail {

template <class S>
struct Conv {
  Tensor<S> w;
  Tensor<S> b;  // may be undefined
  int stride = 1;
  int pad = 0;
  ops::PadMode mode = ops::PadMode::Zero;

  Tensor<S> operator()(Tape<S>& t, const Tensor<S>& x) const {
    return ops::conv2d(t, x, w, b, stride, pad, mode);
  }
};

template <class S>
struct Norm {
  Tensor<S> gamma, beta;
  int groups = 1;
  S eps{};

  Tensor<S> operator()(Tape<S>& t, const Tensor<S>& x) const {
    return ops::group_norm(t, x, groups, gamma, beta, eps);
  }
};

template <class S>
Tensor<S> expect_shape(ParamSet<S>& ps, const std::string& name, const Shape& shape) {
  if (!ps.contains(name)) throw ShapeError("model binding: missing tensor '" + name + "'");
  Tensor<S>& t = ps.at(name);
  if (t.shape() != shape)
    throw ShapeError("model binding: tensor '" + name + "' has shape " + shape_str(t.shape()) +
                     ", expected " + shape_str(shape));
  return t;
}

template <class S>
Conv<S> bind_conv(ParamSet<S>& ps, const std::string& name, int co, int ci, int k, int stride,
                  int pad, ops::PadMode mode, bool bias) {
  Conv<S> c;
  c.w = expect_shape(ps, name + ".w", {co, ci, k, k});
  if (bias) c.b = expect_shape(ps, name + ".b", {co});
  c.stride = stride;
  c.pad = pad;
  c.mode = mode;
  return c;
}

template <class S>
Norm<S> bind_norm(ParamSet<S>& ps, const std::string& name, int channels, int groups, S eps) {
  Norm<S> n;
  n.gamma = expect_shape(ps, name + ".gamma", {channels});
  n.beta = expect_shape(ps, name + ".beta", {channels});
  n.groups = groups;
  n.eps = eps;
  return n;
}

template <class S>
struct ResidualBlock {
  Conv<S> conv1, conv2;
  Norm<S> norm1, norm2;
  std::optional<Conv<S>> proj;
  std::optional<Norm<S>> projnorm;

  Tensor<S> operator()(Tape<S>& t, const Tensor<S>& x) const {
    auto h = ops::relu(t, norm1(t, conv1(t, x)));
    h = norm2(t, conv2(t, h));
    Tensor<S> skip = proj ? (*projnorm)(t, (*proj)(t, x)) : x;
    return ops::relu(t, ops::add(t, h, skip));
  }
};

}  // namespace detail

// Stage extractor f(.;theta): stem downsampling by 4, then four residual
// stages giving C2..C5 at input/4 .. input/32. All 3x3 convolutions use
// edge-replicate padding so spatially constant inputs stay constant.
template <class S>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const ModelConfig& cfg, ParamSet<S>& ps) : cfg_(cfg) {
    const auto& b = cfg.backbone;
    const int g = b.group_norm_groups;
    const S eps = S(cfg.gn_eps);
    const auto rep = ops::PadMode::Replicate;
    stem_conv1_ = detail::bind_conv(ps, "backbone.stem.conv1", b.stage_channels[0], 3, 3, 2, 1,
                                    rep, false);
    stem_norm1_ = detail::bind_norm(ps, "backbone.stem.norm1", b.stage_channels[0], g, eps);
    stem_conv2_ = detail::bind_conv(ps, "backbone.stem.conv2", b.stage_channels[0],
                                    b.stage_channels[0], 3, 2, 1, rep, false);
    stem_norm2_ = detail::bind_norm(ps, "backbone.stem.norm2", b.stage_channels[0], g, eps);
    int in_ch = b.stage_channels[0];
    for (int s = 0; s < 4; ++s) {
      const int out_ch = b.stage_channels[s];
      std::vector<detail::ResidualBlock<S>> blocks;
      for (int blk = 0; blk < b.blocks_per_stage[s]; ++blk) {
        const std::string base = "backbone.stage" + std::to_string(s) + ".block" +
                                 std::to_string(blk);
        const int stride = (blk == 0 && s > 0) ? 2 : 1;
        detail::ResidualBlock<S> rb;
        rb.conv1 = detail::bind_conv(ps, base + ".conv1", out_ch, in_ch, 3, stride, 1, rep, false);
        rb.norm1 = detail::bind_norm(ps, base + ".norm1", out_ch, g, eps);
        rb.conv2 = detail::bind_conv(ps, base + ".conv2", out_ch, out_ch, 3, 1, 1, rep, false);
        rb.norm2 = detail::bind_norm(ps, base + ".norm2", out_ch, g, eps);
        if (stride != 1 || in_ch != out_ch) {
          rb.proj = detail::bind_conv(ps, base + ".proj", out_ch, in_ch, 1, stride, 0, rep, false);
          rb.projnorm = detail::bind_norm(ps, base + ".projnorm", out_ch, g, eps);
        }
        blocks.push_back(std::move(rb));
        in_ch = out_ch;
      }
      stages_.push_back(std::move(blocks));
    }
  }

  StageFeatures<S> forward(Tape<S>& t, const Tensor<S>& image) const {
    const int sz = cfg_.backbone.input_size;
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != sz || image.dim(2) != sz)
      throw ShapeError("backbone: expected image of shape [3," + std::to_string(sz) + "," +
                       std::to_string(sz) + "], got " + shape_str(image.shape()));
    ++forward_count_;
    auto h = ops::relu(t, stem_norm1_(t, stem_conv1_(t, image)));
    h = ops::relu(t, stem_norm2_(t, stem_conv2_(t, h)));
    StageFeatures<S> f;
    for (int s = 0; s < 4; ++s) {
      for (const auto& blk : stages_[s]) h = blk(t, h);
      (s == 0 ? f.c2 : s == 1 ? f.c3 : s == 2 ? f.c4 : f.c5) = h;
    }
    return f;
  }

  long forward_count() const { return forward_count_; }

 private:
  ModelConfig cfg_;
  detail::Conv<S> stem_conv1_, stem_conv2_;
  detail::Norm<S> stem_norm1_, stem_norm2_;
  std::vector<std::vector<detail::ResidualBlock<S>>> stages_;
  mutable long forward_count_ = 0;
};

// g1: global average pool over C5, then a two-layer perceptron, then
// l2-normalization.
template <class S>
class SemanticHead {
 public:
  SemanticHead() = default;
  SemanticHead(const ModelConfig& cfg, ParamSet<S>& ps) : cfg_(cfg) {
    w1_ = detail::expect_shape(ps, "g1.fc1.w", {cfg.head.hidden_sem, cfg.backbone.stage_channels[3]});
    b1_ = detail::expect_shape(ps, "g1.fc1.b", {cfg.head.hidden_sem});
    w2_ = detail::expect_shape(ps, "g1.fc2.w", {cfg.head.d_sem, cfg.head.hidden_sem});
    b2_ = detail::expect_shape(ps, "g1.fc2.b", {cfg.head.d_sem});
  }

  Tensor<S> forward(Tape<S>& t, const StageFeatures<S>& f) const {
    const auto& c5 = f.c5;
    const int side = int(c5.dim(1));
    auto pooled = ops::avg_pool2d(t, c5, side, side);  // [C,1,1]
    auto vec = ops::reshape(t, pooled, {pooled.dim(0)});
    auto h = ops::relu(t, ops::linear(t, vec, w1_, b1_));
    auto z = ops::linear(t, h, w2_, b2_);
    return ops::l2_normalize(t, z, S(cfg_.embed_eps));
  }

 private:
  ModelConfig cfg_;
  Tensor<S> w1_, b1_, w2_, b2_;
};

// g2: lateral 1x1 convolutions onto a common width, top-down merge with the
// running map capped at R x R (laterals above R are average-pooled before the
// merge instead of merging at full resolution and pooling afterwards), the
// four per-path maps resampled to R x R and summed, reduced to one channel
// and flattened.
template <class S>
class SpatialHead {
 public:
  SpatialHead() = default;
  SpatialHead(const ModelConfig& cfg, ParamSet<S>& ps) : cfg_(cfg) {
    for (int s = 0; s < 4; ++s)
      lateral_[s] = detail::bind_conv(ps, "g2.lateral" + std::to_string(s + 2),
                                      cfg.head.fpn_channels, cfg.backbone.stage_channels[s], 1,
                                      1, 0, ops::PadMode::Zero, true);
    reduce_ = detail::bind_conv(ps, "g2.reduce", 1, cfg.head.fpn_channels, 1, 1, 0,
                                ops::PadMode::Zero, true);
  }

  Tensor<S> forward(Tape<S>& t, const StageFeatures<S>& f) const {
    const int R = cfg_.head.spatial_res;
    const std::array<const Tensor<S>*, 4> maps{&f.c2, &f.c3, &f.c4, &f.c5};
    std::array<Tensor<S>, 4> merged;
    Tensor<S> running;
    for (int s = 3; s >= 0; --s) {  // C5 down to C2
      auto lat = lateral_[s](t, *maps[s]);
      const int res = int(lat.dim(1));
      const int target = std::min(res, R);
      auto lat_t = pool_to(t, lat, target);
      if (!running.defined()) {
        running = lat_t;
      } else {
        running = ops::add(t, lat_t, upsample_to(t, running, target));
      }
      merged[s] = running;
    }
    Tensor<S> fused;
    for (int s = 0; s < 4; ++s) {
      auto at_r = upsample_to(t, merged[s], R);
      fused = fused.defined() ? ops::add(t, fused, at_r) : at_r;
    }
    auto map = reduce_(t, fused);  // [1,R,R]
    auto flat = ops::reshape(t, map, {Index(R) * R});
    return ops::l2_normalize(t, flat, S(cfg_.embed_eps));
  }

 private:
  static Tensor<S> pool_to(Tape<S>& t, const Tensor<S>& x, int target) {
    const int res = int(x.dim(1));
    if (res == target) return x;
    const int ratio = res / target;
    return ops::avg_pool2d(t, x, ratio, ratio);
  }
  static Tensor<S> upsample_to(Tape<S>& t, const Tensor<S>& x, int target) {
    Tensor<S> cur = x;
    while (int(cur.dim(1)) < target) cur = ops::upsample_nearest2x(t, cur);
    return cur;
  }

  ModelConfig cfg_;
  std::array<detail::Conv<S>, 4> lateral_;
  detail::Conv<S> reduce_;
};

template <class S>
struct EmbeddingPair {
  Tensor<S> semantic;  // unit vector, d_sem
  Tensor<S> spatial;   // unit vector, R^2
  Tensor<S> concat;    // [semantic || spatial]
};

template <class S>
class HclModel {
 public:
  HclModel() = default;
  HclModel(const ModelConfig& cfg, ParamSet<S>& ps, bool with_spatial)
      : cfg_(cfg), backbone_(cfg, ps), g1_(cfg, ps) {
    if (with_spatial) g2_.emplace(cfg, ps);
  }

  const ModelConfig& config() const { return cfg_; }
  bool has_spatial() const { return g2_.has_value(); }
  const Backbone<S>& backbone() const { return backbone_; }
  Index embed_dim() const {
    return has_spatial() ? Index(cfg_.concat_dim()) : Index(cfg_.head.d_sem);
  }

  StageFeatures<S> stages(Tape<S>& t, const Tensor<S>& image) const {
    return backbone_.forward(t, image);
  }

  Tensor<S> semantic_from(Tape<S>& t, const StageFeatures<S>& f) const {
    return g1_.forward(t, f);
  }
  Tensor<S> spatial_from(Tape<S>& t, const StageFeatures<S>& f) const {
    if (!g2_) throw ShapeError("model: spatial head not present");
    return g2_->forward(t, f);
  }

  // one backbone pass, both heads on the shared stage features
  EmbeddingPair<S> embed(Tape<S>& t, const Tensor<S>& image) const {
    auto f = backbone_.forward(t, image);
    EmbeddingPair<S> e;
    e.semantic = g1_.forward(t, f);
    if (g2_) {
      e.spatial = g2_->forward(t, f);
      e.concat = ops::concat(t, e.semantic, e.spatial);
    } else {
      e.concat = e.semantic;
    }
    return e;
  }

  // training-time embedding: semantic-only in stage 1, concatenated in stage 2
  Tensor<S> embed_train(Tape<S>& t, const Tensor<S>& image) const {
    return embed(t, image).concat;
  }

 private:
  ModelConfig cfg_;
  Backbone<S> backbone_;
  SemanticHead<S> g1_;
  std::optional<SpatialHead<S>> g2_;
};

}  // namespace hcl::models
