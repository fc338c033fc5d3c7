#pragma once

#include <Eigen/Dense>

#include "grad_suite.hpp"
#include "hcl/contrast.hpp"
#include "hcl/models.hpp"
#include "hcl/rng.hpp"

namespace testsupport {

// small enough for finite differences over the whole composite network
inline hcl::models::ModelConfig tiny_model_config() {
  hcl::models::ModelConfig cfg;
  cfg.backbone.input_size = 32;
  cfg.backbone.stage_channels = {4, 8, 8, 8};
  cfg.backbone.blocks_per_stage = {1, 1, 1, 1};
  cfg.backbone.group_norm_groups = 2;
  cfg.head.d_sem = 8;
  cfg.head.hidden_sem = 8;
  cfg.head.fpn_channels = 4;
  cfg.head.spatial_res = 4;
  return cfg;
}

template <class S>
void randomize_params(hcl::models::ParamSet<S>& ps, hcl::Rng& rng, double scale = 1.0) {
  for (const auto& [name, t] : ps.items())
    for (hcl::Index i = 0; i < t.numel(); ++i) t.values()[i] = S(rng.normal() * scale);
}

// independent semantic-head reference: plain Eigen arithmetic from the layer
// formulas (global mean over C5 -> affine -> relu -> affine -> normalize)
inline Eigen::VectorXd semantic_head_ref(const hcl::models::ParamSet<double>& ps,
                                         const hcl::Tensor<double>& c5, int hidden, int d_sem,
                                         double eps) {
  const long C = c5.dim(0), hw = c5.dim(1) * c5.dim(2);
  Eigen::VectorXd pooled(C);
  for (long c = 0; c < C; ++c) {
    double acc = 0;
    for (long i = 0; i < hw; ++i) acc += c5.values()[c * hw + i];
    pooled[c] = acc / double(hw);
  }
  const auto& w1 = ps.at("g1.fc1.w").values();
  const auto& b1 = ps.at("g1.fc1.b").values();
  Eigen::VectorXd h(hidden);
  for (int i = 0; i < hidden; ++i) {
    double acc = b1[i];
    for (long j = 0; j < C; ++j) acc += w1[i * C + j] * pooled[j];
    h[i] = std::max(0.0, acc);
  }
  const auto& w2 = ps.at("g1.fc2.w").values();
  const auto& b2 = ps.at("g1.fc2.b").values();
  Eigen::VectorXd z(d_sem);
  for (int i = 0; i < d_sem; ++i) {
    double acc = b2[i];
    for (int j = 0; j < hidden; ++j) acc += w2[i * hidden + j] * h[j];
    z[i] = acc;
  }
  const double norm = z.norm();
  return z / std::max(norm, eps);
}

// A full-network gradient-check instance: image -> backbone -> both heads ->
// contrastive loss against a small gallery.
inline GradInstance full_network_instance(hcl::Rng& rng, int gallery_rows) {
  using namespace hcl;
  auto cfg = tiny_model_config();
  Rng init_rng(rng.next_u64());
  auto ps = models::init_backbone_g1_params<double>(cfg, init_rng);
  models::add_g2_params(ps, cfg, init_rng);
  for (const auto& [name, t] : ps.items()) t.set_requires_grad(true);
  models::HclModel<double> model(cfg, ps, true);

  auto image = random_tensor({3, cfg.backbone.input_size, cfg.backbone.input_size}, rng, false);
  const Index dim = model.embed_dim();
  auto k_pos = random_tensor({dim}, rng, false);
  k_pos.values().normalize();
  contrast::MemoryQueue<double> queue(std::max(gallery_rows, 1), dim);
  for (int i = 0; i < gallery_rows; ++i) {
    auto row = random_tensor({dim}, rng, false);
    row.values().normalize();
    queue.push(row.values());
  }
  auto queue_ptr = std::make_shared<contrast::MemoryQueue<double>>(std::move(queue));

  GradInstance gi;
  for (const auto& [name, t] : ps.items()) gi.params.push_back(t);
  gi.run = [=](bool bp) {
    Tape<double> t;
    auto emb = model.embed(t, image);
    auto loss = contrast::info_nce_loss(t, emb.concat, k_pos, *queue_ptr, 0.2);
    if (bp) t.backward(loss);
    return loss.value();
  };
  return gi;
}

}  // namespace testsupport
