#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "hcl/models.hpp"
#include "hcl/tape.hpp"
#include "hcl/tensor.hpp"

namespace hcl::contrast {

// FIFO gallery of detached key embeddings. Rows are addressed by age
// (0 = oldest); every consumer iterates in age order so that persisted and
// in-memory queues score identically.
template <class S>
class MemoryQueue {
 public:
  MemoryQueue(Index capacity, Index dim) : capacity_(capacity), dim_(dim) {
    if (capacity < 1 || dim < 1)
      throw ShapeError("MemoryQueue: capacity and dim must be >= 1");
    slots_.resize(capacity, dim);
  }

  Index capacity() const { return capacity_; }
  Index dim() const { return dim_; }
  Index filled() const { return filled_; }

  void push(const VecX<S>& key) {
    if (key.size() != dim_)
      throw ShapeError("MemoryQueue::push: key dim " + std::to_string(key.size()) +
                       " != queue dim " + std::to_string(dim_));
    slots_.row(head_) = key.transpose();
    head_ = (head_ + 1) % capacity_;
    filled_ = std::min(filled_ + 1, capacity_);
  }

  void push_batch(const MatX<S>& keys) {
    if (keys.rows() > capacity_)
      throw ShapeError("MemoryQueue::push_batch: batch larger than capacity");
    if (keys.cols() != dim_)
      throw ShapeError("MemoryQueue::push_batch: key dim " + std::to_string(keys.cols()) +
                       " != queue dim " + std::to_string(dim_));
    for (Index r = 0; r < keys.rows(); ++r) push(VecX<S>(keys.row(r).transpose()));
  }

  // slot holding the i-th oldest row
  Index slot_of_age(Index i) const { return ((head_ - filled_ + i) % capacity_ + capacity_) % capacity_; }

  VecX<S> row_by_age(Index i) const {
    if (i < 0 || i >= filled_) throw ShapeError("MemoryQueue: age out of range");
    return slots_.row(slot_of_age(i)).transpose();
  }

  // contents in age order (oldest first)
  MatX<S> snapshot() const {
    MatX<S> out(filled_, dim_);
    for (Index i = 0; i < filled_; ++i) out.row(i) = slots_.row(slot_of_age(i));
    return out;
  }

  // Rebuilds a queue from rows in age order, e.g. from a checkpoint.
  static MemoryQueue from_rows(Index capacity, const MatX<S>& rows) {
    MemoryQueue q(capacity, rows.cols());
    if (rows.rows() > capacity) throw ShapeError("MemoryQueue::from_rows: too many rows");
    for (Index r = 0; r < rows.rows(); ++r) q.push(VecX<S>(rows.row(r).transpose()));
    return q;
  }

 private:
  Index capacity_, dim_;
  MatX<S> slots_;  // capacity x dim
  Index head_ = 0;
  Index filled_ = 0;
};

// exp(z1.z2 / T), the exponential inner-product similarity
template <class S>
S similarity(const VecX<S>& z1, const VecX<S>& z2, S temperature) {
  if (z1.size() != z2.size())
    throw ShapeError("similarity: dim mismatch " + std::to_string(z1.size()) + " vs " +
                     std::to_string(z2.size()));
  if (!(temperature > S(0))) throw ShapeError("similarity: temperature must be > 0");
  return std::exp(z1.dot(z2) / temperature);
}

// InfoNCE over a positive key and the queue contents, evaluated in
// log-sum-exp form with max subtraction:
//   loss = logsumexp({l_pos} u {l_i}) - l_pos,  l = (q.z)/T.
// Exactly zero for an empty gallery. Gradients flow into q (and k_pos when it
// carries grad); queue rows are detached by construction.
template <class S>
Tensor<S> info_nce_loss(Tape<S>& tape, const Tensor<S>& q, const Tensor<S>& k_pos,
                        const MemoryQueue<S>& gallery, S temperature) {
  if (q.numel() == 0 || k_pos.numel() == 0)
    throw ShapeError("info_nce_loss: empty embeddings");
  if (q.numel() != k_pos.numel())
    throw ShapeError("info_nce_loss: q dim " + std::to_string(q.numel()) + " != key dim " +
                     std::to_string(k_pos.numel()));
  if (!(temperature > S(0))) throw ShapeError("info_nce_loss: temperature must be > 0");
  const Index n = gallery.filled();
  if (n > 0 && gallery.dim() != q.numel())
    throw ShapeError("info_nce_loss: gallery dim " + std::to_string(gallery.dim()) +
                     " != q dim " + std::to_string(q.numel()));

  auto rows = std::make_shared<MatX<S>>(gallery.snapshot());  // age order
  const S inv_t = S(1) / temperature;
  const S l_pos = q.values().dot(k_pos.values()) * inv_t;
  VecX<S> l_gal = n > 0 ? VecX<S>((*rows) * q.values() * inv_t) : VecX<S>();

  S m = l_pos;
  for (Index i = 0; i < n; ++i) m = std::max(m, l_gal[i]);
  S sum_exp = std::exp(l_pos - m);
  for (Index i = 0; i < n; ++i) sum_exp += std::exp(l_gal[i] - m);
  const S lse = m + std::log(sum_exp);
  Tensor<S> loss = Tensor<S>::scalar(lse - l_pos);

  if (tape.tracks(q, k_pos)) {
    auto softmax = std::make_shared<VecX<S>>(n + 1);
    (*softmax)[0] = std::exp(l_pos - lse);
    for (Index i = 0; i < n; ++i) (*softmax)[i + 1] = std::exp(l_gal[i] - lse);
    tape.record({q, k_pos}, loss, [=]() {
      const S g = loss.grad()[0] * inv_t;
      if (q.needs_grad()) {
        VecX<S> acc = ((*softmax)[0] - S(1)) * k_pos.values();
        if (n > 0) acc.noalias() += rows->transpose() * softmax->tail(n);
        q.grad() += g * acc;
      }
      if (k_pos.needs_grad()) k_pos.grad() += g * ((*softmax)[0] - S(1)) * q.values();
    });
  }
  return loss;
}

// theta_k <- m * theta_k + (1 - m) * theta_q, elementwise, outside the
// differentiation graph. Key parameters never carry gradient buffers.
template <class S>
void momentum_update(models::ParamSet<S>& key_params, const models::ParamSet<S>& query_params,
                     S m) {
  if (!(m >= S(0) && m <= S(1)))
    throw ShapeError("momentum_update: momentum must lie in [0,1]");
  if (key_params.size() != query_params.size())
    throw ShapeError("momentum_update: parameter sets differ in size");
  for (std::size_t i = 0; i < key_params.size(); ++i) {
    const auto& [kname, kt] = key_params.items()[i];
    const auto& [qname, qt] = query_params.items()[i];
    if (kname != qname)
      throw ShapeError("momentum_update: parameter name mismatch '" + kname + "' vs '" + qname +
                       "'");
    if (kt.shape() != qt.shape())
      throw ShapeError("momentum_update: shape mismatch for '" + kname + "'");
    kt.values() = m * kt.values() + (S(1) - m) * qt.values();
  }
}

}  // namespace hcl::contrast
