#pragma once

#include <Eigen/Dense>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d < 0) throw ShapeError("negative extent in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using RowMajorMatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense n-d array in row-major layout. Data and gradient live in shared
// storage; Tensor itself is a cheap handle, so recorded operations can keep
// references to their operands for the backward pass.
//
// `requires_grad` marks leaves (parameters). `needs_grad` additionally marks
// tensors downstream of such a leaf on a recording tape; only those carry an
// allocated gradient buffer.
template <class Scalar>
class Tensor {
  struct Data {
    Shape shape;
    VecX<Scalar> values;
    VecX<Scalar> grad;  // size 0 until first needed
    bool requires_grad = false;
    bool needs_grad = false;
  };

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = VecX<Scalar>::Zero(shape_numel(t.d_->shape));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor full(Shape shape, Scalar v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    t.d_->values.setConstant(v);
    return t;
  }

  static Tensor from(Shape shape, VecX<Scalar> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("Tensor::from: " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return full({}, v, requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  Index rank() const { return static_cast<Index>(d_->shape.size()); }
  Index dim(std::size_t i) const { return d_->shape.at(i); }
  Index numel() const { return d_->values.size(); }

  // Tensor is a handle: a const handle still exposes mutable storage, the
  // same way a const shared_ptr does.
  VecX<Scalar>& values() const { return d_->values; }
  Scalar* data() const { return d_->values.data(); }

  Scalar value() const {
    if (numel() != 1) throw ShapeError("Tensor::value: tensor is not scalar");
    return d_->values[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  bool needs_grad() const { return d_ && d_->needs_grad; }

  void set_requires_grad(bool on) const {
    d_->requires_grad = on;
    if (on) mark_needs_grad();
  }

  // Called for outputs of recorded operations with a grad-carrying input.
  void mark_needs_grad() const {
    d_->needs_grad = true;
    if (d_->grad.size() == 0) d_->grad = VecX<Scalar>::Zero(d_->values.size());
  }

  bool has_grad_buffer() const { return d_ && d_->grad.size() > 0; }

  VecX<Scalar>& grad() const {
    if (!has_grad_buffer()) throw ShapeError("Tensor::grad: no gradient buffer");
    return d_->grad;
  }

  void zero_grad() const {
    if (has_grad_buffer()) d_->grad.setZero();
  }

  // identity of the underlying storage; used to detect aliasing
  const void* storage_id() const { return d_.get(); }

  Tensor detached_copy(bool requires_grad = false) const {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

 private:
  std::shared_ptr<Data> d_;
};

template <class Scalar>
bool same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape();
}

}  // namespace hcl
