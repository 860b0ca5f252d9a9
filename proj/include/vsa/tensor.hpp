#pragma once

#include <cassert>
#include <functional>
#include <memory>
#include <span>
#include <utility>

#include "vsa/common.hpp"

namespace vsa {

template <typename T>
class Tape;

// Active tape for the current thread. Ops record onto it; distinct model
// replicas on different threads get independent tapes.
template <typename T>
inline thread_local Tape<T>* g_active_tape = nullptr;

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first needed; same length as values
  bool requires_grad = false;
  bool tracked = false;          // produced by / fed into a recorded op
  const void* used_on = nullptr;  // tape this tensor last participated in
};

// Value-semantics handle over shared storage. Copies alias the same buffer;
// data is treated as immutable once the tensor participates in a recorded
// computation (mutation is only legal outside an active tape).
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->values.assign(numel(t.d_->shape), T(0));
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = zeros(std::move(shape));
    for (T& v : t.d_->values) v = value;
    return t;
  }

  static Tensor scalar(T value) { return from_vector({1}, {value}); }

  static Tensor from_vector(Shape shape, std::vector<T> values,
                            bool requires_grad = false) {
    if (numel(shape) != values.size())
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  size_t rank() const { return d_->shape.size(); }
  size_t size() const { return d_->values.size(); }
  size_t dim(size_t i) const { return d_->shape.at(i); }

  std::span<const T> data() const { return d_->values; }

  // Mutable access is only legal while the tensor is not pinned by an
  // active tape (recorded data must stay immutable for backward).
  std::span<T> data_mut() {
    assert(!(g_active_tape<T> != nullptr && d_->used_on == g_active_tape<T>));
    return d_->values;
  }

  T item() const {
    if (size() != 1)
      throw ContractError("item() on non-scalar tensor of shape " +
                          shape_str(shape()));
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool v) { d_->requires_grad = v; }
  bool tracked() const { return d_->tracked; }
  void mark_tracked() {
    d_->tracked = true;
    d_->used_on = g_active_tape<T>;
  }
  void mark_used() { d_->used_on = g_active_tape<T>; }
  bool grad_enabled() const {
    return d_ && (d_->requires_grad || d_->tracked);
  }

  bool has_grad() const { return !d_->grad.empty(); }
  std::span<T> grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
    return d_->grad;
  }
  std::span<const T> grad() const {
    assert(!d_->grad.empty());
    return d_->grad;
  }
  void zero_grad() {
    for (T& g : d_->grad) g = T(0);
  }

  // Identity of the underlying buffer (for parameter registration).
  const void* id() const { return d_.get(); }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

// Reverse-mode tape. Ops append backward closures in execution order, which
// is automatically a topological order of the computation; backward() walks
// the record once, in reverse. Constructing a Tape activates it for the
// current thread; destruction restores the previous one.
template <typename T>
class Tape {
 public:
  Tape() : prev_(g_active_tape<T>) { g_active_tape<T> = this; }
  ~Tape() { g_active_tape<T> = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure exactly once
  // in reverse order. Gradients accumulate; the caller zeroes between steps.
  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw ContractError("backward() requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
    if (!loss.grad_enabled())
      throw ContractError("backward() on a tensor not connected to the tape");
    loss.grad()[0] += T(1);
    NoGrad pause;
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
  }

  // Suspends recording (used inside backward and by finite-difference
  // evaluations that must not grow the tape).
  struct NoGrad {
    NoGrad() : saved(g_active_tape<T>) { g_active_tape<T> = nullptr; }
    ~NoGrad() { g_active_tape<T> = saved; }
    Tape<T>* saved;
  };

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_;
};

template <typename T>
using NoGrad = typename Tape<T>::NoGrad;

}  // namespace vsa
