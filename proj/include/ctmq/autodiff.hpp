#ifndef CTMQ_AUTODIFF_HPP
#define CTMQ_AUTODIFF_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ctmq/tensor.hpp"

namespace ctmq {

template <class T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;

  bool has_grad() const noexcept { return !grad.empty(); }

  /// Gradient buffer, allocated zero-filled on first use.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>::zeros_like(value);
    return grad;
  }

  void accumulate(const Tensor<T>& g) {
    require_same_shape(value.shape(), g.shape(), "gradient accumulation");
    auto& buf = grad_buffer();
    auto dst = buf.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
};

/// Shared handle to a value taking part in reverse-mode differentiation.
template <class T>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<T> value, bool requires_grad = false) {
    Var v;
    v.node_ = std::make_shared<VarNode<T>>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->has_grad(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  VarNode<T>* node() const noexcept { return node_.get(); }

 private:
  std::shared_ptr<VarNode<T>> node_;
};

/// Ordered record of differentiable ops. Records are appended in execution
/// order, so every record's inputs were produced by earlier records or are leaves.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  Tape() = default;
  /// A disabled tape never records, which turns every op into a plain forward computation.
  explicit Tape(bool enabled) : enabled_(enabled) {}
  bool enabled() const noexcept { return enabled_; }

  struct Record {
    std::string op;
    std::vector<Var<T>> inputs;
    Var<T> output;
    BackwardFn backward;
  };

  /// Wraps `value` as an op output. Nothing is recorded when no input requires grad.
  Var<T> record(std::string op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward) {
    bool needs = false;
    if (enabled_)
      for (const auto& in : inputs) needs = needs || in.requires_grad();
    Var<T> out = Var<T>::leaf(std::move(value), needs);
    if (needs) records_.push_back(Record{std::move(op), std::move(inputs), out, std::move(backward)});
    return out;
  }

  /// Seeds d(loss)/d(loss) = 1 for a single-element output.
  void backward(const Var<T>& loss) {
    if (loss.value().size() != 1) {
      throw Error("backward() without a seed needs a single-element output, got " + shape_str(loss.shape()));
    }
    backward(loss, Tensor<T>::full(loss.shape(), T{1}));
  }

  void backward(const Var<T>& output, const Tensor<T>& seed) {
    require_same_shape(output.shape(), seed.shape(), "backward seed");
    if (!output.requires_grad()) return;
    output.node()->accumulate(seed);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      ++visits_;
      auto* node = it->output.node();
      if (!node->has_grad()) continue;
      it->backward(node->grad);
    }
  }

  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }
  std::size_t visits() const noexcept { return visits_; }
  void clear() {
    records_.clear();
    visits_ = 0;
  }

 private:
  std::vector<Record> records_;
  std::size_t visits_ = 0;
  bool enabled_ = true;
};

}  // namespace ctmq

#endif  // CTMQ_AUTODIFF_HPP
