#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "multitrans/errors.hpp"

namespace multitrans {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {
std::uint64_t next_node_id();
std::uint64_t next_tape_id();
}  // namespace detail

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient first reaches this node
  bool requires_grad = false;
  std::uint64_t id = detail::next_node_id();
  std::uint64_t tape_id = 0;  // tape that produced this node; 0 for leaves

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share the underlying node, so a
/// parameter held by a module and by a ParameterStore is the same object.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (data.size() != shape_numel(shape)) {
      throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                       std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// In-place access for optimizers and finite-difference perturbation.
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t row, std::size_t col) const { return node_->data[row * shape().back() + col]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  std::uint64_t id() const { return node_->id; }
  const std::shared_ptr<Node>& node() const { return node_; }

  /// Fresh leaf holding a copy of the values.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations. Ops record onto the tape
/// installed by the innermost Tape::Scope on the calling thread; with no
/// scope installed they compute values only.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  struct Record {
    std::string_view op;
    NodePtr output;
    std::vector<NodePtr> inputs;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape* tape) : previous_(current_) { current_ = tape; }
    explicit Scope(Tape& tape) : Scope(&tape) {}
    ~Scope() { current_ = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  /// Upstream gradients entering `op`'s backward rule are multiplied by
  /// `factor`. Negative control for gradient checks.
  void inject_fault(std::string op, T factor) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
  }

  void record(std::string_view op, const Tensor<T>& output, std::vector<NodePtr> inputs,
              BackwardFn backward) {
    output.node()->requires_grad = true;
    output.node()->tape_id = id_;
    records_.push_back(Record{op, output.node(), std::move(inputs), std::move(backward)});
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse
  /// recording order. Gradients accumulate additively.
  void backward(const Tensor<T>& loss);

 private:
  static thread_local Tape* current_;
  std::uint64_t id_ = detail::next_tape_id();
  std::vector<Record> records_;
  std::string fault_op_;
  T fault_factor_ = T(1);
};

template <typename T>
thread_local Tape<T>* Tape<T>::current_ = nullptr;

/// Disables recording for the enclosed region.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : scope_(nullptr) {}

 private:
  typename Tape<T>::Scope scope_;
};

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (loss.node()->tape_id != id_) {
    throw Error("backward: loss was not produced on this tape");
  }
  loss.node()->grad_buffer()[0] += T(1);
  std::vector<T> faulty;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& rec = *it;
    if (rec.output->grad.empty()) continue;
    if (!fault_op_.empty() && rec.op == fault_op_) {
      faulty = rec.output->grad;
      for (auto& g : faulty) g *= fault_factor_;
      rec.backward(faulty);
    } else {
      rec.backward(rec.output->grad);
    }
  }
}

}  // namespace multitrans
