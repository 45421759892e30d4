#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "darc/error.hpp"

namespace darc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major double tensor with an attached gradient buffer.
//
// Tensor is a shared handle: copies refer to the same storage, the way
// parameters are referenced from both a model and the graph that uses
// them. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    const auto n = numel_of(s_->shape);
    s_->value.assign(n, 0.0);
    s_->grad.assign(n, 0.0);
    s_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : Tensor(std::move(shape), requires_grad) {
    if (values.size() != s_->value.size()) {
      throw DimensionError("tensor of shape " + shape_str(s_->shape) + " needs " +
                           std::to_string(s_->value.size()) + " values, got " +
                           std::to_string(values.size()));
    }
    s_->value = std::move(values);
  }

  // Braced value lists always mean values, never the requires_grad flag.
  Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false)
      : Tensor(std::move(shape), std::vector<double>(values), requires_grad) {}

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
  }

  bool defined() const noexcept { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->value.size(); }

  // Handle semantics: accessors are const and still grant write access to
  // the shared storage.
  std::span<double> values() const { return s_->value; }
  std::span<double> grad() const { return s_->grad; }
  double* data() const { return s_->value.data(); }
  double* grad_data() const { return s_->grad.data(); }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return s_->value[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) const { s_->requires_grad = on; }

  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), 0.0); }

  // Deep copy of shape, values and requires_grad; gradient starts at zero.
  Tensor clone() const {
    Tensor t(s_->shape, s_->value, s_->requires_grad);
    return t;
  }

  bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

// Tape of executed operations. Each recorded node owns handles to its
// inputs and output plus a closure that pushes output.grad into the
// inputs' grads. backward() replays the tape in reverse.
class Graph {
 public:
  enum class Mode { kRecord, kInference };

  explicit Graph(Mode mode = Mode::kRecord) : mode_(mode) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  bool recording() const noexcept { return mode_ == Mode::kRecord; }

  // True when an op over `inputs` must be recorded.
  bool tracks(std::initializer_list<const Tensor*> inputs) const {
    if (!recording()) return false;
    for (const Tensor* t : inputs) {
      if (t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  bool tracks(std::span<const Tensor> inputs) const {
    if (!recording()) return false;
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) return true;
    }
    return false;
  }

  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in
  // reverse order. Returns the number of nodes visited.
  std::size_t backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward() requires a scalar loss, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    loss.grad()[0] += 1.0;
    std::size_t visited = 0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->backward();
      ++visited;
    }
    return visited;
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };
  Mode mode_;
  std::vector<Node> nodes_;
};

}  // namespace darc
