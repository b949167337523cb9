#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "litmas/tensor.hpp"

// Reverse-mode automatic differentiation over dense 64-bit tensors.
//
// A Tape is rebuilt for every forward pass. Ops append nodes in creation
// order, which is already a topological order of the DAG, so backward simply
// walks the tape in reverse.
namespace litmas::ng {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Value {
 public:
  Value() = default;

  const Tensor& tensor() const;
  const Tensor& grad() const;
  const Shape& shape() const { return tensor().shape(); }
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Inputs handed to an op's backward closure. `input_grads[i]` is null when
// input i does not require a gradient.
struct BackwardContext {
  const Tensor& output;
  const Tensor& output_grad;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf; receives a gradient on backward.
  Value leaf(Tensor t);
  /// Leaf that never receives a gradient.
  Value constant(Tensor t);

  /// Appends an op node. Used by the op implementations.
  Value record(Tensor out, std::vector<Value> inputs, BackwardFn fn);

  /// Populates grads of every node reachable from `root`. The root must
  /// hold exactly one element. A second call throws until zero_grad().
  void backward(const Value& root);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Value;

  struct Node {
    Tensor value;
    mutable Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(std::size_t id) const { return *nodes_[id]; }

  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
};

enum class Reduction { sum, mean };

Value matmul(const Value& a, const Value& b);
/// x[m×n] + bias[n] broadcast over rows.
Value add_bias(const Value& x, const Value& bias);
Value add(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& x, double factor);
/// Subgradient at exactly zero is zero.
Value relu(const Value& x);
/// Rank 1: x - logsumexp(x). Rank 2: applied to every row.
Value log_softmax(const Value& x);
/// s_i = <z_i, c> / (|z_i| |c|). Throws DegenerateEmbeddingError when any
/// norm is at or below 1e-12.
Value cosine_rows(const Value& z, const Value& c);
Value reduce(const Value& x, Reduction kind);
inline Value sum(const Value& x) { return reduce(x, Reduction::sum); }
inline Value mean(const Value& x) { return reduce(x, Reduction::mean); }
/// Rows of a matrix (or elements of a vector) at `index`, in that order.
Value gather_rows(const Value& x, std::span<const std::size_t> index);
/// out[i] = x[i, cols[i]] for x of shape n×c.
Value pick_columns(const Value& x, std::span<const std::size_t> cols);
/// Inverse of gather: row j of parts[p] lands in row positions[p][j] of an
/// n-row result. Every output row must be covered exactly once.
Value scatter_rows(std::span<const Value> parts,
                   std::span<const std::vector<std::size_t>> positions,
                   std::size_t n);
/// Identity forward, zero gradient backward.
Value stop_gradient(const Value& x);

inline constexpr double kCosineEps = 1e-12;

}  // namespace litmas::ng
