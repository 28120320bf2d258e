#pragma once

#include "dfkan/tensor.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dfkan {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Receives the upstream gradient (same shape as the node value) and returns
// one gradient per input, in input order. An empty (0x0) tensor means "no
// contribution" for that input.
using BackwardRule = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

class Gradients {
 public:
  const Tensor* find(const Var& v) const {
    auto it = grads_.find(v.id());
    return it == grads_.end() ? nullptr : &it->second;
  }
  const Tensor& at(const Var& v) const;
  bool contains(const Var& v) const { return grads_.count(v.id()) != 0; }
  std::size_t size() const { return grads_.size(); }
  const std::map<int, Tensor>& entries() const { return grads_; }

 private:
  friend class Tape;
  std::map<int, Tensor> grads_;
};

// Per-forward-pass reverse-mode tape. Nodes are appended in creation order,
// which is a topological order; backward replays them in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records a node whose value was computed by the caller. `rule` must return
  // exactly one gradient per input with the input's shape (or 0x0).
  Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardRule rule);

  Gradients backward(const Var& loss);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const std::string& op(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  std::size_t size() const { return nodes_.size(); }
  // Number of backward rules invoked by the last backward() call.
  std::size_t last_replay_count() const { return replays_; }

  // Test hook: scales the gradient a backward rule of `op` returns for input
  // `input` (all inputs when negative). Used as a gradient-check negative control.
  void inject_fault(std::string op, int input, double scale) { fault_ = Fault{std::move(op), input, scale}; }

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor value;
    BackwardRule rule;
    bool requires_grad = false;  // true for leaves marked trainable or any node depending on one
    bool is_leaf = false;
  };
  struct Fault {
    std::string op;
    int input;
    double scale;
  };
  std::vector<Node> nodes_;
  std::size_t replays_ = 0;
  std::optional<Fault> fault_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---- primitive ops --------------------------------------------------------

Var custom_unary(const Var& x, Tensor value, std::function<Tensor(const Tensor& g)> rule);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_broadcast_row(const Var& a, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var square(const Var& a);
Var scale(const Var& a, double s);
Var reduce_mean(const Var& x);
Var reduce_sum(const Var& x);
// Elementwise x * scale_row + offset_row with constant per-column rows.
Var affine_columns(const Var& x, const Eigen::RowVectorXd& scale, const Eigen::RowVectorXd& offset);
Var abs_sum(const Var& x);

}  // namespace dfkan
