#include "dfkan/autodiff.hpp"

#include <cmath>
#include <utility>

namespace dfkan {

const Tensor& Gradients::at(const Var& v) const {
  auto* g = find(v);
  if (g == nullptr) throw std::out_of_range("no gradient recorded for node " + std::to_string(v.id()));
  return *g;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(std::string op, std::vector<Var> inputs, Tensor value, BackwardRule rule) {
  check_finite(value, op.c_str());
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.rule = std::move(rule);
  for (const auto& in : inputs) {
    if (in.tape() != this) throw ContractError(n.op + ": input belongs to a different tape");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in.id())].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Gradients Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
  const Tensor& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("backward: loss must be 1x1, got " + shape_str(lv));
  }
  replays_ = 0;
  std::vector<std::optional<Tensor>> acc(nodes_.size());
  acc[static_cast<std::size_t>(loss.id())] = Tensor::Ones(1, 1);

  Gradients out;
  for (int id = loss.id(); id >= 0; --id) {
    auto& slot = acc[static_cast<std::size_t>(id)];
    if (!slot) continue;
    Node& node = nodes_[static_cast<std::size_t>(id)];
    ++replays_;
    if (node.is_leaf) {
      if (node.requires_grad) out.grads_.emplace(id, std::move(*slot));
      continue;
    }
    if (!node.requires_grad) continue;
    std::vector<Tensor> in_grads = node.rule(*slot);
    if (in_grads.size() != node.inputs.size()) {
      throw ContractError(node.op + ": backward rule returned " + std::to_string(in_grads.size()) +
                          " gradients for " + std::to_string(node.inputs.size()) + " inputs");
    }
    for (std::size_t k = 0; k < in_grads.size(); ++k) {
      Tensor& g = in_grads[k];
      if (g.size() == 0) continue;
      if (fault_ && fault_->op == node.op && (fault_->input < 0 || fault_->input == static_cast<int>(k))) {
        g *= fault_->scale;
      }
      const int in_id = node.inputs[k];
      const Node& in = nodes_[static_cast<std::size_t>(in_id)];
      if (!same_shape(g, in.value)) {
        throw ContractError(node.op + ": gradient for input " + std::to_string(k) + " has shape " +
                            shape_str(g) + ", expected " + shape_str(in.value));
      }
      if (!in.requires_grad) continue;
      auto& dst = acc[static_cast<std::size_t>(in_id)];
      if (dst) {
        *dst += g;
      } else {
        dst = std::move(g);
      }
    }
    slot.reset();
  }
  return out;
}

Var custom_unary(const Var& x, Tensor value, std::function<Tensor(const Tensor& g)> rule) {
  return x.tape()->record("custom", {x}, std::move(value),
                          [rule = std::move(rule)](const Tensor& g) {
                            return std::vector<Tensor>{rule(g)};
                          });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(av) + " * " + shape_str(bv));
  }
  // Plain k-ordered accumulation so results match a hand-written dot product
  // bit for bit.
  Tensor out = Tensor::Zero(av.rows(), bv.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    for (Eigen::Index k = 0; k < av.cols(); ++k) {
      const double aik = av(i, k);
      for (Eigen::Index j = 0; j < bv.cols(); ++j) out(i, j) += aik * bv(k, j);
    }
  }
  Tape* t = a.tape();
  const int ia = a.id();
  const int ib = b.id();
  return t->record("matmul", {a, b}, std::move(out), [t, ia, ib](const Tensor& g) {
    const Tensor& A = t->value(ia);
    const Tensor& B = t->value(ib);
    return std::vector<Tensor>{g * B.transpose(), A.transpose() * g};
  });
}

Var transpose(const Var& a) {
  Tensor out = a.value().transpose();
  return a.tape()->record("transpose", {a}, std::move(out), [](const Tensor& g) {
    return std::vector<Tensor>{g.transpose()};
  });
}

Var add_broadcast_row(const Var& a, const Var& bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw DimensionError("add_broadcast_row: bias " + shape_str(bv) + " does not match " + shape_str(av));
  }
  Tensor out = av.rowwise() + bv.row(0);
  return a.tape()->record("add_broadcast_row", {a, bias}, std::move(out), [](const Tensor& g) {
    Tensor gb = g.colwise().sum();
    return std::vector<Tensor>{g, gb};
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value() + b.value();
  return a.tape()->record("add", {a, b}, std::move(out),
                          [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value() - b.value();
  return a.tape()->record("sub", {a, b}, std::move(out),
                          [](const Tensor& g) { return std::vector<Tensor>{g, Tensor(-g)}; });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value().cwiseProduct(b.value());
  Tape* t = a.tape();
  const int ia = a.id();
  const int ib = b.id();
  return t->record("mul", {a, b}, std::move(out), [t, ia, ib](const Tensor& g) {
    return std::vector<Tensor>{g.cwiseProduct(t->value(ib)), g.cwiseProduct(t->value(ia))};
  });
}

Var square(const Var& a) {
  Tensor out = a.value().array().square().matrix();
  Tape* t = a.tape();
  const int ia = a.id();
  return t->record("square", {a}, std::move(out), [t, ia](const Tensor& g) {
    return std::vector<Tensor>{Tensor(2.0 * g.cwiseProduct(t->value(ia)))};
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value() * s;
  return a.tape()->record("scale", {a}, std::move(out),
                          [s](const Tensor& g) { return std::vector<Tensor>{Tensor(g * s)}; });
}

Var reduce_mean(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) throw DimensionError("reduce_mean: empty tensor");
  const auto rows = xv.rows();
  const auto cols = xv.cols();
  const double inv = 1.0 / static_cast<double>(xv.size());
  Tensor out(1, 1);
  out(0, 0) = xv.sum() * inv;
  return x.tape()->record("reduce_mean", {x}, std::move(out), [rows, cols, inv](const Tensor& g) {
    return std::vector<Tensor>{Tensor::Constant(rows, cols, g(0, 0) * inv)};
  });
}

Var reduce_sum(const Var& x) {
  const Tensor& xv = x.value();
  const auto rows = xv.rows();
  const auto cols = xv.cols();
  Tensor out(1, 1);
  out(0, 0) = xv.sum();
  return x.tape()->record("reduce_sum", {x}, std::move(out), [rows, cols](const Tensor& g) {
    return std::vector<Tensor>{Tensor::Constant(rows, cols, g(0, 0))};
  });
}

Var affine_columns(const Var& x, const Eigen::RowVectorXd& scale_row, const Eigen::RowVectorXd& offset_row) {
  const Tensor& xv = x.value();
  if (scale_row.size() != xv.cols() || offset_row.size() != xv.cols()) {
    throw DimensionError("affine_columns: row length " + std::to_string(scale_row.size()) +
                         " does not match " + shape_str(xv));
  }
  Tensor out = (xv.array().rowwise() * scale_row.array()).rowwise() + offset_row.array();
  return x.tape()->record("affine_columns", {x}, std::move(out), [scale_row](const Tensor& g) {
    return std::vector<Tensor>{Tensor(g.array().rowwise() * scale_row.array())};
  });
}

Var abs_sum(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(1, 1);
  out(0, 0) = xv.cwiseAbs().sum();
  Tape* t = x.tape();
  const int ix = x.id();
  return t->record("abs_sum", {x}, std::move(out), [t, ix](const Tensor& g) {
    const Tensor& v = t->value(ix);
    Tensor d = v.unaryExpr([](double e) { return static_cast<double>((e > 0) - (e < 0)); });
    return std::vector<Tensor>{Tensor(d * g(0, 0))};
  });
}

}  // namespace dfkan
