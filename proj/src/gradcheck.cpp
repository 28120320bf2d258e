#include "dfkan/gradcheck.hpp"

#include <cmath>

namespace dfkan {

std::vector<std::string> GradcheckReport::failing() const {
  std::vector<std::string> out;
  for (const auto& g : groups) {
    if (!g.pass) out.push_back(g.group);
  }
  return out;
}

namespace {

Var loss_of(ForwardContext& ctx, Model& model, const Tensor& X, const Tensor& y) {
  Var pred = model_forward(ctx, model, ctx.tape.constant(X));
  if (y.size() == 0) return reduce_mean(square(pred));
  return reduce_mean(square(sub(pred, ctx.tape.constant(y))));
}

double loss_value(Model& model, const Tensor& X, const Tensor& y, const GradcheckOptions& o) {
  Tape tape;
  ForwardContext ctx(tape, o.mode);
  ctx.seed = o.seed;
  ctx.trainable = false;
  return loss_of(ctx, model, X, y).value()(0, 0);
}

}  // namespace

GradcheckReport gradcheck(Model& model, const Tensor& X, const Tensor& y, const GradcheckOptions& o) {
  std::vector<Tensor> saved;
  for (const auto& b : model_buffers(model)) saved.push_back(*b.tensor);

  Tape tape;
  if (o.fault_op) tape.inject_fault(*o.fault_op, o.fault_input, o.fault_scale);
  ForwardContext ctx(tape, o.mode);
  ctx.seed = o.seed;
  Var loss = loss_of(ctx, model, X, y);
  Gradients grads = tape.backward(loss);

  GradcheckReport rep;
  for (auto& p : model_parameters(model)) {
    Tensor analytic = Tensor::Zero(p.tensor->rows(), p.tensor->cols());
    for (const auto& [ptr, v] : ctx.bound) {
      if (ptr == p.tensor) {
        if (const Tensor* g = grads.find(v)) analytic = *g;
      }
    }
    GradcheckGroup g{p.group, p.tensor->size()};
    for (Eigen::Index k = 0; k < p.tensor->size(); ++k) {
      double& theta = p.tensor->data()[k];
      const double keep = theta;
      theta = keep + o.h;
      const double up = loss_value(model, X, y, o);
      theta = keep - o.h;
      const double down = loss_value(model, X, y, o);
      theta = keep;
      const double numeric = (up - down) / (2.0 * o.h);
      const double a = analytic.data()[k];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), o.floor});
      g.worst_abs = std::max(g.worst_abs, abs_err);
      g.worst_rel = std::max(g.worst_rel, rel);
    }
    g.pass = g.worst_rel <= o.tolerance;
    rep.worst_rel = std::max(rep.worst_rel, g.worst_rel);
    rep.pass = rep.pass && g.pass;
    rep.groups.push_back(g);
  }

  std::size_t i = 0;
  for (auto& b : model_buffers(model)) *b.tensor = saved[i++];
  return rep;
}

}  // namespace dfkan
