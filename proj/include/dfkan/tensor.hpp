#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dfkan {

// Dense row-major 2-D arrays. Everything in the library runs in double; the
// scalar template exists so basis recurrences can be evaluated in wider types
// by test oracles.
template <typename Scalar>
using TensorT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Tensor = TensorT<double>;
using Vector = Eigen::VectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!same_shape(a, b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

// Raises NumericError when `t` holds NaN/Inf. Compiled out unless
// DFKAN_CHECK_FINITE is defined.
inline void check_finite([[maybe_unused]] const Tensor& t, [[maybe_unused]] const char* where) {
#ifdef DFKAN_CHECK_FINITE
  if (!t.allFinite()) throw NumericError(std::string("non-finite value produced by ") + where);
#endif
}

inline Tensor make_tensor(Eigen::Index rows, Eigen::Index cols, double fill = 0.0) {
  return Tensor::Constant(rows, cols, fill);
}

}  // namespace dfkan
