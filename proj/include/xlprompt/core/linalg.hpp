#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace xlprompt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Numerically stable log(sum(exp(x))).
inline double log_sum_exp(const Vector& x) {
  const double peak = x.maxCoeff();
  return peak + std::log((x.array() - peak).exp().sum());
}

inline Vector softmax(const Vector& logits) {
  const double peak = logits.maxCoeff();
  Vector p = (logits.array() - peak).exp().matrix();
  return p / p.sum();
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace xlprompt
