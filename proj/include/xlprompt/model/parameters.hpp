#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/linalg.hpp"

namespace xlprompt {

/// Named dense tensors, addressed by the slot index returned from add().
class ParameterSet {
public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    names_.push_back(std::move(name));
    tensors_.push_back(Matrix::Zero(rows, cols));
    return tensors_.size() - 1;
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  Matrix& operator[](std::size_t slot) { return tensors_[slot]; }
  const Matrix& operator[](std::size_t slot) const { return tensors_[slot]; }

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const {
    ParameterSet out;
    for (std::size_t i = 0; i < size(); ++i) {
      out.add(names_[i], tensors_[i].rows(), tensors_[i].cols());
    }
    return out;
  }

  void set_zero() {
    for (auto& t : tensors_) {
      t.setZero();
    }
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) {
      n += static_cast<std::size_t>(t.size());
    }
    return n;
  }

  ParameterSet& operator+=(const ParameterSet& other) {
    check_compatible(other);
    for (std::size_t i = 0; i < size(); ++i) {
      tensors_[i] += other.tensors_[i];
    }
    return *this;
  }

  ParameterSet& operator*=(double factor) {
    for (auto& t : tensors_) {
      t *= factor;
    }
    return *this;
  }

  void check_compatible(const ParameterSet& other) const {
    if (other.size() != size()) {
      throw input_error("parameter sets differ in tensor count");
    }
    for (std::size_t i = 0; i < size(); ++i) {
      if (tensors_[i].rows() != other.tensors_[i].rows() || tensors_[i].cols() != other.tensors_[i].cols()) {
        throw input_error("parameter tensor '" + names_[i] + "' differs in shape");
      }
    }
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.names_ != b.names_) {
      return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.tensors_[i].rows() != b.tensors_[i].rows() || a.tensors_[i].cols() != b.tensors_[i].cols() ||
          a.tensors_[i] != b.tensors_[i]) {
        return false;
      }
    }
    return true;
  }

private:
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
};

} // namespace xlprompt
