#pragma once

#include <Eigen/Core>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "pmx/common.hpp"

namespace pmx {

using MatMap = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VecMap = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>>;
using ConstVecMap = Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>;

// Fixed 64-byte alignment for tensor storage. Eigen's vectorized kernels
// peel loops based on pointer alignment; letting that vary with the heap
// state would make otherwise identical runs differ in the last ulp.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    void* p = ::operator new(n * sizeof(T), std::align_val_t(kAlign));
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U>&) const {
    return false;
  }
};

using RealBuffer = std::vector<real, AlignedAllocator<real>>;

// Dense row-major tensor of doubles. Rank is dynamic; scalars have rank 0.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), real(0));
  }
  Tensor(std::vector<int> shape, real fill) : Tensor(std::move(shape)) {
    std::fill(data_.begin(), data_.end(), fill);
  }
  Tensor(std::vector<int> shape, const std::vector<real>& data) : shape_(std::move(shape)) {
    if (static_cast<long long>(data.size()) != count(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
    data_.assign(data.begin(), data.end());
  }

  static Tensor scalar(real v) { return Tensor({}, std::vector<real>{v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  long long size() const { return static_cast<long long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  real& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
  real operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

  real item() const {
    if (data_.size() != 1) throw std::logic_error("Tensor::item: not a scalar");
    return data_[0];
  }

  // 2-D accessors (row-major).
  real& at(int r, int c) { return data_[static_cast<size_t>(r) * dim(1) + c]; }
  real at(int r, int c) const { return data_[static_cast<size_t>(r) * dim(1) + c]; }

  // 4-D accessors (N,C,H,W).
  real& at(int n, int c, int h, int w) {
    return data_[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
  }
  real at(int n, int c, int h, int w) const {
    return data_[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
  }

  MatMap mat(int rows, int cols) { return MatMap(data_.data(), rows, cols); }
  ConstMatMap mat(int rows, int cols) const { return ConstMatMap(data_.data(), rows, cols); }
  // Maps a rank-2 tensor onto its natural matrix view.
  MatMap mat() { return mat(dim(0), dim(1)); }
  ConstMatMap mat() const { return mat(dim(0), dim(1)); }
  VecMap vec() { return VecMap(data_.data(), static_cast<long>(data_.size())); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), static_cast<long>(data_.size())); }

  void fill(real v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(real(0)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (real v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static long long count(const std::vector<int>& shape) {
    long long n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  RealBuffer data_;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace pmx
