#pragma once

// Row-major matrix views over raw buffers, backed by Eigen's GEMM.

#include <Eigen/Core>

namespace motion3d::detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatView = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatView = Eigen::Map<const RowMatrix<T>>;

template <class T>
MatView<T> view(T* p, Eigen::Index rows, Eigen::Index cols) {
  return MatView<T>(p, rows, cols);
}

template <class T>
ConstMatView<T> view(const T* p, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatView<T>(p, rows, cols);
}

}  // namespace motion3d::detail
