// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include "satswin/tensor.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace detail {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using VecMap = Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>;
using ConstVecMap = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>;

inline std::size_t rows_of(const Tensor& t) {
  return t.rank() == 0 ? 1 : t.size() / t.shape().back();
}

}  // namespace detail
SATSWIN_NAMESPACE_END
