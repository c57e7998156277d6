#pragma once

#include <Eigen/Core>

namespace mkmed {

using Scalar = double;

template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Mat = MatT<Scalar>;
using Vec = VecT<Scalar>;
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
using IndexVec = std::vector<int>;

}  // namespace mkmed
