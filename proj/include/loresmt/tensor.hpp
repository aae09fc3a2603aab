#pragma once

#include <Eigen/Dense>

namespace loresmt::model {

// Dense row-per-position storage; scalar is float for training and double for
// the finite-difference check suite.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;

}  // namespace loresmt::model
