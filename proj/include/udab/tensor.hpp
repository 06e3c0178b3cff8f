#pragma once

#include <Eigen/Dense>

namespace udab {

/// Row-major so that one row is one sample and rows can be copied out
/// contiguously.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace udab
