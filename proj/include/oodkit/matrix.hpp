#pragma once

#include <Eigen/Dense>

namespace oodkit {

// Storage on disk is float32; every numeric kernel works on these 64-bit types.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace oodkit
