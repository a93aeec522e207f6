#pragma once

#include <Eigen/Core>

namespace crossinit {

using Vector = Eigen::VectorXd;
/// Row-major so that row i is the vector at sequence position i.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace crossinit
