#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace elab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

} // namespace elab
