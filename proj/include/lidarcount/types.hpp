#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidarcount {

template <typename Scalar>
using Point3T = Eigen::Matrix<Scalar, 3, 1>;

// One point per row, columns (x, y, z) in meters.
template <typename Scalar>
using PointMatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;

using Point3 = Point3T<double>;
using PointMatrix = PointMatrixT<double>;

// Row-major so that a (rows x cols) block can be reinterpreted as a flat
// per-sample vector without copying.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Malformed input data (file contents, shapes, labels).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad invocation: unknown option, invalid configuration value.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Violated precondition of a numerical routine.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class ObjectClass : int { NonHuman = 0, Human = 1 };

inline PointMatrix stack_points(const std::vector<Point3>& pts) {
    PointMatrix m(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
    return m;
}

}  // namespace lidarcount
