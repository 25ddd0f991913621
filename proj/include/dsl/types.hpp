#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace dsl {

template <typename S> using Vec2T = Eigen::Matrix<S, 2, 1>;
template <typename S> using Vec3T = Eigen::Matrix<S, 3, 1>;
template <typename S> using Vec4T = Eigen::Matrix<S, 4, 1>;
template <typename S> using Vec6T = Eigen::Matrix<S, 6, 1>;
template <typename S> using Vec8T = Eigen::Matrix<S, 8, 1>;
template <typename S> using VecXT = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S> using Mat2T = Eigen::Matrix<S, 2, 2>;
template <typename S> using Mat3T = Eigen::Matrix<S, 3, 3>;
template <typename S> using Mat4T = Eigen::Matrix<S, 4, 4>;
template <typename S> using Mat6T = Eigen::Matrix<S, 6, 6>;
template <typename S> using MatXT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using Vec2 = Vec2T<double>;
using Vec3 = Vec3T<double>;
using Vec4 = Vec4T<double>;
using Vec6 = Vec6T<double>;
using Vec8 = Vec8T<double>;
using VecX = VecXT<double>;
using Mat2 = Mat2T<double>;
using Mat3 = Mat3T<double>;
using Mat4 = Mat4T<double>;
using Mat6 = Mat6T<double>;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using MatX = MatXT<double>;

using Vec2f = Vec2T<float>;
using Vec3f = Vec3T<float>;

}  // namespace dsl
