#pragma once

#include <cmath>
#include <stdexcept>

#include "nvs/vec.hpp"

namespace nvs {

template <typename T>
struct Quat {
    T w{1}, x{}, y{}, z{};

    Quat() = default;
    Quat(T w_, T x_, T y_, T z_) : w(w_), x(x_), y(y_), z(z_) {}

    T& operator[](int i) { return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z)); }
    T operator[](int i) const { return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z)); }

    Quat operator+(const Quat& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
    T norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quat normalized() const {
        const T n = norm();
        if (n == T(0)) throw std::domain_error("cannot normalize all-zero quaternion");
        return {w / n, x / n, y / n, z / n};
    }
};

// Rotation matrix of the internally normalized quaternion.
template <typename T>
Mat3<T> quaternion_to_rotation(const Quat<T>& q_raw) {
    const Quat<T> q = q_raw.normalized();
    const T w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3<T> r;
    r.m = {T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
           T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
           T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y)};
    return r;
}

// Pulls a gradient w.r.t. the unit quaternion back to the unnormalized input:
// dq = (d_unit - q_unit * <q_unit, d_unit>) / |q_raw|.
template <typename T>
Quat<T> normalize_backward(const Quat<T>& q_raw, const Quat<T>& d_unit) {
    const T n = q_raw.norm();
    const Quat<T> u{q_raw.w / n, q_raw.x / n, q_raw.y / n, q_raw.z / n};
    const T proj = u.w * d_unit.w + u.x * d_unit.x + u.y * d_unit.y + u.z * d_unit.z;
    return {(d_unit.w - u.w * proj) / n, (d_unit.x - u.x * proj) / n,
            (d_unit.y - u.y * proj) / n, (d_unit.z - u.z * proj) / n};
}

// Gradient of quaternion_to_rotation w.r.t. the raw (unnormalized) quaternion,
// given the gradient dR w.r.t. the returned matrix.
template <typename T>
Quat<T> quaternion_to_rotation_backward(const Quat<T>& q_raw, const Mat3<T>& dR) {
    const Quat<T> q = q_raw.normalized();
    const T w = q.w, x = q.x, y = q.y, z = q.z;

    // dR/dw, dR/dx, dR/dy, dR/dz at the unit quaternion (each times 2).
    Mat3<T> gw, gx, gy, gz;
    gw.m = {0, -z, y, z, 0, -x, -y, x, 0};
    gx.m = {0, y, z, y, -2 * x, -w, z, w, -2 * x};
    gy.m = {-2 * y, x, w, x, 0, z, -w, z, -2 * y};
    gz.m = {-2 * z, -w, x, w, -2 * z, y, x, y, 0};

    Quat<T> d_unit{0, 0, 0, 0};
    for (int i = 0; i < 9; ++i) {
        d_unit.w += T(2) * gw.m[i] * dR.m[i];
        d_unit.x += T(2) * gx.m[i] * dR.m[i];
        d_unit.y += T(2) * gy.m[i] * dR.m[i];
        d_unit.z += T(2) * gz.m[i] * dR.m[i];
    }
    return normalize_backward(q_raw, d_unit);
}

// Sigma = R S S^T R^T with S = diag(s). Scales must be strictly positive.
template <typename T>
Mat3<T> covariance_from_scale_rotation(const Vec3<T>& s, const Quat<T>& q) {
    if (!(s.x > T(0) && s.y > T(0) && s.z > T(0)))
        throw std::domain_error("covariance scales must be strictly positive");
    const Mat3<T> r = quaternion_to_rotation(q);
    Mat3<T> m = r;  // M = R * diag(s)
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) *= s[j];
    return m * m.transposed();
}

// Backward of covariance_from_scale_rotation given dL/dSigma as a full matrix.
template <typename T>
void covariance_from_scale_rotation_backward(const Vec3<T>& s, const Quat<T>& q,
                                             const Mat3<T>& d_sigma, Vec3<T>& d_scale,
                                             Quat<T>& d_quat) {
    const Mat3<T> r = quaternion_to_rotation(q);
    Mat3<T> m = r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) *= s[j];

    // Sigma = M M^T  =>  dM = (G + G^T) M.
    const Mat3<T> sym = d_sigma + d_sigma.transposed();
    const Mat3<T> dm = sym * m;

    Mat3<T> dr = Mat3<T>::zero();
    d_scale = Vec3<T>{0, 0, 0};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            d_scale[j] += dm(i, j) * r(i, j);
            dr(i, j) = dm(i, j) * s[j];
        }
    d_quat = quaternion_to_rotation_backward(q, dr);
}

}  // namespace nvs
