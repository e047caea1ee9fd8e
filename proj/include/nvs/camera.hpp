#pragma once

#include <stdexcept>

#include "nvs/common.hpp"
#include "nvs/vec.hpp"

namespace nvs {

// Pinhole camera with a world-to-camera pose (x right, y down, z forward) and
// a normalized timestamp.
template <typename T>
struct Camera {
    T fx{}, fy{}, cx{}, cy{};
    int width = 0, height = 0;
    Mat3<T> rotation = Mat3<T>::identity();  // world -> camera
    Vec3<T> translation{};
    T timestamp = T(0);
    T near_plane = T(0.01);
    T far_plane = T(100);

    Vec3<T> center() const { return -rotation.t_times(translation); }

    Vec3<T> to_camera(const Vec3<T>& p_world) const { return rotation * p_world + translation; }

    void validate() const {
        if (!(fx > T(0)) || !(fy > T(0))) throw std::invalid_argument("camera focal lengths must be positive");
        if (width <= 0 || height <= 0) throw std::invalid_argument("camera image size must be positive");
        if (!(near_plane > T(0)) || !(far_plane > near_plane))
            throw std::invalid_argument("camera requires 0 < near < far");
        for (T v : rotation.m)
            if (!is_finite(v)) throw std::invalid_argument("camera rotation must be finite");
        if (!is_finite(translation.x) || !is_finite(translation.y) || !is_finite(translation.z))
            throw std::invalid_argument("camera translation must be finite");
    }

    template <typename U>
    Camera<U> cast() const {
        Camera<U> c;
        c.fx = U(fx);
        c.fy = U(fy);
        c.cx = U(cx);
        c.cy = U(cy);
        c.width = width;
        c.height = height;
        c.rotation = rotation.template cast<U>();
        c.translation = translation.template cast<U>();
        c.timestamp = U(timestamp);
        c.near_plane = U(near_plane);
        c.far_plane = U(far_plane);
        return c;
    }
};

// Builds a world-to-camera pose looking from `eye` toward `target`; world +y is up.
template <typename T>
void look_at(Camera<T>& cam, const Vec3<T>& eye, const Vec3<T>& target) {
    const Vec3<T> fwd = (target - eye).normalized();
    Vec3<T> up{T(0), T(1), T(0)};
    Vec3<T> right = up.cross(fwd);
    if (right.norm() < T(1e-8)) {
        up = Vec3<T>{T(0), T(0), fwd.y > T(0) ? T(-1) : T(1)};
        right = up.cross(fwd);
    }
    right = right.normalized();
    const Vec3<T> down = fwd.cross(right);
    cam.rotation.m = {right.x, right.y, right.z, down.x, down.y, down.z, fwd.x, fwd.y, fwd.z};
    cam.translation = -(cam.rotation * eye);
}

using Cameraf = Camera<float>;

}  // namespace nvs
