#pragma once

// Test-side reference computations, kept independent of the library paths
// they check.

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <vector>

#include "rotinv/geometry.hpp"

namespace oracle {

using Complex = std::complex<double>;

inline double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

// Wigner little-d by the explicit factorial sum,
//   d^l_{mn}(beta) = sum_s (-1)^{m-n+s} sqrt((l+n)! (l-n)! (l+m)! (l-m)!)
//                    / ((l+n-s)! s! (m-n+s)! (l-m-s)!)
//                    cos(beta/2)^{2l+n-m-2s} sin(beta/2)^{m-n+2s}
// with the sum over every s that keeps the factorial arguments nonnegative.
inline double wigner_d(int l, int m, int n, double beta) {
    const double c = std::cos(0.5 * beta);
    const double s = std::sin(0.5 * beta);
    const double norm = std::sqrt(factorial(l + n) * factorial(l - n) *
                                  factorial(l + m) * factorial(l - m));
    double acc = 0.0;
    const int s_min = std::max(0, n - m);
    const int s_max = std::min(l + n, l - m);
    for (int k = s_min; k <= s_max; ++k) {
        const double denom = factorial(l + n - k) * factorial(k) *
                             factorial(m - n + k) * factorial(l - m - k);
        const double sign = ((m - n + k) % 2 == 0) ? 1.0 : -1.0;
        acc += sign / denom * std::pow(c, 2 * l + n - m - 2 * k) *
               std::pow(s, m - n + 2 * k);
    }
    return norm * acc;
}

// D^l_{mn}(alpha, beta, gamma) = e^{-i m alpha} d^l_{mn}(beta) e^{-i n gamma}.
inline Complex wigner_D(int l, int m, int n, double alpha, double beta,
                        double gamma) {
    const Complex ea(std::cos(m * alpha), -std::sin(m * alpha));
    const Complex eg(std::cos(n * gamma), -std::sin(n * gamma));
    return ea * wigner_d(l, m, n, beta) * eg;
}

// Y_lm(theta, phi) built from the factorial d via
// Y_lm(theta, phi) = sqrt((2l+1)/(4 pi)) conj(D^l_{m 0}(phi, theta, 0)).
inline Complex sph_harmonic(int l, int m, double theta, double phi) {
    constexpr double kPi = 3.14159265358979323846;
    return std::sqrt((2.0 * l + 1.0) / (4.0 * kPi)) *
           std::conj(wigner_D(l, m, 0, phi, theta, 0.0));
}

// Uniformly random point cloud in a ball.
inline rotinv::PointCloud random_ball_cloud(int n, rotinv::Rng& rng,
                                            double radius = 1.0) {
    rotinv::PointCloud cloud;
    cloud.points.resize(3, n);
    for (int i = 0; i < n; ++i) {
        rotinv::Vec3 p;
        do {
            p = rotinv::Vec3(2.0 * rng.uniform() - 1.0,
                             2.0 * rng.uniform() - 1.0,
                             2.0 * rng.uniform() - 1.0);
        } while (p.norm() > 1.0);
        cloud.points.col(i) = radius * p;
    }
    return cloud;
}

// Points on an ellipsoid surface (strict convex position).
inline rotinv::PointCloud random_ellipsoid_cloud(int n, rotinv::Rng& rng) {
    rotinv::PointCloud cloud;
    cloud.points.resize(3, n);
    const rotinv::Vec3 axes(0.5 + rng.uniform(), 0.5 + rng.uniform(),
                            0.5 + rng.uniform());
    for (int i = 0; i < n; ++i) {
        rotinv::Vec3 u(rng.gaussian(), rng.gaussian(), rng.gaussian());
        while (u.norm() < 1e-8) {
            u = rotinv::Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
        }
        u.normalize();
        cloud.points.col(i) = axes.cwiseProduct(u);
    }
    return cloud;
}

// Frank-Wolfe bracketing of the distance from point i to conv(others); an
// independent route to "is point i inside the hull of the rest". `upper` is
// the distance to the best feasible point found; `lower` comes from the
// separating-direction dual bound, so lower > 0 certifies a hull vertex and
// upper ~ 0 certifies an interior point.
struct HullDistanceBounds {
    double upper = 0.0;
    double lower = 0.0;
};

inline HullDistanceBounds hull_distance(const Eigen::Matrix3Xd& pts,
                                        Eigen::Index i, int iterations = 600) {
    const rotinv::Vec3 target = pts.col(i);
    rotinv::Vec3 current = rotinv::Vec3::Zero();
    double count = 0.0;
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
        if (j == i) continue;
        current += pts.col(j);
        count += 1.0;
    }
    current /= count;
    HullDistanceBounds bounds;
    bounds.lower = 0.0;
    auto support_gap = [&](const rotinv::Vec3& dir) {
        const double norm = dir.norm();
        if (norm <= 0.0) return 0.0;
        const rotinv::Vec3 d = dir / norm;
        double best = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < pts.cols(); ++j) {
            if (j != i) best = std::max(best, d.dot(pts.col(j)));
        }
        return d.dot(target) - best;
    };
    for (int it = 0; it < iterations; ++it) {
        const rotinv::Vec3 grad = current - target;
        Eigen::Index best = -1;
        double best_dot = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < pts.cols(); ++j) {
            if (j == i) continue;
            const double dot = grad.dot(pts.col(j));
            if (dot < best_dot) {
                best_dot = dot;
                best = j;
            }
        }
        const rotinv::Vec3 s = pts.col(best);
        const rotinv::Vec3 diff = current - s;
        const double denom = diff.squaredNorm();
        if (denom <= 0.0) break;
        const double step =
            std::clamp(diff.dot(current - target) / denom, 0.0, 1.0);
        current -= step * diff;
        bounds.lower = std::max(bounds.lower, support_gap(target - current));
    }
    bounds.upper = (current - target).norm();
    return bounds;
}

}  // namespace oracle
