#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <string>
#include <vector>

#include "rotinv/rng.hpp"

namespace rotinv {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// A finite set of 3D points, column-major (3 x N). Ingestion preserves the
// file order of points; indices are stable identifiers throughout the
// pipeline.
struct PointCloud {
    Eigen::Matrix3Xd points;

    Eigen::Index size() const { return points.cols(); }
    Vec3 point(Eigen::Index i) const { return points.col(i); }
};

// Proper rotation. Construction validates orthonormality and det = +1 to
// 1e-12; use from_matrix for checked construction from raw data.
class Rotation {
public:
    Rotation() : matrix_(Mat3::Identity()) {}
    static Rotation identity() { return Rotation(); }
    static Rotation from_matrix(const Mat3& m);
    static Rotation from_euler_zyz(double alpha, double beta, double gamma);
    static Rotation about_z(double angle);
    static Rotation about_y(double angle);

    const Mat3& matrix() const { return matrix_; }
    Rotation inverse() const;
    Rotation operator*(const Rotation& other) const;
    Vec3 operator*(const Vec3& v) const { return matrix_ * v; }

private:
    explicit Rotation(const Mat3& m) : matrix_(m) {}
    Mat3 matrix_;
};

struct EulerZyz {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
};

// ZYZ factorization R = Rz(alpha) * Ry(beta) * Rz(gamma), beta in [0, pi].
EulerZyz euler_zyz(const Rotation& r);

// The member of the cloud nearest to the arithmetic mean.
struct Centroid {
    Eigen::Index index = 0;
    Vec3 coords = Vec3::Zero();
};

// Text format: one "x y z" triple per line, '#' comments and blank lines
// ignored. Throws with a line number on malformed input.
PointCloud load_point_cloud(const std::string& path);

// Writes the same format at 17 significant digits, so a round-trip is exact.
void save_point_cloud(const PointCloud& cloud, const std::string& path);

// Nearest point to the mean; exact ties go to the lowest index.
Centroid compute_centroid(const PointCloud& cloud);

PointCloud rotate_cloud(const PointCloud& cloud, const Rotation& r);

// Haar-uniform rotation via unit quaternion sampling.
Rotation random_rotation(Rng& rng);
Rotation random_rotation(std::uint64_t seed);

// Brute-force convex hull vertex enumeration: index i is kept iff points[i]
// is not a convex combination of any <= 4 of the other points. O(N^5)-ish;
// intended as a test oracle, capped at N <= 200.
std::vector<Eigen::Index> convex_hull_vertices(const PointCloud& cloud);

}  // namespace rotinv
