#include "rotinv/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rotinv {

namespace {

void check_rotation(const Mat3& m) {
    const double ortho = (m.transpose() * m - Mat3::Identity())
                             .cwiseAbs()
                             .maxCoeff();
    if (ortho > 1e-12) {
        throw std::invalid_argument("rotation matrix is not orthonormal");
    }
    if (std::abs(m.determinant() - 1.0) > 1e-12) {
        throw std::invalid_argument("rotation matrix determinant is not +1");
    }
}

}  // namespace

Rotation Rotation::from_matrix(const Mat3& m) {
    check_rotation(m);
    return Rotation(m);
}

Rotation Rotation::from_euler_zyz(double alpha, double beta, double gamma) {
    const Mat3 m = (Eigen::AngleAxisd(alpha, Vec3::UnitZ()) *
                    Eigen::AngleAxisd(beta, Vec3::UnitY()) *
                    Eigen::AngleAxisd(gamma, Vec3::UnitZ()))
                       .toRotationMatrix();
    return Rotation(m);
}

Rotation Rotation::about_z(double angle) {
    return Rotation(Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix());
}

Rotation Rotation::about_y(double angle) {
    return Rotation(Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix());
}

Rotation Rotation::inverse() const { return Rotation(matrix_.transpose()); }

Rotation Rotation::operator*(const Rotation& other) const {
    return Rotation(matrix_ * other.matrix_);
}

EulerZyz euler_zyz(const Rotation& r) {
    const Mat3& m = r.matrix();
    EulerZyz e;
    // atan2 keeps beta well conditioned near the poles, where acos(m22) is
    // dominated by round-off.
    const double sb = std::hypot(m(0, 2), m(1, 2));
    e.beta = std::atan2(sb, m(2, 2));
    if (sb > 1e-11) {
        e.alpha = std::atan2(m(1, 2), m(0, 2));
        e.gamma = std::atan2(m(2, 1), -m(2, 0));
    } else if (m(2, 2) > 0.0) {
        // beta ~ 0: R ~ Rz(alpha + gamma)
        e.beta = 0.0;
        e.alpha = std::atan2(m(1, 0), m(0, 0));
        e.gamma = 0.0;
    } else {
        // beta ~ pi: R ~ Rz(alpha - gamma) Ry(pi)
        e.beta = 3.14159265358979323846;
        e.alpha = std::atan2(-m(0, 1), -m(0, 0));
        e.gamma = 0.0;
    }
    return e;
}

PointCloud load_point_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open point cloud file: " + path);
    }
    std::vector<Vec3> points;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x >> y >> z)) {
            throw std::runtime_error(path + ": malformed line " +
                                     std::to_string(line_no));
        }
        std::string trailing;
        if (ls >> trailing) {
            throw std::runtime_error(path + ": malformed line " +
                                     std::to_string(line_no) +
                                     " (extra fields)");
        }
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
            throw std::runtime_error(path + ": non-finite value at line " +
                                     std::to_string(line_no));
        }
        points.emplace_back(x, y, z);
    }
    if (points.empty()) {
        throw std::runtime_error(path + ": no data lines");
    }
    PointCloud cloud;
    cloud.points.resize(3, static_cast<Eigen::Index>(points.size()));
    for (Eigen::Index i = 0; i < cloud.points.cols(); ++i) {
        cloud.points.col(i) = points[static_cast<std::size_t>(i)];
    }
    return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write point cloud file: " + path);
    }
    out.precision(17);
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        out << cloud.points(0, i) << ' ' << cloud.points(1, i) << ' '
            << cloud.points(2, i) << '\n';
    }
}

Centroid compute_centroid(const PointCloud& cloud) {
    if (cloud.size() < 1) {
        throw std::invalid_argument("compute_centroid: empty cloud");
    }
    const Vec3 mean = cloud.points.rowwise().mean();
    Centroid c;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        const double d2 = (cloud.points.col(i) - mean).squaredNorm();
        if (d2 < best) {
            best = d2;
            c.index = i;
        }
    }
    c.coords = cloud.points.col(c.index);
    return c;
}

PointCloud rotate_cloud(const PointCloud& cloud, const Rotation& r) {
    PointCloud out;
    out.points = r.matrix() * cloud.points;
    return out;
}

Rotation random_rotation(Rng& rng) {
    // Uniform unit quaternion -> Haar-uniform rotation.
    Eigen::Vector4d q;
    double n2 = 0.0;
    do {
        for (int i = 0; i < 4; ++i) q[i] = rng.gaussian();
        n2 = q.squaredNorm();
    } while (n2 < 1e-12);
    q /= std::sqrt(n2);
    const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    return Rotation::from_matrix(quat.toRotationMatrix());
}

Rotation random_rotation(std::uint64_t seed) {
    Rng rng(seed);
    return random_rotation(rng);
}

namespace {

// Is `target` a convex combination of the columns listed in `subset`?
// Solves the barycentric system with a least-squares fallback for the
// rank-deficient (collinear/coplanar) cases.
bool in_convex_hull_of(const Eigen::Matrix3Xd& pts,
                       const std::vector<Eigen::Index>& subset,
                       const Vec3& target, double tol) {
    const int k = static_cast<int>(subset.size());
    Eigen::MatrixXd a(4, k);
    for (int j = 0; j < k; ++j) {
        a.block<3, 1>(0, j) = pts.col(subset[static_cast<std::size_t>(j)]);
        a(3, j) = 1.0;
    }
    Eigen::Vector4d b;
    b << target, 1.0;
    const Eigen::VectorXd lambda =
        a.colPivHouseholderQr().solve(b);
    if ((a * lambda - b).cwiseAbs().maxCoeff() > tol) return false;
    return lambda.minCoeff() >= -tol;
}

}  // namespace

std::vector<Eigen::Index> convex_hull_vertices(const PointCloud& cloud) {
    const Eigen::Index n = cloud.size();
    if (n > 200) {
        throw std::invalid_argument(
            "convex_hull_vertices: brute-force oracle capped at 200 points");
    }
    double spread = 0.0;
    const Vec3 mean = cloud.points.rowwise().mean();
    for (Eigen::Index i = 0; i < n; ++i) {
        spread = std::max(spread, (cloud.points.col(i) - mean).norm());
    }
    if (spread <= 0.0) {
        throw std::invalid_argument(
            "convex_hull_vertices: all points coincide");
    }
    const double tol = 1e-9 * std::max(1.0, spread);

    // Strict separating direction: conclusive proof that i is a vertex,
    // checked before the exhaustive subset search. The candidate directions
    // are the outward offset from the mean and the residual of a short
    // projection descent onto the hull of the others.
    const auto vertex_certificate = [&](Eigen::Index i) {
        const Vec3 target = cloud.points.col(i);
        std::vector<Vec3> candidates;
        candidates.push_back(target - mean);
        {
            // Frank-Wolfe steps toward the nearest point of conv(others).
            Vec3 current = mean;
            for (int it = 0; it < 64; ++it) {
                const Vec3 d = current - target;
                Eigen::Index best = -1;
                double best_dot = std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const double dot = d.dot(cloud.points.col(j));
                    if (dot < best_dot) {
                        best_dot = dot;
                        best = j;
                    }
                }
                const Vec3 s = cloud.points.col(best);
                const Vec3 diff = current - s;
                const double denom = diff.squaredNorm();
                if (denom <= 0.0) break;
                const double step =
                    std::clamp(diff.dot(current - target) / denom, 0.0, 1.0);
                current -= step * diff;
            }
            candidates.push_back(target - current);
        }
        for (const Vec3& dir : candidates) {
            if (dir.norm() < tol) continue;
            const Vec3 d = dir.normalized();
            const double own = d.dot(target);
            double best = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j != i) best = std::max(best, d.dot(cloud.points.col(j)));
            }
            if (own > best + 10.0 * tol) return true;
        }
        return false;
    };

    std::vector<Eigen::Index> others;
    others.reserve(static_cast<std::size_t>(n) - 1);
    std::vector<Eigen::Index> vertices;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (vertex_certificate(i)) {
            vertices.push_back(i);
            continue;
        }
        others.clear();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) others.push_back(j);
        }
        const Vec3 target = cloud.points.col(i);
        bool inside = false;
        const std::size_t m = others.size();
        // Caratheodory: membership in the hull of the others is witnessed by
        // a subset of at most 4 points.
        for (std::size_t a = 0; a < m && !inside; ++a) {
            if (in_convex_hull_of(cloud.points, {others[a]}, target, tol)) {
                inside = true;
                break;
            }
            for (std::size_t b = a + 1; b < m && !inside; ++b) {
                if (in_convex_hull_of(cloud.points, {others[a], others[b]},
                                      target, tol)) {
                    inside = true;
                    break;
                }
                for (std::size_t c = b + 1; c < m && !inside; ++c) {
                    if (in_convex_hull_of(
                            cloud.points, {others[a], others[b], others[c]},
                            target, tol)) {
                        inside = true;
                        break;
                    }
                    for (std::size_t d = c + 1; d < m; ++d) {
                        if (in_convex_hull_of(cloud.points,
                                              {others[a], others[b], others[c],
                                               others[d]},
                                              target, tol)) {
                            inside = true;
                            break;
                        }
                    }
                }
            }
        }
        if (!inside) vertices.push_back(i);
    }
    return vertices;
}

}  // namespace rotinv
