#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rotinv/network.hpp"
#include "rotinv/training.hpp"

namespace rotinv {

struct CheckResult {
    std::string name;
    double measured = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

bool all_pass(const std::vector<CheckResult>& results);
std::string report_to_json(const std::vector<CheckResult>& results);

// Transform round-trips, quadrature normalization, and spectral-vs-direct
// convolution agreement plus left-equivariance at the given bandwidth.
std::vector<CheckResult> verify_transforms(const std::vector<int>& bandwidths,
                                           std::uint64_t seed);
std::vector<CheckResult> verify_equivariance(int bandwidth, int trials,
                                             std::uint64_t seed);

// End-to-end invariance of the eval-mode pipeline with invariant attention:
// label agreement and feature drift under grid and Haar rotations.
struct InvarianceReport {
    double grid_label_agreement = 0.0;
    double haar_label_agreement = 0.0;
    double grid_max_feature_dev = 0.0;
    double haar_max_feature_dev = 0.0;
    std::vector<CheckResult> checks;
};

InvarianceReport verify_invariance(const Model& model,
                                   const std::vector<PointCloud>& clouds,
                                   int haar_rotations, std::uint64_t seed);

// Hull membership of response-based downsampling against the brute-force
// oracle, on ellipsoid-surface (convex position) and ball-interior clouds.
struct HullReport {
    double convex_position_fraction = 0.0;  // selections that are vertices
    double argmax_vertex_fraction = 0.0;    // top-scoring point is a vertex
    double overall_vertex_fraction = 0.0;   // all selections, general clouds
    int clouds = 0;
};

HullReport hull_membership_report(int cloud_count, int points_per_cloud,
                                  Eigen::Index k, std::uint64_t seed);

}  // namespace rotinv
