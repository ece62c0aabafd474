#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "rotinv/geometry.hpp"

namespace rotinv {

// Affine scorer mapping a per-point feature (unit direction, or distance in
// invariant mode) to a raw score; softplus makes the confidence positive.
struct AttentionParams {
    Eigen::VectorXd weight;  // size 3 (directional) or 1 (invariant)
    double bias = 0.0;
};

enum class SelectionMode { stochastic, top_k };

struct AttentionSelection {
    std::vector<Eigen::Index> indices;  // distinct, into the scored set
    Eigen::VectorXd confidences;       // all candidate confidences, > 0
    SelectionMode mode = SelectionMode::top_k;
};

// Unit directions from the centroid to every other point. The centroid's own
// index is excluded, as is any point coinciding with it (reported in
// `skipped`).
struct DirectionSet {
    Eigen::Matrix3Xd directions;                 // unit columns
    std::vector<Eigen::Index> candidate_indices; // into the cloud
    std::vector<Eigen::Index> skipped;           // coincident with centroid
};

DirectionSet unit_directions(const PointCloud& cloud, const Centroid& m);

// c_i = softplus(w . f_i + b), strictly positive. `features` holds one
// column per candidate.
Eigen::VectorXd attention_confidences(const Eigen::MatrixXd& features,
                                      const AttentionParams& params);

// Stochastic mode draws `count` distinct indices without replacement with
// probabilities c / sum(c) (sequential renormalized draws); top-k takes the
// largest confidences, ties to the lowest index. Indices refer to positions
// in `confidences`.
AttentionSelection select_attention(const Eigen::VectorXd& confidences,
                                    Eigen::Index count, SelectionMode mode,
                                    std::uint64_t seed);

double softplus(double x);
double logistic(double x);

}  // namespace rotinv
