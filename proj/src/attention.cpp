#include "rotinv/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rotinv {

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

DirectionSet unit_directions(const PointCloud& cloud, const Centroid& m) {
    if (cloud.size() < 2) {
        throw std::invalid_argument("unit_directions: need at least 2 points");
    }
    DirectionSet out;
    std::vector<Vec3> dirs;
    dirs.reserve(static_cast<std::size_t>(cloud.size()) - 1);
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        if (i == m.index) continue;
        const Vec3 diff = cloud.points.col(i) - m.coords;
        const double norm = diff.norm();
        if (norm == 0.0) {
            out.skipped.push_back(i);
            continue;
        }
        dirs.push_back(diff / norm);
        out.candidate_indices.push_back(i);
    }
    out.directions.resize(3, static_cast<Eigen::Index>(dirs.size()));
    for (Eigen::Index i = 0; i < out.directions.cols(); ++i) {
        out.directions.col(i) = dirs[static_cast<std::size_t>(i)];
    }
    return out;
}

Eigen::VectorXd attention_confidences(const Eigen::MatrixXd& features,
                                      const AttentionParams& params) {
    if (features.rows() != params.weight.size()) {
        throw std::invalid_argument(
            "attention_confidences: feature/weight size mismatch");
    }
    Eigen::VectorXd raw =
        (params.weight.transpose() * features).transpose().array() +
        params.bias;
    for (Eigen::Index i = 0; i < raw.size(); ++i) {
        raw[i] = softplus(raw[i]);
        if (!std::isfinite(raw[i])) {
            throw std::runtime_error(
                "attention_confidences: non-finite confidence");
        }
    }
    return raw;
}

AttentionSelection select_attention(const Eigen::VectorXd& confidences,
                                    Eigen::Index count, SelectionMode mode,
                                    std::uint64_t seed) {
    const Eigen::Index n = confidences.size();
    if (count < 1 || count > n) {
        throw std::invalid_argument(
            "select_attention: count outside [1, candidates]");
    }
    if (confidences.maxCoeff() <= 0.0) {
        throw std::invalid_argument("select_attention: all-zero confidences");
    }

    AttentionSelection sel;
    sel.confidences = confidences;
    sel.mode = mode;
    sel.indices.reserve(static_cast<std::size_t>(count));

    if (mode == SelectionMode::top_k) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) {
                             return confidences[a] > confidences[b];
                         });
        sel.indices.assign(order.begin(), order.begin() + count);
        return sel;
    }

    // Sequential renormalized draws without replacement.
    Rng rng(seed);
    std::vector<Eigen::Index> remaining(static_cast<std::size_t>(n));
    std::iota(remaining.begin(), remaining.end(), Eigen::Index{0});
    double total = confidences.sum();
    for (Eigen::Index draw = 0; draw < count; ++draw) {
        const double u = rng.uniform() * total;
        double acc = 0.0;
        std::size_t picked = remaining.size() - 1;
        for (std::size_t j = 0; j < remaining.size(); ++j) {
            acc += confidences[remaining[j]];
            if (u < acc) {
                picked = j;
                break;
            }
        }
        sel.indices.push_back(remaining[picked]);
        total -= confidences[remaining[picked]];
        remaining.erase(remaining.begin() +
                        static_cast<std::ptrdiff_t>(picked));
    }
    return sel;
}

}  // namespace rotinv
