#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "rotinv/geometry.hpp"
#include "rotinv/network.hpp"

namespace rotinv {

struct Sample {
    PointCloud cloud;
    int label = 0;           // {0, 1}; 1 is the positive class
    std::string split;       // "train" | "test"
    std::string path;        // where the cloud lives on disk, if anywhere
};

struct Dataset {
    std::vector<Sample> samples;

    std::vector<Eigen::Index> split_indices(const std::string& split) const;
};

struct TrainConfig {
    double learning_rate = 0.005;
    int batch_size = 4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int epochs = 60;
    std::uint64_t seed = 1;
    int augment_target = 512;  // 0 disables downsampling augmentation

    void validate() const;
};

// Bent-slab generator: points on a circular arc sheet with Gaussian
// thickness along the sheet normal. Classes differ only in thickness,
// globally or (localized mode) in the central sub-arc.
struct SyntheticShapeSpec {
    int points_per_cloud = 928;
    double arc_radius = 1.0;
    double arc_span = 2.6;        // radians
    double sheet_width = 0.5;     // extent along the arc axis
    double thickness_class0 = 0.30;  // sigma as a fraction of arc_radius
    double thickness_class1 = 0.10;
    bool localized_thinning = false;
    double localized_fraction = 0.30;  // central sub-arc share of the span
    double noise_sigma = 0.01;
    bool random_rotation = false;

    void validate() const;
};

double cross_entropy_loss(const Eigen::Vector2d& logits, int label);
Eigen::Vector2d cross_entropy_grad(const Eigen::Vector2d& logits, int label);

struct AdamState {
    Eigen::VectorXd m, v;
    long long step = 0;

    static AdamState initial(Eigen::Index size);
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
               AdamState& state, const TrainConfig& config);

// Uniform subset without replacement; kept in original index order.
PointCloud augment_downsample(const PointCloud& cloud, Eigen::Index target,
                              std::uint64_t seed);

// `count_per_class` clouds per class tagged with `split`.
std::vector<Sample> generate_synthetic_samples(const SyntheticShapeSpec& spec,
                                               int count_per_class,
                                               std::uint64_t seed,
                                               const std::string& split);

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> history;
};

TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config);

struct EvalMetrics {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    long long tp = 0, fp = 0, tn = 0, fn = 0;
};

EvalMetrics evaluate(const Model& model, const Dataset& dataset,
                     const std::string& split);
EvalMetrics evaluate(const Model& model, const NetworkContext& ctx,
                     const Dataset& dataset, const std::string& split);

// Dataset manifest: JSON list of {path, label, split}; cloud files are
// written next to the manifest.
void save_dataset(const Dataset& dataset, const std::string& directory);
Dataset load_dataset(const std::string& manifest_path);

std::string metrics_to_json(const EvalMetrics& m);
std::string history_to_csv(const std::vector<EpochMetrics>& history);

}  // namespace rotinv
