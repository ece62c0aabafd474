#include "rotinv/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rotinv {

using Eigen::Index;
using Eigen::VectorXd;
using nlohmann::json;

std::vector<Index> Dataset::split_indices(const std::string& split) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].split == split) {
            out.push_back(static_cast<Index>(i));
        }
    }
    return out;
}

void TrainConfig::validate() const {
    // Zero is allowed as the null optimizer; only negative rates are invalid.
    if (learning_rate < 0.0) {
        throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    }
    if (epochs < 0) {
        throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    }
    if (augment_target < 0) {
        throw std::invalid_argument("TrainConfig: augment_target must be >= 0");
    }
}

void SyntheticShapeSpec::validate() const {
    if (points_per_cloud < 64) {
        throw std::invalid_argument(
            "SyntheticShapeSpec: need at least 64 points per cloud");
    }
    if (arc_radius <= 0.0 || arc_span <= 0.0 || sheet_width <= 0.0) {
        throw std::invalid_argument("SyntheticShapeSpec: degenerate geometry");
    }
    if (thickness_class0 <= 0.0 || thickness_class1 <= 0.0 ||
        thickness_class0 == thickness_class1) {
        throw std::invalid_argument(
            "SyntheticShapeSpec: class thicknesses must be positive and "
            "distinct");
    }
    if (localized_fraction <= 0.0 || localized_fraction >= 1.0) {
        throw std::invalid_argument(
            "SyntheticShapeSpec: localized_fraction must be in (0, 1)");
    }
    if (noise_sigma < 0.0) {
        throw std::invalid_argument("SyntheticShapeSpec: negative noise");
    }
}

double cross_entropy_loss(const Eigen::Vector2d& logits, int label) {
    if (!logits.allFinite()) {
        throw std::invalid_argument("cross_entropy_loss: non-finite logits");
    }
    if (label != 0 && label != 1) {
        throw std::invalid_argument("cross_entropy_loss: label must be 0 or 1");
    }
    const double m = logits.maxCoeff();
    const double z = std::exp(logits[0] - m) + std::exp(logits[1] - m);
    return -(logits[label] - m - std::log(z));
}

Eigen::Vector2d cross_entropy_grad(const Eigen::Vector2d& logits, int label) {
    const double m = logits.maxCoeff();
    Eigen::Vector2d p = (logits.array() - m).exp();
    p /= p.sum();
    p[label] -= 1.0;
    return p;
}

AdamState AdamState::initial(Index size) {
    AdamState s;
    s.m = VectorXd::Zero(size);
    s.v = VectorXd::Zero(size);
    s.step = 0;
    return s;
}

void adam_step(VectorXd& params, const VectorXd& grads, AdamState& state,
               const TrainConfig& config) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw std::invalid_argument("adam_step: shape mismatch");
    }
    state.step += 1;
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grads;
    state.v = config.beta2 * state.v +
              (1.0 - config.beta2) * grads.cwiseProduct(grads);
    const double bc1 = 1.0 - std::pow(config.beta1, state.step);
    const double bc2 = 1.0 - std::pow(config.beta2, state.step);
    params -= (config.learning_rate / bc1) *
              (state.m.array() /
               ((state.v.array() / bc2).sqrt() + config.epsilon))
                  .matrix();
}

PointCloud augment_downsample(const PointCloud& cloud, Index target,
                              std::uint64_t seed) {
    const Index n = cloud.size();
    if (target < 1 || target > n) {
        throw std::invalid_argument(
            "augment_downsample: target outside [1, N]");
    }
    std::vector<Index> indices(static_cast<std::size_t>(n));
    std::iota(indices.begin(), indices.end(), Index{0});
    Rng rng(seed);
    for (Index i = 0; i < target; ++i) {
        const Index j =
            i + static_cast<Index>(rng.integer(static_cast<std::uint64_t>(n - i)));
        std::swap(indices[static_cast<std::size_t>(i)],
                  indices[static_cast<std::size_t>(j)]);
    }
    indices.resize(static_cast<std::size_t>(target));
    std::sort(indices.begin(), indices.end());
    PointCloud out;
    out.points.resize(3, target);
    for (Index i = 0; i < target; ++i) {
        out.points.col(i) = cloud.points.col(indices[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::vector<Sample> generate_synthetic_samples(const SyntheticShapeSpec& spec,
                                               int count_per_class,
                                               std::uint64_t seed,
                                               const std::string& split) {
    spec.validate();
    if (count_per_class < 1) {
        throw std::invalid_argument(
            "generate_synthetic_samples: count_per_class must be >= 1");
    }
    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(2 * count_per_class));
    const double half_span = 0.5 * spec.arc_span;
    const double sub_arc = spec.localized_fraction * half_span;
    for (int label = 0; label < 2; ++label) {
        for (int s = 0; s < count_per_class; ++s) {
            Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(
                                          label * 1000003 + s)));
            Sample sample;
            sample.label = label;
            sample.split = split;
            sample.cloud.points.resize(3, spec.points_per_cloud);
            for (int i = 0; i < spec.points_per_cloud; ++i) {
                const double t = (2.0 * rng.uniform() - 1.0) * half_span;
                const double w =
                    (2.0 * rng.uniform() - 1.0) * 0.5 * spec.sheet_width;
                double sigma = spec.thickness_class0;
                if (spec.localized_thinning) {
                    // Only the central sub-arc of class 1 is thinned.
                    if (label == 1 && std::abs(t) <= sub_arc) {
                        sigma = spec.thickness_class1;
                    }
                } else if (label == 1) {
                    sigma = spec.thickness_class1;
                }
                const double offset =
                    rng.gaussian() * sigma * spec.arc_radius;
                const Vec3 normal(std::sin(t), 0.0, std::cos(t));
                Vec3 p = spec.arc_radius * normal + Vec3(0.0, w, 0.0) +
                         offset * normal;
                if (spec.noise_sigma > 0.0) {
                    p += spec.noise_sigma *
                         Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
                }
                sample.cloud.points.col(i) = p;
            }
            if (spec.random_rotation) {
                const Rotation r = random_rotation(rng);
                sample.cloud = rotate_cloud(sample.cloud, r);
            }
            samples.push_back(std::move(sample));
        }
    }
    return samples;
}

TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
    model_config.validate();
    train_config.validate();
    const std::vector<Index> train_idx = dataset.split_indices("train");
    if (train_idx.empty()) {
        throw std::invalid_argument("train: empty train split");
    }
    bool has0 = false, has1 = false;
    for (const Index i : train_idx) {
        const int label = dataset.samples[static_cast<std::size_t>(i)].label;
        has0 = has0 || label == 0;
        has1 = has1 || label == 1;
    }
    if (!has0 || !has1) {
        throw std::invalid_argument("train: both labels must be present");
    }

    TrainResult result;
    result.model.config = model_config;
    result.model.params =
        init_parameters(model_config, Rng::derive(train_config.seed, 0));
    result.model.stats = RunningStats::initial(model_config);
    NetworkContext ctx(model_config);
    AdamState adam = AdamState::initial(result.model.params.size());

    const std::uint64_t shuffle_root = Rng::derive(train_config.seed, 1);
    const std::uint64_t augment_root = Rng::derive(train_config.seed, 2);
    const std::uint64_t attention_root = Rng::derive(train_config.seed, 3);

    for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
        std::vector<Index> order = train_idx;
        Rng shuffle_rng(Rng::derive(shuffle_root, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j =
                static_cast<std::size_t>(shuffle_rng.integer(i));
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        long long loss_count = 0;
        long long tp = 0, fp = 0, tn = 0, fn = 0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t batch_end = std::min(
                order.size(), pos + static_cast<std::size_t>(train_config.batch_size));
            const std::size_t batch_n = batch_end - pos;

            std::vector<PointCloud> clouds;
            std::vector<const PointCloud*> cloud_ptrs;
            std::vector<std::uint64_t> seeds;
            std::vector<int> labels;
            clouds.reserve(batch_n);
            for (std::size_t b = pos; b < batch_end; ++b) {
                const Sample& sample =
                    dataset.samples[static_cast<std::size_t>(order[b])];
                const std::uint64_t tag =
                    static_cast<std::uint64_t>(epoch) * 1000003ULL +
                    static_cast<std::uint64_t>(order[b]);
                PointCloud cloud = sample.cloud;
                if (train_config.augment_target > 0) {
                    cloud = augment_downsample(cloud, train_config.augment_target,
                                               Rng::derive(augment_root, tag));
                }
                clouds.push_back(std::move(cloud));
                seeds.push_back(Rng::derive(attention_root, tag));
                labels.push_back(sample.label);
            }
            for (const PointCloud& c : clouds) cloud_ptrs.push_back(&c);

            const ForwardTrace trace =
                forward_batch(result.model, ctx, cloud_ptrs, seeds, Mode::train,
                              &result.model.stats);
            Eigen::MatrixXd dlogits(2, static_cast<Eigen::Index>(batch_n));
            for (std::size_t b = 0; b < batch_n; ++b) {
                const Eigen::Vector2d logits = trace.samples[b].logits;
                const double loss = cross_entropy_loss(logits, labels[b]);
                if (!std::isfinite(loss)) {
                    throw std::runtime_error("train: non-finite loss at epoch " +
                                             std::to_string(epoch));
                }
                loss_sum += loss;
                ++loss_count;
                const int pred = logits[1] > logits[0] ? 1 : 0;
                if (labels[b] == 1) {
                    pred == 1 ? ++tp : ++fn;
                } else {
                    pred == 0 ? ++tn : ++fp;
                }
                dlogits.col(static_cast<Eigen::Index>(b)) =
                    cross_entropy_grad(logits, labels[b]) /
                    static_cast<double>(batch_n);
            }
            VectorXd grads = VectorXd::Zero(result.model.params.size());
            backward_batch(result.model, ctx, trace, dlogits, grads);
            adam_step(result.model.params, grads, adam, train_config);
            pos = batch_end;
        }

        // Metrics of the training passes themselves; cheap and close enough
        // to track progress.
        EpochMetrics row;
        row.epoch = epoch;
        row.loss = loss_sum / static_cast<double>(loss_count);
        row.accuracy = static_cast<double>(tp + tn) /
                       static_cast<double>(tp + tn + fp + fn);
        row.sensitivity =
            (tp + fn) == 0 ? 1.0
                           : static_cast<double>(tp) /
                                 static_cast<double>(tp + fn);
        row.specificity =
            (tn + fp) == 0 ? 1.0
                           : static_cast<double>(tn) /
                                 static_cast<double>(tn + fp);
        result.history.push_back(row);
    }
    return result;
}

EvalMetrics evaluate(const Model& model, const NetworkContext& ctx,
                     const Dataset& dataset, const std::string& split) {
    const std::vector<Index> idx = dataset.split_indices(split);
    if (idx.empty()) {
        throw std::invalid_argument("evaluate: empty split '" + split + "'");
    }
    // Logits are averaged over a fixed set of region-of-interest draws;
    // deterministic, and it removes most of the selection noise. The draws
    // run as one batch: eval-mode batchnorm is a fixed affine map, so
    // batching only saves work.
    constexpr int kEvalDraws = 8;
    EvalMetrics m;
    for (const Index i : idx) {
        const Sample& sample = dataset.samples[static_cast<std::size_t>(i)];
        std::vector<const PointCloud*> clouds(kEvalDraws, &sample.cloud);
        std::vector<std::uint64_t> seeds;
        for (int d = 0; d < kEvalDraws; ++d) {
            seeds.push_back(Rng::derive(0, static_cast<std::uint64_t>(d)));
        }
        const ForwardTrace trace =
            forward_batch(model, ctx, clouds, seeds, Mode::eval, nullptr);
        Eigen::Vector2d logits = Eigen::Vector2d::Zero();
        for (const auto& st : trace.samples) logits += st.logits;
        const int pred = logits[1] > logits[0] ? 1 : 0;
        if (sample.label == 1) {
            pred == 1 ? ++m.tp : ++m.fn;
        } else {
            pred == 0 ? ++m.tn : ++m.fp;
        }
    }
    const double total = static_cast<double>(m.tp + m.fp + m.tn + m.fn);
    m.accuracy = static_cast<double>(m.tp + m.tn) / total;
    m.sensitivity =
        (m.tp + m.fn) == 0 ? 1.0
                           : static_cast<double>(m.tp) /
                                 static_cast<double>(m.tp + m.fn);
    m.specificity =
        (m.tn + m.fp) == 0 ? 1.0
                           : static_cast<double>(m.tn) /
                                 static_cast<double>(m.tn + m.fp);
    return m;
}

EvalMetrics evaluate(const Model& model, const Dataset& dataset,
                     const std::string& split) {
    NetworkContext ctx(model.config);
    return evaluate(model, ctx, dataset, split);
}

void save_dataset(const Dataset& dataset, const std::string& directory) {
    namespace fs = std::filesystem;
    fs::create_directories(directory);
    json manifest = json::array();
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const Sample& s = dataset.samples[i];
        const std::string name = "cloud_" + std::to_string(i) + ".xyz";
        save_point_cloud(s.cloud, (fs::path(directory) / name).string());
        manifest.push_back(
            json{{"path", name}, {"label", s.label}, {"split", s.split}});
    }
    std::ofstream out(fs::path(directory) / "manifest.json");
    if (!out) {
        throw std::runtime_error("cannot write manifest in " + directory);
    }
    out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) {
        throw std::runtime_error("cannot open manifest: " + manifest_path);
    }
    json manifest;
    in >> manifest;
    if (!manifest.is_array()) {
        throw std::runtime_error("manifest must be a JSON array");
    }
    const fs::path base = fs::path(manifest_path).parent_path();
    Dataset dataset;
    for (const json& entry : manifest) {
        Sample s;
        const std::string rel = entry.at("path").get<std::string>();
        const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel)
                                                       : base / rel;
        s.path = p.string();
        s.cloud = load_point_cloud(s.path);
        s.label = entry.at("label").get<int>();
        if (s.label != 0 && s.label != 1) {
            throw std::runtime_error("manifest: label must be 0 or 1");
        }
        s.split = entry.at("split").get<std::string>();
        dataset.samples.push_back(std::move(s));
    }
    return dataset;
}

std::string metrics_to_json(const EvalMetrics& m) {
    json j{{"accuracy", m.accuracy},
           {"sensitivity", m.sensitivity},
           {"specificity", m.specificity},
           {"confusion",
            json{{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}}}};
    return j.dump(2);
}

std::string history_to_csv(const std::vector<EpochMetrics>& history) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,loss,accuracy,sensitivity,specificity\n";
    for (const auto& row : history) {
        out << row.epoch << ',' << row.loss << ',' << row.accuracy << ','
            << row.sensitivity << ',' << row.specificity << '\n';
    }
    return out.str();
}

}  // namespace rotinv
