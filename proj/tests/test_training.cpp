#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "rotinv/training.hpp"

using namespace rotinv;

TEST_CASE("cross entropy closed forms") {
    CHECK(cross_entropy_loss(Eigen::Vector2d(0, 0), 0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy_loss(Eigen::Vector2d(0, 0), 1) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy_loss(Eigen::Vector2d(10, -10), 0) ==
          doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Vector2d logits(5.0 * rng.gaussian(), 5.0 * rng.gaussian());
        CHECK(cross_entropy_loss(logits, 0) >= 0.0);
        CHECK(cross_entropy_loss(logits, 1) >= 0.0);
    }
    CHECK_THROWS_AS(
        cross_entropy_loss(Eigen::Vector2d(std::nan(""), 0.0), 0),
        std::invalid_argument);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(5);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Vector2d logits(rng.gaussian(), rng.gaussian());
        const int label = trial % 2;
        const Eigen::Vector2d g = cross_entropy_grad(logits, label);
        for (int i = 0; i < 2; ++i) {
            Eigen::Vector2d plus = logits, minus = logits;
            plus[i] += h;
            minus[i] -= h;
            const double fd = (cross_entropy_loss(plus, label) -
                               cross_entropy_loss(minus, label)) /
                              (2.0 * h);
            CHECK(g[i] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("adam first step and fixed point") {
    TrainConfig cfg;
    cfg.learning_rate = 0.005;

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(1);
    AdamState state = AdamState::initial(1);
    Eigen::VectorXd g = Eigen::VectorXd::Ones(1);
    adam_step(theta, g, state, cfg);
    CHECK(theta[0] == doctest::Approx(-0.005).epsilon(1e-7));

    Eigen::VectorXd frozen = Eigen::VectorXd::Constant(3, 1.25);
    AdamState state2 = AdamState::initial(3);
    for (int i = 0; i < 10; ++i) {
        adam_step(frozen, Eigen::VectorXd::Zero(3), state2, cfg);
    }
    CHECK((frozen.array() - 1.25).abs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(
        adam_step(theta, Eigen::VectorXd::Zero(2), state, cfg),
        std::invalid_argument);
}

TEST_CASE("adam runs are bit reproducible") {
    TrainConfig cfg;
    auto run = [&]() {
        Rng rng(11);
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(5);
        AdamState state = AdamState::initial(5);
        for (int step = 0; step < 25; ++step) {
            Eigen::VectorXd g(5);
            for (int i = 0; i < 5; ++i) g[i] = rng.gaussian();
            adam_step(theta, g, state, cfg);
        }
        return theta;
    };
    const Eigen::VectorXd a = run();
    const Eigen::VectorXd b = run();
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("augment_downsample selects a subset without replacement") {
    Rng rng(13);
    const PointCloud cloud = oracle::random_ball_cloud(928, rng);
    const PointCloud down = augment_downsample(cloud, 512, 7);
    CHECK(down.size() == 512);

    // Every selected point appears in the source.
    std::set<std::array<double, 3>> source;
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        source.insert({cloud.points(0, i), cloud.points(1, i),
                       cloud.points(2, i)});
    }
    std::set<std::array<double, 3>> picked;
    for (Eigen::Index i = 0; i < down.size(); ++i) {
        const std::array<double, 3> key = {down.points(0, i), down.points(1, i),
                                           down.points(2, i)};
        CHECK(source.count(key) == 1);
        picked.insert(key);
    }
    CHECK(picked.size() == 512);  // distinct

    const PointCloud all = augment_downsample(cloud, cloud.size(), 3);
    CHECK((all.points - cloud.points).cwiseAbs().maxCoeff() == 0.0);

    int differing = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const PointCloud a = augment_downsample(cloud, 512, 1000 + trial);
        const PointCloud b = augment_downsample(cloud, 512, 5000 + trial);
        if ((a.points - b.points).cwiseAbs().maxCoeff() > 0.0) ++differing;
    }
    CHECK(differing >= 1);

    CHECK_THROWS_AS(augment_downsample(down, 1000, 1), std::invalid_argument);
}

TEST_CASE("synthetic generator counts and determinism") {
    SyntheticShapeSpec spec;
    spec.points_per_cloud = 928;
    const auto a = generate_synthetic_samples(spec, 10, 42, "train");
    CHECK(a.size() == 20);
    for (const auto& s : a) {
        CHECK(s.cloud.size() == 928);
        CHECK(s.split == "train");
    }
    const auto b = generate_synthetic_samples(spec, 10, 42, "train");
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK((a[i].cloud.points - b[i].cloud.points).cwiseAbs().maxCoeff() ==
              0.0);
    }
}

TEST_CASE("synthetic classes differ in normal offset scale by about 3x") {
    SyntheticShapeSpec spec;
    spec.points_per_cloud = 928;
    spec.noise_sigma = 0.0;
    const auto samples = generate_synthetic_samples(spec, 6, 11, "train");
    double dev[2] = {0.0, 0.0};
    long long count[2] = {0, 0};
    for (const auto& s : samples) {
        for (Eigen::Index i = 0; i < s.cloud.size(); ++i) {
            const double radial = std::hypot(s.cloud.points(0, i),
                                             s.cloud.points(2, i));
            dev[s.label] += std::abs(radial - spec.arc_radius);
            ++count[s.label];
        }
    }
    const double ratio = (dev[0] / count[0]) / (dev[1] / count[1]);
    CHECK(ratio == doctest::Approx(3.0).epsilon(0.08));
}

TEST_CASE("localized thinning only changes the central sub-arc of class 1") {
    SyntheticShapeSpec spec;
    spec.points_per_cloud = 928;
    spec.noise_sigma = 0.0;
    spec.localized_thinning = true;
    const auto samples = generate_synthetic_samples(spec, 6, 13, "train");
    const double sub = spec.localized_fraction * 0.5 * spec.arc_span;
    double inner[2] = {0, 0}, outer[2] = {0, 0};
    long long inner_n[2] = {0, 0}, outer_n[2] = {0, 0};
    for (const auto& s : samples) {
        for (Eigen::Index i = 0; i < s.cloud.size(); ++i) {
            const double t =
                std::atan2(s.cloud.points(0, i), s.cloud.points(2, i));
            const double radial = std::hypot(s.cloud.points(0, i),
                                             s.cloud.points(2, i));
            const double d = std::abs(radial - spec.arc_radius);
            if (std::abs(t) <= 0.9 * sub) {
                inner[s.label] += d;
                ++inner_n[s.label];
            } else if (std::abs(t) >= 1.2 * sub) {
                outer[s.label] += d;
                ++outer_n[s.label];
            }
        }
    }
    const double inner_ratio =
        (inner[0] / inner_n[0]) / (inner[1] / inner_n[1]);
    const double outer_ratio =
        (outer[0] / outer_n[0]) / (outer[1] / outer_n[1]);
    CHECK(inner_ratio > 2.0);   // thinned region differs
    CHECK(outer_ratio == doctest::Approx(1.0).epsilon(0.1));
}

namespace {

Dataset tiny_task(int per_class, int points, std::uint64_t seed) {
    SyntheticShapeSpec spec;
    spec.points_per_cloud = points;
    spec.noise_sigma = 0.005;
    Dataset d;
    auto tr = generate_synthetic_samples(spec, per_class, seed, "train");
    d.samples.insert(d.samples.end(), tr.begin(), tr.end());
    auto te = generate_synthetic_samples(spec, per_class / 2 + 1,
                                         Rng::derive(seed, 99), "test");
    d.samples.insert(d.samples.end(), te.begin(), te.end());
    return d;
}

ModelConfig small_model_config() {
    ModelConfig cfg;
    cfg.channels_mid = 4;
    cfg.channels_out = 8;
    cfg.hull_count = 4;
    cfg.attention_count = 16;
    cfg.invariant_attention = true;
    return cfg;
}

}  // namespace

TEST_CASE("training reduces the loss and is reproducible") {
    const Dataset dataset = tiny_task(8, 160, 21);
    ModelConfig mc = small_model_config();
    TrainConfig tc;
    tc.epochs = 6;
    tc.augment_target = 120;
    tc.seed = 5;

    const TrainResult a = train(dataset, mc, tc);
    REQUIRE(a.history.size() == 6);
    CHECK(a.history.back().loss < a.history.front().loss);

    const TrainResult b = train(dataset, mc, tc);
    CHECK((a.model.params - b.model.params).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].loss == b.history[i].loss);
        CHECK(a.history[i].accuracy == b.history[i].accuracy);
    }

    TrainConfig frozen = tc;
    frozen.learning_rate = 0.0;
    frozen.epochs = 2;
    const TrainResult c = train(dataset, mc, frozen);
    const Eigen::VectorXd fresh =
        init_parameters(mc, Rng::derive(frozen.seed, 0));
    CHECK((c.model.params - fresh).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training validates its inputs") {
    Dataset empty;
    ModelConfig mc = small_model_config();
    TrainConfig tc;
    CHECK_THROWS_AS(train(empty, mc, tc), std::invalid_argument);

    Dataset single_label = tiny_task(4, 160, 3);
    for (auto& s : single_label.samples) s.label = 0;
    CHECK_THROWS_AS(train(single_label, mc, tc), std::invalid_argument);
}

TEST_CASE("evaluate on degenerate predictors") {
    const Dataset dataset = tiny_task(4, 160, 31);
    ModelConfig mc = small_model_config();
    Model model;
    model.config = mc;
    model.params = init_parameters(mc, 1);
    model.stats = RunningStats::initial(mc);
    const ParamLayout layout = ParamLayout::build(mc);
    // Zero network, bias forces class 1 everywhere.
    for (const char* name : {"s2.kernels", "so3.kernels", "fc.weight"}) {
        const auto& e = layout.find(name);
        model.params.segment(e.offset, e.size).setZero();
    }
    const auto& bias = layout.find("fc.bias");
    model.params[bias.offset] = 0.0;
    model.params[bias.offset + 1] = 1.0;

    const EvalMetrics m = evaluate(model, dataset, "test");
    CHECK(m.sensitivity == doctest::Approx(1.0));
    CHECK(m.specificity == doctest::Approx(0.0));
    CHECK(m.tp + m.fn + m.tn + m.fp ==
          static_cast<long long>(dataset.split_indices("test").size()));

    CHECK_THROWS_AS(evaluate(model, dataset, "nope"), std::invalid_argument);
}

TEST_CASE("dataset save/load round-trip") {
    const Dataset dataset = tiny_task(3, 96, 41);
    const std::string dir =
        (std::filesystem::temp_directory_path() / "rotinv_ds_test").string();
    save_dataset(dataset, dir);
    const Dataset back = load_dataset(dir + "/manifest.json");
    REQUIRE(back.samples.size() == dataset.samples.size());
    for (std::size_t i = 0; i < back.samples.size(); ++i) {
        CHECK(back.samples[i].label == dataset.samples[i].label);
        CHECK(back.samples[i].split == dataset.samples[i].split);
        CHECK((back.samples[i].cloud.points - dataset.samples[i].cloud.points)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("metrics serialization") {
    EvalMetrics m;
    m.accuracy = 0.9130434782608695;
    m.sensitivity = 29.0 / 33.0;
    m.specificity = 34.0 / 36.0;
    m.tp = 29;
    m.fn = 4;
    m.tn = 34;
    m.fp = 2;
    const std::string j = metrics_to_json(m);
    CHECK(j.find("\"tp\": 29") != std::string::npos);
    CHECK(m.sensitivity == doctest::Approx(0.8788).epsilon(1e-3));
    CHECK(m.specificity == doctest::Approx(0.9444).epsilon(1e-3));

    std::vector<EpochMetrics> hist{{1, 0.5, 0.75, 0.7, 0.8}};
    const std::string csv = history_to_csv(hist);
    CHECK(csv.find("epoch,loss,accuracy,sensitivity,specificity") == 0);
    CHECK(csv.find("1,0.5") != std::string::npos);
}
