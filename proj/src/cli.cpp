#include "rotinv/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "rotinv/network.hpp"
#include "rotinv/training.hpp"
#include "rotinv/verify.hpp"

namespace rotinv::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct DataConfig {
    std::string manifest;  // when set, load from disk
    bool synthetic = true;
    SyntheticShapeSpec spec;
    int train_per_class = 15;
    int test_per_class = 10;
    bool rotate_train = false;
    bool rotate_test = true;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "runs/out";
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
};

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw std::runtime_error("config: unknown key '" + key + "' in " +
                                     context);
        }
    }
}

ModelConfig model_from_json(const json& j) {
    check_keys(j,
               {"s2_bandwidth_in", "s2_bandwidth_out", "so3_bandwidth_in",
                "so3_bandwidth_out", "channels_in", "channels_mid",
                "channels_out", "hull_count", "attention_count",
                "radius_fraction", "invariant_attention", "normalize_scale",
                "attention_enabled", "seeded_eval_selection",
                "grid_oversample", "classes"},
               "model");
    ModelConfig c;
    c.s2_bandwidth_in = j.value("s2_bandwidth_in", c.s2_bandwidth_in);
    c.s2_bandwidth_out = j.value("s2_bandwidth_out", c.s2_bandwidth_out);
    c.so3_bandwidth_in = j.value("so3_bandwidth_in", c.so3_bandwidth_in);
    c.so3_bandwidth_out = j.value("so3_bandwidth_out", c.so3_bandwidth_out);
    c.channels_in = j.value("channels_in", c.channels_in);
    c.channels_mid = j.value("channels_mid", c.channels_mid);
    c.channels_out = j.value("channels_out", c.channels_out);
    c.hull_count = j.value("hull_count", c.hull_count);
    c.attention_count = j.value("attention_count", c.attention_count);
    c.radius_fraction = j.value("radius_fraction", c.radius_fraction);
    c.invariant_attention = j.value("invariant_attention", c.invariant_attention);
    c.normalize_scale = j.value("normalize_scale", c.normalize_scale);
    c.attention_enabled = j.value("attention_enabled", c.attention_enabled);
    c.seeded_eval_selection =
        j.value("seeded_eval_selection", c.seeded_eval_selection);
    c.grid_oversample = j.value("grid_oversample", c.grid_oversample);
    c.classes = j.value("classes", c.classes);
    return c;
}

json model_to_json(const ModelConfig& c) {
    return json{{"s2_bandwidth_in", c.s2_bandwidth_in},
                {"s2_bandwidth_out", c.s2_bandwidth_out},
                {"so3_bandwidth_in", c.so3_bandwidth_in},
                {"so3_bandwidth_out", c.so3_bandwidth_out},
                {"channels_in", c.channels_in},
                {"channels_mid", c.channels_mid},
                {"channels_out", c.channels_out},
                {"hull_count", c.hull_count},
                {"attention_count", c.attention_count},
                {"radius_fraction", c.radius_fraction},
                {"invariant_attention", c.invariant_attention},
                {"normalize_scale", c.normalize_scale},
                {"attention_enabled", c.attention_enabled},
                {"seeded_eval_selection", c.seeded_eval_selection},
                {"grid_oversample", c.grid_oversample},
                {"classes", c.classes}};
}

TrainConfig train_from_json(const json& j) {
    check_keys(j,
               {"learning_rate", "batch_size", "beta1", "beta2", "epsilon",
                "epochs", "augment_target"},
               "train");
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.epochs = j.value("epochs", c.epochs);
    c.augment_target = j.value("augment_target", c.augment_target);
    return c;
}

json train_to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"batch_size", c.batch_size},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"epsilon", c.epsilon},
                {"epochs", c.epochs},
                {"augment_target", c.augment_target}};
}

SyntheticShapeSpec spec_from_json(const json& j) {
    check_keys(j,
               {"points_per_cloud", "arc_radius", "arc_span", "sheet_width",
                "thickness_class0", "thickness_class1", "localized_thinning",
                "localized_fraction", "noise_sigma"},
               "data.synthetic");
    SyntheticShapeSpec s;
    s.points_per_cloud = j.value("points_per_cloud", s.points_per_cloud);
    s.arc_radius = j.value("arc_radius", s.arc_radius);
    s.arc_span = j.value("arc_span", s.arc_span);
    s.sheet_width = j.value("sheet_width", s.sheet_width);
    s.thickness_class0 = j.value("thickness_class0", s.thickness_class0);
    s.thickness_class1 = j.value("thickness_class1", s.thickness_class1);
    s.localized_thinning = j.value("localized_thinning", s.localized_thinning);
    s.localized_fraction = j.value("localized_fraction", s.localized_fraction);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    return s;
}

json spec_to_json(const SyntheticShapeSpec& s) {
    return json{{"points_per_cloud", s.points_per_cloud},
                {"arc_radius", s.arc_radius},
                {"arc_span", s.arc_span},
                {"sheet_width", s.sheet_width},
                {"thickness_class0", s.thickness_class0},
                {"thickness_class1", s.thickness_class1},
                {"localized_thinning", s.localized_thinning},
                {"localized_fraction", s.localized_fraction},
                {"noise_sigma", s.noise_sigma}};
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j, {"seed", "output_dir", "model", "train", "data"}, "top level");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d,
                   {"manifest", "synthetic", "train_per_class",
                    "test_per_class", "rotate_train", "rotate_test"},
                   "data");
        if (d.contains("manifest")) {
            c.data.manifest = d.at("manifest").get<std::string>();
            c.data.synthetic = false;
        }
        if (d.contains("synthetic")) {
            c.data.spec = spec_from_json(d.at("synthetic"));
            c.data.synthetic = true;
        }
        c.data.train_per_class = d.value("train_per_class", c.data.train_per_class);
        c.data.test_per_class = d.value("test_per_class", c.data.test_per_class);
        c.data.rotate_train = d.value("rotate_train", c.data.rotate_train);
        c.data.rotate_test = d.value("rotate_test", c.data.rotate_test);
    }
    return c;
}

json run_config_to_json(const RunConfig& c) {
    json data;
    if (!c.data.manifest.empty()) {
        data["manifest"] = c.data.manifest;
    } else {
        data["synthetic"] = spec_to_json(c.data.spec);
        data["train_per_class"] = c.data.train_per_class;
        data["test_per_class"] = c.data.test_per_class;
        data["rotate_train"] = c.data.rotate_train;
        data["rotate_test"] = c.data.rotate_test;
    }
    return json{{"seed", c.seed},
                {"output_dir", c.output_dir},
                {"model", model_to_json(c.model)},
                {"train", train_to_json(c.train)},
                {"data", data}};
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config: " + path);
    }
    json j;
    in >> j;
    return run_config_from_json(j);
}

Dataset build_dataset(const RunConfig& cfg) {
    if (!cfg.data.manifest.empty()) {
        return load_dataset(cfg.data.manifest);
    }
    Dataset dataset;
    SyntheticShapeSpec train_spec = cfg.data.spec;
    train_spec.random_rotation = cfg.data.rotate_train;
    SyntheticShapeSpec test_spec = cfg.data.spec;
    test_spec.random_rotation = cfg.data.rotate_test;
    auto train_samples = generate_synthetic_samples(
        train_spec, cfg.data.train_per_class, Rng::derive(cfg.seed, 10),
        "train");
    auto test_samples = generate_synthetic_samples(
        test_spec, cfg.data.test_per_class, Rng::derive(cfg.seed, 11), "test");
    dataset.samples.insert(dataset.samples.end(), train_samples.begin(),
                           train_samples.end());
    dataset.samples.insert(dataset.samples.end(), test_samples.begin(),
                           test_samples.end());
    return dataset;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? "."
                                                      : path.parent_path());
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

void write_resolved_config(const RunConfig& cfg) {
    write_text(fs::path(cfg.output_dir) / "config.json",
               run_config_to_json(cfg).dump(2));
}

int cmd_generate(const RunConfig& cfg) {
    if (!cfg.data.manifest.empty()) {
        throw std::runtime_error("generate: config must use synthetic data");
    }
    const Dataset dataset = build_dataset(cfg);
    save_dataset(dataset, cfg.output_dir);
    write_resolved_config(cfg);
    std::cout << "wrote " << dataset.samples.size() << " clouds to "
              << cfg.output_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    const Dataset dataset = build_dataset(cfg);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const TrainResult result = train(dataset, cfg.model, tc);
    fs::create_directories(cfg.output_dir);
    save_checkpoint(result.model, (fs::path(cfg.output_dir) / "checkpoint.json").string());
    write_text(fs::path(cfg.output_dir) / "metrics.csv",
               history_to_csv(result.history));
    const bool has_test = !dataset.split_indices("test").empty();
    const EvalMetrics metrics =
        evaluate(result.model, dataset, has_test ? "test" : "train");
    write_text(fs::path(cfg.output_dir) / "metrics.json",
               metrics_to_json(metrics));
    write_resolved_config(cfg);
    std::cout << metrics_to_json(metrics) << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
             const std::string& split) {
    const Model model = load_checkpoint(checkpoint);
    const Dataset dataset = build_dataset(cfg);
    const EvalMetrics metrics = evaluate(model, dataset, split);
    std::cout << metrics_to_json(metrics) << "\n";
    return 0;
}

int cmd_extract(const RunConfig& cfg, const std::string& checkpoint,
                const std::string& out_path) {
    const Model model = load_checkpoint(checkpoint);
    const Dataset dataset = build_dataset(cfg);
    NetworkContext ctx(model.config);
    std::ostringstream csv;
    csv.precision(17);
    csv << "path,label,split";
    for (int c = 0; c < model.config.channels_out; ++c) csv << ",f" << c;
    csv << "\n";
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const Sample& s = dataset.samples[i];
        const ForwardOutput out =
            forward(model, ctx, s.cloud, 0, Mode::eval, nullptr);
        csv << (s.path.empty() ? "cloud_" + std::to_string(i) : s.path) << ','
            << s.label << ',' << s.split;
        for (Eigen::Index c = 0; c < out.feature.size(); ++c) {
            csv << ',' << out.feature[c];
        }
        csv << "\n";
    }
    write_text(out_path, csv.str());
    std::cout << "wrote features for " << dataset.samples.size()
              << " samples to " << out_path << "\n";
    return 0;
}

void print_checks(const std::vector<CheckResult>& checks) {
    for (const auto& c : checks) {
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name
                  << "  measured=" << std::scientific << std::setprecision(3)
                  << c.measured << " threshold=" << c.threshold
                  << std::defaultfloat << "\n";
    }
}

int cmd_verify_equivariance(int bandwidth, int trials, std::uint64_t seed,
                            const std::string& out_path) {
    std::vector<CheckResult> checks = verify_transforms({bandwidth}, seed);
    const auto equiv = verify_equivariance(bandwidth, trials, seed);
    checks.insert(checks.end(), equiv.begin(), equiv.end());
    print_checks(checks);
    if (!out_path.empty()) write_text(out_path, report_to_json(checks));
    return all_pass(checks) ? 0 : 1;
}

int cmd_verify_invariance(const RunConfig& cfg, const std::string& checkpoint,
                          int clouds, int rotations,
                          const std::string& out_path) {
    Model model;
    if (!checkpoint.empty()) {
        model = load_checkpoint(checkpoint);
    } else {
        model.config = cfg.model;
        model.config.invariant_attention = true;
        model.params = init_parameters(model.config, Rng::derive(cfg.seed, 21));
        model.stats = RunningStats::initial(model.config);
    }
    SyntheticShapeSpec spec = cfg.data.spec;
    spec.random_rotation = false;
    const auto samples = generate_synthetic_samples(
        spec, std::max(1, clouds / 2), Rng::derive(cfg.seed, 22), "test");
    std::vector<PointCloud> point_clouds;
    for (const auto& s : samples) point_clouds.push_back(s.cloud);
    const InvarianceReport report =
        verify_invariance(model, point_clouds, rotations, Rng::derive(cfg.seed, 23));
    print_checks(report.checks);
    std::cout << "max feature deviation: grid=" << std::scientific
              << std::setprecision(3) << report.grid_max_feature_dev
              << " haar=" << report.haar_max_feature_dev << std::defaultfloat
              << "\n";
    if (!out_path.empty()) {
        json j;
        j["grid_label_agreement"] = report.grid_label_agreement;
        j["haar_label_agreement"] = report.haar_label_agreement;
        j["grid_max_feature_dev"] = report.grid_max_feature_dev;
        j["haar_max_feature_dev"] = report.haar_max_feature_dev;
        write_text(out_path, j.dump(2));
    }
    return all_pass(report.checks) ? 0 : 1;
}

int cmd_hull_check(int clouds, int points, int k, std::uint64_t seed) {
    const HullReport report = hull_membership_report(
        clouds, points, static_cast<Eigen::Index>(k), seed);
    std::cout << "clouds checked:                " << report.clouds << "\n"
              << "convex-position membership:    "
              << report.convex_position_fraction << "\n"
              << "argmax vertex fraction:        "
              << report.argmax_vertex_fraction << "\n"
              << "overall selection membership:  "
              << report.overall_vertex_fraction << "\n";
    return 0;
}

int cmd_param_count(const RunConfig& cfg) {
    const ParameterCount pc = parameter_count(cfg.model);
    std::cout << "parameter count\n";
    for (const auto& item : pc.items) {
        std::ostringstream shape;
        shape << "[";
        for (std::size_t i = 0; i < item.shape.size(); ++i) {
            shape << (i ? "x" : "") << item.shape[i];
        }
        shape << "]";
        std::cout << "  " << std::left << std::setw(18) << item.name
                  << std::setw(14) << shape.str() << std::right << std::setw(8)
                  << item.count << "\n";
    }
    std::cout << "  " << std::left << std::setw(32) << "total" << std::right
              << std::setw(8) << pc.total << "\n";
    std::cout << "reference architecture total: 2201 (kernel storage "
                 "convention differs; see README)\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"rotation-invariant point-cloud classification pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::uint64_t seed_override = 0;
    bool seed_set = false;
    std::string output_dir_override;
    app.add_option("--config", config_path, "run configuration JSON")
        ->expected(1);
    app.add_option_function<std::uint64_t>(
           "--seed",
           [&](const std::uint64_t s) {
               seed_override = s;
               seed_set = true;
           },
           "master seed override");
    app.add_option("--output-dir", output_dir_override,
                   "output directory override");

    auto* c_generate = app.add_subcommand("generate", "write a synthetic dataset");
    auto* c_train = app.add_subcommand("train", "train a model");
    int epochs_override = -1;
    double lr_override = -1.0;
    int batch_override = -1;
    c_train->add_option("--epochs", epochs_override, "epoch count override");
    c_train->add_option("--learning-rate", lr_override, "learning rate override");
    c_train->add_option("--batch-size", batch_override, "batch size override");

    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_checkpoint, eval_split = "test";
    c_eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path")
        ->required();
    c_eval->add_option("--split", eval_split, "dataset split");

    auto* c_extract = app.add_subcommand("extract", "write per-sample features");
    std::string extract_checkpoint, extract_out = "features.csv";
    c_extract->add_option("--checkpoint", extract_checkpoint, "checkpoint path")
        ->required();
    c_extract->add_option("--out", extract_out, "output CSV path");

    auto* c_veq = app.add_subcommand("verify-equivariance",
                                     "transform and convolution property suite");
    int veq_bandwidth = 2;
    int veq_trials = 3;
    std::string veq_out;
    c_veq->add_option("--bandwidth", veq_bandwidth, "bandwidth");
    c_veq->add_option("--trials", veq_trials, "random trials");
    c_veq->add_option("--out", veq_out, "report JSON path");

    auto* c_vin = app.add_subcommand("verify-invariance",
                                     "end-to-end invariance suite");
    std::string vin_checkpoint, vin_out;
    int vin_clouds = 6;
    int vin_rotations = 50;
    c_vin->add_option("--checkpoint", vin_checkpoint, "checkpoint path");
    c_vin->add_option("--clouds", vin_clouds, "cloud count");
    c_vin->add_option("--rotations", vin_rotations, "random rotations per cloud");
    c_vin->add_option("--out", vin_out, "report JSON path");

    auto* c_hull = app.add_subcommand("hull-check",
                                      "hull membership of response downsampling");
    int hull_clouds = 20;
    int hull_points = 24;
    int hull_k = 8;
    c_hull->add_option("--clouds", hull_clouds, "clouds per family");
    c_hull->add_option("--points", hull_points, "points per cloud");
    c_hull->add_option("--k", hull_k, "selection size");

    auto* c_pc = app.add_subcommand("param-count", "itemized parameter table");

    std::vector<char*> argv;
    std::vector<std::string> storage = args;
    storage.insert(storage.begin(), "rotinv");
    argv.reserve(storage.size());
    for (auto& s : storage) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg = load_run_config(config_path);
        if (seed_set) cfg.seed = seed_override;
        if (!output_dir_override.empty()) cfg.output_dir = output_dir_override;
        if (c_train->parsed()) {
            if (epochs_override >= 0) cfg.train.epochs = epochs_override;
            if (lr_override > 0.0) cfg.train.learning_rate = lr_override;
            if (batch_override > 0) cfg.train.batch_size = batch_override;
            return cmd_train(cfg);
        }
        if (c_generate->parsed()) return cmd_generate(cfg);
        if (c_eval->parsed()) return cmd_eval(cfg, eval_checkpoint, eval_split);
        if (c_extract->parsed()) {
            return cmd_extract(cfg, extract_checkpoint, extract_out);
        }
        if (c_veq->parsed()) {
            return cmd_verify_equivariance(veq_bandwidth, veq_trials, cfg.seed,
                                           veq_out);
        }
        if (c_vin->parsed()) {
            return cmd_verify_invariance(cfg, vin_checkpoint, vin_clouds,
                                         vin_rotations, vin_out);
        }
        if (c_hull->parsed()) {
            return cmd_hull_check(hull_clouds, hull_points, hull_k, cfg.seed);
        }
        if (c_pc->parsed()) return cmd_param_count(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace rotinv::cli
