#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rotinv/cli.hpp"
#include "rotinv/training.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("param-count succeeds") {
    CHECK(rotinv::cli::run({"param-count"}) == 0);
}

TEST_CASE("unknown subcommand and missing config exit with code 2") {
    CHECK(rotinv::cli::run({"frobnicate"}) == 2);
    CHECK(rotinv::cli::run({"train", "--config", "/nonexistent.json"}) == 2);
}

TEST_CASE("config with unknown keys is rejected") {
    const fs::path dir = temp_dir("rotinv_cli_badcfg");
    const fs::path cfg = dir / "config.json";
    std::ofstream(cfg) << R"({"seed": 1, "typo_key": 2})";
    CHECK(rotinv::cli::run({"param-count", "--config", cfg.string()}) == 2);
}

TEST_CASE("generate writes a loadable dataset and its resolved config") {
    const fs::path dir = temp_dir("rotinv_cli_gen");
    std::ofstream(dir / "config.json") << R"({
      "seed": 3,
      "output_dir": ")" << (dir / "out").string() << R"(",
      "data": {
        "synthetic": {"points_per_cloud": 96},
        "train_per_class": 2,
        "test_per_class": 1
      }
    })";
    CHECK(rotinv::cli::run({"generate", "--config",
                            (dir / "config.json").string()}) == 0);
    CHECK(fs::exists(dir / "out" / "manifest.json"));
    CHECK(fs::exists(dir / "out" / "config.json"));
    const rotinv::Dataset ds =
        rotinv::load_dataset((dir / "out" / "manifest.json").string());
    CHECK(ds.samples.size() == 6);
    CHECK(ds.split_indices("train").size() == 4);
}

TEST_CASE("verify-equivariance at bandwidth 1 passes") {
    CHECK(rotinv::cli::run({"verify-equivariance", "--bandwidth", "1",
                            "--trials", "1"}) == 0);
}

TEST_CASE("hull-check runs") {
    CHECK(rotinv::cli::run({"hull-check", "--clouds", "2", "--points", "12",
                            "--k", "4"}) == 0);
}
