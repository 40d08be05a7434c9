#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "graphdet/config.hpp"

using namespace graphdet;

namespace {

std::string temp_file(const std::string& name, const std::string& body) {
    const std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream f(path, std::ios::trunc);
    f << body;
    return path;
}

}  // namespace

TEST(Config, ParsesKeyValueFile) {
    const std::string path = temp_file("graphdet_cfg.txt",
                                       "# comment line\n"
                                       "seed = 42\n"
                                       "pc_epochs=7   # trailing comment\n"
                                       "use_pc = false\n"
                                       "pc_variant = no_ge\n"
                                       "gnn_scales = 4,8\n"
                                       "\n");
    RunConfig cfg;
    apply_config_file(cfg, path);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.pc_epochs, 7u);
    EXPECT_FALSE(cfg.use_pc);
    EXPECT_EQ(cfg.pc_variant, "no_ge");
    EXPECT_EQ(cfg.parsed_scales(), (std::vector<int>{4, 8}));
    std::remove(path.c_str());
}

TEST(Config, UnknownKeyRejected) {
    const std::string path = temp_file("graphdet_cfg_bad.txt", "does_not_exist = 3\n");
    RunConfig cfg;
    EXPECT_THROW(apply_config_file(cfg, path), ConfigError);
    std::remove(path.c_str());

    const std::string path2 = temp_file("graphdet_cfg_bad2.txt", "seed = not_a_number\n");
    EXPECT_THROW(apply_config_file(cfg, path2), ConfigError);
    std::remove(path2.c_str());
}

TEST(Config, EveryFieldEchoedAndReparseable) {
    RunConfig cfg;
    cfg.seed = 9;
    cfg.lambda_adv = 0.25;
    cfg.use_ga = false;
    cfg.gnn_scales = "2,4,8";
    auto m = config_to_map(cfg);
    EXPECT_EQ(m.at("seed"), "9");
    EXPECT_EQ(m.at("use_ga"), "0");
    EXPECT_EQ(m.at("gnn_scales"), "2,4,8");

    // manifest parses back to the identical configuration
    const std::string path = (std::filesystem::temp_directory_path() / "graphdet_manifest.txt").string();
    write_manifest(path, cfg, "abc123", "train-pc");
    RunConfig back;
    apply_config_file(back, path);
    EXPECT_EQ(config_to_map(back), m);
    std::remove(path.c_str());
}

TEST(Config, DerivedConfigsValidate) {
    RunConfig cfg;
    EXPECT_NO_THROW(cfg.completion_config());
    EXPECT_NO_THROW(cfg.detect_config());
    EXPECT_EQ(cfg.detect_config().gnn.scales, (std::vector<int>{8, 16}));

    cfg.pc_m2 = 100;  // not a multiple of m1
    EXPECT_THROW(cfg.completion_config(), ConfigError);
    cfg.pc_m2 = 256;
    cfg.bin_size = 0.7;  // range/bin not integral
    EXPECT_THROW(cfg.detect_config(), ConfigError);
    cfg.bin_size = 0.5;
    cfg.pc_variant = "bogus";
    EXPECT_THROW(cfg.completion_config(), ConfigError);
}

