#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "atlas/commands.hpp"
#include "support/oracles.hpp"

using namespace atlas;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("atlas_cli_" + std::to_string(::getpid()) + "_" +
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void write(const std::string& name, const std::string& text) const { io::write_text_file(path(name), text); }

    std::string read(const std::string& name) const {
        std::ifstream in(path(name), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    int run(const std::string& args) const {
        const std::string cmd = std::string("cd ") + dir_.string() + " && ATLAS_THREADS=1 " + ATLAS_CLI_PATH + " " + args +
                                " > " + path("stdout.txt") + " 2> " + path("stderr.txt");
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    void expect_identical_outputs(const std::string& a, const std::string& b) const {
        std::size_t compared = 0;
        for (const auto& entry : fs::directory_iterator(dir_ / a)) {
            const std::string name = entry.path().filename().string();
            if (name == "meta.json") continue;
            EXPECT_EQ(read(a + "/" + name), read(b + "/" + name)) << name;
            ++compared;
        }
        EXPECT_GT(compared, 1u);
    }

    fs::path dir_;
};

void write_system(const std::string& file, const LinearSystem& sys) { io::write_text_file(file, io::dump(io::to_json(sys))); }

}  // namespace

TEST_F(Cli, EnumerateToySummary) {
    write_system(path("toy.json"), oracle::toy_system());
    ASSERT_EQ(run("enumerate --system toy.json --out out"), 0) << read("stderr.txt");
    const std::string summary = read("out/summary.txt");
    EXPECT_NE(summary.find("isolated solutions: 2\n"), std::string::npos);
    EXPECT_NE(summary.find("continuum: yes\n"), std::string::npos);
    const auto j = io::json::parse(read("out/solutions.json"));
    const int k = j["summary"]["stable_index"].get<int>();
    ASSERT_GE(k, 0);
    const Matrix p = io::matrix_from_json(j["solutions"][static_cast<std::size_t>(k)]["P"], "P");
    EXPECT_LE((p - (1.0 + std::sqrt(2.0)) * Matrix::Identity(2, 2)).norm(), 1e-10);
    EXPECT_EQ(j["family_samples"].size(), 16u);
    EXPECT_TRUE(fs::exists(path("out/meta.json")));
}

TEST_F(Cli, EnumerateRandomThreeStateSystem) {
    std::mt19937_64 rng(77);
    write_system(path("sys.json"), oracle::random_real_spectrum_system(3, rng));
    write("cfg.json", R"({"system": "sys.json", "seeds": [3]})");
    ASSERT_EQ(run("enumerate --config cfg.json --out out"), 0) << read("stderr.txt");
    const auto j = io::json::parse(read("out/solutions.json"));
    EXPECT_EQ(j["summary"]["count_isolated"].get<int>(), 20);
    int stable = 0;
    for (const auto& s : j["solutions"]) stable += s["stable"].get<bool>() ? 1 : 0;
    EXPECT_EQ(stable, 1);
    EXPECT_EQ(read("out/config.json"), read("cfg.json"));
}

TEST_F(Cli, EnumerationCapExitsThree) {
    LinearSystem sys;
    sys.A = Matrix::Identity(13, 13);
    sys.B = sys.Q = Matrix::Identity(13, 13);
    sys.R = Matrix::Identity(13, 13);
    write_system(path("big.json"), sys);
    EXPECT_EQ(run("enumerate --system big.json --out out"), 3);
    EXPECT_FALSE(fs::exists(path("out")));
}

TEST_F(Cli, ValidationFailuresExitTwo) {
    auto sys = oracle::toy_system();
    sys.R(0, 0) = -1.0;
    write_system(path("bad.json"), sys);
    EXPECT_EQ(run("enumerate --system bad.json --out out"), 2);
    write("broken.json", "{\"model\": ");
    EXPECT_EQ(run("train --config broken.json --out out"), 2);
    write("unknown.json", R"({"model": "cartpole", "train": {"epoch": 3}})");
    EXPECT_EQ(run("train --config unknown.json --out out"), 2);
    write("model.json", R"({"model": "pendulum"})");
    EXPECT_EQ(run("train --config model.json --out out"), 2);
    EXPECT_EQ(run("train --out out"), 2);
    EXPECT_EQ(run("frobnicate --out out"), 2);
    EXPECT_FALSE(fs::exists(path("out")));
}

TEST_F(Cli, RefusesToClobberForeignDirectory) {
    write_system(path("toy.json"), oracle::toy_system());
    fs::create_directories(path("keep"));
    write("keep/notes.txt", "mine");
    EXPECT_NE(run("enumerate --system toy.json --out keep"), 0);
    EXPECT_EQ(read("keep/notes.txt"), "mine");
    ASSERT_EQ(run("enumerate --system toy.json --out out"), 0);
    ASSERT_EQ(run("enumerate --system toy.json --out out --family-samples 4"), 0);
    EXPECT_EQ(io::json::parse(read("out/solutions.json"))["family_samples"].size(), 4u);
    for (const auto& entry : fs::directory_iterator(dir_))
        EXPECT_EQ(entry.path().filename().string().find(".tmp"), std::string::npos);
}

TEST_F(Cli, TrainEvalRoundTripAndHashCheck) {
    write_system(path("toy.json"), oracle::toy_system());
    write("train.json", R"({"model": "linear:toy.json", "seeds": [1, 2],
        "train": {"epochs": 3, "widths": [16, 8], "eval_rollouts": 4, "eval_steps": 300}})");
    ASSERT_EQ(run("train --config train.json --out run"), 0) << read("stderr.txt");
    EXPECT_TRUE(fs::exists(path("run/checkpoint_seed1.json")));
    EXPECT_TRUE(fs::exists(path("run/history_seed2.csv")));

    write("eval.json", R"({"model": "linear:toy.json", "seeds": [1, 2], "checkpoints": "run",
        "train": {"epochs": 3, "widths": [16, 8], "eval_rollouts": 4, "eval_steps": 300}})");
    ASSERT_EQ(run("eval --config eval.json --out eval"), 0) << read("stderr.txt");
    // same starts and horizon as the final evaluation inside train
    const auto trained = io::json::parse(read("run/results.json"));
    const auto evaluated = io::json::parse(read("eval/results.json"));
    for (std::size_t i = 0; i < 2; ++i)
        EXPECT_EQ(trained["runs"][i]["mean_cost"].get<double>(), evaluated["runs"][i]["mean_cost"].get<double>());
    EXPECT_EQ(read("eval/results.csv").substr(0, 15), "seed,mean_cost,");

    write("other.json", R"({"model": "linear:toy.json", "seeds": [1], "checkpoints": "run",
        "train": {"epochs": 4, "widths": [16, 8], "eval_rollouts": 4, "eval_steps": 300}})");
    EXPECT_EQ(run("eval --config other.json --out eval2"), 4);
    EXPECT_EQ(run("eval --config eval.json --kind generic --out eval3"), 4);
    EXPECT_NE(run("eval --config eval.json --seed 9 --out eval4"), 0);
}

TEST_F(Cli, RerunsAreByteIdentical) {
    write_system(path("toy.json"), oracle::toy_system());
    write("enum.json", R"({"system": "toy.json", "family_samples": 8, "seeds": [5]})");
    write("tab.json", R"({"mdps": 4, "inits": 3, "max_states": 12})");
    write("fm.json", R"({"seeds": [1, 2], "initializers": ["lecun_normal", "uniform"], "grid": 11,
        "train": {"widths": [8, 8], "epochs": 2, "uniform_samples": 300, "eval_steps": 100}})");
    write("train.json", R"({"model": "cartpole", "seeds": [3],
        "train": {"epochs": 2, "widths": [8, 8], "rollouts_per_epoch": 2, "max_traj_len": 20, "eval_rollouts": 3}})");
    for (const std::string cmd : {"enumerate --config enum.json", "tabular --config tab.json",
                                  "failure-mode --config fm.json", "train --config train.json"}) {
        ASSERT_EQ(run(cmd + " --out a"), 0) << cmd << ": " << read("stderr.txt");
        ASSERT_EQ(run(cmd + " --out b"), 0) << cmd << ": " << read("stderr.txt");
        expect_identical_outputs("a", "b");
        fs::remove_all(path("a"));
        fs::remove_all(path("b"));
    }
}

TEST_F(Cli, FailureModeWritesPerRunArtifacts) {
    write("fm.json", R"({"seeds": [4], "grid": 9,
        "train": {"widths": [8], "epochs": 2, "uniform_samples": 200, "eval_rollouts": 10, "eval_steps": 50}})");
    ASSERT_EQ(run("failure-mode --config fm.json --out out"), 0) << read("stderr.txt");
    const auto j = io::json::parse(read("out/classification.json"));
    ASSERT_EQ(j["runs"].size(), 1u);
    EXPECT_EQ(j["runs"][0]["eval"]["diverged"].size(), 10u);
    EXPECT_TRUE(fs::exists(path("out/surface_lecun_normal_seed4.csv")));
    EXPECT_TRUE(fs::exists(path("out/history_lecun_normal_seed4.csv")));
    std::istringstream surface(read("out/surface_lecun_normal_seed4.csv"));
    std::string line;
    int rows = 0;
    while (std::getline(surface, line)) ++rows;
    EXPECT_EQ(rows, 1 + 9 * 9);
}

TEST_F(Cli, SeedFlagOverridesConfig) {
    write("tab.json", R"({"mdps": 2, "inits": 2, "seeds": [1]})");
    ASSERT_EQ(run("tabular --config tab.json --out a"), 0);
    ASSERT_EQ(run("tabular --config tab.json --seed 2 --out b"), 0);
    EXPECT_NE(read("a/ratios.csv"), read("b/ratios.csv"));
    EXPECT_EQ(read("b/fixed_points.csv").substr(0, 5), "seed,");
    EXPECT_NE(read("b/fixed_points.csv").find("\n2,0,"), std::string::npos);
}

TEST(Commands, ParallelMatchesSerial) {
    cli::Request req;
    req.config = io::json::parse(R"({"mdps": 6, "inits": 2, "seeds": [1, 2]})");
    req.threads = 1;
    const auto serial = cli::run_tabular(req);
    req.threads = 4;
    EXPECT_EQ(cli::run_tabular(req), serial);
}

TEST(Commands, ExitCodeMapping) {
    EXPECT_EQ(cli::exit_code(ErrorKind::enumeration_cap), 3);
    EXPECT_EQ(cli::exit_code(ErrorKind::checkpoint_mismatch), 4);
    EXPECT_EQ(cli::exit_code(ErrorKind::not_pd), 2);
    EXPECT_EQ(cli::exit_code(ErrorKind::invalid_config), 2);
    EXPECT_EQ(cli::exit_code(ErrorKind::convergence_failure), 1);
}
