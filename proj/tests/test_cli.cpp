// Exercises the installed CLI binary end to end through std::system.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CAVEMOTION_CLI_PATH) + " " + args +
                            " > cli_stdout.log 2> cli_stderr.log";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("usage errors exit with the usage code") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("--help") == 0);
}

TEST_CASE("calibrate writes outputs and honors the gate") {
    TempDir dir("cavemotion_cli_cal");
    const std::string out = dir.path.string();
    CHECK(run_cli("calibrate --out " + out) == 0);
    CHECK(fs::exists(out + "/calibration.txt"));
    CHECK(fs::exists(out + "/axes.txt"));
    CHECK(fs::exists(out + "/correspondences_cam0.txt"));

    // an impossible gate fails with the gate exit code
    CHECK(run_cli("calibrate --out " + out + " --sigma 0.5 --gate 1e-9") == 3);
}

TEST_CASE("missing inputs give the runtime error code") {
    CHECK(run_cli("calibrate --layout no_such_layout.txt") == 4);
    CHECK(run_cli("train --dataset no_such_dataset.txt") == 4);
    CHECK(run_cli("run --calibration nope.txt --model nope.txt") == 4);
    CHECK(run_cli("report --run no_such_run_dir") == 4);
}

TEST_CASE("dataset generation is deterministic") {
    TempDir dir("cavemotion_cli_ds");
    const std::string a = (dir.path / "a.txt").string();
    const std::string b = (dir.path / "b.txt").string();
    CHECK(run_cli("dataset --samples 8 --seed 5 --ground-truth-only --out " + a) == 0);
    CHECK(run_cli("dataset --samples 8 --seed 5 --ground-truth-only --out " + b) == 0);
    const std::string da = slurp(a);
    CHECK_FALSE(da.empty());
    CHECK(da == slurp(b));
}
