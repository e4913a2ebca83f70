#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// MODFL_CLI_PATH is injected by the build with the real binary location.
#ifndef MODFL_CLI_PATH
#error "MODFL_CLI_PATH must point at the cli binary"
#endif

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path fresh_dir(const std::string& tag) {
    std::filesystem::path p = std::filesystem::temp_directory_path() / ("modfl_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    auto dir = fresh_dir("cli_io_" + std::to_string(counter++));
    const std::string out = (dir / "out.txt").string();
    const std::string err = (dir / "err.txt").string();
    const std::string cmd =
        std::string(MODFL_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::filesystem::path write_config(const std::filesystem::path& dir, const std::string& extra) {
    std::filesystem::path p = dir / "exp.cfg";
    std::ofstream cfg(p);
    cfg << "framework=modfl\n"
           "dataset=synthetic\n"
           "arch=synth_lo\n"
           "N=4\n"
           "P=3\n"
           "num_op_groups=2\n"
           "rounds=1\n"
           "seed=31\n"
           "synth_per_class=16\n"
        << extra;
    return p;
}

}  // namespace

TEST_CASE("bare invocation demands a subcommand") {
    RunResult r = run_cli("");
    CHECK(r.exit_code != 0);
}

TEST_CASE("run trains and writes artifacts, echoing the effective config") {
    auto dir = fresh_dir("cli_run");
    auto cfg = write_config(dir, "");
    const std::string out = (dir / "out").string();
    RunResult r = run_cli("run --config " + cfg.string() + " --out " + out + " --seed 555");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("run complete") != std::string::npos);
    CHECK(r.out.find("seed=555") != std::string::npos);
    CHECK(std::filesystem::exists(out + "/metrics.csv"));
    CHECK(std::filesystem::exists(out + "/summary.txt"));
    CHECK(std::filesystem::exists(out + "/manifest.json"));
}

TEST_CASE("invalid configs exit with the config status code") {
    auto dir = fresh_dir("cli_badcfg");
    std::filesystem::path p = dir / "bad.cfg";
    {
        std::ofstream cfg(p);
        cfg << "framework=modfl\ndataset=synthetic\nN=5\nP=4\nnum_op_groups=2\n"
               "rounds=1\nseed=1\n";
    }
    RunResult r = run_cli("run --config " + p.string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error:") != std::string::npos);
    CHECK(r.err.find("invalid config") != std::string::npos);
}

TEST_CASE("plot renders curves from a produced metrics file") {
    auto dir = fresh_dir("cli_plot");
    auto cfg = write_config(dir, "");
    const std::string out = (dir / "out").string();
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + out).exit_code == 0);

    const std::string svg = (dir / "curves.svg").string();
    RunResult r = run_cli("plot " + out + "/metrics.csv --out " + svg);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("wrote") != std::string::npos);
    CHECK(slurp(svg).find("<svg") != std::string::npos);
}

TEST_CASE("plot on a missing csv exits with the runtime status code") {
    auto dir = fresh_dir("cli_plot_missing");
    RunResult r = run_cli("plot " + (dir / "absent.csv").string());
    CHECK(r.exit_code == 3);
    CHECK(r.err.find("cannot open") != std::string::npos);
}

TEST_CASE("compare reports deltas between two runs") {
    auto dir = fresh_dir("cli_compare");
    auto cfg = write_config(dir, "");
    const std::string out = (dir / "out").string();
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + out).exit_code == 0);

    RunResult r = run_cli("compare " + out + "/metrics.csv " + out + "/metrics.csv");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("delta") != std::string::npos);
    CHECK(r.out.find("+0.0000") != std::string::npos);  // self-compare is flat
}

TEST_CASE("check-grad prints a verification report") {
    RunResult r = run_cli("check-grad --seed 42 --instances 6");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("instances") != std::string::npos);
}

TEST_CASE("partition previews the roster without training") {
    auto dir = fresh_dir("cli_partition");
    auto cfg = write_config(dir, "");
    RunResult r = run_cli("partition --config " + cfg.string() + " --dry-run");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("clients: 4") != std::string::npos);
    CHECK(r.out.find("config group 0") != std::string::npos);
}
