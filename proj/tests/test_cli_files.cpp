// End-to-end checks of the installed command-line tool: file outputs,
// replayability across invocations, exit codes.

#include "sisrnn/config.hpp"
#include "sisrnn/training.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef SISRNN_CLI_PATH
#error "SISRNN_CLI_PATH must point at the built binary"
#endif

using namespace sisrnn;

namespace {

const std::string kCli = SISRNN_CLI_PATH;

int run(const std::string& args) {
    const int rc = std::system((kCli + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::string temp_dir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / (std::string("sisrnn_cli_") + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

/// A small trained-ish checkpoint fixture shared by the cases below.
std::string make_checkpoint(const std::string& dir) {
    TrainConfig cfg = parse_config_text(
        "data_kind = synth2\ndata_n_train = 16\ndata_n_test = 8\ndata_T = 6\n"
        "hidden = 6\nlatent = 2\nprior_widths = 6\nenc_widths = 8,8\nnoise_dims = 3,2\n"
        "dec_widths = 6\nepochs = 2\nbatch = 8\nk_max = 2\n",
        {});
    auto [tr, te] = load_datasets(cfg.data);
    finalize_config(cfg, tr);
    train(cfg, tr, te, dir, serialize_config(cfg));
    return dir + "/checkpoint";
}

}  // namespace

TEST_CASE("sample and posterior runs replay bit-identically per seed") {
    const std::string dir = temp_dir("replay");
    const std::string ckpt = make_checkpoint(dir);

    REQUIRE(run("sample --checkpoint " + ckpt + " -n 3 -T 6 --seed 9 --out " + dir + "/s1") == 0);
    REQUIRE(run("sample --checkpoint " + ckpt + " -n 3 -T 6 --seed 9 --out " + dir + "/s2") == 0);
    CHECK(slurp(dir + "/s1/samples.csv") == slurp(dir + "/s2/samples.csv"));
    REQUIRE(run("sample --checkpoint " + ckpt + " -n 3 -T 6 --seed 10 --out " + dir + "/s3") == 0);
    CHECK(slurp(dir + "/s1/samples.csv") != slurp(dir + "/s3/samples.csv"));

    REQUIRE(run("posterior --checkpoint " + ckpt + " -n 500 --out " + dir + "/p1") == 0);
    REQUIRE(run("posterior --checkpoint " + ckpt + " -n 500 --out " + dir + "/p2") == 0);
    CHECK(slurp(dir + "/p1/posterior.csv") == slurp(dir + "/p2/posterior.csv"));
    CHECK(std::filesystem::exists(dir + "/p1/posterior_hist.svg"));
    CHECK(std::filesystem::exists(dir + "/p1/posterior_stats.txt"));
}

TEST_CASE("eval prints a mean bound and accepts data overrides") {
    const std::string dir = temp_dir("eval");
    const std::string ckpt = make_checkpoint(dir);
    CHECK(run("eval --checkpoint " + ckpt + " --n-z 2") == 0);
    CHECK(run("eval --checkpoint " + ckpt + " --data data_n_test=4 --n-z 2 --out " + dir + "/e") == 0);
    CHECK(std::filesystem::exists(dir + "/e/eval.csv"));
}

TEST_CASE("exit codes distinguish validation, runtime and gradcheck failures") {
    const std::string dir = temp_dir("codes");
    CHECK(run("train --set hiddden=128 --out " + dir) == 1);          // unknown key
    CHECK(run("train --set hidden=0 --out " + dir) == 1);             // invalid value
    CHECK(run("eval --checkpoint " + dir + "/missing") == 2);         // unreadable checkpoint
    CHECK(run("posterior --checkpoint " + dir + "/missing -n 5") == 2);
    CHECK(run("gradcheck --seed 2") == 0);
    CHECK(run("gradcheck --corrupt") == 3);
}
