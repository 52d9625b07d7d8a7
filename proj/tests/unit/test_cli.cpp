#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string output;
};

Run run_cli(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "mdfm_unit" / "cli_output.txt";
    fs::create_directories(log.parent_path());
    const std::string cmd = std::string(MDFM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

}  // namespace

TEST_CASE("CLI usage errors exit with status 2") {
    CHECK(run_cli("--definitely-not-a-flag").code == 2);
    CHECK(run_cli("train --no-such-option 3").code == 2);
    CHECK(run_cli("--help").code == 0);
}

TEST_CASE("CLI end to end with a config mismatch") {
    const fs::path dir = fs::temp_directory_path() / "mdfm_unit" / "cli";
    fs::remove_all(dir);
    const std::string d = dir.string();
    REQUIRE(run_cli("synth --n-pos 20 --n-neg 20 --out " + d + "/data").code == 0);
    CHECK(fs::exists(dir / "data" / "train.tsv"));
    const Run train = run_cli("train --data " + d + "/data --epochs 1 --d 16 --layers 1 --heads 2 --experts 2 --k 3 " +
                              "--no-fgm --out " + d + "/run");
    REQUIRE_MESSAGE(train.code == 0, train.output);
    CHECK(fs::exists(dir / "run" / "model.ckpt"));
    CHECK(fs::exists(dir / "run" / "manifest.json"));

    const Run ev = run_cli("eval --ckpt " + d + "/run/model.ckpt --data " + d + "/data --out " + d + "/eval");
    REQUIRE_MESSAGE(ev.code == 0, ev.output);
    CHECK(fs::exists(dir / "eval" / "metrics.json"));

    std::ofstream(dir / "other.json") << R"({"model": {"d": 16}})";
    const Run bad = run_cli("eval --ckpt " + d + "/run/model.ckpt --data " + d + "/data --config " + d +
                            "/other.json --out " + d + "/eval2");
    CHECK(bad.code == 1);
    CHECK(bad.output.find("config mismatch") != std::string::npos);

    const Run missing = run_cli("eval --ckpt " + d + "/nope.ckpt --data " + d + "/data --out " + d + "/eval3");
    CHECK(missing.code == 1);
    CHECK(missing.output.find("error:") != std::string::npos);
}
