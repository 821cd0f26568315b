#include <cstdlib>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "doctest.h"

#include "sifd/logprob_cache.hpp"
#include "test_helpers.hpp"

using namespace sifd;
using namespace sifd::testing;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

// Runs the installed binary through the shell; SIFD_BIN is injected by ctest.
CliResult run_cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
    const char* bin = std::getenv("SIFD_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "SIFD_BIN must point at the sifd binary");
    const std::string out_path = dir.file("cli.out");
    const std::string err_path = dir.file("cli.err");
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + std::string(bin) + "' " + args +
                            " >'" + out_path + "' 2>'" + err_path + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    if (WIFEXITED(status)) {
        r.exit_code = WEXITSTATUS(status);
    }
    r.out = read_file(out_path);
    r.err = read_file(err_path);
    return r;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("version and usage basics") {
    TempDir dir;
    const CliResult version = run_cli(dir, "--version");
    CHECK(version.exit_code == 0);
    CHECK(version.out.find("0.1.0") != std::string::npos);

    CHECK(run_cli(dir, "").exit_code == 1);              // a subcommand is required
    CHECK(run_cli(dir, "frobnicate").exit_code == 1);    // unknown subcommand
    CHECK(run_cli(dir, "score --nope").exit_code == 1);  // unknown flag
    CHECK(run_cli(dir, "--help").exit_code == 0);
}

TEST_CASE("score, select, and baseline round-trip through the shell") {
    TempDir dir;
    const std::string data = write_jsonl(dir, "data.jsonl", synth_samples(25, 51));
    const std::string run = dir.file("run");

    const CliResult score = run_cli(
            dir, "score --dataset '" + data + "' -M 2 --k 70 -o '" + run + "' --dump-traces");
    CHECK(score.exit_code == 0);
    CHECK(score.out.find("scored 25 samples") != std::string::npos);

    const CliResult select = run_cli(dir, "select --dataset '" + data + "' --budget 3 --gamma 1 -o '" +
                                              run + "'");
    CHECK(select.exit_code == 0);
    CHECK(count_lines_of(read_file(run + "/selected.jsonl")) == 3);

    const CliResult stats = run_cli(dir, "stats -o '" + run + "'");
    CHECK(stats.exit_code == 0);
    CHECK(stats.out.find("|delta| <= 0.01") != std::string::npos);

    const CliResult bl = run_cli(dir, "baseline random --dataset '" + data +
                                              "' --budget 4 --seed 9 -o '" + dir.file("bl") + "'");
    CHECK(bl.exit_code == 0);
    CHECK(count_lines_of(read_file(dir.file("bl") + "/selected.jsonl")) == 4);

    const CliResult ifd_top = run_cli(dir, "baseline ifd_top --dataset '" + data +
                                               "' --budget 2 --table '" + run +
                                               "/score_table.tsv' -o '" + dir.file("bt") + "'");
    CHECK(ifd_top.exit_code == 0);

    // ifd_top without a table cannot work and must say so as a usage error.
    const CliResult no_table = run_cli(
            dir, "baseline ifd_top --dataset '" + data + "' --budget 2 -o '" + dir.file("bx") + "'");
    CHECK(no_table.exit_code == 1);
    CHECK(no_table.err.find("--table") != std::string::npos);
}

TEST_CASE("exit codes map the error taxonomy") {
    TempDir dir;
    const std::string data = write_jsonl(dir, "data.jsonl", synth_samples(6, 61));

    // Data error: missing dataset file.
    CHECK(run_cli(dir, "score --dataset '" + dir.file("absent.jsonl") + "' -o '" +
                               dir.file("x") + "'")
                  .exit_code == 2);

    // Usage error: bad k domain.
    CHECK(run_cli(dir, "score --dataset '" + data + "' --k 0 -o '" + dir.file("x") + "'")
                  .exit_code == 1);

    // Backend error: perturbation against a stored-log-prob cache.
    write_logprob_cache(dir.file("lm.cache"), "ext", "ws-byte/v1/vocab256",
                        {{"s0", {-1.0}, {-1.0}}});
    const CliResult backend = run_cli(dir, "score --dataset '" + data +
                                               "' --backend cache --cache '" + dir.file("lm.cache") +
                                               "' -M 3 -o '" + dir.file("x") + "'");
    CHECK(backend.exit_code == 3);
    CHECK(backend.err.find("embedding access") != std::string::npos);

    // Usage error: cache backend without a cache path.
    CHECK(run_cli(dir, "score --dataset '" + data + "' --backend cache -o '" + dir.file("x") + "'")
                  .exit_code == 1);
}

TEST_CASE("the output directory obeys flag over environment over default") {
    TempDir dir;
    const std::string data = write_jsonl(dir, "data.jsonl", synth_samples(5, 71));

    const CliResult via_env =
            run_cli(dir, "score --dataset '" + data + "' -M 0",
                    "SIFD_OUTPUT_DIR='" + dir.file("from-env") + "'");
    CHECK(via_env.exit_code == 0);
    CHECK(std::ifstream(dir.file("from-env") + "/score_table.tsv").good());

    const CliResult via_flag =
            run_cli(dir, "score --dataset '" + data + "' -M 0 -o '" + dir.file("from-flag") + "'",
                    "SIFD_OUTPUT_DIR='" + dir.file("ignored") + "'");
    CHECK(via_flag.exit_code == 0);
    CHECK(std::ifstream(dir.file("from-flag") + "/score_table.tsv").good());
    CHECK_FALSE(std::ifstream(dir.file("ignored") + "/score_table.tsv").good());
}

TEST_CASE("config files drive runs and flags override them") {
    TempDir dir;
    const std::string data = write_jsonl(dir, "data.jsonl", synth_samples(8, 81));
    {
        std::ofstream out(dir.file("run.cfg"), std::ios::binary);
        out << "dataset=" << data << "\n";
        out << "M=0\n";
        out << "k=40\n";
        out << "output_dir=" << dir.file("cfg-out") << "\n";
    }

    const CliResult from_cfg = run_cli(dir, "score --config '" + dir.file("run.cfg") + "'");
    CHECK(from_cfg.exit_code == 0);
    const std::string gate = read_file(dir.file("cfg-out") + "/gate.txt");
    CHECK(gate.find("k=40") != std::string::npos);

    const CliResult overridden = run_cli(
            dir, "score --config '" + dir.file("run.cfg") + "' --k 90 -o '" + dir.file("ovr") + "'");
    CHECK(overridden.exit_code == 0);
    CHECK(read_file(dir.file("ovr") + "/gate.txt").find("k=90") != std::string::npos);

    // perturb-score is an alias for score.
    const CliResult alias = run_cli(
            dir, "perturb-score --config '" + dir.file("run.cfg") + "' -M 1 -o '" +
                         dir.file("alias") + "'");
    CHECK(alias.exit_code == 0);
    CHECK(read_file(dir.file("alias") + "/score_table.tsv").find("\t1\t0\t") !=
          std::string::npos);  // m_effective=1 columns exist somewhere
}

}  // TEST_SUITE
