// End-to-end checks of the command-line surface, driven through the built
// binary in scratch run directories.

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "advprop/experiment.hpp"
#include "advprop/report.hpp"

using namespace advprop;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    std::string out_file = "cli_out.txt";
    std::string cmd = concat(ADVPROP_CLI_PATH, " ", args, " >", out_file, " 2>&1");
    int rc = std::system(cmd.c_str());
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    return {WEXITSTATUS(rc), ss.str()};
}

// small, fast run: 160 examples, 2 epochs
std::string tiny_args(const std::string& mode, const std::string& extra = "") {
    return concat("train --mode ", mode,
                  " --base_epochs 2 --decay_epochs 1 --batch_size 16 --shards 2",
                  " --data_n 160 --data_val_n 40 --data_classes 4 --data_hw 8",
                  " --model_conv_channels 3,4 --lr 0.05 --seed 3 ", extra);
}

}  // namespace

TEST_CASE("train writes the three run artifacts and exits zero") {
    fs::remove_all("cli_run_v");
    auto r = run_cli(tiny_args("vanilla", "--shuffle_bn false --sync_update_speed false --out cli_run_v"));
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists("cli_run_v/config.json"));
    REQUIRE(fs::exists("cli_run_v/metrics.jsonl"));
    REQUIRE(fs::exists("cli_run_v/ledger.jsonl"));
    REQUIRE(fs::exists("cli_run_v/checkpoint.bin"));

    SECTION("cost-audit matches the vanilla model") {
        auto a = run_cli("cost-audit --run cli_run_v");
        INFO(a.output);
        REQUIRE(a.exit_code == 0);
        REQUIRE(a.output.find("match: true") != std::string::npos);
    }
    SECTION("eval is read-only on the checkpoint") {
        auto before = fs::file_size("cli_run_v/checkpoint.bin");
        std::ifstream is("cli_run_v/checkpoint.bin", std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        std::string bytes_before = ss.str();
        is.close();
        auto e = run_cli("eval --run cli_run_v");
        INFO(e.output);
        REQUIRE(e.exit_code == 0);
        REQUIRE(e.output.find("clean_acc") != std::string::npos);
        REQUIRE(fs::file_size("cli_run_v/checkpoint.bin") == before);
        std::ifstream is2("cli_run_v/checkpoint.bin", std::ios::binary);
        std::stringstream ss2;
        ss2 << is2.rdbuf();
        REQUIRE(ss2.str() == bytes_before);
    }
}

TEST_CASE("same config and seed give bit-identical checkpoints") {
    fs::remove_all("cli_run_a");
    fs::remove_all("cli_run_b");
    auto r1 = run_cli(tiny_args("fast", "--out cli_run_a"));
    auto r2 = run_cli(tiny_args("fast", "--out cli_run_b"));
    INFO(r1.output);
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    auto read_all = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    REQUIRE(read_all("cli_run_a/checkpoint.bin") == read_all("cli_run_b/checkpoint.bin"));
}

TEST_CASE("fast run audits true against its own budget") {
    fs::remove_all("cli_run_f");
    auto r = run_cli(tiny_args("fast", "--p_adv 0.2 --out cli_run_f"));
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    auto a = run_cli("cost-audit --run cli_run_f");
    REQUIRE(a.output.find("match: true") != std::string::npos);

    SECTION("audited against the vanilla model it mismatches") {
        auto b = run_cli("cost-audit --run cli_run_f --model_mode vanilla");
        REQUIRE(b.output.find("match: false") != std::string::npos);
    }
}

TEST_CASE("invalid configuration exits with code 1 and a field-level message") {
    auto r = run_cli(tiny_args("fast", "--attack_steps 3 --out cli_run_bad"));
    REQUIRE(r.exit_code == 1);
    REQUIRE(r.output.find("K=1") != std::string::npos);
    auto r2 = run_cli("train --mode warp --out cli_run_bad2");
    REQUIRE(r2.exit_code == 1);
    auto r3 = run_cli("eval --run does_not_exist");
    REQUIRE(r3.exit_code == 1);  // missing config is a config error
}

TEST_CASE("report renders one row per run with the ablation flags") {
    // reuse runs from the earlier cases; rebuild any that are missing
    if (!fs::exists("cli_run_v/checkpoint.bin"))
        run_cli(tiny_args("vanilla", "--shuffle_bn false --sync_update_speed false --out cli_run_v"));
    if (!fs::exists("cli_run_f/checkpoint.bin")) run_cli(tiny_args("fast", "--out cli_run_f"));
    auto r = run_cli("report cli_run_v cli_run_f --csv cli_report.csv");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("cli_run_v") != std::string::npos);
    REQUIRE(r.output.find("cli_run_f") != std::string::npos);
    REQUIRE(fs::exists("cli_report.csv"));
    std::ifstream is("cli_report.csv");
    std::string header;
    std::getline(is, header);
    REQUIRE(header.find("budget_measured") != std::string::npos);
    int lines = 1;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++lines;
    REQUIRE(lines == 3);  // header + two runs

    SECTION("empty input is a usage error") {
        auto e = run_cli("report");
        REQUIRE(e.exit_code != 0);
    }
}

TEST_CASE("training resumes from the last checkpoint") {
    fs::remove_all("cli_run_r");
    auto r1 = run_cli(tiny_args("vanilla", "--shuffle_bn false --sync_update_speed false --out cli_run_r"));
    REQUIRE(r1.exit_code == 0);
    // same invocation again: already complete, resumes and does nothing
    auto r2 = run_cli(tiny_args("vanilla", "--shuffle_bn false --sync_update_speed false --out cli_run_r"));
    INFO(r2.output);
    REQUIRE(r2.exit_code == 0);
    REQUIRE(r2.output.find("completed 2/2") != std::string::npos);
    // a different config into the same directory is rejected
    auto r3 = run_cli(tiny_args("vanilla",
                                "--shuffle_bn false --sync_update_speed false --lr 0.01 --out cli_run_r"));
    REQUIRE(r3.exit_code == 1);
    REQUIRE(r3.output.find("different config") != std::string::npos);
}
