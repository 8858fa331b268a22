#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "nkscreen/commands.hpp"
#include "nkscreen/io.hpp"
#include "test_support.hpp"

using namespace nkscreen;
using nkscreen::testing::data_path;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("nkscreen_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

RunConfig smoke(const fs::path& out) {
    auto c = load_config(std::string(NKSCREEN_CONFIG_DIR) + "/smoke.json");
    c.out_dir = out.string();
    c.parallelism = 1;
    return c;
}

int run(const std::string& cmd, const RunConfig& c, std::string* err_text = nullptr) {
    std::ostringstream log, err;
    const int code = run_command(cmd, c, log, err);
    if (err_text) *err_text = err.str();
    return code;
}

/// The CLI binary, with stdout and stderr discarded.
int run_binary(const std::string& args) {
    const std::string cmd = std::string("\"") + NKSCREEN_CLI + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_text(e.path());
    return out;
}

void full_pipeline(const RunConfig& c) {
    REQUIRE(run("dataset", c) == kExitOk);
    REQUIRE(run("train", c) == kExitOk);
    for (const char* m : {"diffusion", "random", "evgnn-rank"}) {
        auto mc = c;
        mc.method = m;
        REQUIRE(run("screen", mc) == kExitOk);
    }
    REQUIRE(run("oracle", c) == kExitOk);
    REQUIRE(run("evaluate", c) == kExitOk);
}

}  // namespace

TEST_CASE("pipeline outputs and rerun determinism") {
    const auto a = scratch("a"), b = scratch("b");
    auto ca = smoke(a);
    full_pipeline(ca);
    auto cb = smoke(b);
    cb.parallelism = 3;  // thread count must not change any output
    full_pipeline(cb);

    const auto ta = tree(a), tb = tree(b);
    CHECK(ta.size() == tb.size());
    for (const auto& [rel, text] : ta) {
        CAPTURE(rel);
        REQUIRE(tb.count(rel) == 1);
        CHECK(tb.at(rel) == text);
    }

    for (const char* f : {"dataset/states_train.jsonl", "dataset/n1_records.jsonl", "models/evgnn.json",
                          "models/denoiser.json", "models/capture.json", "screen/diffusion.jsonl",
                          "screen/diffusion.csv", "screen/random.csv", "screen/evgnn-rank.csv", "oracle/records.jsonl",
                          "eval/topm.csv", "eval/composition.csv", "eval/coverage.csv", "eval/summary.json",
                          "manifest_dataset.json", "manifest_train.json", "manifest_screen_diffusion.json"})
        CHECK_MESSAGE(ta.count(f) == 1, f);

    // manifest contents
    const auto m = Json::parse(ta.at("manifest_train.json"));
    CHECK(m.at("config_hash") == config_hash(ca));
    CHECK(m.at("case_hash") == hash_file(data_path("case14.m")));
    CHECK(m.at("seed") == ca.seed);
    CHECK(m.at("stage_seeds").size() == 9);
    CHECK(m.at("outputs").at("models/evgnn.json") == hex64(fnv1a(ta.at("models/evgnn.json"))));

    // CSVs carry a header row
    CHECK(ta.at("screen/random.csv").rfind("state_id,rank,branches,k,severity,converged,in_band,outcome\n", 0) == 0);
    CHECK(ta.at("eval/topm.csv").rfind("method,m,", 0) == 0);

    const auto metrics = Json::parse(ta.at("models/training_metrics.json"));
    CHECK(metrics.at("generator_loss_decreased").get<bool>());

    const auto summary = Json::parse(ta.at("eval/summary.json"));
    CHECK(summary.contains("diffusion_dominates_random_topm"));
    std::istringstream comp(ta.at("eval/composition.csv"));
    std::string line;
    std::getline(comp, line);
    int rows = 0;
    while (std::getline(comp, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
        REQUIRE(f.size() == 10);
        CHECK(std::stod(f[5]) + std::stod(f[6]) + std::stod(f[7]) == doctest::Approx(1.0));
        CHECK(std::stol(f[2]) + std::stol(f[3]) + std::stol(f[4]) == std::stol(f[1]));
        ++rows;
    }
    CHECK(rows == 3);

    // bench timings vary; its structure does not
    REQUIRE(run("bench", ca) == kExitOk);
    const auto bench = read_text(a / "bench/bench.csv");
    CHECK(bench.rfind("k,method,seconds,candidates,solves,skipped,note\n", 0) == 0);
    CHECK(std::count(bench.begin(), bench.end(), '\n') == 1 + 2 * 3);
}

TEST_CASE("missing case fails cleanly") {
    const auto out = scratch("nocase");
    auto c = smoke(out);
    c.case_path = (out.parent_path() / "does_not_exist.m").string();
    std::string err;
    CHECK(run("dataset", c, &err) != kExitOk);
    CHECK(err.find("not found") != std::string::npos);
    CHECK(!fs::exists(out));
    c.case_path.clear();
    CHECK(run("dataset", c) != kExitOk);
    CHECK(!fs::exists(out));
    CHECK(run("frobnicate", smoke(out)) == kExitUsage);
}

TEST_CASE("budget edge cases") {
    const auto out = scratch("budget");
    auto c = smoke(out);
    REQUIRE(run("dataset", c) == kExitOk);
    REQUIRE(run("train", c) == kExitOk);

    // a miss tolerance of one needs no samples
    c.delta_miss = 1.0;
    c.method = "random";
    REQUIRE(run("screen", c) == kExitOk);
    CHECK(read_text(out / "screen/random.jsonl").empty());
    CHECK(Json::parse(read_text(out / "manifest_screen_random.json")).at("budget") == 0);
    // no records anywhere: evaluation has nothing to summarize
    std::string err;
    CHECK(run("evaluate", c, &err) == kExitError);
    CHECK(err.find("no screening runs") != std::string::npos);

    // zero observed captures: the budget rule has no finite answer
    write_text(out / "models/capture.json", to_json(estimate_capture(0, 30, 0.95)).dump());
    c.delta_miss = 0.01;
    CHECK(run("screen", c, &err) == kExitUnboundedBudget);
    CHECK(err.find("unbounded") != std::string::npos);

    // a fixed budget bypasses the capture rule
    c.budget = 4;
    REQUIRE(run("screen", c) == kExitOk);
    CHECK(parse_jsonl(read_text(out / "screen/random.jsonl")).size() == 4u * c.test_states);
}

TEST_CASE("command-line binary") {
    const auto out = scratch("bin");
    const std::string base = std::string("--config \"") + NKSCREEN_CONFIG_DIR + "/smoke.json\" --out \"" + out.string() +
                             "\" --parallelism 1";
    CHECK(run_binary("dataset " + base) == 0);
    CHECK(fs::exists(out / "dataset/n1_records.jsonl"));
    CHECK(run_binary("train " + base) == 0);
    CHECK(run_binary("screen " + base + " --method random --budget 3") == 0);
    CHECK(Json::parse(read_text(out / "manifest_screen_random.json")).at("solves") == 9);
    CHECK(run_binary("screen " + base + " --method greedy") != 0);
    CHECK(run_binary("") != 0);
    CHECK(run_binary("dataset --config /no/such/config.json") != 0);
    CHECK(run_binary("screen " + base + " --method random --delta-miss 1") == 0);
    CHECK(read_text(out / "screen/random.jsonl").empty());

    // the seed flag reaches the run
    const auto other = scratch("bin_seed");
    CHECK(run_binary(std::string("dataset --config \"") + NKSCREEN_CONFIG_DIR + "/smoke.json\" --out \"" +
                     other.string() + "\" --seed 99") == 0);
    CHECK(Json::parse(read_text(other / "manifest_dataset.json")).at("seed") == 99);
    CHECK(read_text(other / "dataset/states_test.jsonl") != read_text(out / "dataset/states_test.jsonl"));
}
