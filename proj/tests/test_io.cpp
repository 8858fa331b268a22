#include <doctest.h>

#include <filesystem>

#include "nkscreen/config.hpp"
#include "nkscreen/errors.hpp"
#include "nkscreen/io.hpp"
#include "test_support.hpp"

using namespace nkscreen;
using nkscreen::testing::ieee;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("nkscreen_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("fnv-1a reference vectors") {
    CHECK(hex64(fnv1a("")) == "cbf29ce484222325");
    CHECK(hex64(fnv1a("a")) == "af63dc4c8601ec8c");
    CHECK(hex64(fnv1a("foobar")) == "85944171f73967e8");
    const auto dir = scratch("hash");
    write_text(dir / "f.txt", "foobar");
    CHECK(hash_file(dir / "f.txt") == "85944171f73967e8");
    CHECK(read_text(dir / "f.txt") == "foobar");
    CHECK_THROWS_AS(read_text(dir / "missing.txt"), ValidationError);
}

TEST_CASE("state and record round trip") {
    const auto& net = ieee(14);
    const auto s = perturb_state(net, 3, {0.8, 1.2}, {0.9, 1.1}, SolverOptions{});
    CHECK(state_from_json(Json::parse(to_json(s).dump())) == s);

    SeverityRecord r;
    r.state_id = "t0003";
    r.sample_index = 17;
    r.c = ContingencyVector::from_indices(20, {2, 11});
    r.s = 123.456789012345678;
    r.converged = true;
    r.in_band = true;
    r.iterations = 5;
    CHECK(record_from_json(Json::parse(to_json(r).dump())) == r);
    CHECK_THROWS_AS(record_from_json(Json{{"state_id", "x"}}), ValidationError);

    const auto text = to_jsonl({to_json(r), to_json(r)});
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    CHECK(parse_jsonl(text).size() == 2);
    CHECK(parse_jsonl("").empty());
}

TEST_CASE("jsonl parse errors carry the line number") {
    try {
        parse_jsonl("{\"a\": 1}\n{\"a\": 2}\n{oops\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
}

TEST_CASE("model documents") {
    const auto& net = ieee(14);
    EvgnnHyper eh;
    eh.hidden = 8;
    const auto m = make_evgnn(net, eh, 9);
    const auto back = evgnn_from_json(Json::parse(to_json(m).dump()), net);
    CHECK(back == m);
    CHECK(back.flatten() == m.flatten());

    // wrong topology
    CHECK_THROWS_AS(evgnn_from_json(to_json(m), ieee(39)), ValidationError);
    // wrong version and wrong format tag
    auto j = to_json(m);
    j["version"] = kFormatVersion + 1;
    CHECK_THROWS_AS(evgnn_from_json(j, net), ValidationError);
    j = to_json(m);
    j["format"] = "nkscreen.denoiser";
    CHECK_THROWS_AS(evgnn_from_json(j, net), ValidationError);

    DenoiserHyper dh;
    dh.state_hidden = 6;
    dh.time_dim = 4;
    dh.trunk_hidden = 10;
    const auto d = make_denoiser(20, static_cast<int>(feature_length(net)), dh, 2);
    const auto dback = denoiser_from_json(Json::parse(to_json(d).dump()));
    CHECK(dback == d);
    CHECK(dback.flatten() == d.flatten());
    CHECK_THROWS_AS(denoiser_from_json(to_json(m)), ValidationError);

    const auto cap = estimate_capture(7, 40, 0.95);
    const auto cback = capture_from_json(Json::parse(to_json(cap).dump()));
    CHECK(cback.p_lower == cap.p_lower);
    CHECK(cback.successes == 7);
    CHECK(cback.trials == 40);

    ScheduleParams p{50, 2e-4, 0.2};
    const auto pback = schedule_from_json(Json::parse(to_json(p).dump()));
    CHECK(pback.T == 50);
    CHECK(pback.beta_hi == 0.2);
}

TEST_CASE("csv quoting") {
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_field("two\nlines") == "\"two\nlines\"");
    CHECK(csv_number(0.5) == "0.5");
    CHECK(std::stod(csv_number(1.0 / 3.0)) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("config defaults and overrides") {
    const RunConfig d;
    CHECK_NOTHROW(d.validate());
    const auto same = config_from_json(Json::object());
    CHECK(to_json(same) == to_json(d));
    CHECK(config_from_json(to_json(d)).seed == d.seed);

    const auto c = config_from_json(Json::parse(R"({"seed": 9, "screen": {"budget": 5}, "k_range": [2, 3]})"));
    CHECK(c.seed == 9);
    CHECK(c.budget == 5);
    CHECK(c.k_range.k_max == 3);
    CHECK(c.train_states == d.train_states);

    CHECK_THROWS_AS(config_from_json(Json::parse(R"({"sede": 9})")), ValidationError);
    CHECK_THROWS_AS(config_from_json(Json::parse(R"({"screen": {"budgte": 5}})")), ValidationError);
    // range checks run after command-line overrides, in validate()
    const auto bad = config_from_json(Json::parse(R"({"screen": {"delta_miss": 0}})"));
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("config hash") {
    RunConfig a;
    RunConfig b = a;
    b.out_dir = "elsewhere";
    b.parallelism = 4;
    b.case_path = "/some/other/path/case14.m";
    CHECK(config_hash(a) == config_hash(b));
    b.seed = a.seed + 1;
    CHECK(config_hash(a) != config_hash(b));
    b = a;
    b.guidance.lambda = 0.5;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a).size() == 16);
}

TEST_CASE("config file paths") {
    const auto dir = scratch("cfg");
    fs::create_directories(dir / "sub");
    write_text(dir / "sub" / "run.json", R"({"case": "../grid.m", "seed": 4})");
    const auto c = load_config((dir / "sub" / "run.json").string());
    CHECK(fs::path(c.case_path).lexically_normal() == (dir / "grid.m").lexically_normal());
    CHECK(c.seed == 4);

    write_text(dir / "abs.json", Json{{"case", "/abs/case.m"}}.dump());
    CHECK(load_config((dir / "abs.json").string()).case_path == "/abs/case.m");

    write_text(dir / "bad.json", "{not json");
    CHECK_THROWS_AS(load_config((dir / "bad.json").string()), Error);
    CHECK_THROWS_AS(load_config((dir / "none.json").string()), Error);
}
