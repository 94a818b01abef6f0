#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stopbed/cli_commands.hpp"
#include "stopbed/config.hpp"

using namespace stopbed;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunConfig tiny_lingauss_run(const fs::path& out) {
    RunConfig cfg;
    cfg.env_kind = EnvKind::LinGauss;
    cfg.lingauss.horizon = 2;
    cfg.train.iterations = 3;
    cfg.train.episodes_per_iter = 5;
    cfg.train.seed = 7;
    cfg.train.policy_hidden = {8};
    cfg.train.q_hidden = {8};
    cfg.train.q_inner_epochs = 2;
    cfg.out_dir = out.string();
    return cfg;
}

}  // namespace

TEST_CASE("config serialization reaches a fixed point") {
    RunConfig cfg;
    cfg.env_kind = EnvKind::ConvDiff;
    cfg.convdiff.cost = -0.8;
    cfg.convdiff.theta_grid = 25;
    cfg.reward_form = RewardForm::Incremental;
    cfg.train.seed = 123;
    cfg.train.mode = TrainMode::Vanilla;
    cfg.train.stopping = StoppingMode::Threshold;
    cfg.train.threshold = 1.8;
    cfg.out_dir = "runs/x";

    const nlohmann::json j1 = run_config_to_json(cfg);
    const RunConfig back = run_config_from_json(j1);
    const nlohmann::json j2 = run_config_to_json(back);
    CHECK(j1 == j2);
    CHECK(run_config_to_json(run_config_from_json(j2)) == j2);
    CHECK(back.convdiff.cost == cfg.convdiff.cost);
    CHECK(back.reward_form == RewardForm::Incremental);
    CHECK(back.train.mode == TrainMode::Vanilla);
    CHECK(back.train.stopping == StoppingMode::Threshold);
    CHECK(back.train.threshold == 1.8);
}

TEST_CASE("partial design bounds are rejected with the field name") {
    nlohmann::json j{{"env", {{"kind", "lingauss"}, {"design_lo", 0.1}}}};
    CHECK_THROWS_WITH_AS(run_config_from_json(j),
                         "config error: env.design_hi: design bounds must be given together",
                         std::invalid_argument);
    j = nlohmann::json{{"env", {{"kind", "lingauss"}, {"design_hi", 3.0}}}};
    CHECK_THROWS_WITH_AS(run_config_from_json(j),
                         "config error: env.design_lo: design bounds must be given together",
                         std::invalid_argument);
    j = nlohmann::json{{"env", {{"kind", "warp"}}}};
    CHECK_THROWS_AS(run_config_from_json(j), std::invalid_argument);
    j = nlohmann::json{{"reward", "immediate"}};
    CHECK_THROWS_AS(run_config_from_json(j), std::invalid_argument);
}

TEST_CASE("oracle command prints the utility table with the optimal row flagged") {
    LinGaussConfig cfg;
    cfg.horizon = 4;

    std::ostringstream out;
    CHECK(run_oracle_command(cfg, out) == kExitOk);
    std::istringstream lines(out.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "n,cost,utility,optimal");
    const double expected_free[4] = {2.203, 2.547, 2.749, 2.892};
    for (int n = 1; n <= 4; ++n) {
        std::getline(lines, line);
        int ln = 0, flag = -1;
        double cost = 1.0, utility = 0.0;
        REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf,%d", &ln, &cost, &utility, &flag) == 4);
        CHECK(ln == n);
        CHECK(cost == 0.0);
        CHECK(std::abs(utility - expected_free[n - 1]) <= 5e-4);
        CHECK(flag == (n == 4 ? 1 : 0));
    }

    cfg.cost = -0.5;
    std::ostringstream costly;
    run_oracle_command(cfg, costly);
    CHECK(costly.str().find("1,-0.5,1.70335962,1") != std::string::npos);

    cfg.cost = -0.25;
    std::ostringstream flat;
    run_oracle_command(cfg, flat);
    CHECK(flat.str().find("2,-0.25,2.0468751,1") != std::string::npos);
}

TEST_CASE("train command writes a manifest and byte-identical CSVs across runs") {
    const fs::path dir_a = fresh_dir("stopbed_cli_a");
    const fs::path dir_b = fresh_dir("stopbed_cli_b");
    std::ostringstream log;
    CHECK(run_train_command(tiny_lingauss_run(dir_a), log) == kExitOk);
    CHECK(run_train_command(tiny_lingauss_run(dir_b), log) == kExitOk);

    for (const char* name : {"convergence.csv", "stop_hist.csv", "design_hist.csv"}) {
        CHECK(slurp(dir_a / name) == slurp(dir_b / name));
    }
    CHECK(fs::exists(dir_a / "manifest.json"));
    CHECK(fs::exists(dir_a / "policy_final.ckpt"));
    CHECK(fs::exists(dir_a / "q_final.ckpt"));

    // The manifest alone reproduces the run.
    std::ifstream manifest(dir_a / "manifest.json");
    nlohmann::json m;
    manifest >> m;
    CHECK(m.at("version").get<std::string>() == version_string());
    RunConfig from_manifest = run_config_from_json(m.at("config"));
    const fs::path dir_c = fresh_dir("stopbed_cli_c");
    from_manifest.out_dir = dir_c.string();
    CHECK(run_train_command(from_manifest, log) == kExitOk);
    CHECK(slurp(dir_a / "convergence.csv") == slurp(dir_c / "convergence.csv"));

    const std::string csv = slurp(dir_a / "convergence.csv");
    CHECK(csv.rfind("iter,avg_reward,avg_stop_stage,p_stop,loss_q,grad_norm\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows
    CHECK(csv.find("\r") == std::string::npos);

    fs::remove_all(dir_b);
    fs::remove_all(dir_c);
    // dir_a is reused by the eval test below.
}

TEST_CASE("eval command reads checkpoints and writes metrics") {
    const fs::path dir = fs::temp_directory_path() / "stopbed_cli_a";
    REQUIRE(fs::exists(dir / "policy_final.ckpt"));

    EvalCommandOptions opts;
    opts.run_dir = dir.string();
    opts.episodes = 20;
    std::ostringstream log;
    CHECK(run_eval_command(opts, log) == kExitOk);
    CHECK(fs::exists(dir / "eval_metrics.csv"));
    CHECK(fs::exists(dir / "eval_stop_hist.csv"));
    CHECK(fs::exists(dir / "eval_design_hist.csv"));
    CHECK(fs::exists(dir / "eval_traces.csv"));

    // Episode records parse back and agree with the metrics row.
    std::ifstream episodes_in(dir / "eval_episodes.txt");
    std::string line;
    int episode_count = 0;
    double reward_sum = 0.0;
    while (std::getline(episodes_in, line)) {
        const Episode e = episode_from_line(line);
        CHECK(e.tau >= 1);
        reward_sum += total_reward(e);
        episode_count += 1;
    }
    CHECK(episode_count == 20);
    const std::string metrics = slurp(dir / "eval_metrics.csv");
    CHECK(metrics.find(csv_double(reward_sum / 20)) != std::string::npos);

    EvalCommandOptions bad = opts;
    bad.episodes = 0;
    CHECK_THROWS_AS(run_eval_command(bad, log), std::invalid_argument);

    EvalCommandOptions missing = opts;
    missing.run_dir = (fs::temp_directory_path() / "stopbed_nonexistent").string();
    CHECK_THROWS_AS(run_eval_command(missing, log), std::invalid_argument);

    fs::remove_all(dir);
}

TEST_CASE("eval traces on the PDE environment match the transition arithmetic") {
    const fs::path dir = fresh_dir("stopbed_cli_pde");
    RunConfig cfg;
    cfg.env_kind = EnvKind::ConvDiff;
    cfg.convdiff.fv_resolution = 32;
    cfg.convdiff.theta_grid = 10;
    cfg.train.iterations = 2;
    cfg.train.episodes_per_iter = 4;
    cfg.train.seed = 5;
    cfg.train.policy_hidden = {8};
    cfg.train.q_hidden = {8};
    cfg.train.q_inner_epochs = 2;
    cfg.out_dir = dir.string();
    std::ostringstream log;
    REQUIRE(run_train_command(cfg, log) == kExitOk);

    EvalCommandOptions opts;
    opts.run_dir = dir.string();
    opts.episodes = 5;
    REQUIRE(run_eval_command(opts, log) == kExitOk);

    std::ifstream traces(dir / "eval_traces.csv");
    std::string line;
    std::getline(traces, line);  // header
    int rows = 0;
    while (std::getline(traces, line)) {
        rows += 1;
        // episode,stage,design(a;b),observation,physical(x;y),stop_value,summary
        int ep = 0, stage = 0;
        double dx = 0, dy = 0, obs = 0, px = 0, py = 0;
        REQUIRE(std::sscanf(line.c_str(), "%d,%d,%lf;%lf,%lf,%lf;%lf", &ep, &stage, &dx, &dy,
                            &obs, &px, &py) == 7);
        CHECK(dx >= -0.25);
        CHECK(dx <= 0.25);
        if (stage == 0) {
            CHECK(px == doctest::Approx(std::clamp(0.2 + dx, 0.0, 1.0)));
            CHECK(py == doctest::Approx(std::clamp(0.2 + dy, 0.0, 1.0)));
        }
    }
    CHECK(rows >= 5);
    fs::remove_all(dir);
}

TEST_CASE("verify command runs selected suites") {
    VerifyCommandOptions opts;
    opts.suites = {"gradcheck"};
    opts.gradcheck_nets = 10;
    std::ostringstream out;
    CHECK(run_verify_command(opts, out) == kExitOk);
    CHECK(out.str().find("[PASS] gradcheck") != std::string::npos);
    CHECK(out.str().find("equivalence") == std::string::npos);

    VerifyCommandOptions bad;
    bad.suites = {"nonsense"};
    CHECK_THROWS_AS(run_verify_command(bad, out), std::invalid_argument);
}

TEST_CASE("the installed binary honors the exit-code contract") {
    const char* bin = std::getenv("STOPBED_BIN");
    if (!bin) return;  // spawn checks only run under ctest
    const fs::path tmp = fresh_dir("stopbed_cli_spawn");
    const std::string null_redirect = " > " + (tmp / "out.txt").string() + " 2>&1";

    auto run = [&](const std::string& args) {
        const int status = std::system((std::string(bin) + " " + args + null_redirect).c_str());
        return WEXITSTATUS(status);
    };

    CHECK(run("oracle --cost -0.5") == 0);
    CHECK(run("oracle --env convdiff") == 1);                        // needs lingauss
    CHECK(run("train --design-lo 0.5 --out " + tmp.string()) == 1);  // lone bound
    CHECK(run("eval --run " + (tmp / "none").string()) == 1);
    CHECK(run("verify --suite gradcheck") == 0);

    const int status = std::system(
        (std::string(bin) + " oracle --cost -0.25 > " + (tmp / "table.csv").string()).c_str());
    CHECK(WEXITSTATUS(status) == 0);
    const std::string table = slurp(tmp / "table.csv");
    CHECK(table.find("2,-0.25,2.0468751,1") != std::string::npos);
    fs::remove_all(tmp);
}
