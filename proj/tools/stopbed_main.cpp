#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stopbed/cli_commands.hpp"

namespace {

using stopbed::RunConfig;

struct CommonFlags {
    std::optional<std::string> config_path;
    std::optional<std::string> env_kind;
    std::optional<int> horizon;
    std::optional<double> cost;
    std::optional<std::string> cost_kind;
    std::optional<double> design_lo, design_hi, design_box;
    std::optional<int> fv_resolution, theta_grid;
    std::optional<std::string> reward;
    std::optional<std::string> mode;
    std::optional<int> iters, episodes;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> field_cache;
    std::optional<double> lr_q, lr_policy, explore_std0;
    std::optional<bool> allow_stop_at_0;
    std::optional<int> verbosity;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file; flags override its values");
    cmd->add_option("--env", f.env_kind, "environment: lingauss or convdiff");
    cmd->add_option("--horizon", f.horizon, "maximum number of experiments N");
    cmd->add_option("--cost", f.cost, "per-experiment cost c_k");
    cmd->add_option("--cost-kind", f.cost_kind, "constant or quadratic");
    cmd->add_option("--design-lo", f.design_lo, "lower design bound (lingauss)");
    cmd->add_option("--design-hi", f.design_hi, "upper design bound (lingauss)");
    cmd->add_option("--design-box", f.design_box, "per-axis displacement bound (convdiff)");
    cmd->add_option("--fv-resolution", f.fv_resolution, "solver mesh cells per axis");
    cmd->add_option("--theta-grid", f.theta_grid, "posterior grid cells per axis");
    cmd->add_option("--reward", f.reward, "terminal or incremental bookkeeping");
    cmd->add_option("--mode", f.mode, "curriculum or vanilla");
    cmd->add_option("--iters", f.iters, "training iterations L");
    cmd->add_option("--episodes", f.episodes, "episodes per iteration M");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--field-cache", f.field_cache, "field cache file to reuse or create");
    cmd->add_option("--lr-q", f.lr_q, "Q-network learning rate");
    cmd->add_option("--lr-policy", f.lr_policy, "policy learning rate");
    cmd->add_option("--explore-std", f.explore_std0, "initial exploration noise scale");
    cmd->add_flag("--allow-stop-at-0", f.allow_stop_at_0, "evaluate the stopping rule at stage 0");
    cmd->add_option("--verbosity", f.verbosity, "0 = quiet");
}

RunConfig assemble_config(const CommonFlags& f) {
    nlohmann::json j;
    if (f.config_path) {
        std::ifstream in(*f.config_path);
        if (!in) {
            throw std::invalid_argument("cannot open config file: " + *f.config_path);
        }
        in >> j;
    }
    if (!j.contains("env")) j["env"] = nlohmann::json::object();
    auto& env = j["env"];
    if (f.env_kind) env["kind"] = *f.env_kind;
    if (f.horizon) env["horizon"] = *f.horizon;
    if (f.cost) env["cost"] = *f.cost;
    if (f.cost_kind) env["cost_kind"] = *f.cost_kind;
    if (f.design_lo) env["design_lo"] = *f.design_lo;
    if (f.design_hi) env["design_hi"] = *f.design_hi;
    if (f.design_box) env["design_box"] = *f.design_box;
    if (f.fv_resolution) env["fv_resolution"] = *f.fv_resolution;
    if (f.theta_grid) env["theta_grid"] = *f.theta_grid;
    // A bound given alone on the command line must fail the same way as in
    // a config file.
    if (env.contains("design_lo") != env.contains("design_hi")) {
        throw std::invalid_argument(
            std::string("config error: env.") +
            (env.contains("design_lo") ? "design_hi" : "design_lo") +
            ": design bounds must be given together");
    }
    if (f.reward) j["reward"] = *f.reward;
    if (!j.contains("train")) j["train"] = nlohmann::json::object();
    auto& train = j["train"];
    if (f.mode) train["mode"] = *f.mode;
    if (f.iters) train["iterations"] = *f.iters;
    if (f.episodes) train["episodes"] = *f.episodes;
    if (f.seed) train["seed"] = *f.seed;
    if (f.lr_q) train["lr_q"] = *f.lr_q;
    if (f.lr_policy) train["lr_policy"] = *f.lr_policy;
    if (f.explore_std0) train["explore_std0"] = *f.explore_std0;
    if (f.allow_stop_at_0) train["allow_stop_at_0"] = *f.allow_stop_at_0;
    if (f.out) j["out"] = *f.out;
    if (f.field_cache) j["field_cache"] = *f.field_cache;
    if (f.verbosity) j["verbosity"] = *f.verbosity;

    RunConfig cfg = stopbed::run_config_from_json(j);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sequential experimental design with learned stopping"};
    app.require_subcommand(1);

    CommonFlags train_flags;
    CLI::App* train_cmd = app.add_subcommand("train", "train design and stopping policies");
    add_common_flags(train_cmd, train_flags);

    CommonFlags oracle_flags;
    CLI::App* oracle_cmd =
        app.add_subcommand("oracle", "print the closed-form utility table as CSV");
    add_common_flags(oracle_cmd, oracle_flags);

    stopbed::EvalCommandOptions eval_opts;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a trained checkpoint");
    eval_cmd->add_option("--run", eval_opts.run_dir, "training output directory")->required();
    eval_cmd->add_option("--out", eval_opts.out_dir, "where to write eval CSVs (default: run dir)");
    eval_cmd->add_option("--episodes", eval_opts.episodes, "number of evaluation episodes");
    eval_cmd->add_option("--seed", eval_opts.seed, "evaluation seed");

    stopbed::VerifyCommandOptions verify_opts;
    CLI::App* verify_cmd = app.add_subcommand("verify", "run the verification suites");
    verify_cmd->add_option("--suite", verify_opts.suites,
                           "subset to run: gradcheck, equivalence, fv, oracle");
    verify_cmd->add_option("--seed", verify_opts.seed, "suite seed");
    verify_cmd->add_option("--trajectories", verify_opts.equivalence_trajectories,
                           "trajectories per equivalence suite");
    verify_cmd->add_option("--field-cache", verify_opts.field_cache,
                           "field cache file to reuse or create");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            return stopbed::run_train_command(assemble_config(train_flags), std::cout);
        }
        if (oracle_cmd->parsed()) {
            RunConfig cfg = assemble_config(oracle_flags);
            if (cfg.env_kind != stopbed::EnvKind::LinGauss) {
                throw std::invalid_argument("config error: env.kind: oracle needs lingauss");
            }
            return stopbed::run_oracle_command(cfg.lingauss, std::cout);
        }
        if (eval_cmd->parsed()) {
            return stopbed::run_eval_command(eval_opts, std::cout);
        }
        if (verify_cmd->parsed()) {
            return stopbed::run_verify_command(verify_opts, std::cout);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return stopbed::kExitValidation;
    } catch (const std::logic_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return stopbed::kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return stopbed::kExitRuntime;
    }
    return stopbed::kExitValidation;
}
