#include "stopbed/config.hpp"

#include <fstream>
#include <stdexcept>

namespace stopbed {

using nlohmann::json;

const char* version_string() { return "stopbed 0.1.0"; }

namespace {

[[noreturn]] void config_error(const std::string& field, const std::string& what) {
    throw std::invalid_argument("config error: " + field + ": " + what);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        config_error(key, "wrong type");
    }
}

std::string cost_kind_name(CostKind k) {
    switch (k) {
        case CostKind::Constant: return "constant";
        case CostKind::Quadratic: return "quadratic";
        case CostKind::Table: return "table";
    }
    return "constant";
}

CostKind cost_kind_from(const std::string& name, const std::string& field) {
    if (name == "constant") return CostKind::Constant;
    if (name == "quadratic") return CostKind::Quadratic;
    if (name == "table") return CostKind::Table;
    config_error(field, "expected constant|quadratic|table");
}

}  // namespace

void RunConfig::validate() const {
    if (env_kind == EnvKind::LinGauss) {
        lingauss.validate();
    } else {
        convdiff.validate();
    }
    train.validate();
}

RewardSpec RunConfig::reward_spec() const {
    return env_kind == EnvKind::LinGauss ? lingauss.reward_spec(reward_form)
                                         : convdiff.reward_spec(reward_form);
}

json run_config_to_json(const RunConfig& cfg) {
    json env;
    if (cfg.env_kind == EnvKind::LinGauss) {
        env = json{{"kind", "lingauss"},
                   {"prior_mean", cfg.lingauss.prior_mean},
                   {"prior_var", cfg.lingauss.prior_var},
                   {"noise_std", cfg.lingauss.noise_std},
                   {"design_lo", cfg.lingauss.design_lo},
                   {"design_hi", cfg.lingauss.design_hi},
                   {"horizon", cfg.lingauss.horizon},
                   {"cost", cfg.lingauss.cost},
                   {"cost_kind", cost_kind_name(cfg.lingauss.cost_kind)}};
    } else {
        env = json{{"kind", "convdiff"},
                   {"fv_resolution", cfg.convdiff.fv_resolution},
                   {"dt_pde", cfg.convdiff.dt_pde},
                   {"dt_safety", cfg.convdiff.dt_safety},
                   {"measurement_dt", cfg.convdiff.measurement_dt},
                   {"horizon", cfg.convdiff.horizon},
                   {"source_width", cfg.convdiff.source_width},
                   {"source_strength", cfg.convdiff.source_strength},
                   {"velocity_slope", cfg.convdiff.velocity_slope},
                   {"diffusivity", cfg.convdiff.diffusivity},
                   {"sensor_noise_std", cfg.convdiff.sensor_noise_std},
                   {"design_box", cfg.convdiff.design_box},
                   {"initial_sensor", json::array({cfg.convdiff.initial_sensor_x,
                                                   cfg.convdiff.initial_sensor_y})},
                   {"theta_grid", cfg.convdiff.theta_grid},
                   {"cost", cfg.convdiff.cost},
                   {"cost_kind", cost_kind_name(cfg.convdiff.cost_kind)}};
    }
    json train_j{{"iterations", cfg.train.iterations},
                 {"episodes", cfg.train.episodes_per_iter},
                 {"explore_std0", cfg.train.explore_std0},
                 {"explore_floor", cfg.train.explore_floor},
                 {"mode", cfg.train.mode == TrainMode::Vanilla ? "vanilla" : "curriculum"},
                 {"stopping", cfg.train.stopping == StoppingMode::Learned
                                  ? "learned"
                                  : cfg.train.stopping == StoppingMode::FixedHorizon
                                        ? "fixed_horizon"
                                        : "threshold"},
                 {"fixed_horizon_stage", cfg.train.fixed_horizon_stage},
                 {"threshold", cfg.train.threshold},
                 {"curriculum_steepness", cfg.train.curriculum.steepness},
                 {"curriculum_midpoint", cfg.train.curriculum.midpoint},
                 {"curriculum_lock_last", cfg.train.curriculum.lock_last},
                 {"seed", cfg.train.seed},
                 {"allow_stop_at_0", cfg.train.allow_stop_at_stage0},
                 {"q_inner_epochs", cfg.train.q_inner_epochs},
                 {"q_batch", cfg.train.q_batch},
                 {"lr_q", cfg.train.lr_q},
                 {"lr_policy", cfg.train.lr_policy},
                 {"policy_hidden", cfg.train.policy_hidden},
                 {"q_hidden", cfg.train.q_hidden},
                 {"checkpoint_every", cfg.train.checkpoint_every},
                 {"design_hist_bins", cfg.train.design_hist_bins}};
    return json{{"env", env},
                {"reward", cfg.reward_form == RewardForm::Terminal ? "terminal" : "incremental"},
                {"train", train_j},
                {"out", cfg.out_dir},
                {"field_cache", cfg.field_cache},
                {"verbosity", cfg.verbosity}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    if (j.contains("env")) {
        const json& env = j.at("env");
        const std::string kind = get_or<std::string>(env, "kind", "lingauss");
        if (kind == "lingauss") {
            cfg.env_kind = EnvKind::LinGauss;
            auto& lg = cfg.lingauss;
            lg.prior_mean = get_or(env, "prior_mean", lg.prior_mean);
            lg.prior_var = get_or(env, "prior_var", lg.prior_var);
            lg.noise_std = get_or(env, "noise_std", lg.noise_std);
            if (env.contains("design_lo") != env.contains("design_hi")) {
                config_error(env.contains("design_lo") ? "env.design_hi" : "env.design_lo",
                             "design bounds must be given together");
            }
            lg.design_lo = get_or(env, "design_lo", lg.design_lo);
            lg.design_hi = get_or(env, "design_hi", lg.design_hi);
            lg.horizon = get_or(env, "horizon", lg.horizon);
            lg.cost = get_or(env, "cost", lg.cost);
            lg.cost_kind = cost_kind_from(
                get_or<std::string>(env, "cost_kind", cost_kind_name(lg.cost_kind)),
                "env.cost_kind");
        } else if (kind == "convdiff") {
            cfg.env_kind = EnvKind::ConvDiff;
            auto& cd = cfg.convdiff;
            cd.fv_resolution = get_or(env, "fv_resolution", cd.fv_resolution);
            cd.dt_pde = get_or(env, "dt_pde", cd.dt_pde);
            cd.dt_safety = get_or(env, "dt_safety", cd.dt_safety);
            cd.measurement_dt = get_or(env, "measurement_dt", cd.measurement_dt);
            cd.horizon = get_or(env, "horizon", cd.horizon);
            cd.source_width = get_or(env, "source_width", cd.source_width);
            cd.source_strength = get_or(env, "source_strength", cd.source_strength);
            cd.velocity_slope = get_or(env, "velocity_slope", cd.velocity_slope);
            cd.diffusivity = get_or(env, "diffusivity", cd.diffusivity);
            cd.sensor_noise_std = get_or(env, "sensor_noise_std", cd.sensor_noise_std);
            cd.design_box = get_or(env, "design_box", cd.design_box);
            if (env.contains("initial_sensor")) {
                const auto v = env.at("initial_sensor").get<std::vector<double>>();
                if (v.size() != 2) config_error("env.initial_sensor", "expected two values");
                cd.initial_sensor_x = v[0];
                cd.initial_sensor_y = v[1];
            }
            cd.theta_grid = get_or(env, "theta_grid", cd.theta_grid);
            cd.cost = get_or(env, "cost", cd.cost);
            cd.cost_kind = cost_kind_from(
                get_or<std::string>(env, "cost_kind", cost_kind_name(cd.cost_kind)),
                "env.cost_kind");
        } else {
            config_error("env.kind", "expected lingauss|convdiff");
        }
    }
    const std::string reward = get_or<std::string>(j, "reward", "terminal");
    if (reward == "terminal") {
        cfg.reward_form = RewardForm::Terminal;
    } else if (reward == "incremental") {
        cfg.reward_form = RewardForm::Incremental;
    } else {
        config_error("reward", "expected terminal|incremental");
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        auto& tc = cfg.train;
        tc.iterations = get_or(t, "iterations", tc.iterations);
        tc.episodes_per_iter = get_or(t, "episodes", tc.episodes_per_iter);
        tc.explore_std0 = get_or(t, "explore_std0", tc.explore_std0);
        tc.explore_floor = get_or(t, "explore_floor", tc.explore_floor);
        const std::string mode = get_or<std::string>(t, "mode", "curriculum");
        if (mode == "vanilla") {
            tc.mode = TrainMode::Vanilla;
        } else if (mode == "curriculum") {
            tc.mode = TrainMode::Curriculum;
        } else {
            config_error("train.mode", "expected vanilla|curriculum");
        }
        const std::string stopping = get_or<std::string>(t, "stopping", "learned");
        if (stopping == "learned") {
            tc.stopping = StoppingMode::Learned;
        } else if (stopping == "fixed_horizon") {
            tc.stopping = StoppingMode::FixedHorizon;
        } else if (stopping == "threshold") {
            tc.stopping = StoppingMode::Threshold;
        } else {
            config_error("train.stopping", "expected learned|fixed_horizon|threshold");
        }
        tc.fixed_horizon_stage = get_or(t, "fixed_horizon_stage", tc.fixed_horizon_stage);
        tc.threshold = get_or(t, "threshold", tc.threshold);
        tc.curriculum.steepness = get_or(t, "curriculum_steepness", tc.curriculum.steepness);
        tc.curriculum.midpoint = get_or(t, "curriculum_midpoint", tc.curriculum.midpoint);
        tc.curriculum.lock_last = get_or(t, "curriculum_lock_last", tc.curriculum.lock_last);
        tc.seed = get_or(t, "seed", tc.seed);
        tc.allow_stop_at_stage0 = get_or(t, "allow_stop_at_0", tc.allow_stop_at_stage0);
        tc.q_inner_epochs = get_or(t, "q_inner_epochs", tc.q_inner_epochs);
        tc.q_batch = get_or(t, "q_batch", tc.q_batch);
        tc.lr_q = get_or(t, "lr_q", tc.lr_q);
        tc.lr_policy = get_or(t, "lr_policy", tc.lr_policy);
        tc.policy_hidden = get_or(t, "policy_hidden", tc.policy_hidden);
        tc.q_hidden = get_or(t, "q_hidden", tc.q_hidden);
        tc.checkpoint_every = get_or(t, "checkpoint_every", tc.checkpoint_every);
        tc.design_hist_bins = get_or(t, "design_hist_bins", tc.design_hist_bins);
    }
    cfg.out_dir = get_or<std::string>(j, "out", cfg.out_dir);
    cfg.field_cache = get_or<std::string>(j, "field_cache", cfg.field_cache);
    cfg.verbosity = get_or(j, "verbosity", cfg.verbosity);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::invalid_argument("config parse error in " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

std::unique_ptr<Environment> make_environment(const RunConfig& cfg, int n_threads) {
    if (cfg.env_kind == EnvKind::LinGauss) {
        return std::make_unique<LinGaussEnv>(cfg.lingauss);
    }
    auto cache = std::make_shared<FieldCache>(
        FieldCache::load_or_build(cfg.field_cache, cfg.convdiff, n_threads));
    return std::make_unique<ConvDiffEnv>(cfg.convdiff, std::move(cache));
}

}  // namespace stopbed
