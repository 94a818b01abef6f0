#include "stopbed/cli_commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "stopbed/oracle_policy.hpp"
#include "stopbed/verify.hpp"

namespace stopbed {

namespace fs = std::filesystem;

std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);  // LF line endings
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

void write_manifest(const RunConfig& cfg, const std::string& path) {
    nlohmann::json manifest{{"version", version_string()},
                            {"config", run_config_to_json(cfg)}};
    auto out = open_out(path);
    out << manifest.dump(2) << "\n";
}

}  // namespace

void write_convergence_csv(const ConvergenceRecord& record, const std::string& path) {
    auto out = open_out(path);
    out << "iter,avg_reward,avg_stop_stage,p_stop,loss_q,grad_norm\n";
    for (const IterationStats& r : record.rows) {
        out << r.iter << ',' << csv_double(r.avg_reward) << ',' << csv_double(r.avg_stop_stage)
            << ',' << csv_double(r.p_stop) << ',' << csv_double(r.loss_q) << ','
            << csv_double(r.grad_norm) << '\n';
    }
}

void write_stop_hist_csv(const ConvergenceRecord& record, const std::string& path) {
    auto out = open_out(path);
    out << "iter,stage,count\n";
    for (const IterationStats& r : record.rows) {
        for (std::size_t stage = 0; stage < r.stop_hist.size(); ++stage) {
            out << r.iter << ',' << stage << ',' << r.stop_hist[stage] << '\n';
        }
    }
}

void write_design_hist_csv(const ConvergenceRecord& record, const Vec& lo, const Vec& hi,
                           const std::string& path) {
    auto out = open_out(path);
    out << "iter,axis,bin,bin_lo,bin_hi,count\n";
    const int bins = record.design_hist_bins;
    for (const IterationStats& r : record.rows) {
        for (int a = 0; a < record.design_dim; ++a) {
            const double width = (hi[static_cast<std::size_t>(a)] - lo[static_cast<std::size_t>(a)]) / bins;
            for (int b = 0; b < bins; ++b) {
                const double bin_lo = lo[static_cast<std::size_t>(a)] + b * width;
                out << r.iter << ',' << a << ',' << b << ',' << csv_double(bin_lo) << ','
                    << csv_double(bin_lo + width) << ','
                    << r.design_hist[static_cast<std::size_t>(a) * bins + b] << '\n';
            }
        }
    }
}

int run_train_command(const RunConfig& cfg_in, std::ostream& log) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    if (cfg.out_dir.empty()) {
        throw std::invalid_argument("config error: out: an output directory is required");
    }
    fs::create_directories(cfg.out_dir);
    cfg.train.checkpoint_dir = cfg.out_dir;
    cfg.train.reward = cfg.reward_spec();
    write_manifest(cfg, cfg.out_dir + "/manifest.json");

    auto env = make_environment(cfg);
    if (cfg.verbosity > 0) {
        log << "training " << (cfg.env_kind == EnvKind::LinGauss ? "lingauss" : "convdiff")
            << " for " << cfg.train.iterations << " iterations x "
            << cfg.train.episodes_per_iter << " episodes (seed " << cfg.train.seed << ")\n";
    }
    TrainResult result = train(*env, cfg.train);

    write_convergence_csv(result.record, cfg.out_dir + "/convergence.csv");
    write_stop_hist_csv(result.record, cfg.out_dir + "/stop_hist.csv");
    write_design_hist_csv(result.record, env->design_lo(), env->design_hi(),
                          cfg.out_dir + "/design_hist.csv");
    if (cfg.verbosity > 0) {
        const IterationStats& last = result.record.rows.back();
        log << "done: avg reward " << csv_double(last.avg_reward) << ", avg stop stage "
            << csv_double(last.avg_stop_stage) << "\n";
    }
    return kExitOk;
}

int run_oracle_command(const LinGaussConfig& cfg, std::ostream& out) {
    cfg.validate();
    const int best = oracle_optimal_stop_stage(cfg);
    out << "n,cost,utility,optimal\n";
    for (int n = 1; n <= cfg.horizon; ++n) {
        out << n << ',' << csv_double(cfg.cost) << ',' << csv_double(oracle_utility(n, cfg))
            << ',' << (n == best ? 1 : 0) << '\n';
    }
    return kExitOk;
}

namespace {

void write_eval_outputs(const RunConfig& cfg, const Environment& env, const EvalResult& result,
                        const std::string& out_dir) {
    {
        auto out = open_out(out_dir + "/eval_metrics.csv");
        out << "episodes,avg_reward,avg_stop_stage\n";
        out << result.episodes.size() << ',' << csv_double(result.stats.avg_reward) << ','
            << csv_double(result.stats.avg_stop_stage) << '\n';
    }
    {
        auto out = open_out(out_dir + "/eval_stop_hist.csv");
        out << "stage,count\n";
        for (std::size_t stage = 0; stage < result.stats.stop_hist.size(); ++stage) {
            out << stage << ',' << result.stats.stop_hist[stage] << '\n';
        }
    }
    {
        auto out = open_out(out_dir + "/eval_design_hist.csv");
        out << "axis,bin,bin_lo,bin_hi,count\n";
        const int bins = cfg.train.design_hist_bins;
        const Vec lo = env.design_lo();
        const Vec hi = env.design_hi();
        for (int a = 0; a < env.design_dim(); ++a) {
            const double width = (hi[static_cast<std::size_t>(a)] - lo[static_cast<std::size_t>(a)]) / bins;
            for (int b = 0; b < bins; ++b) {
                out << a << ',' << b << ',' << csv_double(lo[static_cast<std::size_t>(a)] + b * width)
                    << ',' << csv_double(lo[static_cast<std::size_t>(a)] + (b + 1) * width) << ','
                    << result.stats.design_hist[static_cast<std::size_t>(a) * bins + b] << '\n';
            }
        }
    }
    {
        auto out = open_out(out_dir + "/eval_episodes.txt");
        for (const Episode& e : result.episodes) out << episode_to_line(e) << '\n';
    }
    {
        auto out = open_out(out_dir + "/eval_traces.csv");
        out << "episode,stage,design,observation,physical,stop_value,belief_summary\n";
        RewardSpec terminal = cfg.reward_spec();
        terminal.form = RewardForm::Terminal;
        auto join = [](const Vec& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i > 0) s += ';';
                s += csv_double(v[i]);
            }
            return s;
        };
        for (std::size_t ep = 0; ep < result.episodes.size(); ++ep) {
            const Episode& e = result.episodes[ep];
            for (int k = 0; k < e.tau; ++k) {
                const State& reached = e.states[static_cast<std::size_t>(k) + 1];
                std::string belief_summary;
                if (std::holds_alternative<GaussianBelief>(reached.belief)) {
                    const auto& g = std::get<GaussianBelief>(reached.belief);
                    belief_summary = csv_double(g.mean) + ";" + csv_double(g.variance);
                } else {
                    const auto& g = std::get<GridBelief>(reached.belief);
                    double mx = 0.0, my = 0.0;
                    g.mean_point(&mx, &my);
                    belief_summary = csv_double(mx) + ";" + csv_double(my);
                }
                out << ep << ',' << k << ',' << join(e.designs[static_cast<std::size_t>(k)])
                    << ',' << join(e.observations[static_cast<std::size_t>(k)]) << ','
                    << join(reached.physical) << ',' << csv_double(stop_value(reached, terminal))
                    << ',' << belief_summary << '\n';
            }
        }
    }
}

}  // namespace

int run_eval_command(const EvalCommandOptions& opts, std::ostream& log) {
    if (opts.episodes < 1) {
        throw std::invalid_argument("config error: episodes: must be >= 1");
    }
    const std::string manifest_path = opts.run_dir + "/manifest.json";
    std::ifstream manifest_in(manifest_path);
    if (!manifest_in) {
        throw std::invalid_argument("cannot open manifest: " + manifest_path);
    }
    nlohmann::json manifest;
    manifest_in >> manifest;
    RunConfig cfg = run_config_from_json(manifest.at("config"));
    cfg.validate();

    auto env = make_environment(cfg, opts.n_threads);
    PolicyNet policy = PolicyNet::make(*env, cfg.train.policy_hidden, 0);
    QNet q = QNet::make(*env, cfg.train.q_hidden, 0);
    const std::string policy_path = opts.run_dir + "/policy_final.ckpt";
    const std::string q_path = opts.run_dir + "/q_final.ckpt";
    DenseNet policy_core = load_checkpoint(policy_path);
    DenseNet q_core = load_checkpoint(q_path);
    if (policy_core.sizes != policy.core.sizes || q_core.sizes != q.core.sizes) {
        throw std::runtime_error("checkpoint does not match the manifest's architecture");
    }
    policy.core = std::move(policy_core);
    q.core = std::move(q_core);

    EvalResult result = evaluate(*env, policy, q, cfg.reward_spec(), opts.episodes, opts.seed,
                                 cfg.train.design_hist_bins);
    const std::string out_dir = opts.out_dir.empty() ? opts.run_dir : opts.out_dir;
    fs::create_directories(out_dir);
    write_eval_outputs(cfg, *env, result, out_dir);
    log << "eval: " << opts.episodes << " episodes, avg reward "
        << csv_double(result.stats.avg_reward) << ", avg stop stage "
        << csv_double(result.stats.avg_stop_stage) << "\n";
    return kExitOk;
}

int run_verify_command(const VerifyCommandOptions& opts, std::ostream& out) {
    auto wants = [&](const std::string& name) {
        if (opts.suites.empty()) return true;
        for (const auto& s : opts.suites) {
            if (s == name) return true;
        }
        return false;
    };

    std::vector<SuiteResult> results;
    if (wants("gradcheck")) {
        results.push_back(run_gradcheck_suite(opts.seed, opts.gradcheck_nets));
    }
    if (wants("equivalence")) {
        results.push_back(
            run_equivalence_suite_lingauss(opts.seed, opts.equivalence_trajectories, 1e-9));
        ConvDiffConfig cfg;
        cfg.theta_grid = 25;
        auto cache = std::make_shared<FieldCache>(
            FieldCache::load_or_build(opts.field_cache, cfg, opts.n_threads));
        ConvDiffEnv env(cfg, cache);
        results.push_back(
            run_equivalence_suite_convdiff(env, opts.seed, opts.equivalence_trajectories, 1e-6));
    }
    if (wants("fv")) {
        results.push_back(run_fv_audit_suite(opts.seed));
    }
    if (wants("oracle")) {
        results.push_back(run_oracle_substitution_suite(opts.seed));
    }
    if (results.empty()) {
        throw std::invalid_argument(
            "config error: suite: expected gradcheck|equivalence|fv|oracle");
    }

    bool all_pass = true;
    for (const SuiteResult& r : results) {
        out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
        all_pass = all_pass && r.pass;
    }
    out << (all_pass ? "verification passed\n" : "verification FAILED\n");
    return all_pass ? kExitOk : kExitVerification;
}

}  // namespace stopbed
