#include "stopbed/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "stopbed/oracle_policy.hpp"
#include "stopbed/train.hpp"

namespace stopbed {

namespace {

std::string format_double(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Worst relative mismatch between analytic and central-difference gradients.
double gradcheck_one_net(Rng& rng, double* worst_rel) {
    const int n_hidden = 1 + static_cast<int>(rng.index(2));
    std::vector<int> sizes{2 + static_cast<int>(rng.index(4))};
    for (int l = 0; l < n_hidden; ++l) sizes.push_back(3 + static_cast<int>(rng.index(6)));
    sizes.push_back(1);
    DenseNet net = DenseNet::make(sizes, rng.next_u64());
    // Bias offsets keep ReLU kinks away from the evaluation point.
    for (auto& b : net.biases) {
        for (double& v : b) v = rng.uniform(0.05, 0.3);
    }
    std::vector<double> x(static_cast<std::size_t>(net.input_size()));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<double> upstream(static_cast<std::size_t>(net.output_size()));
    for (double& v : upstream) v = rng.uniform(-1.0, 1.0);

    const double h = 1e-5;
    auto rel_err = [](double analytic, double fd) {
        const double diff = std::abs(analytic - fd);
        const double scale = std::max({std::abs(analytic), std::abs(fd), 1e-8});
        return diff / scale;
    };

    const ParamGradients grads = grad_params(net, x, upstream);
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        for (std::size_t i = 0; i < net.weights[l].size(); ++i) {
            const double saved = net.weights[l][i];
            net.weights[l][i] = saved + h;
            const double up = dot(upstream, net.forward(x));
            net.weights[l][i] = saved - h;
            const double dn = dot(upstream, net.forward(x));
            net.weights[l][i] = saved;
            *worst_rel = std::max(*worst_rel, rel_err(grads.weights[l][i], (up - dn) / (2 * h)));
        }
        for (std::size_t i = 0; i < net.biases[l].size(); ++i) {
            const double saved = net.biases[l][i];
            net.biases[l][i] = saved + h;
            const double up = dot(upstream, net.forward(x));
            net.biases[l][i] = saved - h;
            const double dn = dot(upstream, net.forward(x));
            net.biases[l][i] = saved;
            *worst_rel = std::max(*worst_rel, rel_err(grads.biases[l][i], (up - dn) / (2 * h)));
        }
    }

    const std::vector<double> gx = grad_input(net, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = net.forward(x)[0];
        x[i] = saved - h;
        const double dn = net.forward(x)[0];
        x[i] = saved;
        *worst_rel = std::max(*worst_rel, rel_err(gx[i], (up - dn) / (2 * h)));
    }
    return *worst_rel;
}

}  // namespace

SuiteResult run_gradcheck_suite(std::uint64_t seed, int n_nets) {
    Rng rng(derive_seed(seed, 0x47524144));
    double worst = 0.0;
    for (int i = 0; i < n_nets; ++i) gradcheck_one_net(rng, &worst);
    SuiteResult res;
    res.name = "gradcheck";
    res.pass = worst <= 1e-5;
    res.detail = "worst relative error " + format_double("%.3g", worst) + " over " +
                 std::to_string(n_nets) + " nets (tol 1e-5)";
    return res;
}

namespace {

SuiteResult equivalence_suite(const Environment& env, const RewardSpec& base,
                              std::uint64_t seed, int n_trajectories, double tol,
                              double incremental_kl_scale, const std::string& name) {
    Rng rng(derive_seed(seed, 0x45515556));
    RewardSpec spec_t = base;
    spec_t.form = RewardForm::Terminal;
    RewardSpec spec_i = base;
    spec_i.form = RewardForm::Incremental;

    const Vec lo = env.design_lo();
    const Vec hi = env.design_hi();
    double worst = 0.0;
    for (int t = 0; t < n_trajectories; ++t) {
        const Vec theta = env.sample_theta(rng);
        const int tau = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(env.horizon())));
        Trajectory traj;
        traj.tau = tau;
        State s = env.initial_state();
        for (int k = 0; k < tau; ++k) {
            Vec xi(static_cast<std::size_t>(env.design_dim()));
            for (std::size_t a = 0; a < xi.size(); ++a) xi[a] = rng.uniform(lo[a], hi[a]);
            const Vec y = env.simulate_observation(theta, s, xi, rng);
            s = transition(s, xi, y, env);
            traj.designs.push_back(xi);
            traj.observations.push_back(y);
        }
        const double total_t = replay_total(env, traj, spec_t);
        const double total_i = replay_total(env, traj, spec_i, incremental_kl_scale);
        worst = std::max(worst, std::abs(total_t - total_i));
    }
    SuiteResult res;
    res.name = name;
    res.pass = worst <= tol;
    res.detail = "worst |total_T - total_I| = " + format_double("%.3g", worst) + " over " +
                 std::to_string(n_trajectories) + " trajectories (tol " +
                 format_double("%.0e", tol) + ")";
    return res;
}

}  // namespace

SuiteResult run_equivalence_suite_lingauss(std::uint64_t seed, int n_trajectories, double tol,
                                           double incremental_kl_scale) {
    LinGaussConfig cfg;
    cfg.cost = -0.3;
    LinGaussEnv env(cfg);
    return equivalence_suite(env, cfg.reward_spec(), seed, n_trajectories, tol,
                             incremental_kl_scale, "equivalence-lingauss");
}

SuiteResult run_equivalence_suite_convdiff(const ConvDiffEnv& env, std::uint64_t seed,
                                           int n_trajectories, double tol,
                                           double incremental_kl_scale) {
    return equivalence_suite(env, env.config().reward_spec(), seed, n_trajectories, tol,
                             incremental_kl_scale, "equivalence-convdiff");
}

SuiteResult run_fv_audit_suite(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x46564155));
    SuiteResult res;
    res.name = "fv-audit";

    ConvDiffConfig cfg;
    cfg.fv_resolution = 48;
    cfg.theta_grid = 2;  // irrelevant for direct solves

    // Conservation.
    const ConcentrationFields f48 = solve_forward(0.4, 0.6, cfg);
    const double drift = f48.max_mass_drift_rel;
    if (drift > 1e-6) {
        res.pass = false;
        res.detail = "mass drift " + format_double("%.3g", drift) + " exceeds 1e-6";
        return res;
    }

    // Zero source stays identically zero.
    ConvDiffConfig zero_cfg = cfg;
    zero_cfg.source_strength = 0.0;
    const ConcentrationFields fz = solve_forward(0.4, 0.6, zero_cfg);
    for (double v : fz.data) {
        if (v != 0.0) {
            res.pass = false;
            res.detail = "zero-source field is not identically zero";
            return res;
        }
    }

    // Refinement: halving h must shrink the solution change by >= 1.7x.
    ConvDiffConfig cfg96 = cfg;
    cfg96.fv_resolution = 96;
    ConvDiffConfig cfg192 = cfg;
    cfg192.fv_resolution = 192;
    const ConcentrationFields f96 = solve_forward(0.4, 0.6, cfg96);
    const ConcentrationFields f192 = solve_forward(0.4, 0.6, cfg192);
    double se_coarse = 0.0;
    double se_fine = 0.0;
    for (int p = 0; p < 10; ++p) {
        const double x = rng.uniform(0.25, 0.75);
        const double y = rng.uniform(0.25, 0.75);
        const int k = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.horizon)));
        const double d48 = f48.sample(k, x, y) - f96.sample(k, x, y);
        const double d96 = f96.sample(k, x, y) - f192.sample(k, x, y);
        se_coarse += d48 * d48;
        se_fine += d96 * d96;
    }
    const double ratio = std::sqrt(se_coarse / std::max(se_fine, 1e-300));
    if (ratio < 1.7) {
        res.pass = false;
        res.detail = "refinement ratio " + format_double("%.3g", ratio) + " below 1.7";
        return res;
    }

    res.pass = true;
    res.detail = "mass drift " + format_double("%.3g", drift) + ", refinement ratio " +
                 format_double("%.3g", ratio);
    return res;
}

SuiteResult run_oracle_substitution_suite(std::uint64_t seed) {
    SuiteResult res;
    res.name = "oracle-substitution";
    Rng rng(derive_seed(seed, 0x4f524143));

    int checked = 0;
    for (double cost : {0.0, -0.25, -0.5, -1.0}) {
        LinGaussConfig cfg;
        cfg.horizon = 4;
        cfg.cost = cost;
        LinGaussEnv env(cfg);
        const RewardSpec spec = cfg.reward_spec();
        ContinuationValue continuation = [&](int stage, const State& s) {
            return lingauss_continuation_value(stage, s, cfg, spec);
        };
        for (int t = 0; t < 100; ++t) {
            const Vec theta = env.sample_theta(rng);
            State s = env.initial_state();
            for (int k = 0; k < cfg.horizon; ++k) {
                const bool via_q = stopping_test_with(s, continuation, spec);
                const bool via_set =
                    oracle_stopping_set_member(std::get<GaussianBelief>(s.belief), k, cfg);
                if (via_q != via_set) {
                    res.pass = false;
                    res.detail = "decision mismatch at stage " + std::to_string(k) +
                                 ", cost " + format_double("%.2f", cost);
                    return res;
                }
                checked += 1;
                Vec xi{rng.uniform(cfg.design_lo, cfg.design_hi)};
                const Vec y = env.simulate_observation(theta, s, xi, rng);
                s = transition(s, xi, y, env);
            }
        }
    }
    res.pass = true;
    res.detail = "stopping decisions agree at " + std::to_string(checked) + " states";
    return res;
}

}  // namespace stopbed
