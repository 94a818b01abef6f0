#include "stopbed/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>

namespace stopbed {

double CurriculumSchedule::p_stop(int iter, int total_iters) const {
    if (iter > total_iters - lock_last) return 1.0;
    const double frac = static_cast<double>(iter) / static_cast<double>(total_iters);
    return 1.0 / (1.0 + std::exp(-steepness * (frac - midpoint)));
}

void TrainConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (episodes_per_iter < 1) throw std::invalid_argument("episodes_per_iter must be >= 1");
    if (explore_std0 < 0.0 && explore_std0 != -1.0) {
        throw std::invalid_argument("explore_std0 must be >= 0 (or -1 for the default)");
    }
    if (q_inner_epochs < 1) throw std::invalid_argument("q_inner_epochs must be >= 1");
    if (q_batch < 1) throw std::invalid_argument("q_batch must be >= 1");
    if (!(lr_q > 0.0) || !(lr_policy > 0.0)) {
        throw std::invalid_argument("learning rates must be > 0");
    }
    if (design_hist_bins < 1) throw std::invalid_argument("design_hist_bins must be >= 1");
}

EncodingSpec EncodingSpec::for_env(const Environment& env) {
    return EncodingSpec{env.horizon(), env.design_dim(), env.obs_dim()};
}

namespace {

void check_stage(int stage, const State& s, const EncodingSpec& enc) {
    if (stage < 0 || stage >= enc.horizon) {
        throw std::invalid_argument("stage outside [0, horizon)");
    }
    if (static_cast<int>(s.history.size()) != stage) {
        throw std::invalid_argument("history length does not match the stage");
    }
}

void fill_history(std::vector<double>& x, std::size_t offset, const State& s,
                  const EncodingSpec& enc) {
    std::size_t d = offset;
    for (const auto& entry : s.history) {
        for (double v : entry.design) x[d++] = v;
    }
    std::size_t o = offset + static_cast<std::size_t>(enc.horizon - 1) * enc.design_dim;
    for (const auto& entry : s.history) {
        for (double v : entry.observation) x[o++] = v;
    }
}

}  // namespace

std::vector<double> encode_policy_input(int stage, const State& s, const EncodingSpec& enc) {
    check_stage(stage, s, enc);
    std::vector<double> x(static_cast<std::size_t>(enc.policy_input_size()), 0.0);
    x[static_cast<std::size_t>(stage)] = 1.0;
    fill_history(x, static_cast<std::size_t>(enc.horizon), s, enc);
    return x;
}

std::vector<double> encode_q_input(int stage, const State& s, std::span<const double> xi,
                                   const EncodingSpec& enc) {
    check_stage(stage, s, enc);
    if (static_cast<int>(xi.size()) != enc.design_dim) {
        throw std::invalid_argument("candidate design has the wrong dimension");
    }
    std::vector<double> x(static_cast<std::size_t>(enc.q_input_size()), 0.0);
    x[static_cast<std::size_t>(stage)] = 1.0;
    fill_history(x, static_cast<std::size_t>(enc.horizon), s, enc);
    std::size_t d = static_cast<std::size_t>(enc.policy_input_size());
    for (double v : xi) x[d++] = v;
    return x;
}

PolicyNet PolicyNet::make(const Environment& env, const std::vector<int>& hidden,
                          std::uint64_t seed) {
    PolicyNet p;
    p.enc = EncodingSpec::for_env(env);
    std::vector<int> sizes{p.enc.policy_input_size()};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(p.enc.design_dim);
    p.core = DenseNet::make(sizes, seed);
    p.squash = BoxSquash{env.design_lo(), env.design_hi()};
    return p;
}

Vec PolicyNet::design(int stage, const State& s) const {
    const auto x = encode_policy_input(stage, s, enc);
    return squash.apply(core.forward(x));
}

QNet QNet::make(const Environment& env, const std::vector<int>& hidden, std::uint64_t seed) {
    QNet q;
    q.enc = EncodingSpec::for_env(env);
    std::vector<int> sizes{q.enc.q_input_size()};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    q.core = DenseNet::make(sizes, seed);
    return q;
}

double QNet::value(int stage, const State& s, std::span<const double> xi) const {
    const auto x = encode_q_input(stage, s, xi, enc);
    return core.forward(x)[0];
}

bool stopping_test_with(const State& s, const ContinuationValue& continuation,
                        const RewardSpec& spec) {
    if (s.is_terminal) throw std::logic_error("stopping test on a terminal state");
    return stop_value(s, spec) >= continuation(s.stage, s);
}

bool stopping_test(const State& s, const PolicyNet& policy, const QNet& q,
                   const RewardSpec& spec) {
    return stopping_test_with(
        s,
        [&](int stage, const State& state) {
            return q.value(stage, state, policy.design(stage, state));
        },
        spec);
}

namespace {

RewardSpec terminal_view(const RewardSpec& spec) {
    RewardSpec t = spec;
    t.form = RewardForm::Terminal;
    return t;
}

bool stop_fires(const RolloutOptions& opts, const DecisionPolicy& policy, int stage,
                const State& s, const RewardSpec& spec) {
    switch (opts.stopping) {
        case StoppingMode::Learned:
            return policy.wants_stop(stage, s, spec);
        case StoppingMode::FixedHorizon:
            return stage >= opts.fixed_horizon_stage;
        case StoppingMode::Threshold:
            // Accumulated reward so far, independent of the bookkeeping mode.
            return stop_value(s, terminal_view(spec)) >= opts.threshold;
    }
    throw std::logic_error("unreachable stopping mode");
}

}  // namespace

Episode rollout_episode(const Environment& env, const DecisionPolicy& policy,
                        const RewardSpec& spec, const RolloutOptions& opts,
                        std::uint64_t episode_seed) {
    Rng env_rng(derive_seed(episode_seed, 1));
    Rng explore_rng(derive_seed(episode_seed, 2));
    Rng stop_rng(derive_seed(episode_seed, 3));

    const int horizon = env.horizon();
    const Vec lo = env.design_lo();
    const Vec hi = env.design_hi();

    Episode e;
    e.seed = episode_seed;
    e.theta_true = env.sample_theta(env_rng);
    e.states.push_back(env.initial_state());

    if (opts.allow_stop_at_stage0 &&
        stop_fires(opts, policy, 0, e.states[0], spec) &&
        stop_rng.uniform() < opts.p_stop) {
        auto [terminal, reward] = stop(e.states[0], spec);
        e.terminal_reward = reward;
        e.tau = 0;
        return e;
    }

    for (int k = 0; k < horizon; ++k) {
        const State& s = e.states.back();
        Vec xi = policy.design(k, s);
        if (opts.explore_std > 0.0) {
            for (double& v : xi) v += explore_rng.normal(0.0, opts.explore_std);
        }
        for (std::size_t a = 0; a < xi.size(); ++a) {
            xi[a] = std::clamp(xi[a], lo[a], hi[a]);
        }
        const Vec y = env.simulate_observation(e.theta_true, s, xi, env_rng);
        State next = transition(s, xi, y, env);
        e.stage_rewards.push_back(stage_reward(s, xi, y, next, spec));
        e.designs.push_back(xi);
        e.observations.push_back(y);
        e.states.push_back(std::move(next));

        const State& reached = e.states.back();
        if (k + 1 == horizon) {
            e.tau = horizon;
            e.terminal_reward = stop_value(reached, spec);
            break;
        }
        if (stop_fires(opts, policy, k + 1, reached, spec) &&
            stop_rng.uniform() < opts.p_stop) {
            e.tau = k + 1;
            e.terminal_reward = stop_value(reached, spec);
            break;
        }
    }
    return e;
}

double policy_gradient_step(const std::vector<Episode>& episodes, PolicyNet& policy,
                            const QNet& q, const RewardSpec& spec, Optimizer& opt) {
    (void)spec;
    if (episodes.empty()) throw std::invalid_argument("policy step needs episodes");
    const EncodingSpec& enc = policy.enc;
    const int design_dim = enc.design_dim;
    const int design_offset = enc.policy_input_size();

    ParamGradients grads = ParamGradients::zeros_like(policy.core);
    std::vector<double> upstream(static_cast<std::size_t>(design_dim));
    for (const Episode& e : episodes) {
        for (int k = 0; k < e.tau; ++k) {
            const State& s = e.states[static_cast<std::size_t>(k)];
            const auto x_p = encode_policy_input(k, s, enc);
            const auto raw = policy.core.forward(x_p);
            const auto mu = policy.squash.apply(raw);
            const auto dmu = policy.squash.derivative(raw);
            const auto x_q = encode_q_input(k, s, mu, q.enc);
            const auto q_grad = grad_input(q.core, x_q);
            for (int a = 0; a < design_dim; ++a) {
                upstream[static_cast<std::size_t>(a)] =
                    q_grad[static_cast<std::size_t>(design_offset + a)] *
                    dmu[static_cast<std::size_t>(a)];
            }
            backprop(policy.core, x_p, upstream, &grads, nullptr);
        }
    }
    grads.scale(1.0 / static_cast<double>(episodes.size()));
    if (!grads.finite()) {
        return std::numeric_limits<double>::quiet_NaN();  // step skipped
    }
    const double norm = grads.l2_norm();
    apply_update(policy.core, grads, opt, UpdateDirection::Ascent);
    return norm;
}

double q_regression_step(const std::vector<Episode>& episodes, QNet& q,
                         const PolicyNet& policy, const RewardSpec& spec, Optimizer& opt,
                         int batch_size, Rng& rng) {
    (void)spec;
    std::vector<std::pair<const Episode*, int>> transitions;
    for (const Episode& e : episodes) {
        for (int k = 0; k < e.tau; ++k) transitions.emplace_back(&e, k);
    }
    if (transitions.empty()) return 0.0;

    const int count = static_cast<int>(transitions.size());
    const int batch = std::min(batch_size, count);

    // Targets and the prediction both use the parameters at entry; the
    // single update happens after the whole batch is accumulated.
    ParamGradients grads = ParamGradients::zeros_like(q.core);
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
        const auto [e, k] = transitions[rng.index(transitions.size())];
        const State& s = e->states[static_cast<std::size_t>(k)];
        const Vec& xi = e->designs[static_cast<std::size_t>(k)];
        double target = e->stage_rewards[static_cast<std::size_t>(k)];
        if (k + 1 == e->tau) {
            target += e->terminal_reward;  // stopping value or horizon boundary
        } else {
            const State& sn = e->states[static_cast<std::size_t>(k + 1)];
            target += q.value(k + 1, sn, policy.design(k + 1, sn));
        }
        const auto x = encode_q_input(k, s, xi, q.enc);
        const double pred = q.core.forward(x)[0];
        const double resid = pred - target;
        loss += resid * resid;
        const double upstream = 2.0 * resid / batch;
        backprop(q.core, x, std::span<const double>(&upstream, 1), &grads, nullptr);
    }
    loss /= batch;
    if (!grads.finite() || !std::isfinite(loss)) {
        return std::numeric_limits<double>::quiet_NaN();  // step rejected
    }
    apply_update(q.core, grads, opt, UpdateDirection::Descent);
    return loss;
}

namespace {

IterationStats summarize_episodes(const std::vector<Episode>& episodes, const Environment& env,
                                  int bins) {
    IterationStats st;
    const int horizon = env.horizon();
    const Vec lo = env.design_lo();
    const Vec hi = env.design_hi();
    const int axes = env.design_dim();
    st.stop_hist.assign(static_cast<std::size_t>(horizon) + 1, 0);
    st.design_hist.assign(static_cast<std::size_t>(axes) * bins, 0);
    for (const Episode& e : episodes) {
        st.avg_reward += total_reward(e);
        st.avg_stop_stage += e.tau;
        st.stop_hist[static_cast<std::size_t>(e.tau)] += 1;
        for (const Vec& xi : e.designs) {
            for (int a = 0; a < axes; ++a) {
                const double span = hi[a] - lo[a];
                int bin = static_cast<int>((xi[static_cast<std::size_t>(a)] - lo[a]) / span *
                                           bins);
                bin = std::clamp(bin, 0, bins - 1);
                st.design_hist[static_cast<std::size_t>(a) * bins + bin] += 1;
            }
        }
    }
    const double m = static_cast<double>(episodes.size());
    st.avg_reward /= m;
    st.avg_stop_stage /= m;
    return st;
}

void maybe_checkpoint(const TrainConfig& cfg, const PolicyNet& policy, const QNet& q,
                      const std::string& tag) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    save_checkpoint(policy.core, cfg.checkpoint_dir + "/policy_" + tag + ".ckpt");
    save_checkpoint(q.core, cfg.checkpoint_dir + "/q_" + tag + ".ckpt");
}

}  // namespace

TrainResult train(const Environment& env, const TrainConfig& cfg) {
    cfg.validate();
    const int horizon = env.horizon();
    const Vec lo = env.design_lo();
    const Vec hi = env.design_hi();
    double range = 0.0;
    for (std::size_t a = 0; a < lo.size(); ++a) range = std::max(range, hi[a] - lo[a]);
    const double explore0 = cfg.explore_std0 >= 0.0 ? cfg.explore_std0 : 0.2 * range;

    TrainResult out;
    out.policy = PolicyNet::make(env, cfg.policy_hidden, derive_seed(cfg.seed, 0x504f4c59));
    out.q = QNet::make(env, cfg.q_hidden, derive_seed(cfg.seed, 0x514e4554));
    out.record.horizon = horizon;
    out.record.design_dim = env.design_dim();
    out.record.design_hist_bins = cfg.design_hist_bins;

    Optimizer opt_p = Optimizer::adam(cfg.lr_policy);
    Optimizer opt_q = Optimizer::adam(cfg.lr_q);

    int consecutive_rejected = 0;
    std::vector<Episode> episodes;
    episodes.reserve(static_cast<std::size_t>(cfg.episodes_per_iter));

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        const double p_stop =
            cfg.mode == TrainMode::Vanilla ? 1.0 : cfg.curriculum.p_stop(iter, cfg.iterations);
        RolloutOptions opts;
        opts.explore_std =
            explore0 * std::max(cfg.explore_floor,
                                1.0 - static_cast<double>(iter) / cfg.iterations);
        opts.p_stop = p_stop;
        opts.allow_stop_at_stage0 = cfg.allow_stop_at_stage0;
        opts.stopping = cfg.stopping;
        opts.fixed_horizon_stage = cfg.fixed_horizon_stage;
        opts.threshold = cfg.threshold;

        LearnedPolicy actor(&out.policy, &out.q);
        episodes.clear();
        for (int m = 0; m < cfg.episodes_per_iter; ++m) {
            const std::uint64_t ep_seed =
                derive_seed(cfg.seed, 0x45505349, static_cast<std::uint64_t>(iter),
                            static_cast<std::uint64_t>(m));
            episodes.push_back(rollout_episode(env, actor, cfg.reward, opts, ep_seed));
        }

        IterationStats st = summarize_episodes(episodes, env, cfg.design_hist_bins);
        st.iter = iter;
        st.p_stop = p_stop;

        int transitions = 0;
        for (const Episode& e : episodes) transitions += e.tau;
        const int calls_per_epoch = std::max(1, (transitions + cfg.q_batch - 1) / cfg.q_batch);
        Rng q_rng(derive_seed(cfg.seed, 0x51524547, static_cast<std::uint64_t>(iter)));
        double loss_sum = 0.0;
        int loss_count = 0;
        bool q_rejected = false;
        for (int pass = 0; pass < cfg.q_inner_epochs * calls_per_epoch; ++pass) {
            const double loss = q_regression_step(episodes, out.q, out.policy, cfg.reward,
                                                  opt_q, cfg.q_batch, q_rng);
            if (std::isnan(loss)) {
                q_rejected = true;
                continue;
            }
            loss_sum += loss;
            loss_count += 1;
        }
        st.loss_q = loss_count > 0 ? loss_sum / loss_count : 0.0;

        const double norm =
            policy_gradient_step(episodes, out.policy, out.q, cfg.reward, opt_p);
        const bool p_rejected = std::isnan(norm);
        st.grad_norm = p_rejected ? 0.0 : norm;

        if (q_rejected || p_rejected) {
            consecutive_rejected += 1;
            std::fprintf(stderr, "iter %d: update rejected (non-finite gradient)\n", iter);
            if (consecutive_rejected >= 10) {
                throw std::runtime_error("training aborted: 10 consecutive rejected steps");
            }
        } else {
            consecutive_rejected = 0;
        }

        out.record.rows.push_back(std::move(st));
        if (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) {
            char tag[16];
            std::snprintf(tag, sizeof(tag), "%04d", iter);
            maybe_checkpoint(cfg, out.policy, out.q, tag);
        }
    }
    maybe_checkpoint(cfg, out.policy, out.q, "final");
    return out;
}

EvalResult evaluate(const Environment& env, const DecisionPolicy& policy,
                    const RewardSpec& spec, int n_episodes, std::uint64_t seed,
                    int design_hist_bins) {
    if (n_episodes < 1) throw std::invalid_argument("evaluation needs at least one episode");
    RolloutOptions opts;  // noiseless, stopping rule always honored
    EvalResult out;
    out.episodes.reserve(static_cast<std::size_t>(n_episodes));
    for (int m = 0; m < n_episodes; ++m) {
        const std::uint64_t ep_seed =
            derive_seed(seed, 0x4556414c, static_cast<std::uint64_t>(m));
        out.episodes.push_back(rollout_episode(env, policy, spec, opts, ep_seed));
    }
    out.stats = summarize_episodes(out.episodes, env, design_hist_bins);
    out.stats.p_stop = 1.0;
    return out;
}

EvalResult evaluate(const Environment& env, const PolicyNet& policy, const QNet& q,
                    const RewardSpec& spec, int n_episodes, std::uint64_t seed,
                    int design_hist_bins) {
    LearnedPolicy actor(&policy, &q);
    return evaluate(env, actor, spec, n_episodes, seed, design_hist_bins);
}

EvalResult baseline_threshold(const Environment& env, const DecisionPolicy& designs,
                              const RewardSpec& spec, double threshold, int n_episodes,
                              std::uint64_t seed, int design_hist_bins) {
    if (std::isnan(threshold) || threshold == -std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("threshold must be finite or +inf");
    }
    RolloutOptions opts;
    opts.stopping = StoppingMode::Threshold;
    opts.threshold = threshold;
    EvalResult out;
    out.episodes.reserve(static_cast<std::size_t>(n_episodes));
    for (int m = 0; m < n_episodes; ++m) {
        const std::uint64_t ep_seed =
            derive_seed(seed, 0x54485245, static_cast<std::uint64_t>(m));
        out.episodes.push_back(rollout_episode(env, designs, spec, opts, ep_seed));
    }
    out.stats = summarize_episodes(out.episodes, env, design_hist_bins);
    out.stats.p_stop = 1.0;
    return out;
}

double design_mass_in(const EvalResult& result, int axis, double lo, double hi) {
    long total = 0;
    long inside = 0;
    for (const Episode& e : result.episodes) {
        for (const Vec& xi : e.designs) {
            total += 1;
            const double v = xi.at(static_cast<std::size_t>(axis));
            if (v >= lo && v <= hi) inside += 1;
        }
    }
    return total > 0 ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
}

}  // namespace stopbed
