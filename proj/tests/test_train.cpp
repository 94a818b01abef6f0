#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "stopbed/env_lingauss.hpp"
#include "stopbed/oracle_policy.hpp"
#include "stopbed/train.hpp"
#include "stopbed/verify.hpp"

using namespace stopbed;

namespace {

LinGaussEnv make_env(double cost = 0.0, int horizon = 3) {
    LinGaussConfig cfg;
    cfg.cost = cost;
    cfg.horizon = horizon;
    return LinGaussEnv(cfg);
}

// Constant-output Q net: zero weights everywhere, output bias = value.
QNet constant_q(const Environment& env, double value) {
    QNet q = QNet::make(env, {4}, 1);
    for (auto& w : q.core.weights) {
        for (double& v : w) v = 0.0;
    }
    q.core.biases.back()[0] = value;
    return q;
}

PolicyNet midbox_policy(const Environment& env) {
    PolicyNet p = PolicyNet::make(env, {4}, 2);
    for (auto& w : p.core.weights) {
        for (double& v : w) v = 0.0;
    }
    return p;
}

}  // namespace

TEST_CASE("encoded inputs follow the one-hot plus padded-history layout") {
    const LinGaussEnv env = make_env(0.0, 3);
    const EncodingSpec enc = EncodingSpec::for_env(env);
    CHECK(enc.policy_input_size() == 3 + 2 * (1 + 1));
    CHECK(enc.q_input_size() == enc.policy_input_size() + 1);

    State s = env.initial_state();
    s = transition(s, {2.5}, {1.25}, env);

    const auto x = encode_policy_input(1, s, enc);
    REQUIRE(static_cast<int>(x.size()) == enc.policy_input_size());
    // One-hot block.
    CHECK(x[0] == 0.0);
    CHECK(x[1] == 1.0);
    CHECK(x[2] == 0.0);
    // Designs, then zero padding.
    CHECK(x[3] == 2.5);
    CHECK(x[4] == 0.0);
    // Observations, then zero padding.
    CHECK(x[5] == 1.25);
    CHECK(x[6] == 0.0);

    int nonzero_onehot = 0;
    for (int i = 0; i < 3; ++i) nonzero_onehot += x[static_cast<std::size_t>(i)] != 0.0;
    CHECK(nonzero_onehot == 1);

    const auto xq = encode_q_input(1, s, std::vector<double>{1.5}, enc);
    REQUIRE(static_cast<int>(xq.size()) == enc.q_input_size());
    CHECK(xq[7] == 1.5);
    for (int i = 0; i < enc.policy_input_size(); ++i) {
        CHECK(xq[static_cast<std::size_t>(i)] == x[static_cast<std::size_t>(i)]);
    }

    CHECK_THROWS_AS(encode_policy_input(2, s, enc), std::invalid_argument);
    CHECK_THROWS_AS(encode_policy_input(3, s, enc), std::invalid_argument);
    CHECK_THROWS_AS(encode_q_input(1, s, std::vector<double>{1.0, 2.0}, enc),
                    std::invalid_argument);
}

TEST_CASE("curriculum schedule is monotone and locks to one") {
    const CurriculumSchedule sched;
    const int total = 300;
    double prev = -1.0;
    for (int iter = 1; iter <= total; ++iter) {
        const double p = sched.p_stop(iter, total);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        CHECK(p >= prev - 1e-12);
        prev = p;
        if (iter > total - 30) CHECK(p > 0.999);
    }
    CHECK(sched.p_stop(1, total) < 0.01);
    CHECK(sched.p_stop(150, total) == doctest::Approx(0.5));
}

TEST_CASE("stopping test compares the stopping value with the continuation value") {
    const LinGaussEnv env = make_env();
    const RewardSpec incr = env.config().reward_spec(RewardForm::Incremental);
    const PolicyNet policy = midbox_policy(env);
    State s = transition(env.initial_state(), {3.0}, {3.0}, env);

    CHECK_FALSE(stopping_test(s, policy, constant_q(env, 1.0), incr));
    CHECK(stopping_test(s, policy, constant_q(env, -1.0), incr));

    // Terminal bookkeeping: the accumulated gain beats a small continuation.
    const RewardSpec term = env.config().reward_spec(RewardForm::Terminal);
    CHECK(stopping_test(s, policy, constant_q(env, 0.5), term));

    auto [terminal, reward] = stop(s, term);
    CHECK_THROWS_AS(stopping_test(terminal, policy, constant_q(env, 0.0), term),
                    std::logic_error);
}

TEST_CASE("substituting the analytic continuation value reproduces the stopping sets") {
    const SuiteResult res = run_oracle_substitution_suite(2025);
    INFO(res.detail);
    CHECK(res.pass);
}

TEST_CASE("rollout runs to the horizon when stopping is never honored") {
    const LinGaussEnv env = make_env();
    const PolicyNet policy = midbox_policy(env);
    const QNet q = constant_q(env, -1e6);  // the test always fires
    LearnedPolicy actor(&policy, &q);
    RolloutOptions opts;
    opts.p_stop = 0.0;
    const Episode e = rollout_episode(env, actor, env.config().reward_spec(), opts, 7);
    CHECK(e.tau == 3);
    CHECK(e.designs.size() == 3);
    CHECK(e.states.size() == 4);
}

TEST_CASE("a hugely pessimistic continuation value stops at the first opportunity") {
    const LinGaussEnv env = make_env();
    const PolicyNet policy = midbox_policy(env);
    const QNet q = constant_q(env, -1e6);
    LearnedPolicy actor(&policy, &q);
    RolloutOptions opts;  // p_stop = 1
    const Episode e = rollout_episode(env, actor, env.config().reward_spec(), opts, 8);
    CHECK(e.tau == 1);
    CHECK(e.terminal_reward == doctest::Approx(e.states[1].cum_info_gain));
}

TEST_CASE("rollouts are bit-identical across repeated runs") {
    const LinGaussEnv env = make_env();
    const PolicyNet policy = PolicyNet::make(env, {8}, 5);
    const QNet q = QNet::make(env, {8}, 6);
    LearnedPolicy actor(&policy, &q);
    RolloutOptions opts;
    opts.explore_std = 0.4;
    const Episode a = rollout_episode(env, actor, env.config().reward_spec(), opts, 99);
    const Episode b = rollout_episode(env, actor, env.config().reward_spec(), opts, 99);
    CHECK(a.designs == b.designs);
    CHECK(a.observations == b.observations);
    CHECK(a.tau == b.tau);
    CHECK(total_reward(a) == total_reward(b));
}

TEST_CASE("exploration noise stays clamped to the design box") {
    const LinGaussEnv env = make_env();
    const PolicyNet policy = midbox_policy(env);
    const QNet q = constant_q(env, 1e6);  // never stop early
    LearnedPolicy actor(&policy, &q);
    RolloutOptions opts;
    opts.explore_std = 5.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Episode e = rollout_episode(env, actor, env.config().reward_spec(), opts, seed);
        for (const Vec& xi : e.designs) {
            CHECK(xi[0] >= 0.1);
            CHECK(xi[0] <= 3.0);
        }
    }
}

TEST_CASE("episodes that stop immediately contribute no policy gradient") {
    const LinGaussEnv env = make_env();
    PolicyNet policy = PolicyNet::make(env, {8}, 5);
    const QNet q = QNet::make(env, {8}, 6);
    std::vector<Episode> episodes(3);
    for (auto& e : episodes) {
        e.states.push_back(env.initial_state());
        e.tau = 0;
    }
    Optimizer opt = Optimizer::sgd(0.1);
    const double norm =
        policy_gradient_step(episodes, policy, q, env.config().reward_spec(), opt);
    CHECK(norm == 0.0);
}

TEST_CASE("the policy step matches finite differences of the surrogate objective") {
    const LinGaussEnv env = make_env(0.0, 2);
    PolicyNet policy = PolicyNet::make(env, {4}, 51);
    const QNet q = QNet::make(env, {5}, 52);
    const RewardSpec spec = env.config().reward_spec();

    LearnedPolicy actor(&policy, &q);
    RolloutOptions opts;
    opts.explore_std = 0.3;
    opts.p_stop = 0.0;
    std::vector<Episode> episodes;
    episodes.push_back(rollout_episode(env, actor, spec, opts, 31));
    episodes.push_back(rollout_episode(env, actor, spec, opts, 32));

    // J(w): the Q-value of the noiseless policy output, summed over
    // realized stages, averaged over episodes.
    auto objective = [&]() {
        double sum = 0.0;
        for (const Episode& e : episodes) {
            for (int k = 0; k < e.tau; ++k) {
                const State& s = e.states[static_cast<std::size_t>(k)];
                sum += q.value(k, s, policy.design(k, s));
            }
        }
        return sum / static_cast<double>(episodes.size());
    };

    PolicyNet stepped = policy;
    Optimizer opt = Optimizer::sgd(1e-3);
    policy_gradient_step(episodes, stepped, q, spec, opt);

    const double h = 1e-6;
    for (std::size_t l = 0; l < policy.core.weights.size(); ++l) {
        for (std::size_t i = 0; i < policy.core.weights[l].size(); i += 3) {
            const double saved = policy.core.weights[l][i];
            policy.core.weights[l][i] = saved + h;
            const double up = objective();
            policy.core.weights[l][i] = saved - h;
            const double dn = objective();
            policy.core.weights[l][i] = saved;
            const double fd = (up - dn) / (2.0 * h);
            const double applied = (stepped.core.weights[l][i] - saved) / 1e-3;
            CHECK(applied == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("stages at or past the stopping stage never contribute gradient") {
    const LinGaussEnv env = make_env(0.0, 3);
    PolicyNet policy = PolicyNet::make(env, {8}, 53);
    const QNet q = QNet::make(env, {8}, 54);
    const RewardSpec spec = env.config().reward_spec();

    LearnedPolicy actor(&policy, &q);
    RolloutOptions opts;
    opts.p_stop = 0.0;
    Episode e = rollout_episode(env, actor, spec, opts, 77);
    REQUIRE(e.tau == 3);
    e.tau = 1;  // pretend the episode stopped after one stage

    PolicyNet a = policy;
    Optimizer opt_a = Optimizer::sgd(0.1);
    policy_gradient_step({e}, a, q, spec, opt_a);

    // Corrupting everything after the stopping stage must not change the step.
    Episode corrupted = e;
    for (std::size_t i = 2; i < corrupted.states.size(); ++i) {
        corrupted.states[i].history.clear();
        corrupted.states[i].cum_info_gain = 1e9;
    }
    PolicyNet b = policy;
    Optimizer opt_b = Optimizer::sgd(0.1);
    policy_gradient_step({corrupted}, b, q, spec, opt_b);
    CHECK(a.core.weights == b.core.weights);

    // Sanity: including a second stage does change the step.
    Episode longer = e;
    longer.tau = 2;
    PolicyNet c = policy;
    Optimizer opt_c = Optimizer::sgd(0.1);
    policy_gradient_step({longer}, c, q, spec, opt_c);
    CHECK(a.core.weights != c.core.weights);
}

TEST_CASE("an increasing continuation value pushes designs to the upper bound") {
    const LinGaussEnv env = make_env(0.0, 2);
    PolicyNet policy = midbox_policy(env);
    QNet q = QNet::make(env, {4}, 55);
    for (auto& w : q.core.weights) {
        for (double& v : w) v = 0.0;
    }
    // One pass-through hidden unit reading the candidate design.
    q.core.weights[0][static_cast<std::size_t>(q.enc.q_input_size()) - 1] = 1.0;
    q.core.biases[0][0] = 1.0;  // keep the ReLU active
    q.core.weights[1][0] = 3.0;

    const RewardSpec spec = env.config().reward_spec();
    LearnedPolicy actor(&policy, &q);
    RolloutOptions opts;
    opts.p_stop = 0.0;
    Optimizer opt = Optimizer::adam(0.05);
    double mu = 0.0;
    for (int it = 0; it < 200; ++it) {
        std::vector<Episode> episodes;
        for (int m = 0; m < 4; ++m) {
            episodes.push_back(
                rollout_episode(env, actor, spec, opts, derive_seed(1000, it, m)));
        }
        policy_gradient_step(episodes, policy, q, spec, opt);
        mu = policy.design(0, env.initial_state())[0];
    }
    CHECK(mu > 2.9);
}

TEST_CASE("a perfect continuation value yields zero regression loss") {
    const LinGaussEnv env = make_env(0.0, 1);
    PolicyNet policy = midbox_policy(env);
    const RewardSpec spec = env.config().reward_spec();

    Episode e;
    e.states.push_back(env.initial_state());
    e.states.push_back(transition(e.states[0], {1.55}, {0.8}, env));
    e.designs = {{1.55}};
    e.observations = {{0.8}};
    e.stage_rewards = {0.0};
    e.terminal_reward = stop_value(e.states[1], spec);
    e.tau = 1;

    QNet q = constant_q(env, e.stage_rewards[0] + e.terminal_reward);
    const auto before = q.core;
    Optimizer opt = Optimizer::sgd(0.1);
    Rng rng(56);
    const double loss = q_regression_step({e}, q, policy, spec, opt, 64, rng);
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(q.core.weights == before.weights);
}

TEST_CASE("regression recovers tabular values on a two-stage constant-reward chain") {
    const LinGaussEnv env = make_env(0.0, 2);
    const RewardSpec incr = env.config().reward_spec(RewardForm::Incremental);
    PolicyNet policy = midbox_policy(env);

    // One fixed trajectory, revisited forever: r = 1 per stage, tau = N = 2.
    Episode e;
    e.states.push_back(env.initial_state());
    e.states.push_back(transition(e.states[0], {1.55}, {0.5}, env));
    e.states.push_back(transition(e.states[1], {1.55}, {-0.2}, env));
    e.designs = {{1.55}, {1.55}};
    e.observations = {{0.5}, {-0.2}};
    e.stage_rewards = {1.0, 1.0};
    e.terminal_reward = 0.0;
    e.tau = 2;

    QNet q = QNet::make(env, {16}, 57);
    Optimizer opt = Optimizer::adam(5e-3);
    Rng rng(58);
    for (int step = 0; step < 3000; ++step) {
        q_regression_step({e}, q, policy, incr, opt, 8, rng);
    }
    CHECK(q.value(0, e.states[0], e.designs[0]) == doctest::Approx(2.0).epsilon(0.03));
    CHECK(q.value(1, e.states[1], e.designs[1]) == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("terminal-bookkeeping targets propagate the realized stopping value") {
    const LinGaussEnv env = make_env(0.0, 1);
    const RewardSpec term = env.config().reward_spec(RewardForm::Terminal);
    PolicyNet policy = midbox_policy(env);

    Rng traj_rng(59);
    std::vector<Episode> episodes;
    double expected = 0.0;
    for (int m = 0; m < 200; ++m) {
        Episode e;
        e.states.push_back(env.initial_state());
        const Vec theta = env.sample_theta(traj_rng);
        const Vec y = env.simulate_observation(theta, e.states[0], {1.55}, traj_rng);
        e.states.push_back(transition(e.states[0], {1.55}, y, env));
        e.designs = {{1.55}};
        e.observations = {y};
        e.stage_rewards = {0.0};
        e.terminal_reward = stop_value(e.states[1], term);
        e.tau = 1;
        expected += e.terminal_reward;
        episodes.push_back(std::move(e));
    }
    expected /= static_cast<double>(episodes.size());

    QNet q = QNet::make(env, {16}, 60);
    Optimizer opt = Optimizer::adam(5e-3);
    Rng rng(61);
    for (int step = 0; step < 4000; ++step) {
        q_regression_step(episodes, q, policy, term, opt, 32, rng);
    }
    // All stage-0 inputs are identical, so the fit converges to the mean.
    CHECK(q.value(0, episodes[0].states[0], episodes[0].designs[0]) ==
          doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("training runs end to end and is reproducible") {
    const LinGaussEnv env = make_env(0.0, 2);
    TrainConfig cfg;
    cfg.iterations = 3;
    cfg.episodes_per_iter = 8;
    cfg.seed = 77;
    cfg.reward = env.config().reward_spec();
    cfg.policy_hidden = {16};
    cfg.q_hidden = {16};
    cfg.q_batch = 16;
    cfg.checkpoint_every = 0;

    const TrainResult a = train(env, cfg);
    REQUIRE(a.record.rows.size() == 3);
    for (const auto& row : a.record.rows) {
        long hist_sum = 0;
        for (long c : row.stop_hist) hist_sum += c;
        CHECK(hist_sum == cfg.episodes_per_iter);
    }

    const TrainResult b = train(env, cfg);
    for (std::size_t i = 0; i < a.record.rows.size(); ++i) {
        CHECK(a.record.rows[i].avg_reward == b.record.rows[i].avg_reward);
        CHECK(a.record.rows[i].loss_q == b.record.rows[i].loss_q);
        CHECK(a.record.rows[i].grad_norm == b.record.rows[i].grad_norm);
        CHECK(a.record.rows[i].stop_hist == b.record.rows[i].stop_hist);
        CHECK(a.record.rows[i].design_hist == b.record.rows[i].design_hist);
    }
    CHECK(a.policy.core.weights == b.policy.core.weights);
    CHECK(a.q.core.weights == b.q.core.weights);
}

TEST_CASE("vanilla equals curriculum locked at p_stop = 1") {
    const LinGaussEnv env = make_env(-0.5, 2);
    TrainConfig vanilla;
    vanilla.iterations = 3;
    vanilla.episodes_per_iter = 6;
    vanilla.seed = 99;
    vanilla.reward = env.config().reward_spec();
    vanilla.policy_hidden = {8};
    vanilla.q_hidden = {8};
    vanilla.mode = TrainMode::Vanilla;
    vanilla.checkpoint_every = 0;

    TrainConfig locked = vanilla;
    locked.mode = TrainMode::Curriculum;
    locked.curriculum.lock_last = 1000;  // p_stop == 1 from the first iteration

    const TrainResult a = train(env, vanilla);
    const TrainResult b = train(env, locked);
    for (std::size_t i = 0; i < a.record.rows.size(); ++i) {
        CHECK(a.record.rows[i].avg_reward == b.record.rows[i].avg_reward);
        CHECK(a.record.rows[i].avg_stop_stage == b.record.rows[i].avg_stop_stage);
    }
    CHECK(a.policy.core.weights == b.policy.core.weights);
}

TEST_CASE("a trained free-experiment policy runs to the horizon at the bound") {
    const LinGaussEnv env = make_env(0.0, 3);
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.episodes_per_iter = 200;
    cfg.seed = 42;
    cfg.reward = env.config().reward_spec();
    cfg.checkpoint_every = 0;
    const TrainResult trained = train(env, cfg);

    const EvalResult res =
        evaluate(env, trained.policy, trained.q, cfg.reward, 2000, 11);
    CHECK(res.stats.avg_stop_stage >= 2.7);
    CHECK(design_mass_in(res, 0, 2.8, 3.0) >= 0.9);
    CHECK(res.stats.avg_reward >= 2.55);
}

TEST_CASE("oracle-policy evaluation is deterministic") {
    const LinGaussEnv env = make_env(0.0, 3);
    const LinGaussOraclePolicy oracle(env.config());
    const RewardSpec spec = env.config().reward_spec();
    const EvalResult a = evaluate(env, oracle, spec, 500, 11);
    const EvalResult b = evaluate(env, oracle, spec, 500, 11);
    CHECK(a.stats.avg_reward == b.stats.avg_reward);
    CHECK(a.stats.stop_hist == b.stats.stop_hist);
    CHECK(a.stats.design_hist == b.stats.design_hist);
    CHECK(a.stats.avg_stop_stage == doctest::Approx(3.0));
    CHECK_THROWS_AS(evaluate(env, oracle, spec, 0, 11), std::invalid_argument);
}

TEST_CASE("threshold baseline semantics") {
    const LinGaussEnv env = make_env(0.0, 3);
    const RewardSpec spec = env.config().reward_spec();
    const FixedDesignPolicy fixed({3.0});

    const EvalResult never = baseline_threshold(
        env, fixed, spec, std::numeric_limits<double>::infinity(), 200, 13);
    CHECK(never.stats.avg_stop_stage == doctest::Approx(3.0));

    // With zero threshold and free experiments the first gain always crosses.
    const EvalResult eager = baseline_threshold(env, fixed, spec, 0.0, 200, 13);
    CHECK(eager.stats.avg_stop_stage == doctest::Approx(1.0));

    CHECK_THROWS_AS(
        baseline_threshold(env, fixed, spec, std::nan(""), 10, 13), std::invalid_argument);

    // A mid-range threshold stops prematurely and loses reward on average.
    const EvalResult threshold = baseline_threshold(env, fixed, spec, 1.8, 5000, 13);
    const LinGaussOraclePolicy oracle(env.config());
    const EvalResult learned = evaluate(env, oracle, spec, 5000, 13);
    CHECK(threshold.stats.avg_reward < learned.stats.avg_reward);
}
