#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stopbed/mdp.hpp"
#include "stopbed/nn.hpp"

namespace stopbed {

// Probability of honoring a fired stopping test at training iteration l
// (1-based). Sigmoid in l/L, forced above 0.999 for the last lock_last
// iterations; the vanilla variant is the constant 1.
struct CurriculumSchedule {
    double steepness = 12.0;   // a
    double midpoint = 0.5;     // b, as a fraction of total iterations
    int lock_last = 30;

    double p_stop(int iter, int total_iters) const;
};

enum class TrainMode { Vanilla, Curriculum };
enum class StoppingMode { Learned, FixedHorizon, Threshold };

struct TrainConfig {
    int iterations = 300;        // L
    int episodes_per_iter = 1000;  // M
    double explore_std0 = -1.0;  // sigma_explore at iteration 0; <0 = 0.2 * design range
    double explore_floor = 0.1;  // decay floor as a fraction of explore_std0
    TrainMode mode = TrainMode::Curriculum;
    CurriculumSchedule curriculum;
    StoppingMode stopping = StoppingMode::Learned;
    int fixed_horizon_stage = 0;   // StoppingMode::FixedHorizon
    double threshold = 0.0;        // StoppingMode::Threshold
    std::uint64_t seed = 0;
    RewardSpec reward;
    bool allow_stop_at_stage0 = false;
    int q_inner_epochs = 15;
    int q_batch = 64;
    double lr_q = 1e-3;
    double lr_policy = 1e-3;
    std::vector<int> policy_hidden = {80, 80};
    std::vector<int> q_hidden = {80, 80, 80};
    int checkpoint_every = 50;
    std::string checkpoint_dir;  // empty = no checkpoints
    int design_hist_bins = 30;

    void validate() const;
};

// Fixed-width network inputs: one-hot stage, then designs and observations
// padded with zeros past the realized history. The Q input appends the
// candidate design.
struct EncodingSpec {
    int horizon = 0;
    int design_dim = 0;
    int obs_dim = 0;

    static EncodingSpec for_env(const Environment& env);
    int policy_input_size() const { return horizon + (horizon - 1) * (design_dim + obs_dim); }
    int q_input_size() const { return policy_input_size() + design_dim; }
};

std::vector<double> encode_policy_input(int stage, const State& s, const EncodingSpec& enc);
std::vector<double> encode_q_input(int stage, const State& s, std::span<const double> xi,
                                   const EncodingSpec& enc);

// Design policy: an unconstrained core network squashed into the design box.
struct PolicyNet {
    DenseNet core;
    BoxSquash squash;
    EncodingSpec enc;

    static PolicyNet make(const Environment& env, const std::vector<int>& hidden,
                          std::uint64_t seed);
    Vec design(int stage, const State& s) const;
};

struct QNet {
    DenseNet core;
    EncodingSpec enc;

    static QNet make(const Environment& env, const std::vector<int>& hidden, std::uint64_t seed);
    double value(int stage, const State& s, std::span<const double> xi) const;
};

// Continuation value at the policy's design, as used by the stopping rule.
using ContinuationValue = std::function<double(int stage, const State& s)>;

// Stop now iff the stopping reward is at least the continuation value.
bool stopping_test(const State& s, const PolicyNet& policy, const QNet& q,
                   const RewardSpec& spec);
bool stopping_test_with(const State& s, const ContinuationValue& continuation,
                        const RewardSpec& spec);

// How a rollout chooses designs and stopping decisions.
class DecisionPolicy {
public:
    virtual ~DecisionPolicy() = default;
    virtual Vec design(int stage, const State& s) const = 0;
    virtual bool wants_stop(int stage, const State& s, const RewardSpec& spec) const = 0;
};

class LearnedPolicy final : public DecisionPolicy {
public:
    LearnedPolicy(const PolicyNet* policy, const QNet* q) : policy_(policy), q_(q) {}
    Vec design(int stage, const State& s) const override { return policy_->design(stage, s); }
    bool wants_stop(int stage, const State& s, const RewardSpec& spec) const override {
        (void)stage;
        return stopping_test(s, *policy_, *q_, spec);
    }

private:
    const PolicyNet* policy_;
    const QNet* q_;
};

struct RolloutOptions {
    double explore_std = 0.0;
    double p_stop = 1.0;
    bool allow_stop_at_stage0 = false;
    StoppingMode stopping = StoppingMode::Learned;
    int fixed_horizon_stage = 0;
    double threshold = 0.0;
};

// One episode: sample theta from the prior, roll designs with exploration
// noise, apply the stopping rule with probability p_stop when it fires, and
// stop unconditionally at the horizon.
Episode rollout_episode(const Environment& env, const DecisionPolicy& policy,
                        const RewardSpec& spec, const RolloutOptions& opts,
                        std::uint64_t episode_seed);

// One ascent step of the Monte Carlo policy gradient; returns the gradient
// norm. Exploration noise is data-only: gradients are taken at the
// noiseless policy output.
double policy_gradient_step(const std::vector<Episode>& episodes, PolicyNet& policy,
                            const QNet& q, const RewardSpec& spec, Optimizer& opt);

// One pass of Bellman-residual regression over the episode buffer with
// targets frozen at entry; returns the mean squared residual before the
// pass. Minibatch order comes from rng.
double q_regression_step(const std::vector<Episode>& episodes, QNet& q,
                         const PolicyNet& policy, const RewardSpec& spec, Optimizer& opt,
                         int batch_size, Rng& rng);

struct IterationStats {
    int iter = 0;
    double avg_reward = 0.0;
    double avg_stop_stage = 0.0;
    double p_stop = 0.0;
    double loss_q = 0.0;
    double grad_norm = 0.0;
    std::vector<long> stop_hist;    // counts for tau = 0..N
    std::vector<long> design_hist;  // per axis, design_hist_bins bins
};

struct ConvergenceRecord {
    int horizon = 0;
    int design_dim = 0;
    int design_hist_bins = 0;
    std::vector<IterationStats> rows;
};

struct TrainResult {
    PolicyNet policy;
    QNet q;
    ConvergenceRecord record;
};

TrainResult train(const Environment& env, const TrainConfig& cfg);

struct EvalResult {
    IterationStats stats;
    std::vector<Episode> episodes;
};

// Noiseless-policy rollouts with the stopping rule always honored.
EvalResult evaluate(const Environment& env, const DecisionPolicy& policy,
                    const RewardSpec& spec, int n_episodes, std::uint64_t seed,
                    int design_hist_bins = 30);
EvalResult evaluate(const Environment& env, const PolicyNet& policy, const QNet& q,
                    const RewardSpec& spec, int n_episodes, std::uint64_t seed,
                    int design_hist_bins = 30);

// Heuristic comparator: fixed designs, stop once the accumulated stopping
// value reaches the threshold.
EvalResult baseline_threshold(const Environment& env, const DecisionPolicy& designs,
                              const RewardSpec& spec, double threshold, int n_episodes,
                              std::uint64_t seed, int design_hist_bins = 30);

// Fraction of recorded designs lying inside [lo, hi] on one axis.
double design_mass_in(const EvalResult& result, int axis, double lo, double hi);

}  // namespace stopbed
