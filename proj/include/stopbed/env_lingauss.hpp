#pragma once

#include "stopbed/mdp.hpp"

namespace stopbed {

// Scalar benchmark: y = theta * xi + noise, conjugate Gaussian prior,
// scalar designs constrained to [design_lo, design_hi].
struct LinGaussConfig {
    double prior_mean = 0.0;
    double prior_var = 9.0;
    double noise_std = 1.0;
    double design_lo = 0.1;
    double design_hi = 3.0;
    int horizon = 3;
    double cost = 0.0;  // per-experiment constant cost c_k
    CostKind cost_kind = CostKind::Constant;

    void validate() const;
    RewardSpec reward_spec(RewardForm form = RewardForm::Terminal) const;
};

double simulate_observation(double theta, double xi, const NoiseModel& noise, Rng& rng,
                            const LinGaussConfig& cfg);

class LinGaussEnv final : public Environment {
public:
    explicit LinGaussEnv(LinGaussConfig cfg);

    const LinGaussConfig& config() const { return cfg_; }

    int horizon() const override { return cfg_.horizon; }
    int design_dim() const override { return 1; }
    int obs_dim() const override { return 1; }
    Vec design_lo() const override { return {cfg_.design_lo}; }
    Vec design_hi() const override { return {cfg_.design_hi}; }

    State initial_state() const override;
    Vec sample_theta(Rng& rng) const override;
    Vec simulate_observation(const Vec& theta, const State& s, const Vec& xi,
                             Rng& rng) const override;
    BeliefUpdate update_belief(const State& s, const Vec& xi, const Vec& y) const override;
    Vec advance_physical(const Vec& physical, const Vec& xi) const override;

private:
    LinGaussConfig cfg_;
};

// Closed-form optimum: with constant costs the best design is the upper
// bound at every stage and belief. Throws for design-dependent costs.
double oracle_optimal_design(const GaussianBelief& b, const LinGaussConfig& cfg);

// Expected total reward of performing exactly n experiments at the optimal
// design and then stopping.
double oracle_utility(int n_experiments, const LinGaussConfig& cfg);

// Best number of experiments in 1..horizon; ties break toward fewer.
int oracle_optimal_stop_stage(const LinGaussConfig& cfg);

// Stopping-set membership test at the belief's current variance:
// one more optimal experiment is not worth its cost.
bool oracle_stopping_set_member(const GaussianBelief& b, int stage, const LinGaussConfig& cfg);

// Posterior variance after n optimal experiments from the prior.
double oracle_variance_after(int n_experiments, const LinGaussConfig& cfg);

}  // namespace stopbed
