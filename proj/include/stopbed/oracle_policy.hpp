#pragma once

#include "stopbed/env_lingauss.hpp"
#include "stopbed/train.hpp"

namespace stopbed {

// Plays one fixed design at every stage and never asks to stop.
class FixedDesignPolicy final : public DecisionPolicy {
public:
    explicit FixedDesignPolicy(Vec design) : design_(std::move(design)) {}
    Vec design(int, const State&) const override { return design_; }
    bool wants_stop(int, const State&, const RewardSpec&) const override { return false; }

private:
    Vec design_;
};

// Closed-form optimal play for the linear-Gaussian benchmark: the upper
// design bound at every stage, stopping per the analytic stopping sets.
class LinGaussOraclePolicy final : public DecisionPolicy {
public:
    explicit LinGaussOraclePolicy(LinGaussConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    Vec design(int, const State& s) const override {
        return {oracle_optimal_design(std::get<GaussianBelief>(s.belief), cfg_)};
    }

    bool wants_stop(int stage, const State& s, const RewardSpec&) const override {
        return oracle_stopping_set_member(std::get<GaussianBelief>(s.belief), stage, cfg_);
    }

private:
    LinGaussConfig cfg_;
};

// Analytic continuation value for the linear-Gaussian benchmark under the
// terminal bookkeeping: current stopping value plus the best achievable
// future gain over all remaining horizons.
double lingauss_continuation_value(int stage, const State& s, const LinGaussConfig& cfg,
                                   const RewardSpec& spec);

}  // namespace stopbed
