#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stopbed/belief.hpp"
#include "stopbed/rng.hpp"

namespace stopbed {

using Vec = std::vector<double>;

enum class RewardForm { Terminal, Incremental };
enum class CostKind { Constant, Quadratic, Table };

// Per-experiment cost c_k(xi) plus the reward bookkeeping mode.
// Terminal: stage rewards are 0 and the accumulated information gain plus
// accumulated costs is paid once, at stopping. Incremental: each stage pays
// its one-step information gain plus cost and the terminal reward is 0.
// Both modes total the same for a given realized trajectory.
struct RewardSpec {
    RewardForm form = RewardForm::Terminal;
    CostKind cost_kind = CostKind::Constant;
    double constant_cost = 0.0;
    std::vector<double> cost_table;  // per-stage, used when cost_kind == Table

    double cost(int stage, std::span<const double> xi) const;
};

struct HistoryEntry {
    Vec design;
    Vec observation;
};

// MDP state: stage index, belief, physical state, realized history, and the
// absorbing terminal flag. cum_info_gain caches the sum of realized one-step
// information gains so stopping values need no recomputation from scratch.
struct State {
    int stage = 0;
    Belief belief;
    Vec physical;
    std::vector<HistoryEntry> history;
    bool is_terminal = false;
    double cum_info_gain = 0.0;
};

// Realized trajectory with stopping stage tau and reward bookkeeping.
struct Episode {
    std::vector<State> states;           // states[0..tau]
    std::vector<Vec> designs;            // designs[0..tau-1]
    std::vector<Vec> observations;       // observations[0..tau-1]
    std::vector<double> stage_rewards;   // stage_rewards[0..tau-1]
    double terminal_reward = 0.0;
    int tau = 0;
    Vec theta_true;
    std::uint64_t seed = 0;
};

// Environment contract: horizon, dimensions, design box, prior state,
// forward simulation and the Bayes update that drives state transitions.
class Environment {
public:
    virtual ~Environment() = default;

    virtual int horizon() const = 0;
    virtual int design_dim() const = 0;
    virtual int obs_dim() const = 0;
    virtual Vec design_lo() const = 0;
    virtual Vec design_hi() const = 0;

    virtual State initial_state() const = 0;
    virtual Vec sample_theta(Rng& rng) const = 0;

    // Observation simulated at the post-move configuration implied by (s, xi).
    virtual Vec simulate_observation(const Vec& theta, const State& s, const Vec& xi,
                                     Rng& rng) const = 0;

    struct BeliefUpdate {
        Belief posterior;
        double info_gain = 0.0;  // realized KL(posterior || previous belief)
    };
    virtual BeliefUpdate update_belief(const State& s, const Vec& xi, const Vec& y) const = 0;

    // Deterministic physical-state advance (identity when there is none).
    virtual Vec advance_physical(const Vec& physical, const Vec& xi) const = 0;
};

// One experiment: Bayes update, physical advance, history append.
// Throws std::logic_error on terminal states or past the horizon.
State transition(const State& s, const Vec& xi, const Vec& y, const Environment& env);

// Reward collected if the campaign stops at s now (0 under Incremental).
double stop_value(const State& s, const RewardSpec& spec);

// Terminate at s: returns the absorbing state and the terminal reward.
std::pair<State, double> stop(const State& s, const RewardSpec& spec);

// Reward for the realized step s -> s_next (0 under Terminal).
double stage_reward(const State& s, const Vec& xi, const Vec& y, const State& s_next,
                    const RewardSpec& spec);

double total_reward(const Episode& e);

// Realized design/observation sequence with its stopping stage.
struct Trajectory {
    std::vector<Vec> designs;
    std::vector<Vec> observations;
    int tau = 0;
};

// Replays traj under both reward specs and returns |total_T - total_I|.
double equivalence_check(const Environment& env, const Trajectory& traj,
                         const RewardSpec& spec_terminal, const RewardSpec& spec_incremental);

// Scores a replayed trajectory under one spec; exposed for the verify suites.
// incremental_kl_scale is a fault-injection knob for suite self-tests.
double replay_total(const Environment& env, const Trajectory& traj, const RewardSpec& spec,
                    double incremental_kl_scale = 1.0);

// Line-oriented record: seed, theta, designs, observations, stage rewards,
// terminal reward, tau. One episode per line, lossless numeric round-trip.
std::string episode_to_line(const Episode& e);
Episode episode_from_line(const std::string& line);

}  // namespace stopbed
