#include "stopbed/mdp.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace stopbed {

double RewardSpec::cost(int stage, std::span<const double> xi) const {
    switch (cost_kind) {
        case CostKind::Constant:
            return constant_cost;
        case CostKind::Quadratic: {
            double sq = 0.0;
            for (double v : xi) sq += v * v;
            return -sq;
        }
        case CostKind::Table:
            if (stage < 0 || stage >= static_cast<int>(cost_table.size())) {
                throw std::invalid_argument("cost table has no entry for this stage");
            }
            return cost_table[static_cast<std::size_t>(stage)];
    }
    throw std::logic_error("unreachable cost kind");
}

State transition(const State& s, const Vec& xi, const Vec& y, const Environment& env) {
    if (s.is_terminal) {
        throw std::logic_error("transition from terminal state");
    }
    if (s.stage >= env.horizon()) {
        throw std::logic_error("transition past the horizon");
    }
    Environment::BeliefUpdate up = env.update_belief(s, xi, y);
    State next;
    next.stage = s.stage + 1;
    next.belief = std::move(up.posterior);
    next.physical = env.advance_physical(s.physical, xi);
    next.history = s.history;
    next.history.push_back(HistoryEntry{xi, y});
    next.is_terminal = false;
    next.cum_info_gain = s.cum_info_gain + up.info_gain;
    return next;
}

double stop_value(const State& s, const RewardSpec& spec) {
    if (spec.form == RewardForm::Incremental) return 0.0;
    double costs = 0.0;
    for (int i = 0; i < static_cast<int>(s.history.size()); ++i) {
        costs += spec.cost(i, s.history[static_cast<std::size_t>(i)].design);
    }
    return s.cum_info_gain + costs;
}

std::pair<State, double> stop(const State& s, const RewardSpec& spec) {
    if (s.is_terminal) {
        throw std::logic_error("stop on a terminal state");
    }
    const double reward = stop_value(s, spec);
    State terminal = s;
    terminal.is_terminal = true;
    return {std::move(terminal), reward};
}

double stage_reward(const State& s, const Vec& xi, const Vec& y, const State& s_next,
                    const RewardSpec& spec) {
    if (s_next.stage != s.stage + 1) {
        throw std::logic_error("stage_reward requires consecutive states");
    }
    (void)y;
    if (spec.form == RewardForm::Terminal) return 0.0;
    return belief_kl(s_next.belief, s.belief) + spec.cost(s.stage, xi);
}

double total_reward(const Episode& e) {
    double sum = 0.0;
    for (double r : e.stage_rewards) sum += r;
    return sum + e.terminal_reward;
}

double replay_total(const Environment& env, const Trajectory& traj, const RewardSpec& spec,
                    double incremental_kl_scale) {
    if (traj.tau < 0 || traj.tau > env.horizon() ||
        traj.designs.size() != traj.observations.size() ||
        static_cast<int>(traj.designs.size()) != traj.tau) {
        throw std::logic_error("trajectory shape does not match its stopping stage");
    }
    State s = env.initial_state();
    double total = 0.0;
    for (int k = 0; k < traj.tau; ++k) {
        const Vec& xi = traj.designs[static_cast<std::size_t>(k)];
        const Vec& y = traj.observations[static_cast<std::size_t>(k)];
        State next = transition(s, xi, y, env);
        if (spec.form == RewardForm::Incremental) {
            total += incremental_kl_scale * belief_kl(next.belief, s.belief) +
                     spec.cost(k, xi);
        }
        s = std::move(next);
    }
    total += stop_value(s, spec);
    return total;
}

double equivalence_check(const Environment& env, const Trajectory& traj,
                         const RewardSpec& spec_terminal, const RewardSpec& spec_incremental) {
    if (spec_terminal.form != RewardForm::Terminal ||
        spec_incremental.form != RewardForm::Incremental) {
        throw std::logic_error("equivalence_check expects one spec of each form");
    }
    const double total_t = replay_total(env, traj, spec_terminal);
    const double total_i = replay_total(env, traj, spec_incremental);
    return std::abs(total_t - total_i);
}

namespace {

void append_double(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

void append_vec(std::string& out, const Vec& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out += ',';
        append_double(out, v[i]);
    }
}

void append_vec_list(std::string& out, const std::vector<Vec>& vs) {
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (i > 0) out += '|';
        append_vec(out, vs[i]);
    }
}

Vec parse_vec(const std::string& text) {
    Vec out;
    if (text.empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(std::stod(item));
    }
    return out;
}

std::vector<Vec> parse_vec_list(const std::string& text) {
    std::vector<Vec> out;
    if (text.empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, '|')) {
        out.push_back(parse_vec(item));
    }
    return out;
}

std::string field_value(const std::string& line, const std::string& key) {
    const std::string token = key + "=";
    std::size_t pos = line.find(token);
    while (pos != std::string::npos && pos != 0 && line[pos - 1] != ' ') {
        pos = line.find(token, pos + 1);
    }
    if (pos == std::string::npos) {
        throw std::invalid_argument("episode record missing field: " + key);
    }
    const std::size_t start = pos + token.size();
    const std::size_t end = line.find(' ', start);
    return line.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

std::string episode_to_line(const Episode& e) {
    std::string out;
    out += "seed=" + std::to_string(e.seed);
    out += " theta=";
    append_vec(out, e.theta_true);
    out += " designs=";
    append_vec_list(out, e.designs);
    out += " obs=";
    append_vec_list(out, e.observations);
    out += " stage_rewards=";
    append_vec(out, e.stage_rewards);
    out += " terminal=";
    append_double(out, e.terminal_reward);
    out += " tau=" + std::to_string(e.tau);
    return out;
}

Episode episode_from_line(const std::string& line) {
    Episode e;
    e.seed = std::stoull(field_value(line, "seed"));
    e.theta_true = parse_vec(field_value(line, "theta"));
    e.designs = parse_vec_list(field_value(line, "designs"));
    e.observations = parse_vec_list(field_value(line, "obs"));
    e.stage_rewards = parse_vec(field_value(line, "stage_rewards"));
    e.terminal_reward = std::stod(field_value(line, "terminal"));
    e.tau = std::stoi(field_value(line, "tau"));
    return e;
}

}  // namespace stopbed
