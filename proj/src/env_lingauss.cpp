#include "stopbed/env_lingauss.hpp"

#include <cmath>
#include <stdexcept>

namespace stopbed {

void LinGaussConfig::validate() const {
    if (!(design_lo < design_hi)) {
        throw std::invalid_argument("design_lo must be < design_hi");
    }
    if (!(prior_var > 0.0)) {
        throw std::invalid_argument("prior_var must be > 0");
    }
    if (!(noise_std > 0.0)) {
        throw std::invalid_argument("noise_std must be > 0");
    }
    if (horizon < 1) {
        throw std::invalid_argument("horizon must be >= 1");
    }
    if (!std::isfinite(cost)) {
        throw std::invalid_argument("cost must be finite");
    }
}

RewardSpec LinGaussConfig::reward_spec(RewardForm form) const {
    RewardSpec spec;
    spec.form = form;
    spec.cost_kind = cost_kind;
    spec.constant_cost = cost;
    return spec;
}

double simulate_observation(double theta, double xi, const NoiseModel& noise, Rng& rng,
                            const LinGaussConfig& cfg) {
    if (xi < cfg.design_lo || xi > cfg.design_hi) {
        throw std::invalid_argument("design outside the allowed bounds");
    }
    return theta * xi + rng.normal(0.0, noise.std_dev);
}

LinGaussEnv::LinGaussEnv(LinGaussConfig cfg) : cfg_(cfg) { cfg_.validate(); }

State LinGaussEnv::initial_state() const {
    State s;
    s.stage = 0;
    s.belief = GaussianBelief{cfg_.prior_mean, cfg_.prior_var};
    return s;
}

Vec LinGaussEnv::sample_theta(Rng& rng) const {
    return {rng.normal(cfg_.prior_mean, std::sqrt(cfg_.prior_var))};
}

Vec LinGaussEnv::simulate_observation(const Vec& theta, const State& s, const Vec& xi,
                                      Rng& rng) const {
    (void)s;
    NoiseModel noise{cfg_.noise_std};
    return {stopbed::simulate_observation(theta.at(0), xi.at(0), noise, rng, cfg_)};
}

Environment::BeliefUpdate LinGaussEnv::update_belief(const State& s, const Vec& xi,
                                                     const Vec& y) const {
    const auto& prior = std::get<GaussianBelief>(s.belief);
    NoiseModel noise{cfg_.noise_std};
    GaussianBelief post = gaussian_update(prior, xi.at(0), y.at(0), noise);
    const double gain = gaussian_kl(post, prior);
    return BeliefUpdate{Belief{post}, gain};
}

Vec LinGaussEnv::advance_physical(const Vec& physical, const Vec& xi) const {
    (void)xi;
    return physical;  // no physical state in this environment
}

namespace {

void require_constant_cost(const LinGaussConfig& cfg, const char* what) {
    if (cfg.cost_kind != CostKind::Constant) {
        throw std::invalid_argument(std::string(what) +
                                    " requires design-independent (constant) costs");
    }
}

}  // namespace

double oracle_optimal_design(const GaussianBelief& b, const LinGaussConfig& cfg) {
    require_constant_cost(cfg, "oracle_optimal_design");
    (void)b;  // the optimum is belief-independent
    return cfg.design_hi;
}

double oracle_variance_after(int n_experiments, const LinGaussConfig& cfg) {
    const double noise_var = cfg.noise_std * cfg.noise_std;
    const double xi2 = cfg.design_hi * cfg.design_hi;
    return cfg.prior_var * noise_var / (noise_var + cfg.prior_var * xi2 * n_experiments);
}

double oracle_utility(int n_experiments, const LinGaussConfig& cfg) {
    require_constant_cost(cfg, "oracle_utility");
    if (n_experiments < 1) {
        throw std::invalid_argument("oracle_utility requires n >= 1");
    }
    const double noise_var = cfg.noise_std * cfg.noise_std;
    const double xi2 = cfg.design_hi * cfg.design_hi;
    const double gain =
        0.5 * std::log(noise_var + cfg.prior_var * xi2 * n_experiments) -
        0.5 * std::log(noise_var);
    return gain + n_experiments * cfg.cost;
}

int oracle_optimal_stop_stage(const LinGaussConfig& cfg) {
    require_constant_cost(cfg, "oracle_optimal_stop_stage");
    int best_n = 1;
    double best_u = oracle_utility(1, cfg);
    for (int n = 2; n <= cfg.horizon; ++n) {
        const double u = oracle_utility(n, cfg);
        if (u > best_u) {  // ties break toward the smaller stage
            best_u = u;
            best_n = n;
        }
    }
    return best_n;
}

bool oracle_stopping_set_member(const GaussianBelief& b, int stage, const LinGaussConfig& cfg) {
    require_constant_cost(cfg, "oracle_stopping_set_member");
    (void)stage;  // the test depends on the belief only through its variance
    const double noise_var = cfg.noise_std * cfg.noise_std;
    const double gain = 0.5 * std::log1p(b.variance * cfg.design_hi * cfg.design_hi / noise_var);
    return gain + cfg.cost <= 0.0;
}

}  // namespace stopbed
