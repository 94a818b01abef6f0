#include "stopbed/oracle_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stopbed {

double lingauss_continuation_value(int stage, const State& s, const LinGaussConfig& cfg,
                                   const RewardSpec& spec) {
    const auto& belief = std::get<GaussianBelief>(s.belief);
    const double noise_var = cfg.noise_std * cfg.noise_std;
    const double xi2 = cfg.design_hi * cfg.design_hi;

    // Value of continuing for n more optimal experiments, then stopping.
    double best = -std::numeric_limits<double>::infinity();
    double var = belief.variance;
    double future = 0.0;
    for (int n = 1; n <= cfg.horizon - stage; ++n) {
        const double gain = 0.5 * std::log1p(var * xi2 / noise_var);
        var = 1.0 / (xi2 / noise_var + 1.0 / var);
        future += gain + cfg.cost;
        best = std::max(best, future);
    }
    return stop_value(s, spec) + best;
}

}  // namespace stopbed
