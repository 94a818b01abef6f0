#include "stopbed/belief.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace stopbed {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw std::invalid_argument(std::string(what) + " must be finite");
    }
}

void require_positive(double x, const char* what) {
    if (!(x > 0.0)) {
        throw std::invalid_argument(std::string(what) + " must be > 0");
    }
}

}  // namespace

GaussianBelief gaussian_update(const GaussianBelief& b, double xi, double y,
                               const NoiseModel& noise) {
    require_finite(b.mean, "mean");
    require_positive(b.variance, "variance");
    require_positive(noise.std_dev, "noise std_dev");
    require_finite(xi, "design");
    require_finite(y, "observation");

    const double noise_var = noise.std_dev * noise.std_dev;
    const double precision = xi * xi / noise_var + 1.0 / b.variance;
    GaussianBelief post;
    post.variance = 1.0 / precision;
    post.mean = post.variance * (y * xi / noise_var + b.mean / b.variance);
    return post;
}

double gaussian_kl(const GaussianBelief& a, const GaussianBelief& b) {
    require_positive(a.variance, "variance of a");
    require_positive(b.variance, "variance of b");
    const double dm = a.mean - b.mean;
    return 0.5 * (a.variance / b.variance + dm * dm / b.variance +
                  std::log(b.variance / a.variance) - 1.0);
}

double expected_info_gain_gaussian(const GaussianBelief& b, double xi,
                                   const NoiseModel& noise) {
    require_positive(b.variance, "variance");
    require_positive(noise.std_dev, "noise std_dev");
    const double noise_var = noise.std_dev * noise.std_dev;
    return 0.5 * std::log1p(b.variance * xi * xi / noise_var);
}

GridBelief GridBelief::uniform(int cells_per_axis) {
    if (cells_per_axis < 1) {
        throw std::invalid_argument("grid resolution must be >= 1");
    }
    GridBelief b;
    b.n_ = cells_per_axis;
    b.cell_area_ = 1.0 / (static_cast<double>(cells_per_axis) * cells_per_axis);
    // Uniform density over the unit square is 1, so log density is 0.
    b.log_weights_.assign(static_cast<std::size_t>(cells_per_axis) * cells_per_axis, 0.0);
    return b;
}

int GridBelief::cell_of(double x, double y) const {
    const int ix = std::clamp(static_cast<int>(x * n_), 0, n_ - 1);
    const int iy = std::clamp(static_cast<int>(y * n_), 0, n_ - 1);
    return iy * n_ + ix;
}

void GridBelief::mean_point(double* mx, double* my) const {
    double sx = 0.0;
    double sy = 0.0;
    for (int c = 0; c < cell_count(); ++c) {
        const double p = std::exp(log_weights_[c]) * cell_area_;
        sx += p * center_x(c);
        sy += p * center_y(c);
    }
    *mx = sx;
    *my = sy;
}

int GridBelief::mode_cell() const {
    int best = 0;
    for (int c = 1; c < cell_count(); ++c) {
        if (log_weights_[c] > log_weights_[best]) best = c;
    }
    return best;
}

void GridBelief::normalize() {
    double wmax = kNegInf;
    for (double w : log_weights_) wmax = std::max(wmax, w);
    if (wmax == kNegInf) {
        throw std::runtime_error("degenerate posterior: zero mass in every cell");
    }
    double sum = 0.0;
    for (double w : log_weights_) sum += std::exp(w - wmax);
    // After shifting, sum_cells exp(w) * cell_area == 1 exactly in log space.
    const double log_norm = wmax + std::log(sum) + std::log(cell_area_);
    for (double& w : log_weights_) w -= log_norm;
}

GridBelief grid_update(const GridBelief& b, std::span<const double> log_likelihood) {
    if (static_cast<int>(log_likelihood.size()) != b.cell_count()) {
        throw std::invalid_argument("log likelihood length does not match cell count");
    }
    for (double ll : log_likelihood) {
        if (std::isnan(ll) || ll == std::numeric_limits<double>::infinity()) {
            throw std::invalid_argument("log likelihood entries must be finite or -inf");
        }
    }
    GridBelief post = b;
    for (int c = 0; c < post.cell_count(); ++c) {
        post.log_weights_[c] += log_likelihood[static_cast<std::size_t>(c)];
    }
    post.normalize();
    return post;
}

double grid_kl(const GridBelief& a, const GridBelief& b) {
    if (a.cells_per_axis() != b.cells_per_axis()) {
        throw std::invalid_argument("grid KL requires matching grids");
    }
    const auto& wa = a.log_weights();
    const auto& wb = b.log_weights();
    double sum = 0.0;
    for (int c = 0; c < a.cell_count(); ++c) {
        const double la = wa[static_cast<std::size_t>(c)];
        const double pa = std::exp(la);
        if (pa == 0.0) continue;  // 0 * log 0 := 0
        const double lb = wb[static_cast<std::size_t>(c)];
        if (lb == kNegInf) {
            throw std::invalid_argument("grid KL support error: a > 0 where b == 0");
        }
        sum += pa * (la - lb);
    }
    return sum * a.cell_area();
}

double belief_kl(const Belief& a, const Belief& b) {
    if (a.index() != b.index()) {
        throw std::invalid_argument("belief KL requires matching belief kinds");
    }
    if (std::holds_alternative<GaussianBelief>(a)) {
        return gaussian_kl(std::get<GaussianBelief>(a), std::get<GaussianBelief>(b));
    }
    return grid_kl(std::get<GridBelief>(a), std::get<GridBelief>(b));
}

}  // namespace stopbed
