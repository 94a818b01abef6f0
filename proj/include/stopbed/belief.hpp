#pragma once

#include <span>
#include <variant>
#include <vector>

namespace stopbed {

// Conjugate 1-D Gaussian posterior.
struct GaussianBelief {
    double mean = 0.0;
    double variance = 1.0;  // > 0 at all times
};

// Additive Gaussian observation noise with known scale.
struct NoiseModel {
    double std_dev = 1.0;  // > 0
};

// Nonparametric posterior over a regular grid on [0,1]^2 stored as
// unnormalized log density per cell, midpoint rule for integrals.
// After normalize(), sum_cells exp(w) * cell_area == 1.
class GridBelief {
public:
    GridBelief() = default;

    // Uniform density over the unit square on an n x n lattice.
    static GridBelief uniform(int cells_per_axis);

    int cells_per_axis() const { return n_; }
    int cell_count() const { return n_ * n_; }
    double cell_area() const { return cell_area_; }
    const std::vector<double>& log_weights() const { return log_weights_; }

    // Center coordinates of cell index c = iy * n + ix.
    double center_x(int cell) const { return (static_cast<double>(cell % n_) + 0.5) / n_; }
    double center_y(int cell) const { return (static_cast<double>(cell / n_) + 0.5) / n_; }
    int cell_of(double x, double y) const;

    // Posterior mean of the grid coordinates.
    void mean_point(double* mx, double* my) const;
    int mode_cell() const;

    friend GridBelief grid_update(const GridBelief& b, std::span<const double> log_likelihood);

private:
    void normalize();

    int n_ = 0;
    double cell_area_ = 0.0;
    std::vector<double> log_weights_;
};

using Belief = std::variant<GaussianBelief, GridBelief>;

// Conjugate posterior update for observation y = theta * xi + noise.
GaussianBelief gaussian_update(const GaussianBelief& b, double xi, double y,
                               const NoiseModel& noise);

// KL(a || b) for Gaussians, closed form. Always >= 0.
double gaussian_kl(const GaussianBelief& a, const GaussianBelief& b);

// Expected one-experiment information gain E_y[KL(posterior || current)].
double expected_info_gain_gaussian(const GaussianBelief& b, double xi,
                                   const NoiseModel& noise);

// Bayes update: add per-cell log likelihoods, renormalize.
// Throws if the posterior has zero total mass.
GridBelief grid_update(const GridBelief& b, std::span<const double> log_likelihood);

// Midpoint-rule KL(a || b) on a shared grid. Cells with zero mass under a
// contribute 0; a > 0 where b == 0 is a support error.
double grid_kl(const GridBelief& a, const GridBelief& b);

// Dispatch on the belief variant; both operands must hold the same kind.
double belief_kl(const Belief& a, const Belief& b);

}  // namespace stopbed
