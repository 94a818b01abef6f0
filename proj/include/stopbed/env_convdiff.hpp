#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stopbed/mdp.hpp"

namespace stopbed {

// Contaminant transport on the unit square: dG/dt = lap(G) - u(t).grad(G) + S,
// zero-flux walls, G(.,0) = 0, Gaussian source of fixed width and strength at
// theta in [0,1]^2. A mobile sensor takes one noisy point measurement per
// stage after moving by the chosen displacement.
struct ConvDiffConfig {
    int fv_resolution = 48;        // cells per axis of the solver mesh
    double dt_pde = 0.0;           // 0 = derive from the stability bound
    double dt_safety = 0.4;        // fraction of the stability bound when deriving
    double measurement_dt = 5.0e-4;
    int horizon = 4;
    double source_width = 0.05;    // theta_h
    double source_strength = 2.0;  // theta_s
    double velocity_slope = 50.0;  // u_x = u_y = velocity_slope * t
    double diffusivity = 25.0;
    double sensor_noise_std = 2.0e-4;
    double design_box = 0.25;      // per-axis displacement bound, symmetric
    double initial_sensor_x = 0.2;
    double initial_sensor_y = 0.2;
    int theta_grid = 50;           // posterior grid cells per axis
    double cost = 0.0;
    CostKind cost_kind = CostKind::Constant;

    void validate() const;
    RewardSpec reward_spec(RewardForm form = RewardForm::Terminal) const;

    // Largest stable explicit step for this mesh and velocity range.
    double stability_bound() const;
    // Step actually used: an integer number of substeps per measurement interval.
    double effective_dt() const;
    int substeps_per_interval() const;

    std::uint64_t hash() const;
};

double source_term(double zx, double zy, double theta_x, double theta_y,
                   const ConvDiffConfig& cfg);

// Concentration snapshots on the solver mesh, one per measurement time.
// Snapshot k is taken after (k+1) measurement intervals so the first
// observation sees a nonzero field.
struct ConcentrationFields {
    int mesh_n = 0;
    int snapshots = 0;
    std::vector<double> data;  // [k][iy][ix]
    double max_mass_drift_rel = 0.0;  // worst per-step conservation drift

    double at(int k, int ix, int iy) const {
        return data[(static_cast<std::size_t>(k) * mesh_n + iy) * mesh_n + ix];
    }
    // Bilinear interpolation over cell centers, clamped to the mesh hull.
    double sample(int k, double x, double y) const;
};

ConcentrationFields solve_forward(double theta_x, double theta_y, const ConvDiffConfig& cfg);

// Noisy point measurement of snapshot k at the sensor position.
double measure(const ConcentrationFields& fields, double sensor_x, double sensor_y, int k,
               const NoiseModel& noise, Rng& rng);

// One forward solve per posterior-grid cell center, reusable across
// episodes and persistable to a versioned binary file keyed by the config.
class FieldCache {
public:
    static FieldCache build(const ConvDiffConfig& cfg, int n_threads = 0);
    static std::optional<FieldCache> load(const std::string& path, const ConvDiffConfig& cfg);
    void save(const std::string& path) const;

    // Load when compatible, otherwise build (and persist when a path is given).
    static FieldCache load_or_build(const std::string& path, const ConvDiffConfig& cfg,
                                    int n_threads = 0);

    const ConvDiffConfig& config() const { return cfg_; }
    int theta_cells_per_axis() const { return theta_n_; }
    const ConcentrationFields& at_cell(int cell) const { return fields_.at(static_cast<std::size_t>(cell)); }
    const ConcentrationFields& nearest(double theta_x, double theta_y) const;

private:
    ConvDiffConfig cfg_;
    int theta_n_ = 0;
    std::vector<ConcentrationFields> fields_;
};

// Per-cell log likelihood of observation y at the sensor position and stage.
std::vector<double> log_likelihood_grid(double y, double sensor_x, double sensor_y, int k,
                                        const FieldCache& cache, const NoiseModel& noise);

class ConvDiffEnv final : public Environment {
public:
    ConvDiffEnv(ConvDiffConfig cfg, std::shared_ptr<const FieldCache> cache);

    const ConvDiffConfig& config() const { return cfg_; }
    const FieldCache& cache() const { return *cache_; }
    long clamp_events() const { return clamp_events_; }

    int horizon() const override { return cfg_.horizon; }
    int design_dim() const override { return 2; }
    int obs_dim() const override { return 1; }
    Vec design_lo() const override { return {-cfg_.design_box, -cfg_.design_box}; }
    Vec design_hi() const override { return {cfg_.design_box, cfg_.design_box}; }

    State initial_state() const override;
    // Theta drawn uniformly over posterior-grid cell centers, matching the
    // discrete stage-0 belief; observations then come from cached fields.
    Vec sample_theta(Rng& rng) const override;
    Vec simulate_observation(const Vec& theta, const State& s, const Vec& xi,
                             Rng& rng) const override;
    BeliefUpdate update_belief(const State& s, const Vec& xi, const Vec& y) const override;
    // Sensor displacement, clamped to the domain; clamps are counted.
    Vec advance_physical(const Vec& physical, const Vec& xi) const override;

private:
    const ConcentrationFields& fields_for(double tx, double ty) const;

    ConvDiffConfig cfg_;
    std::shared_ptr<const FieldCache> cache_;
    mutable long clamp_events_ = 0;
    // Exact solves for thetas that are not grid-cell centers, memoized.
    mutable std::unordered_map<std::uint64_t, ConcentrationFields> exact_;
    mutable std::mutex exact_mutex_;
};

}  // namespace stopbed
