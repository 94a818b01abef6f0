#include "stopbed/env_convdiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace stopbed {

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

int env_thread_cap() {
    const char* v = std::getenv("STOPBED_THREADS");
    if (!v) return 0;
    const int n = std::atoi(v);
    return n > 0 ? n : 0;
}

std::uint64_t mix_double(std::uint64_t h, double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(bits));
    return splitmix64(h ^ bits);
}

}  // namespace

void ConvDiffConfig::validate() const {
    if (fv_resolution < 32) {
        throw std::invalid_argument("fv_resolution must be >= 32");
    }
    if (!(measurement_dt > 0.0)) {
        throw std::invalid_argument("measurement_dt must be > 0");
    }
    if (horizon < 1) {
        throw std::invalid_argument("horizon must be >= 1");
    }
    if (!(source_width > 0.0)) {
        throw std::invalid_argument("source_width must be > 0");
    }
    if (!(diffusivity > 0.0)) {
        throw std::invalid_argument("diffusivity must be > 0");
    }
    if (!(sensor_noise_std > 0.0)) {
        throw std::invalid_argument("sensor_noise_std must be > 0");
    }
    if (!(design_box > 0.0)) {
        throw std::invalid_argument("design_box must be > 0");
    }
    if (theta_grid < 2) {
        throw std::invalid_argument("theta_grid must be >= 2");
    }
    if (!(dt_safety > 0.0 && dt_safety <= 1.0)) {
        throw std::invalid_argument("dt_safety must be in (0, 1]");
    }
    if (dt_pde < 0.0) {
        throw std::invalid_argument("dt_pde must be >= 0");
    }
    if (dt_pde > 0.0 && dt_pde > stability_bound()) {
        throw std::invalid_argument("dt_pde violates the explicit-scheme stability bound");
    }
}

RewardSpec ConvDiffConfig::reward_spec(RewardForm form) const {
    RewardSpec spec;
    spec.form = form;
    spec.cost_kind = cost_kind;
    spec.constant_cost = cost;
    return spec;
}

double ConvDiffConfig::stability_bound() const {
    const double h = 1.0 / fv_resolution;
    // Velocity grows linearly in time; bound it by its end-of-episode value.
    const double u_max = std::abs(velocity_slope) * measurement_dt * horizon;
    return 1.0 / (4.0 * diffusivity / (h * h) + 2.0 * u_max / h);
}

int ConvDiffConfig::substeps_per_interval() const {
    const double target = dt_pde > 0.0 ? dt_pde : dt_safety * stability_bound();
    return std::max(1, static_cast<int>(std::ceil(measurement_dt / target)));
}

double ConvDiffConfig::effective_dt() const {
    return measurement_dt / substeps_per_interval();
}

std::uint64_t ConvDiffConfig::hash() const {
    std::uint64_t h = 0x5342464341434845ull;
    h = splitmix64(h ^ static_cast<std::uint64_t>(fv_resolution));
    h = mix_double(h, dt_pde);
    h = mix_double(h, dt_safety);
    h = mix_double(h, measurement_dt);
    h = splitmix64(h ^ static_cast<std::uint64_t>(horizon));
    h = mix_double(h, source_width);
    h = mix_double(h, source_strength);
    h = mix_double(h, velocity_slope);
    h = mix_double(h, diffusivity);
    h = splitmix64(h ^ static_cast<std::uint64_t>(theta_grid));
    return h;
}

double source_term(double zx, double zy, double theta_x, double theta_y,
                   const ConvDiffConfig& cfg) {
    const double w2 = cfg.source_width * cfg.source_width;
    const double dx = theta_x - zx;
    const double dy = theta_y - zy;
    return cfg.source_strength / (kTwoPi * w2) * std::exp(-(dx * dx + dy * dy) / (2.0 * w2));
}

double ConcentrationFields::sample(int k, double x, double y) const {
    if (k < 0 || k >= snapshots) {
        throw std::invalid_argument("snapshot index out of range");
    }
    const int n = mesh_n;
    const double h = 1.0 / n;
    // Cell centers live at (i + 0.5) h; clamp to the center hull.
    auto locate = [&](double p, int* i0, double* frac) {
        double s = p / h - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(n - 1));
        int i = std::min(static_cast<int>(s), n - 2);
        if (n == 1) i = 0;
        *i0 = i;
        *frac = std::clamp(s - i, 0.0, 1.0);
    };
    int ix = 0, iy = 0;
    double fx = 0.0, fy = 0.0;
    locate(x, &ix, &fx);
    locate(y, &iy, &fy);
    const double g00 = at(k, ix, iy);
    const double g10 = at(k, std::min(ix + 1, n - 1), iy);
    const double g01 = at(k, ix, std::min(iy + 1, n - 1));
    const double g11 = at(k, std::min(ix + 1, n - 1), std::min(iy + 1, n - 1));
    return (1.0 - fx) * (1.0 - fy) * g00 + fx * (1.0 - fy) * g10 +
           (1.0 - fx) * fy * g01 + fx * fy * g11;
}

ConcentrationFields solve_forward(double theta_x, double theta_y, const ConvDiffConfig& cfg) {
    cfg.validate();
    if (theta_x < 0.0 || theta_x > 1.0 || theta_y < 0.0 || theta_y > 1.0) {
        throw std::invalid_argument("source location must lie in the unit square");
    }
    const int n = cfg.fv_resolution;
    const double h = 1.0 / n;
    const double inv_h = static_cast<double>(n);
    const int substeps = cfg.substeps_per_interval();
    const double dt = cfg.measurement_dt / substeps;
    const double cell_area = h * h;

    std::vector<double> g(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> gnew(g.size(), 0.0);
    std::vector<double> src(g.size(), 0.0);
    double src_total = 0.0;  // sum S * cell_area
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            const double s =
                source_term((ix + 0.5) * h, (iy + 0.5) * h, theta_x, theta_y, cfg);
            src[static_cast<std::size_t>(iy) * n + ix] = s;
            src_total += s * cell_area;
        }
    }

    ConcentrationFields out;
    out.mesh_n = n;
    out.snapshots = cfg.horizon;
    out.data.assign(static_cast<std::size_t>(cfg.horizon) * n * n, 0.0);

    double t = 0.0;
    double mass = 0.0;
    double worst_drift = 0.0;
    auto idx = [n](int ix, int iy) { return static_cast<std::size_t>(iy) * n + ix; };

    for (int k = 0; k < cfg.horizon; ++k) {
        for (int step = 0; step < substeps; ++step) {
            const double u = cfg.velocity_slope * t;  // u_x == u_y
            for (int iy = 0; iy < n; ++iy) {
                for (int ix = 0; ix < n; ++ix) {
                    const double gc = g[idx(ix, iy)];
                    // Diffusive face fluxes; zero at the walls.
                    const double fw = ix > 0 ? (gc - g[idx(ix - 1, iy)]) * inv_h : 0.0;
                    const double fe = ix < n - 1 ? (g[idx(ix + 1, iy)] - gc) * inv_h : 0.0;
                    const double fs = iy > 0 ? (gc - g[idx(ix, iy - 1)]) * inv_h : 0.0;
                    const double fn = iy < n - 1 ? (g[idx(ix, iy + 1)] - gc) * inv_h : 0.0;
                    double rate = cfg.diffusivity * (fe - fw + fn - fs) * inv_h;
                    // Upwind advective face fluxes; zero at the walls.
                    double ae = 0.0, aw = 0.0, an = 0.0, as = 0.0;
                    if (u >= 0.0) {
                        ae = ix < n - 1 ? u * gc : 0.0;
                        aw = ix > 0 ? u * g[idx(ix - 1, iy)] : 0.0;
                        an = iy < n - 1 ? u * gc : 0.0;
                        as = iy > 0 ? u * g[idx(ix, iy - 1)] : 0.0;
                    } else {
                        ae = ix < n - 1 ? u * g[idx(ix + 1, iy)] : 0.0;
                        aw = ix > 0 ? u * gc : 0.0;
                        an = iy < n - 1 ? u * g[idx(ix, iy + 1)] : 0.0;
                        as = iy > 0 ? u * gc : 0.0;
                    }
                    rate -= (ae - aw + an - as) * inv_h;
                    rate += src[idx(ix, iy)];
                    gnew[idx(ix, iy)] = gc + dt * rate;
                }
            }
            g.swap(gnew);
            t += dt;
            double mass_new = 0.0;
            for (double v : g) mass_new += v * cell_area;
            const double drift = std::abs(mass_new - mass - dt * src_total);
            const double scale = std::max(std::abs(mass_new), 1e-300);
            worst_drift = std::max(worst_drift, drift / scale);
            mass = mass_new;
        }
        std::copy(g.begin(), g.end(),
                  out.data.begin() + static_cast<std::size_t>(k) * n * n);
    }
    out.max_mass_drift_rel = worst_drift;
    return out;
}

double measure(const ConcentrationFields& fields, double sensor_x, double sensor_y, int k,
               const NoiseModel& noise, Rng& rng) {
    if (sensor_x < 0.0 || sensor_x > 1.0 || sensor_y < 0.0 || sensor_y > 1.0) {
        sensor_x = std::clamp(sensor_x, 0.0, 1.0);
        sensor_y = std::clamp(sensor_y, 0.0, 1.0);
    }
    return fields.sample(k, sensor_x, sensor_y) + rng.normal(0.0, noise.std_dev);
}

FieldCache FieldCache::build(const ConvDiffConfig& cfg, int n_threads) {
    cfg.validate();
    FieldCache cache;
    cache.cfg_ = cfg;
    cache.theta_n_ = cfg.theta_grid;
    const int cells = cfg.theta_grid * cfg.theta_grid;
    cache.fields_.resize(static_cast<std::size_t>(cells));

    int workers = n_threads > 0 ? n_threads : env_thread_cap();
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, cells);

    auto solve_range = [&](int begin, int end) {
        for (int c = begin; c < end; ++c) {
            const double tx = (c % cfg.theta_grid + 0.5) / cfg.theta_grid;
            const double ty = (c / cfg.theta_grid + 0.5) / cfg.theta_grid;
            cache.fields_[static_cast<std::size_t>(c)] = solve_forward(tx, ty, cfg);
        }
    };
    if (workers == 1) {
        solve_range(0, cells);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (cells + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const int begin = w * chunk;
            const int end = std::min(cells, begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(solve_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return cache;
}

namespace {

constexpr std::uint32_t kCacheMagic = 0x53424643;  // "SBFC"
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

void FieldCache::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open field cache for writing: " + path);
    const std::uint64_t cfg_hash = cfg_.hash();
    const std::uint32_t theta_n = static_cast<std::uint32_t>(theta_n_);
    const std::uint32_t mesh_n = static_cast<std::uint32_t>(cfg_.fv_resolution);
    const std::uint32_t snaps = static_cast<std::uint32_t>(cfg_.horizon);
    out.write(reinterpret_cast<const char*>(&kCacheMagic), sizeof(kCacheMagic));
    out.write(reinterpret_cast<const char*>(&kCacheVersion), sizeof(kCacheVersion));
    out.write(reinterpret_cast<const char*>(&cfg_hash), sizeof(cfg_hash));
    out.write(reinterpret_cast<const char*>(&theta_n), sizeof(theta_n));
    out.write(reinterpret_cast<const char*>(&mesh_n), sizeof(mesh_n));
    out.write(reinterpret_cast<const char*>(&snaps), sizeof(snaps));
    for (const auto& f : fields_) {
        out.write(reinterpret_cast<const char*>(&f.max_mass_drift_rel), sizeof(double));
        out.write(reinterpret_cast<const char*>(f.data.data()),
                  static_cast<std::streamsize>(f.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("field cache write failed: " + path);
}

std::optional<FieldCache> FieldCache::load(const std::string& path, const ConvDiffConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::uint32_t magic = 0, version = 0, theta_n = 0, mesh_n = 0, snaps = 0;
    std::uint64_t cfg_hash = 0;
    in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&cfg_hash), sizeof(cfg_hash));
    in.read(reinterpret_cast<char*>(&theta_n), sizeof(theta_n));
    in.read(reinterpret_cast<char*>(&mesh_n), sizeof(mesh_n));
    in.read(reinterpret_cast<char*>(&snaps), sizeof(snaps));
    if (!in || magic != kCacheMagic || version != kCacheVersion) return std::nullopt;
    if (cfg_hash != cfg.hash() || theta_n != static_cast<std::uint32_t>(cfg.theta_grid) ||
        mesh_n != static_cast<std::uint32_t>(cfg.fv_resolution) ||
        snaps != static_cast<std::uint32_t>(cfg.horizon)) {
        return std::nullopt;
    }
    FieldCache cache;
    cache.cfg_ = cfg;
    cache.theta_n_ = cfg.theta_grid;
    const int cells = cfg.theta_grid * cfg.theta_grid;
    cache.fields_.resize(static_cast<std::size_t>(cells));
    const std::size_t payload =
        static_cast<std::size_t>(cfg.horizon) * cfg.fv_resolution * cfg.fv_resolution;
    for (auto& f : cache.fields_) {
        f.mesh_n = cfg.fv_resolution;
        f.snapshots = cfg.horizon;
        f.data.resize(payload);
        in.read(reinterpret_cast<char*>(&f.max_mass_drift_rel), sizeof(double));
        in.read(reinterpret_cast<char*>(f.data.data()),
                static_cast<std::streamsize>(payload * sizeof(double)));
        if (!in) return std::nullopt;
    }
    return cache;
}

FieldCache FieldCache::load_or_build(const std::string& path, const ConvDiffConfig& cfg,
                                     int n_threads) {
    if (!path.empty()) {
        if (auto cached = load(path, cfg)) return std::move(*cached);
    }
    FieldCache cache = build(cfg, n_threads);
    if (!path.empty()) cache.save(path);
    return cache;
}

const ConcentrationFields& FieldCache::nearest(double theta_x, double theta_y) const {
    const int ix = std::clamp(static_cast<int>(theta_x * theta_n_), 0, theta_n_ - 1);
    const int iy = std::clamp(static_cast<int>(theta_y * theta_n_), 0, theta_n_ - 1);
    return fields_[static_cast<std::size_t>(iy) * theta_n_ + ix];
}

std::vector<double> log_likelihood_grid(double y, double sensor_x, double sensor_y, int k,
                                        const FieldCache& cache, const NoiseModel& noise) {
    const int cells = cache.theta_cells_per_axis() * cache.theta_cells_per_axis();
    if (cells == 0) {
        throw std::logic_error("field cache has not been built");
    }
    const double var = noise.std_dev * noise.std_dev;
    const double log_norm = -0.5 * std::log(kTwoPi * var);
    std::vector<double> out(static_cast<std::size_t>(cells));
    for (int c = 0; c < cells; ++c) {
        const double pred = cache.at_cell(c).sample(k, sensor_x, sensor_y);
        const double d = y - pred;
        out[static_cast<std::size_t>(c)] = log_norm - d * d / (2.0 * var);
    }
    return out;
}

ConvDiffEnv::ConvDiffEnv(ConvDiffConfig cfg, std::shared_ptr<const FieldCache> cache)
    : cfg_(cfg), cache_(std::move(cache)) {
    cfg_.validate();
    if (!cache_ || cache_->theta_cells_per_axis() != cfg_.theta_grid ||
        cache_->config().hash() != cfg_.hash()) {
        throw std::logic_error("field cache missing or built for a different config");
    }
}

State ConvDiffEnv::initial_state() const {
    State s;
    s.stage = 0;
    s.belief = GridBelief::uniform(cfg_.theta_grid);
    s.physical = {cfg_.initial_sensor_x, cfg_.initial_sensor_y};
    return s;
}

Vec ConvDiffEnv::sample_theta(Rng& rng) const {
    const int n = cfg_.theta_grid;
    const int cell = static_cast<int>(rng.index(static_cast<std::size_t>(n) * n));
    return {(cell % n + 0.5) / n, (cell / n + 0.5) / n};
}

const ConcentrationFields& ConvDiffEnv::fields_for(double tx, double ty) const {
    // Cell-center thetas come straight from the cache.
    const int n = cfg_.theta_grid;
    const int ix = std::clamp(static_cast<int>(tx * n), 0, n - 1);
    const int iy = std::clamp(static_cast<int>(ty * n), 0, n - 1);
    const double cx = (ix + 0.5) / n;
    const double cy = (iy + 0.5) / n;
    if (tx == cx && ty == cy) return cache_->at_cell(iy * n + ix);

    std::uint64_t key = 0x746865746153ull;
    key = mix_double(key, tx);
    key = mix_double(key, ty);
    std::lock_guard<std::mutex> lock(exact_mutex_);
    auto it = exact_.find(key);
    if (it == exact_.end()) {
        it = exact_.emplace(key, solve_forward(tx, ty, cfg_)).first;
    }
    return it->second;
}

Vec ConvDiffEnv::simulate_observation(const Vec& theta, const State& s, const Vec& xi,
                                      Rng& rng) const {
    const Vec pos = advance_physical(s.physical, xi);
    const ConcentrationFields& fields = fields_for(theta.at(0), theta.at(1));
    NoiseModel noise{cfg_.sensor_noise_std};
    return {measure(fields, pos[0], pos[1], s.stage, noise, rng)};
}

Environment::BeliefUpdate ConvDiffEnv::update_belief(const State& s, const Vec& xi,
                                                     const Vec& y) const {
    const Vec pos = advance_physical(s.physical, xi);
    NoiseModel noise{cfg_.sensor_noise_std};
    const std::vector<double> ll =
        log_likelihood_grid(y.at(0), pos[0], pos[1], s.stage, *cache_, noise);
    const auto& prior = std::get<GridBelief>(s.belief);
    GridBelief post = grid_update(prior, ll);
    const double gain = grid_kl(post, prior);
    return BeliefUpdate{Belief{std::move(post)}, gain};
}

Vec ConvDiffEnv::advance_physical(const Vec& physical, const Vec& xi) const {
    double nx = physical.at(0) + xi.at(0);
    double ny = physical.at(1) + xi.at(1);
    if (nx < 0.0 || nx > 1.0 || ny < 0.0 || ny > 1.0) {
        clamp_events_ += 1;
        nx = std::clamp(nx, 0.0, 1.0);
        ny = std::clamp(ny, 0.0, 1.0);
    }
    return {nx, ny};
}

}  // namespace stopbed
