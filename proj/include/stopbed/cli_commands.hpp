#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "stopbed/config.hpp"

namespace stopbed {

// Exit codes shared by the CLI: 0 success, 1 validation error,
// 2 runtime error, 3 verification failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitVerification = 3;

// Runs a full training job: writes manifest.json, convergence.csv,
// stop_hist.csv, design_hist.csv and checkpoints under cfg.out_dir.
int run_train_command(const RunConfig& cfg, std::ostream& log);

// Prints the closed-form utility table (n, cost, utility, optimal flag)
// as CSV for the configured linear-Gaussian benchmark.
int run_oracle_command(const LinGaussConfig& cfg, std::ostream& out);

struct EvalCommandOptions {
    std::string run_dir;   // directory holding manifest.json and checkpoints
    std::string out_dir;   // empty = run_dir
    int episodes = 1000;
    std::uint64_t seed = 1;
    int n_threads = 0;
};

int run_eval_command(const EvalCommandOptions& opts, std::ostream& log);

struct VerifyCommandOptions {
    std::vector<std::string> suites;  // empty = all
    std::uint64_t seed = 7;
    int equivalence_trajectories = 1000;
    int gradcheck_nets = 100;
    std::string field_cache;
    int n_threads = 0;
};

int run_verify_command(const VerifyCommandOptions& opts, std::ostream& out);

// CSV helpers shared by commands and tests. Numbers use '.' decimals,
// rows end with LF.
std::string csv_double(double v);
void write_convergence_csv(const ConvergenceRecord& record, const std::string& path);
void write_stop_hist_csv(const ConvergenceRecord& record, const std::string& path);
void write_design_hist_csv(const ConvergenceRecord& record, const Vec& lo, const Vec& hi,
                           const std::string& path);

}  // namespace stopbed
