#pragma once

#include <string>
#include <vector>

#include "stopbed/env_convdiff.hpp"
#include "stopbed/env_lingauss.hpp"

namespace stopbed {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Central-difference check of grad_params and grad_input on randomized
// small networks; relative tolerance 1e-5 with absolute floor 1e-8.
SuiteResult run_gradcheck_suite(std::uint64_t seed, int n_nets = 100);

// Scores random realized trajectories under both reward bookkeepings and
// checks the totals agree within tol. incremental_kl_scale != 1 injects a
// deliberate fault so the suite's own failure path can be exercised.
SuiteResult run_equivalence_suite_lingauss(std::uint64_t seed, int n_trajectories = 1000,
                                           double tol = 1e-9,
                                           double incremental_kl_scale = 1.0);
SuiteResult run_equivalence_suite_convdiff(const ConvDiffEnv& env, std::uint64_t seed,
                                           int n_trajectories = 1000, double tol = 1e-6,
                                           double incremental_kl_scale = 1.0);

// Conservation, zero-source, and mesh-refinement audits of the solver.
SuiteResult run_fv_audit_suite(std::uint64_t seed);

// Replaces the learned continuation value with analytic one and checks
// the stopping rule against the closed-form stopping sets on simulated
// linear-Gaussian states.
SuiteResult run_oracle_substitution_suite(std::uint64_t seed);

}  // namespace stopbed
