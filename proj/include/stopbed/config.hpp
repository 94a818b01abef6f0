#pragma once

#include <memory>
#include <string>

#include "stopbed/env_convdiff.hpp"
#include "stopbed/env_lingauss.hpp"
#include "stopbed/train.hpp"

#include <json.hpp>

namespace stopbed {

const char* version_string();

enum class EnvKind { LinGauss, ConvDiff };

// One run: which environment, reward bookkeeping, training setup, outputs.
// Serialized as JSON; the emitted form is the reproducibility manifest.
struct RunConfig {
    EnvKind env_kind = EnvKind::LinGauss;
    LinGaussConfig lingauss;
    ConvDiffConfig convdiff;
    RewardForm reward_form = RewardForm::Terminal;
    TrainConfig train;
    std::string out_dir;
    std::string field_cache;
    int verbosity = 1;

    void validate() const;
    RewardSpec reward_spec() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Builds the environment, loading or building the field cache as needed.
std::unique_ptr<Environment> make_environment(const RunConfig& cfg, int n_threads = 0);

}  // namespace stopbed
