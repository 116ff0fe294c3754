#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dpr/rgbd_data.hpp"
#include "dpr/toyenv.hpp"
#include "dpr/training.hpp"

namespace dpr {

/// Everything a pipeline run can be configured with.
struct RunConfig {
    PretrainConfig pretrain;
    BcConfig bc;
    EnvConfig env;

    std::string data_path;  // pretraining dataset directory; empty = synthetic scenes
    Split data_split = Split::Train;
    std::size_t synthetic_count = 2000;
    std::uint64_t synthetic_seed = 0;
    SceneSpec scene;
    DepthDecode depth;
    int threads = 1;  // intra-op threads (0 = library default)
};

struct ConfigKey {
    std::string name;
    std::string type;
    std::string doc;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

/// The published schema, in documentation order.
const std::vector<ConfigKey>& config_schema();

/// Parses `key = value` lines ('#' starts a comment) on top of the defaults. Unknown
/// keys, duplicates and malformed values raise Error(Config) naming `source` and line.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Applies one `key=value` override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Config file text reproducing `cfg`, with each key documented.
std::string render_config(const RunConfig& cfg);

/// Relative paths are taken under $DPR_DATA_ROOT when it is set.
std::filesystem::path resolve_data_path(const std::string& path);

}  // namespace dpr
