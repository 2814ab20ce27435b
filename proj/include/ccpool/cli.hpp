#pragma once

#include "ccpool/datamodel.hpp"
#include "ccpool/error.hpp"
#include "ccpool/simharness.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ccpool {

enum ExitCode : int {
    kExitOk = 0,
    kExitOther = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumerical = 4,
};

int exit_code_for(ErrorCategory category);

/// Key-value scenario file (TOML subset: `key = value`, arrays as `[x, y]`,
/// `#` comments). Recognised keys are the ScenarioMain and ScenarioInteraction
/// field names plus: interaction, rr_grid, n_cal_grid, fig1_a, fig1_b,
/// calib_cov (full | variance_only), replicates, seed, threads.
/// Unknown keys and malformed values raise InvalidConfig.
struct ScenarioSpec {
    std::map<std::string, std::vector<std::string>> values;

    bool has(const std::string &key) const { return values.count(key) > 0; }
};

ScenarioSpec parse_scenario(std::istream &in, const std::string &source = "<scenario>");
ScenarioSpec load_scenario(const std::filesystem::path &path);

/// Overwrites the fields of `base` named in the spec.
ScenarioInteraction apply_scenario(const ScenarioSpec &spec, ScenarioInteraction base);

/// Synthetic three-study dataset shaped like a vitamin D pooling project:
/// 49, 103 and 27 matched pairs with calibration subsets of 25, 27 and 28
/// (the smallest study needs one unmatched calibration subject), a
/// dichotomous effect modifier and one binary covariate.
PooledDataset make_demo_dataset(std::uint64_t seed);

inline constexpr std::uint64_t kDefaultSeed = 20240101;

/// Entry point of the command-line tool. Subcommands: analyze, simulate,
/// fig1, fig2, summarize, demo.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace ccpool
