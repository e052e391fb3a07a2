#pragma once

// Config-driven experiment runner: parses a JSON experiment description,
// dispatches to the matching estimator, and renders the outputs (per-replica
// CSV, summary JSON) as strings. File placement, exit codes and the manifest
// are the CLI's business; keeping this layer pure makes it directly testable.
//
// Config schema (see FORMATS.md for byte-level examples):
//   {
//     "experiment": "eta" | "volume" | "deviation" | "tail" | "threshold" |
//                   "coupled" | "distortion" | "measure" | "surjectivity",
//     "seed": 123,                     // optional; see seed precedence below
//     "params": {"d", "xi", "radius", "u_star", "allow_supercritical"},
//     ... experiment-specific fields ...
//   }
//
// Seed precedence: CLI --seed, then the config's "seed", then the
// DEFECT_FPP_SEED environment variable, then kDefaultSeed. The resolver takes
// the first layer that is present.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "defect_fpp/estimators.hpp"

namespace dfpp {

// Fixed default seed so published configs reproduce without any flags.
inline constexpr std::uint64_t kDefaultSeed = 0xDEFEC7ULL;

// FNV-1a 64-bit hash of raw bytes; used for the manifest's config hash.
std::uint64_t fnv1a64(std::string_view bytes);

struct ExperimentOutput {
    std::string experiment;            // validated experiment name
    std::uint64_t seed = 0;            // seed actually used
    std::vector<EstimateRecord> records;
    std::string summary_json;          // full summary document, newline-terminated
    // (filename, bytes) pairs: records.csv always; diameters.csv for "tail"
    std::vector<std::pair<std::string, std::string>> files;
};

// Parses and runs one experiment. seed_override wins over the config's seed
// and the environment. Throws std::invalid_argument for malformed or invalid
// configs, HardFailure / InsufficientData for estimator-level failures.
ExperimentOutput run_experiment_json(const std::string& config_json,
                                     std::optional<std::uint64_t> seed_override,
                                     int jobs);

// The seed the config would run with (config field, then environment, then
// default). Exposed for the CLI's manifest.
std::uint64_t resolve_seed(const std::string& config_json,
                           std::optional<std::uint64_t> seed_override);

} // namespace dfpp
