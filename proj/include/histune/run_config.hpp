#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "histune/history_model.hpp"
#include "histune/rl_harness.hpp"
#include "histune/tuner.hpp"

namespace histune::experiment {

enum class TunerKind { Static, Grid, Random, History };

const char* to_string(TunerKind k);
/// Throws Error(Config).
TunerKind tuner_kind_from_string(const std::string& text);

enum class ThresholdMode { Absolute, Fraction };

/// Everything that determines one run. Text form is flat `key = value`
/// lines; `#` starts a comment.
struct RunConfig {
    std::uint64_t seed = 1;
    std::uint64_t episodes = 100;
    std::uint64_t steps_per_episode = 50;
    rl::EnvConfig env;
    double alpha = 0.5;
    double agent_epsilon = 0.2;

    TunerKind tuner = TunerKind::History;
    /// Unset: 0.9 for static/grid/random, 0.5 for history.
    std::optional<double> initial_gamma;
    std::size_t window_length = 3;
    ThresholdMode th_stable_mode = ThresholdMode::Fraction;
    double th_stable = 30.0;
    double th_stable_fraction = 0.03;
    double tuner_epsilon = 0.3;
    double step_c = 0.1;
    double lambda_min = 0.01;
    double lambda_max = 0.99;
    double p_random = 0.2;
    double schedule_rate = 0.1;
    std::uint64_t schedule_period = 10;

    graph::TraceRecording trace_recording = graph::TraceRecording::Summary;
    std::string agent_name = "swarm";
    std::filesystem::path out = "histune-run";

    double effective_initial_gamma() const;
    /// th_stable itself, or th_stable_fraction * #users.
    double effective_th_stable() const;
    tuner::TunerConfig tuner_config() const;
    rl::HarnessConfig harness_config() const;

    /// Throws Error(Config) naming the key at fault.
    void validate() const;
    /// Sets one key from its text form. Throws Error(Config) for unknown
    /// keys and unparsable values.
    void set(const std::string& key, const std::string& value);
    /// Round-trips through parse_run_config.
    std::string to_text() const;
};

/// Applies `key = value` lines on top of `base`. Keys not belonging to
/// RunConfig are passed to `extra` when given, otherwise rejected.
RunConfig parse_run_config(const std::string& text, RunConfig base = {},
                           const std::function<bool(const std::string&, const std::string&)>& extra = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// `key = default  # meaning` for every key, for --help.
std::string describe_run_config();

/// One configuration of a comparison matrix.
struct Variant {
    std::string label;
    TunerKind kind = TunerKind::Static;
    double initial_gamma = 0.9;
};

struct CompareConfig {
    RunConfig base;
    std::vector<Variant> variants;
    std::vector<std::uint64_t> seeds;
};

/// RunConfig keys plus `matrix` (comma list of kind or kind:gamma),
/// `seeds` (comma list of numbers or a-b ranges) and `gamma_sweep`
/// (true expands every kind given without a gamma over 0.1 .. 0.9).
CompareConfig parse_compare_config(const std::string& text);
CompareConfig load_compare_config(const std::filesystem::path& path);
/// Variant list for a matrix spec; `sweep` as for gamma_sweep.
std::vector<Variant> parse_matrix(const std::string& spec, bool sweep);
std::vector<std::uint64_t> parse_seed_list(const std::string& spec);

}  // namespace histune::experiment
