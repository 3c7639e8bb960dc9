#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "histune/rl_harness.hpp"
#include "histune/run_config.hpp"
#include "histune/tcp_transport.hpp"
#include "histune/temporal_graph.hpp"
#include "histune/tuner.hpp"

namespace histune::experiment {

struct PipelineOptions {
    /// Components talk through a TcpBusServer instead of the broker object.
    bool tcp = false;
    bus::BusAddress address;
    /// Commit log for the graph; empty keeps it in memory.
    std::filesystem::path log_path;
    /// False runs the harness alone. Only valid for baseline schedules,
    /// whose rewards do not depend on the engine or graph.
    bool history_pipeline = true;
};

struct RunResult {
    rl::RunLog log;
    std::uint64_t complex_events = 0;
    std::uint64_t stable_windows = 0;
    std::uint64_t feedback_published = 0;
    /// History tuner only.
    std::optional<tuner::TunerState> tuner_state;
};

/// Wires broker, stream engine, temporal graph (plus tuner listener for the
/// history kind) and harness on their own threads, runs one lifetime and
/// shuts down harness -> engine -> graph -> bus. Rethrows the first
/// component error.
RunResult run_pipeline(const RunConfig& config, const PipelineOptions& options = {});

/// run_pipeline writing config.txt, rewards.csv and history.log into
/// config.out.
RunResult cmd_run(const RunConfig& config, bool tcp, const bus::BusAddress& address);

/// Linear interpolation between closest ranks (numpy's default).
double quantile(std::vector<double> values, double q);

/// Mean of the last quarter of the episodes (at least one).
double final_quartile_mean(const std::vector<double>& rewards);

struct SummaryStats {
    std::string label;
    TunerKind kind = TunerKind::Static;
    double initial_gamma = 0.0;
    std::size_t runs = 0;
    /// Over every per-episode mean reward of every seed.
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    double mean = 0.0;
    /// Median across seeds of final_quartile_mean.
    double final_quartile_median = 0.0;
};

/// `rewards[seed][episode]`.
SummaryStats summarize(const Variant& variant, const std::vector<std::vector<double>>& rewards);

struct VariantRuns {
    Variant variant;
    std::vector<std::uint64_t> seeds;
    /// Per seed: per-episode mean reward and gamma.
    std::vector<std::vector<double>> rewards;
    std::vector<std::vector<double>> gammas;
};

struct CompareResult {
    std::vector<VariantRuns> runs;
    std::vector<SummaryStats> stats;
    bool partial = false;
    std::string failure;
};

/// One sub-run per (variant, seed). A failing sub-run stops the matrix and
/// returns what completed with `partial` set. With a non-empty `out` writes
/// runs.csv, curves.csv, stats.csv (and PARTIAL on failure).
CompareResult cmd_compare(const CompareConfig& config, const std::filesystem::path& out, bool tcp = false,
                          const bus::BusAddress& address = {});

void write_compare_outputs(const CompareResult& result, const std::filesystem::path& out);

struct QueryRequest {
    /// best | tuning | measurements | node | commits
    std::string what = "best";
    /// Node id for `node`, measurement kind filter for `measurements`.
    std::string argument;
    graph::Timepoint from = std::numeric_limits<graph::Timepoint>::min();
    graph::Timepoint to = std::numeric_limits<graph::Timepoint>::max();
};

/// CSV listing with a header line. Throws Error(CorruptLog) with the record
/// offset, Error(UnknownNode), Error(InvalidArgument) for unknown queries.
std::string cmd_query(const std::filesystem::path& log_path, const QueryRequest& request);

}  // namespace histune::experiment
