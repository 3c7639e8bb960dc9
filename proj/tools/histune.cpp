// Command-line front end over the C API.

#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "histune/histune.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitComponent = 3;
constexpr int kExitPartial = 4;

int exit_code(histune_status s) {
    switch (s) {
    case HISTUNE_OK: return kExitOk;
    case HISTUNE_CONFIG:
    case HISTUNE_INVALID_ARGUMENT: return kExitConfig;
    case HISTUNE_PARTIAL_MATRIX: return kExitPartial;
    default: return kExitComponent;
    }
}

int report(histune_status s, char* text) {
    if (text) {
        std::fputs(text, stdout);
        histune_string_free(text);
    }
    if (s != HISTUNE_OK) std::fprintf(stderr, "histune: %s: %s\n", histune_status_string(s), histune_last_error());
    return exit_code(s);
}

std::string config_help() {
    char* text = nullptr;
    if (histune_config_help(&text) != HISTUNE_OK) return {};
    std::string out = "\nConfig file keys (key = default  # meaning):\n";
    out += text;
    histune_string_free(text);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online discount-factor tuning for Q-learning agents, driven by stream patterns over a temporal graph"};
    app.require_subcommand(1);
    app.footer(config_help());

    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> tuner;
    std::optional<std::string> out;
    bool tcp = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "seed (run) or the only seed (compare)");
        sub->add_option("--tuner", tuner, "static | grid | random | history (compare: matrix entry list)");
        sub->add_option("--out", out, "output directory");
        sub->add_flag("--tcp", tcp, "route components through the TCP transport (HISTUNE_BUS_ADDR)");
    };

    auto* run = app.add_subcommand("run", "run one training lifetime with all components");
    add_common(run);
    auto* compare = app.add_subcommand("compare", "run every (tuner, seed) cell and summarise");
    add_common(compare);

    auto* query = app.add_subcommand("query", "list history stored in a commit log");
    std::string log_path;
    std::string what = "best";
    std::string argument;
    std::int64_t from = std::numeric_limits<std::int64_t>::min();
    std::int64_t to = std::numeric_limits<std::int64_t>::max();
    query->add_option("log", log_path, "commit log (history.log)")->required();
    query->add_option("what", what, "best | tuning | measurements | node | commits")->capture_default_str();
    query->add_option("argument", argument, "node id, or measurement kind filter");
    query->add_option("--from", from, "first timepoint");
    query->add_option("--to", to, "last timepoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    if (*query) {
        char* listing = nullptr;
        const histune_status s = histune_query(log_path.c_str(), what.c_str(), argument.c_str(), from, to, &listing);
        return report(s, listing);
    }

    const bool is_compare = compare->parsed();
    std::string overrides;
    if (seed) overrides += (is_compare ? "seeds = " : "seed = ") + std::to_string(*seed) + "\n";
    if (tuner) overrides += (is_compare ? "matrix = " : "tuner = ") + *tuner + "\n";
    if (out) overrides += "out = " + *out + "\n";

    const char* path = config_path ? config_path->c_str() : nullptr;
    char* summary = nullptr;
    const histune_status s = is_compare ? histune_compare(path, overrides.c_str(), tcp, nullptr, &summary)
                                        : histune_run(path, overrides.c_str(), tcp, nullptr, &summary);
    return report(s, summary);
}
