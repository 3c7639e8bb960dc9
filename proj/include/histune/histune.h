#ifndef HISTUNE_H
#define HISTUNE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HISTUNE_API __declspec(dllexport)
#else
#define HISTUNE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every call returns a status; on failure histune_last_error() holds a
 * message for the calling thread until its next failing call. */
typedef enum histune_status {
    HISTUNE_OK = 0,
    HISTUNE_INVALID_ARGUMENT = 1,
    HISTUNE_EMPTY_EPISODE = 2,
    HISTUNE_MALFORMED_WINDOW = 3,
    HISTUNE_BUS_CLOSED = 4,
    HISTUNE_SCHEMA_VIOLATION = 5,
    HISTUNE_PARSE_ERROR = 6,
    HISTUNE_ORDERING_VIOLATION = 7,
    HISTUNE_TIME_REGRESSION = 8,
    HISTUNE_UNKNOWN_NODE = 9,
    HISTUNE_NOT_YET_CREATED = 10,
    HISTUNE_NODE_ENDED = 11,
    HISTUNE_CONFIG = 12,
    HISTUNE_NON_FINITE = 13,
    HISTUNE_IO = 14,
    HISTUNE_CORRUPT_LOG = 15,
    HISTUNE_TRANSPORT = 16,
    /* A comparison matrix stopped early; partial outputs were written. */
    HISTUNE_PARTIAL_MATRIX = 98,
    HISTUNE_INTERNAL = 99
} histune_status;

HISTUNE_API const char* histune_status_string(histune_status status);
HISTUNE_API const char* histune_last_error(void);
/* Frees strings returned through char** out-parameters. */
HISTUNE_API void histune_string_free(char* s);

/* ---- tuner ---------------------------------------------------------- */

typedef struct histune_tuner histune_tuner;

typedef struct histune_tuner_config {
    size_t window_length;
    double th_stable;
    double epsilon;
    double step_c;
    double lambda_min;
    double lambda_max;
    double p_random;
} histune_tuner_config;

typedef enum histune_decision_kind {
    HISTUNE_KEEP_CURRENT = 0,
    HISTUNE_NEW_MAX = 1,
    HISTUNE_EXPLORE = 2
} histune_decision_kind;

typedef enum histune_move {
    HISTUNE_MOVE_NONE = -1,
    HISTUNE_MOVE_RANDOM = 0,
    HISTUNE_MOVE_INCREMENT = 1,
    HISTUNE_MOVE_DECREMENT = 2,
    HISTUNE_MOVE_RETURN_TO_MAX = 3
} histune_move;

typedef struct histune_decision {
    /* 0 when the window was not stable and the state is unchanged. */
    int evaluated;
    histune_decision_kind kind;
    histune_move move;
    double new_gamma;
    double max_r;
    double max_gamma;
    double r_win;
} histune_decision;

HISTUNE_API void histune_tuner_config_default(histune_tuner_config* config);
HISTUNE_API histune_status histune_tuner_create(const histune_tuner_config* config, double initial_gamma,
                                                uint64_t seed, histune_tuner** out);
HISTUNE_API void histune_tuner_destroy(histune_tuner* tuner);
/* Builds a window from `count` consecutive episode averages starting at
 * first_episode and runs one tuning step when it is stable. */
HISTUNE_API histune_status histune_tuner_observe_window(histune_tuner* tuner, uint64_t window_index,
                                                        uint64_t first_episode, const double* episode_averages,
                                                        size_t count, histune_decision* out);
HISTUNE_API histune_status histune_tuner_optimal_gamma(const histune_tuner* tuner, double* out);

/* ---- bus ------------------------------------------------------------ */

typedef struct histune_bus histune_bus;
typedef struct histune_subscription histune_subscription;

/* In-process broker. */
HISTUNE_API histune_status histune_bus_create(histune_bus** out);
/* Client of a remote broker at "host:port"; NULL uses HISTUNE_BUS_ADDR or
 * 127.0.0.1:7878. */
HISTUNE_API histune_status histune_bus_connect(const char* address, histune_bus** out);
HISTUNE_API void histune_bus_destroy(histune_bus* bus);
HISTUNE_API histune_status histune_bus_close(histune_bus* bus);
/* payload_json is one JSON object matching the topic schema. */
HISTUNE_API histune_status histune_bus_publish(histune_bus* bus, const char* topic, const char* payload_json,
                                               uint64_t* seq_out);
HISTUNE_API histune_status histune_bus_subscribe(histune_bus* bus, const char* topic, histune_subscription** out);
/* Next envelope as one encoded line. timeout_ms < 0 blocks. On timeout
 * returns HISTUNE_OK with *line_out = NULL; at end-of-bus returns
 * HISTUNE_BUS_CLOSED. */
HISTUNE_API histune_status histune_subscription_next(histune_subscription* sub, int timeout_ms, char** line_out);
HISTUNE_API void histune_subscription_destroy(histune_subscription* sub);
/* Serves an in-process broker over TCP at "host:port" (port 0 picks one).
 * The server lives as long as the bus. */
HISTUNE_API histune_status histune_bus_serve_tcp(histune_bus* bus, const char* address, uint16_t* port_out);

/* ---- temporal graph ------------------------------------------------- */

typedef struct histune_graph histune_graph;

/* Opens a commit log read-only. */
HISTUNE_API histune_status histune_graph_open(const char* log_path, histune_graph** out);
HISTUNE_API void histune_graph_close(histune_graph* graph);
/* {"id":..,"kind":..,"created_at":..,"ended":..,"properties":{..},"edges":{..}} */
HISTUNE_API histune_status histune_graph_node_at_json(histune_graph* graph, uint64_t id, int64_t timepoint,
                                                      char** json_out);
/* JSON array of {"timepoint":..,"state":{..}} for versions in [from, to]. */
HISTUNE_API histune_status histune_graph_history_json(histune_graph* graph, uint64_t id, int64_t from, int64_t to,
                                                      char** json_out);

/* ---- experiments ---------------------------------------------------- */

/* config_path may be NULL (defaults). overrides holds extra "key = value"
 * lines applied after the file. bus_address NULL means HISTUNE_BUS_ADDR or
 * the default; only used with tcp != 0. */
HISTUNE_API histune_status histune_run(const char* config_path, const char* overrides, int tcp,
                                       const char* bus_address, char** summary_out);
HISTUNE_API histune_status histune_compare(const char* config_path, const char* overrides, int tcp,
                                           const char* bus_address, char** summary_out);
/* what: best | tuning | measurements | node | commits. */
HISTUNE_API histune_status histune_query(const char* log_path, const char* what, const char* argument, int64_t from,
                                         int64_t to, char** listing_out);
/* Every config key with its default and meaning. */
HISTUNE_API histune_status histune_config_help(char** text_out);

#ifdef __cplusplus
}
#endif

#endif
