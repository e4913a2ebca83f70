/* C interface to the federated-learning simulation engine.
 *
 * All functions returning modfl_status set a thread-local error message on
 * failure, readable via modfl_last_error(). Strings returned through char**
 * out-parameters are owned by the caller and must be released with
 * modfl_string_free().
 */
#ifndef MODFL_H
#define MODFL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum modfl_status {
    MODFL_OK = 0,
    MODFL_ERR_CONFIG = 1,
    MODFL_ERR_DATA = 2,
    MODFL_ERR_RUNTIME = 3
} modfl_status;

/* Opaque, validated experiment description. */
typedef struct modfl_config modfl_config;

const char* modfl_version(void);

/* Message from the most recent failing call on this thread; empty string if
 * none. The pointer stays valid until the next failing call. */
const char* modfl_last_error(void);

/* Parses and validates a key=value config file. overrides is an optional
 * array of "key=value" strings applied after the file. */
modfl_status modfl_config_load(const char* path, const char* const* overrides,
                               size_t n_overrides, modfl_config** out);

/* Canonical serialized form; round-trips through modfl_config_load. */
modfl_status modfl_config_serialize(const modfl_config* cfg, char** out);

void modfl_config_free(modfl_config* cfg);

/* Runs the experiment and writes metrics.csv, summary.txt, and
 * manifest.json under the config's output_dir. threads caps parallel
 * client updates; 0 or 1 runs sequentially. */
modfl_status modfl_run(const modfl_config* cfg, size_t threads);

/* Renders accuracy-vs-round curves from one or more metrics CSVs into a
 * standalone SVG file. */
modfl_status modfl_plot(const char* const* csv_paths, size_t n_paths, const char* svg_out);

/* Joins two metrics CSVs on (round, arch, cohort) and reports per-round and
 * final-round accuracy deltas (first minus second) as text. */
modfl_status modfl_compare(const char* csv_a, const char* csv_b, char** report_out);

/* Finite-difference verification of the training gradients; the report
 * text is returned even when the check fails. */
modfl_status modfl_check_gradients(uint64_t seed, size_t instances, char** report_out);

/* Describes the client partition the config would produce, without
 * training. */
modfl_status modfl_partition_preview(const modfl_config* cfg, char** text_out);

void modfl_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* MODFL_H */
