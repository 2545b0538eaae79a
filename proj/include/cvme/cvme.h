/* C interface to the control-variates measurement-error estimation library.
 *
 * All functions returning int use the shared status taxonomy below; on any
 * nonzero status a human-readable message is available from cvme_last_error()
 * (thread-local, valid until the next failing call on the same thread).
 * Objects are opaque; every *_create/_load/_read function hands back an owned
 * pointer released with the matching *_free.
 */
#ifndef CVME_H
#define CVME_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  CVME_OK = 0,
  CVME_ERR_PARSE = 2,      /* malformed dataset or input file */
  CVME_ERR_ESTIMATION = 3, /* estimator failure (convergence, positivity, ...) */
  CVME_ERR_CONFIG = 4,     /* invalid configuration */
  CVME_ERR_IO = 5          /* filesystem failure */
};

typedef struct cvme_config cvme_config;
typedef struct cvme_dataset cvme_dataset;
typedef struct cvme_results cvme_results;

const char* cvme_version(void);
const char* cvme_last_error(void);
const char* cvme_config_schema(void);
void cvme_string_free(char* s);

/* Configuration: INI text (see cvme_config_schema) with [scenario],
 * [estimate], and [grid] sections, all optional. */
int cvme_config_default(cvme_config** out);
int cvme_config_load(const char* path, cvme_config** out);
int cvme_config_load_text(const char* text, cvme_config** out);
/* Overrides the scenario seed, the nuisance-fit seed, and the grid seed root. */
int cvme_config_set_seed(cvme_config* config, uint64_t seed);
int cvme_config_threads(const cvme_config* config);
void cvme_config_free(cvme_config* config);

/* Datasets. */
int cvme_generate(const cvme_config* config, cvme_dataset** out);
int cvme_dataset_read_csv(const char* path, cvme_dataset** out);
int cvme_dataset_write_csv(const cvme_dataset* data, const char* path, int include_oracle);
int64_t cvme_dataset_rows(const cvme_dataset* data);
int64_t cvme_dataset_validated_rows(const cvme_dataset* data);
int cvme_dataset_has_oracle(const cvme_dataset* data);
void cvme_dataset_free(cvme_dataset* data);

/* Estimation: runs every estimator listed in the config's [estimate] section
 * on the dataset and returns one record per estimator. */
int cvme_estimate(const cvme_dataset* data, const cvme_config* config, cvme_results** out);
int cvme_results_count(const cvme_results* results);
const char* cvme_results_tag(const cvme_results* results, int index);
double cvme_results_estimate(const cvme_results* results, int index);
double cvme_results_se(const cvme_results* results, int index);
double cvme_results_ci_low(const cvme_results* results, int index);
double cvme_results_ci_high(const cvme_results* results, int index);
/* Full record set as CSV text; free with cvme_string_free. */
int cvme_results_to_csv(const cvme_results* results, char** out);
int cvme_results_write_csv(const cvme_results* results, const char* path);
void cvme_results_free(cvme_results* results);

/* Monte Carlo simulation over the config's [grid]: writes the metrics CSV and
 * a JSON run manifest (both atomically). progress may be NULL. */
int cvme_simulate(const cvme_config* config, int threads, const char* metrics_csv_path,
                  const char* manifest_json_path,
                  void (*progress)(uint64_t completed, uint64_t total));

/* Timing report over a small fixed grid; free with cvme_string_free. */
int cvme_benchmark(const cvme_config* config, int threads, char** report);

#ifdef __cplusplus
}
#endif

#endif
