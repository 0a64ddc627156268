/* C interface to the psfed-palm federated palmprint verification simulator.
 *
 * All driver functions take a JSON configuration string (documented in the
 * README), write their artifacts to the configured output directory, and
 * return a status code. On failure psfed_last_error() carries a message for
 * the calling thread. Functions returning a string via an out-parameter
 * allocate it with malloc-compatible semantics; release it with
 * psfed_string_free().
 */
#ifndef PSFEDPALM_H
#define PSFEDPALM_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum psfed_status {
  PSFED_OK = 0,
  PSFED_ERROR_INVALID_ARGUMENT = 1,
  PSFED_ERROR_IO = 2,
  PSFED_ERROR_NUMERIC = 3,
  PSFED_ERROR_INTERNAL = 4
} psfed_status;

const char* psfed_version(void);

/* Message for the most recent failure on this thread; empty if none. */
const char* psfed_last_error(void);

void psfed_string_free(char* s);

/* Config-driven drivers backing the CLI subcommands. `result_json` may be
 * NULL; otherwise it receives a summary of the produced artifacts. */
psfed_status psfed_run_gen_data(const char* config_json, char** result_json);
psfed_status psfed_run_train(const char* config_json, char** result_json);
psfed_status psfed_run_eval(const char* config_json, char** result_json);
psfed_status psfed_run_ablate(const char* config_json, char** result_json);
psfed_status psfed_run_report(const char* config_json, char** result_json);

/* Checkpointed model handle for template extraction. */
typedef struct psfed_model psfed_model;

psfed_status psfed_model_load(const char* checkpoint_path, psfed_model** out_model);
void psfed_model_free(psfed_model* model);

int psfed_model_embedding_dim(const psfed_model* model);
int psfed_model_input_size(const psfed_model* model);

/* Embeds one grayscale image (row-major doubles in [0,1]) into a unit
 * template of embedding_dim values. */
psfed_status psfed_model_embed(const psfed_model* model, const double* pixels, int height,
                               int width, double* out_template, int out_len);

/* Matching distance between two templates: arccos of the clamped dot
 * product, in radians. */
double psfed_cosine_distance(const double* a, const double* b, int n);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PSFEDPALM_H */
