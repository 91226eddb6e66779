/* C API for the screening laboratory: opaque handles, status codes, and
 * JSON-configured pipeline stages. All functions return SL_OK on success;
 * on failure sl_last_error() holds a message for the calling thread. */
#ifndef SCREENLAB_H
#define SCREENLAB_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
    SL_OK = 0,
    SL_ERR_INVALID_ARGUMENT = 1,
    SL_ERR_DIMENSION = 2,
    SL_ERR_INFEASIBLE = 3,
    SL_ERR_NO_CONVERGENCE = 4,
    SL_ERR_INSUFFICIENT_SUPPORT = 5,
    SL_ERR_SINGULAR = 6,
    SL_ERR_PRECONDITION = 7,
    SL_ERR_IO = 8,
    SL_ERR_SCHEMA = 9,
    SL_ERR_UNKNOWN = 100
} sl_status;

typedef struct sl_primitives sl_primitives;
typedef struct sl_menu sl_menu;
typedef struct sl_dataset sl_dataset;

const char* sl_version(void);
const char* sl_status_name(sl_status s);
/* last error message for the calling thread; empty string when none */
const char* sl_last_error(void);
void sl_string_free(char* s);

/* ----- primitives ----- */
sl_status sl_primitives_from_json(const char* json, sl_primitives** out);
sl_status sl_primitives_to_json(const sl_primitives* p, char** json_out);
void sl_primitives_free(sl_primitives* p);

/* ----- equilibrium solve ----- */
/* solver_json may be NULL for defaults; keys: mesh, tol, max_iterations,
 * tol_convexity, bunching_rank_tol, exclusion_gap_tol */
sl_status sl_solve(const sl_primitives* p, const char* solver_json, sl_menu** out);
sl_status sl_menu_write(const sl_menu* m, const char* path);
sl_status sl_menu_read(const char* path, sl_menu** out);
sl_status sl_menu_info(const sl_menu* m, double* objective, double* exclusion_tau,
                       int* converged);
void sl_menu_free(sl_menu* m);

/* ----- market simulation ----- */
sl_status sl_simulate(const sl_menu* m, const sl_primitives* p, long n, uint64_t seed,
                      sl_dataset** out);
sl_status sl_dataset_write(const sl_dataset* d, const char* path);
sl_status sl_dataset_read(const char* path, sl_dataset** out);
long sl_dataset_size(const sl_dataset* d);
void sl_dataset_free(sl_dataset* d);

/* ----- pipeline ----- */
/* stages_csv: comma-separated stage names, or NULL for the config's list.
 * manifest_json_out receives a malloc'd string (free with sl_string_free). */
sl_status sl_run_stages(const char* config_json, const char* out_dir, const char* stages_csv,
                        char** manifest_json_out);

#ifdef __cplusplus
}
#endif

#endif /* SCREENLAB_H */
