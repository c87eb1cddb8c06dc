/* C interface to the 2-D Roesser stochastic identification library.
 *
 * All objects are opaque handles; every function returns an r2d_status
 * (except the accessors documented otherwise). On failure a thread-local
 * message is available via r2d_last_error(). Strings returned through
 * out-parameters are heap-allocated and must be released with
 * r2d_string_free().
 */
#ifndef ROESSER2D_H
#define ROESSER2D_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum r2d_status {
  R2D_OK = 0,
  R2D_ERR_INVALID = 1, /* bad arguments / malformed input */
  R2D_ERR_NUMERIC = 2, /* rank failure, divergence, ... */
  R2D_ERR_IO = 3       /* file or parse problem */
} r2d_status;

typedef struct r2d_model r2d_model;
typedef struct r2d_grid r2d_grid;

/* Last error message for the calling thread ("" when none). The pointer
 * stays valid until the next failing call on the same thread. */
const char* r2d_last_error(void);

void r2d_string_free(char* s);
void r2d_model_free(r2d_model* m);
void r2d_grid_free(r2d_grid* g);

/* --- models ------------------------------------------------------- */
r2d_status r2d_model_from_json(const char* json_text, r2d_model** out);
r2d_status r2d_model_from_file(const char* path, r2d_model** out);
r2d_status r2d_model_to_json(const r2d_model* m, char** out_json);
r2d_status r2d_model_write_file(const r2d_model* m, const char* path);

/* Validation / covariance-equation report as JSON. */
r2d_status r2d_validate(const r2d_model* m, char** out_report_json);

/* --- grids -------------------------------------------------------- */
r2d_status r2d_grid_read(const char* path, r2d_grid** out);
/* format: "text" or "binary" */
r2d_status r2d_grid_write(const r2d_grid* g, const char* path,
                          const char* format);
r2d_status r2d_grid_dims(const r2d_grid* g, int* n, int* extent_r,
                         int* extent_s);
/* Row-major copy of the value vector at (r, s) into out[0..n-1]. */
r2d_status r2d_grid_at(const r2d_grid* g, int r, int s, double* out);

/* --- operations ---------------------------------------------------- */
/* Simulate on [0,N] x [0,M]; outputs are optional except out_y. */
r2d_status r2d_simulate(const r2d_model* m, int N, int M, uint64_t seed,
                        r2d_grid** out_y, r2d_grid** out_xh,
                        r2d_grid** out_xv, r2d_grid** out_e);

/* Identify from an output grid. options_json: {"i":6,"order_h":n|null,
 * "order_v":n|null,"iterations":1}; pass NULL for defaults. The report
 * (parameters, diagnostics) is returned as JSON; the recovered model as a
 * handle. */
r2d_status r2d_identify(const r2d_grid* y, const char* options_json,
                        r2d_model** out_model, char** out_report_json);

/* Closed-form vs empirical projection-bias check. options_json:
 * {"i":4,"j":500,"M":1,"seeds":20,"seed":1}; NULL for defaults. */
r2d_status r2d_bias_check(const r2d_model* m, const char* options_json,
                          char** out_report_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ROESSER2D_H */
