#ifndef CMLRAIN_H
#define CMLRAIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes; 2, 3 and 4 match the command-line exit codes.
 */
typedef enum CmlStatus {
  CML_OK = 0,
  CML_ERR_ARGUMENT = 1,
  CML_ERR_CONFIG = 2,
  CML_ERR_DATA = 3,
  CML_ERR_DIVERGED = 4,
  CML_ERR_PANIC = 5,
} CmlStatus;

/**
 * Trained model loaded from a checkpoint. Opaque to C.
 */
typedef struct CmlModel CmlModel;

/**
 * Scores of an estimate against observations. `r2` and `pcc` are NaN when
 * undefined (constant series).
 */
typedef struct CmlMetrics {
  size_t n;
  double rmse;
  double r2;
  double pcc;
  double mae;
} CmlMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Null-terminated library version. Static storage; do not free.
 */
const char *cml_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always null-terminated when `cap > 0`) and returns the full message
 * length plus one. An empty message means the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t cml_last_error(char *buf, size_t cap);

/**
 * Loads a checkpoint written by `cmlrain train` or `cmlrain reproduce`.
 *
 * # Safety
 * `path` must be a null-terminated string and `out` a valid pointer. On
 * success `*out` owns a model that must be released with [`cml_model_free`].
 */
enum CmlStatus cml_model_load(const char *path, struct CmlModel **out);

/**
 * # Safety
 * `model` must be null or a pointer from [`cml_model_load`] not yet freed.
 */
void cml_model_free(struct CmlModel *model);

/**
 * Input window length in minutes, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live model.
 */
size_t cml_model_window_len(const struct CmlModel *model);

/**
 * Features per minute, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live model.
 */
size_t cml_model_n_features(const struct CmlModel *model);

/**
 * Rain rate (mm/h) for `batch` windows. `inputs` is row-major
 * `[batch][window_len][n_features]` of already scaled features; `out`
 * receives `batch` values.
 *
 * # Safety
 * `model` must be live, `inputs` must hold `batch * window_len *
 * n_features` doubles and `out` must hold `batch` doubles.
 */
enum CmlStatus cml_model_predict(const struct CmlModel *model,
                                 const double *inputs,
                                 size_t batch,
                                 double *out);

/**
 * RMSE, R², PCC and MAE of `yhat` against `y`, both of length `n >= 2`.
 *
 * # Safety
 * `y` and `yhat` must hold `n` doubles; `out` must be valid.
 */
enum CmlStatus cml_metrics(const double *y, const double *yhat, size_t n, struct CmlMetrics *out);

/**
 * Rain rate (mm/h) from path attenuation: `(max(A - waa, 0) / (a L))^(1/b)`.
 */
double cml_pl_invert(double attenuation_db, double a, double b, double length_km, double waa_db);

/**
 * Path attenuation (dB) for a rain rate: `a R^b L`.
 */
double cml_pl_attenuation(double rate_mm_h, double a, double b, double length_km);

/**
 * Number of rain events in a 1-minute rate series (mm/h).
 *
 * # Safety
 * `rate` must hold `n` doubles and `out` must be valid.
 */
enum CmlStatus cml_count_events(const double *rate, size_t n, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMLRAIN_H */
