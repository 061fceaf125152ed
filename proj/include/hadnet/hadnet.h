#ifndef HADNET_HADNET_H
#define HADNET_HADNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define HADNET_API __declspec(dllexport)
#else
#define HADNET_API __attribute__((visibility("default")))
#endif

typedef enum hadnet_status {
  HADNET_OK = 0,
  HADNET_E_INVALID_ARGUMENT = 1,
  HADNET_E_SHAPE_MISMATCH,
  HADNET_E_DUPLICATE_NODE,
  HADNET_E_DUPLICATE_EDGE,
  HADNET_E_BIDIRECTIONAL_EDGE,
  HADNET_E_UNKNOWN_NODE,
  HADNET_E_EMPTY_TRAJECTORY,
  HADNET_E_BATCH_TOO_SMALL,
  HADNET_E_NON_SCALAR_LOSS,
  HADNET_E_MAP_TARGETS_GLUCOSE,
  HADNET_E_MISSING_ERROR_NODES,
  HADNET_E_GAP_IN_WINDOW,
  HADNET_E_NON_POSITIVE_GLUCOSE,
  HADNET_E_LENGTH_MISMATCH,
  HADNET_E_EMPTY_DATASET,
  HADNET_E_NON_FINITE_LOSS,
  HADNET_E_UNSTABLE_INTEGRATION,
  HADNET_E_NON_POSITIVE_TRUTH,
  HADNET_E_NO_TEST_WINDOWS,
  HADNET_E_CONTRACT_VIOLATION,
  HADNET_E_IO,
  HADNET_E_PARSE,
  HADNET_E_INTERNAL = 100
} hadnet_status;

/* Message of the last failing call on this thread; "" after success. */
HADNET_API const char* hadnet_last_error(void);
HADNET_API const char* hadnet_status_name(hadnet_status status);
HADNET_API const char* hadnet_version(void);

/* Receives progress and warning lines. May be NULL. */
typedef void (*hadnet_log_fn)(const char* line, void* user);

HADNET_API hadnet_status hadnet_simulate(const char* out_dir, size_t patients, size_t days, uint64_t seed,
                                         size_t* rows_per_episode);

typedef struct hadnet_train_report {
  size_t parameter_count;
  size_t windows;
  size_t epochs;
  double first_loss;
  double final_loss;
  size_t warnings;
} hadnet_train_report;

/* config_path may be NULL for defaults. report may be NULL. */
HADNET_API hadnet_status hadnet_train(const char* data_dir, const char* config_path, uint64_t seed,
                                      const char* out_dir, hadnet_train_report* report, hadnet_log_fn log,
                                      void* user);

/* baselines: comma-separated subset of persistence,ar,ridge,physio; "" for none. */
HADNET_API hadnet_status hadnet_evaluate(const char* data_dir, const char* checkpoint_glob, const char* baselines,
                                         const char* out_dir, hadnet_log_fn log, void* user);

/* window: "patient_id@YYYY-MM-DDTHH:MM:SS" naming the first input step. */
HADNET_API hadnet_status hadnet_inspect(const char* checkpoint_path, const char* window, const char* data_dir,
                                        const char* out_dir, hadnet_log_fn log, void* user);

typedef struct hadnet_model hadnet_model;

HADNET_API hadnet_status hadnet_model_load(const char* checkpoint_path, hadnet_model** out);
HADNET_API void hadnet_model_free(hadnet_model* model);
HADNET_API size_t hadnet_model_param_count(const hadnet_model* model);
HADNET_API hadnet_status hadnet_model_dims(const hadnet_model* model, size_t* nodes, size_t* d, size_t* w,
                                           size_t* h);
/* window: rows x 4 row-major (glucose, bolus, basal, carbs); rows must equal w.
   forecast receives h glucose values. */
HADNET_API hadnet_status hadnet_model_predict(const hadnet_model* model, const double* window, size_t rows,
                                              double* forecast, size_t forecast_len);

#ifdef __cplusplus
}
#endif

#endif
