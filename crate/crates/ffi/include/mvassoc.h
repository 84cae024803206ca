#ifndef MVASSOC_H
#define MVASSOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call. Nonzero codes other than `NULL_POINTER` and
// `PANIC` equal the command-line exit codes of the same error category.
typedef enum MvStatus {
  MV_STATUS_OK = 0,
  MV_STATUS_NULL_POINTER = 1,
  MV_STATUS_USAGE = 2,
  MV_STATUS_CONFIG = 3,
  MV_STATUS_DATA = 4,
  MV_STATUS_RUNTIME = 5,
  MV_STATUS_IO = 6,
  MV_STATUS_PANIC = 7,
} MvStatus;

// A multi-view detections dataset.
typedef struct MvDataset MvDataset;

// A trained encoder and decoders with their provenance.
typedef struct MvModel MvModel;

// One cross-view match: detection `row` of view i with `col` of view j.
typedef struct MvMatch {
  uintptr_t row;
  uintptr_t col;
  double confidence;
} MvMatch;

// Pooled association quality. An `has_*` flag of 0 means the value is
// undefined (no decisions of that kind) and the number is NaN.
typedef struct MvMetrics {
  double precision;
  double recall;
  double accuracy;
  double ipaa100;
  uint8_t has_precision;
  uint8_t has_recall;
  uint8_t has_accuracy;
  uint8_t has_ipaa100;
} MvMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *mvassoc_last_error(void);

// Simulates a scene from the `[scene]` table of the TOML file at
// `config` (defaults when null).
//
// # Safety
// `config` is null or a NUL-terminated string; `out` is writable.
enum MvStatus mvassoc_dataset_generate(const char *config, uint64_t seed, struct MvDataset **out);

// # Safety
// `file` is a NUL-terminated string; `out` is writable.
enum MvStatus mvassoc_dataset_read(const char *file, struct MvDataset **out);

// # Safety
// `dataset` comes from this library; `file` is a NUL-terminated string.
enum MvStatus mvassoc_dataset_write(const struct MvDataset *dataset, const char *file);

// # Safety
// `dataset` comes from this library; the outputs are writable or null.
enum MvStatus mvassoc_dataset_shape(const struct MvDataset *dataset,
                                    uintptr_t *frames,
                                    uintptr_t *cameras);

// Number of detections in one view of one frame.
//
// # Safety
// `dataset` comes from this library; `count` is writable.
enum MvStatus mvassoc_dataset_view_len(const struct MvDataset *dataset,
                                       uintptr_t frame,
                                       uintptr_t camera,
                                       uintptr_t *count);

// # Safety
// `dataset` is null or comes from this library and is not used again.
void mvassoc_dataset_free(struct MvDataset *dataset);

// Trains a model on `dataset` with the `[train]` table of the TOML file at
// `config` (defaults when null) and the given seed. A run that diverges
// returns `RUNTIME` and still stores the last finite model in `out`.
//
// # Safety
// `dataset` comes from this library; `config` is null or a NUL-terminated
// string; `out` is writable.
enum MvStatus mvassoc_train(const struct MvDataset *dataset,
                            const char *config,
                            uint64_t seed,
                            struct MvModel **out);

// # Safety
// `file` is a NUL-terminated string; `out` is writable.
enum MvStatus mvassoc_model_read(const char *file, struct MvModel **out);

// # Safety
// `model` comes from this library; `file` is a NUL-terminated string.
enum MvStatus mvassoc_model_write(const struct MvModel *model, const char *file);

// # Safety
// `model` is null or comes from this library and is not used again.
void mvassoc_model_free(struct MvModel *model);

// Associates views `view_i` and `view_j` of one frame, writing at most
// `capacity` matches to `matches` and the full match count to `count`.
// Call with `capacity` 0 to size the buffer first.
//
// # Safety
// Handles come from this library; `matches` holds `capacity` elements or
// is null when `capacity` is 0; `count` is writable.
enum MvStatus mvassoc_associate_frame(const struct MvModel *model,
                                      const struct MvDataset *dataset,
                                      uintptr_t frame,
                                      uintptr_t view_i,
                                      uintptr_t view_j,
                                      double threshold,
                                      struct MvMatch *matches,
                                      uintptr_t capacity,
                                      uintptr_t *count);

// Associates every view pair of every frame and scores the result against
// the dataset's identities.
//
// # Safety
// Handles come from this library; `out` is writable.
enum MvStatus mvassoc_evaluate(const struct MvModel *model,
                               const struct MvDataset *dataset,
                               double threshold,
                               struct MvMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVASSOC_H */
