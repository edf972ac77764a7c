#ifndef EEGFORMER_H
#define EEGFORMER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible call.
 */
typedef enum EegStatus {
  EEG_STATUS_OK = 0,
  EEG_STATUS_NULL_POINTER = 1,
  EEG_STATUS_INVALID_ARGUMENT = 2,
  EEG_STATUS_IO = 3,
  EEG_STATUS_FORMAT = 4,
  EEG_STATUS_CHECKPOINT = 5,
  EEG_STATUS_DIMENSION = 6,
  EEG_STATUS_CONFIG = 7,
  EEG_STATUS_UNDEFINED_METRIC = 8,
  EEG_STATUS_NON_FINITE = 9,
  EEG_STATUS_INTERNAL = 10,
} EegStatus;

/**
 * Loaded model; create with `eeg_model_load`.
 */
typedef struct EegModel EegModel;

/**
 * Decoded signal record; create with `eeg_record_read`.
 */
typedef struct EegRecord EegRecord;

/**
 * Model geometry needed to size caller buffers.
 */
typedef struct EegModelDims {
  size_t hidden_dim;
  size_t codebook_size;
  size_t patch_len;
  size_t stride;
  /**
   * Samples per channel expected by tokenize/predict.
   */
  size_t window_len;
  /**
   * Tokens per channel.
   */
  size_t patch_count;
  size_t feature_dim;
  /**
   * 0 = no head, 1 = binary, >= 2 = classes.
   */
  size_t head_outputs;
} EegModelDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if the last
 * call succeeded. Valid until the next call into this library on the
 * same thread.
 */
const char *eeg_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *eeg_version(void);

/**
 * Loads a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a valid nul-terminated string and `out` a valid pointer.
 */
enum EegStatus eeg_model_load(const char *path, struct EegModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `eeg_model_load` and not be used afterwards.
 */
void eeg_model_free(struct EegModel *model);

/**
 * Writes the model's geometry into `out`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum EegStatus eeg_model_dims(const struct EegModel *model, struct EegModelDims *out);

/**
 * Tokenizes one window given as `channels x window_len` row-major samples
 * at 250 Hz. Writes `channels x patch_count` token ids to `out_tokens`.
 *
 * # Safety
 * `samples` must hold `channels * len` values and `out_tokens` at least
 * `out_len` writable values.
 */
enum EegStatus eeg_model_tokenize(const struct EegModel *model,
                                  const double *samples,
                                  size_t channels,
                                  size_t len,
                                  uint32_t *out_tokens,
                                  size_t out_len);

/**
 * Class scores for one window: one sigmoid probability for a binary head,
 * otherwise a softmax over `head_outputs` classes.
 *
 * # Safety
 * As for `eeg_model_tokenize`; `out_scores` must hold `out_len` values.
 */
enum EegStatus eeg_model_predict(const struct EegModel *model,
                                 const double *samples,
                                 size_t channels,
                                 size_t len,
                                 double *out_scores,
                                 size_t out_len);

/**
 * Reads a signal record file into a new handle.
 *
 * # Safety
 * `path` must be a valid nul-terminated string and `out` a valid pointer.
 */
enum EegStatus eeg_record_read(const char *path, struct EegRecord **out);

/**
 * Releases a record handle. Null is ignored.
 *
 * # Safety
 * `record` must come from `eeg_record_read` and not be used afterwards.
 */
void eeg_record_free(struct EegRecord *record);

/**
 * Channel count, or 0 for a null handle.
 *
 * # Safety
 * `record` must be null or a live handle.
 */
size_t eeg_record_channels(const struct EegRecord *record);

/**
 * Samples per channel, or 0 for a null handle.
 *
 * # Safety
 * `record` must be null or a live handle.
 */
size_t eeg_record_sample_count(const struct EegRecord *record);

/**
 * Sample rate in Hz, or 0 for a null handle.
 *
 * # Safety
 * `record` must be null or a live handle.
 */
uint32_t eeg_record_sample_rate(const struct EegRecord *record);

/**
 * Label of channel `index`, or null when out of range. Owned by the handle.
 *
 * # Safety
 * `record` must be null or a live handle.
 */
const char *eeg_record_channel_label(const struct EegRecord *record, size_t index);

/**
 * Copies the `channels x samples` row-major data into `out`.
 *
 * # Safety
 * `record` must be a live handle and `out` hold `out_len` writable values.
 */
enum EegStatus eeg_record_copy_samples(const struct EegRecord *record, double *out, size_t out_len);

/**
 * Area under the ROC curve; ties count one half. Labels are nonzero for
 * positives.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be valid.
 */
enum EegStatus eeg_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Average precision over scores sorted in descending order.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be valid.
 */
enum EegStatus eeg_auprc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EEGFORMER_H */
