#ifndef PHYSFUSE_H
#define PHYSFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_ARGUMENT = 2,
  PF_STATUS_IO = 3,
  PF_STATUS_LOAD = 4,
  PF_STATUS_CONFIG_MISMATCH = 5,
  PF_STATUS_NUMERIC = 6,
  PF_STATUS_DEGENERATE_SIGNAL = 7,
  PF_STATUS_UNSUPPORTED_RATE = 8,
  PF_STATUS_PANIC = 9,
} PfStatus;

/*
 Butterworth filter as cascaded second-order sections.
 */
typedef struct PfFilter PfFilter;

/*
 Fine-tuned single-modality classifier, evaluated in single precision.
 */
typedef struct PfModel PfModel;

typedef struct PfMetrics {
  double accuracy;
  double macro_f1;
  double balanced_accuracy;
} PfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. Valid until the next
 failing call on the same thread.
 */
const char *pf_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *pf_version(void);

/*
 Receptive field in samples of a convolution stack.
 */
enum PfStatus pf_receptive_field(const size_t *kernels,
                                 const size_t *strides,
                                 size_t layers,
                                 size_t *out);

enum PfStatus pf_filter_lowpass(size_t order, double cutoff_hz, double fs, struct PfFilter **out);

/*
 `order` is the prototype order; the filter has `order` sections.
 */
enum PfStatus pf_filter_bandpass(size_t order,
                                 double low_hz,
                                 double high_hz,
                                 double fs,
                                 struct PfFilter **out);

void pf_filter_free(struct PfFilter *filter);

/*
 Number of second-order sections; 0 for a null handle.
 */
size_t pf_filter_section_count(const struct PfFilter *filter);

/*
 Writes `(b0, b1, b2, a1, a2)` per section into `coeffs`, which must hold
 `5 * pf_filter_section_count(filter)` values.
 */
enum PfStatus pf_filter_sections(const struct PfFilter *filter, double *coeffs, size_t capacity);

/*
 Filters `n` samples from `x` into `y`, zero initial state. `y` may equal `x`.
 */
enum PfStatus pf_filter_apply(const struct PfFilter *filter, const double *x, size_t n, double *y);

/*
 `|H(e^{jω})|` at `freq_hz`.
 */
enum PfStatus pf_filter_magnitude(const struct PfFilter *filter, double freq_hz, double *out);

/*
 Loads a fine-tuned checkpoint written by `physfuse finetune` or `evaluate`.
 */
enum PfStatus pf_model_load(const char *path, struct PfModel **out);

void pf_model_free(struct PfModel *model);

/*
 Input channels; 0 for a null handle.
 */
size_t pf_model_channels(const struct PfModel *model);

/*
 Samples per channel in one segment; 0 for a null handle.
 */
size_t pf_model_segment_len(const struct PfModel *model);

/*
 Emotion logit for one normalized segment, channel-major, of
 `channels * segment_len` samples.
 */
enum PfStatus pf_model_classify(const struct PfModel *model,
                                const float *samples,
                                size_t n,
                                float *logit);

/*
 Binary metrics of logits (threshold 0) against 0/1 labels.
 */
enum PfStatus pf_metrics(const uint8_t *labels,
                         const double *logits,
                         size_t n,
                         struct PfMetrics *out);

/*
 Student-t confidence interval of the mean.
 */
enum PfStatus pf_t_confidence_interval(const double *values,
                                       size_t n,
                                       double level,
                                       double *mean,
                                       double *half_width);

/*
 Draws a span mask of `len` positions into `mask` (1 = masked).
 */
enum PfStatus pf_sample_mask(size_t len,
                             size_t span_length,
                             double mask_ratio,
                             uint64_t seed,
                             uint8_t *mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHYSFUSE_H */
