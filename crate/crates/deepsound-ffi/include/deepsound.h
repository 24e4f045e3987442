/* C interface to the deepsound pipeline library.
* Regenerated at build time; do not edit by hand. */

#ifndef DEEPSOUND_H
#define DEEPSOUND_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. Every fallible function returns one of these; anything but
 * `DS_OK` leaves a message readable via `ds_last_error`.
 */
typedef enum DsStatus {
  DsOk = 0,
  DsErrArgument = 1,
  DsErrParse = 2,
  DsErrIo = 3,
  DsErrBackend = 4,
  DsErrInternal = 5,
} DsStatus;

/**
 * Opaque clip descriptor handle.
 */
typedef struct DsVideoDescriptor DsVideoDescriptor;

/**
 * Opaque audio buffer handle.
 */
typedef struct DsWaveform DsWaveform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed by the caller.
 */
const char *ds_version(void);

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread; never freed by the
 * caller.
 */
const char *ds_last_error(void);

/**
 * Releases a string returned through a `char **` out-parameter.
 *
 * # Safety
 * `s` must be null or a pointer previously returned by this library.
 */
void ds_string_free(char *s);

/**
 * Builds a waveform handle from interleaved mono samples.
 *
 * # Safety
 * `samples` must point to `len` readable floats; `out` must be writable.
 */
enum DsStatus ds_waveform_from_samples(const float *samples,
                                       size_t len,
                                       uint32_t sample_rate,
                                       struct DsWaveform **out);

/**
 * Reads a WAV file into a canonical-rate waveform handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be writable.
 */
enum DsStatus ds_waveform_read_wav(const char *path, struct DsWaveform **out);

/**
 * Writes a waveform handle to a mono float WAV file.
 *
 * # Safety
 * `w` must be a live waveform handle; `path` a valid string.
 */
enum DsStatus ds_waveform_write_wav(const struct DsWaveform *w, const char *path);

/**
 * Sample count, or 0 for a null handle.
 *
 * # Safety
 * `w` must be null or a live waveform handle.
 */
size_t ds_waveform_len(const struct DsWaveform *w);

/**
 * Sample rate in Hz, or 0 for a null handle.
 *
 * # Safety
 * `w` must be null or a live waveform handle.
 */
uint32_t ds_waveform_sample_rate(const struct DsWaveform *w);

/**
 * Copies samples into a caller buffer of capacity `cap`.
 *
 * # Safety
 * `w` must be a live handle; `buf` must hold `cap` writable floats.
 */
enum DsStatus ds_waveform_copy_samples(const struct DsWaveform *w, float *buf, size_t cap);

/**
 * Releases a waveform handle.
 *
 * # Safety
 * `w` must be null or a handle not freed before.
 */
void ds_waveform_free(struct DsWaveform *w);

/**
 * Parses and validates a clip descriptor from JSON.
 *
 * # Safety
 * `json` must be a valid string; `out` must be writable.
 */
enum DsStatus ds_descriptor_from_json(const char *json, struct DsVideoDescriptor **out);

/**
 * Releases a descriptor handle.
 *
 * # Safety
 * `d` must be null or a handle not freed before.
 */
void ds_descriptor_free(struct DsVideoDescriptor *d);

/**
 * Judges whether `audio` carries a voice-over for `video`; `mode` is
 * `"QA"` or `"CoT"`. On success `*out_json` holds the verdict as JSON.
 *
 * # Safety
 * Handles must be live; `mode` a valid string; `out_json` writable.
 */
enum DsStatus ds_judge(const struct DsVideoDescriptor *video,
                       const struct DsWaveform *audio,
                       const char *mode,
                       char **out_json);

/**
 * Attenuates voice-band energy inside the given segments; `segments` holds
 * `n_segments` (start, end) second pairs, flattened. On success `*out` is a
 * new waveform handle and `*attenuation_db` the in-band attenuation
 * achieved.
 *
 * # Safety
 * `w` must be live; `segments` must hold `2*n_segments` doubles; `out` and
 * `attenuation_db` must be writable.
 */
enum DsStatus ds_remove_voice(const struct DsWaveform *w,
                              const double *segments,
                              size_t n_segments,
                              struct DsWaveform **out,
                              double *attenuation_db);

/**
 * Validates a judgment document against the tag grammar.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string.
 */
enum DsStatus ds_cot_validate(const char *text);

/**
 * Scores a candidate document against a gold document (lower is better;
 * equal documents score 0).
 *
 * # Safety
 * `candidate` and `gold` must be valid strings; `out_score` writable.
 */
enum DsStatus ds_cot_total_score(const char *candidate, const char *gold, double *out_score);

/**
 * Runs the full pipeline with the built-in generation backend, writing
 * artifacts under `out_dir` and returning the run manifest as JSON.
 * `strategy` is one of the snake_case strategy names; `mode` is `"QA"` or
 * `"CoT"`.
 *
 * # Safety
 * `video` must be live; string arguments valid; `out_manifest_json`
 * writable.
 */
enum DsStatus ds_run_pipeline(const struct DsVideoDescriptor *video,
                              const char *instruction,
                              const char *strategy,
                              const char *mode,
                              uint64_t seed,
                              const char *out_dir,
                              char **out_manifest_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPSOUND_H */
