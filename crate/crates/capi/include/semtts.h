#ifndef SEMTTS_H
#define SEMTTS_H

/* Generated by cbindgen from semtts-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every function in this interface.
typedef enum SemttsStatus {
  // Success.
  SEMTTS_OK = 0,
  // A required pointer argument was null.
  SEMTTS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  SEMTTS_INVALID_UTF8 = 2,
  // The request was malformed (bad symbols, lengths, or ranges).
  SEMTTS_BAD_REQUEST = 3,
  // Checkpoint files were missing, corrupt, or mutually inconsistent.
  SEMTTS_BAD_CHECKPOINT = 4,
  // Audio input could not be read or did not match the engine's rate.
  SEMTTS_BAD_AUDIO = 5,
  // Filesystem failure.
  SEMTTS_IO_ERROR = 6,
  // Any other internal failure; see the error message.
  SEMTTS_INTERNAL = 7,
} SemttsStatus;

// Opaque handle to a loaded engine (token model, vocoder, tokenizer).
typedef struct SemttsEngine SemttsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the current thread's most recent error message into `buf`
// (NUL-terminated, truncated to `len`). Returns the full message length
// in bytes, excluding the terminator. Safe to call with `buf == NULL`
// or `len == 0` to query the needed size.
size_t semtts_last_error_message(char *buf, size_t len);

// Open an engine from a checkpoint directory containing the token model,
// vocoder, and tokenizer. On success writes a handle to `out`.
enum SemttsStatus semtts_engine_open(const char *ckpt_dir, struct SemttsEngine **out);

// Release an engine handle. `engine` may be null.
void semtts_engine_free(struct SemttsEngine *engine);

// Output sample rate of the engine, in Hz.
enum SemttsStatus semtts_engine_sample_rate(const struct SemttsEngine *engine, uint32_t *out);

// Free a sample buffer returned by a synthesis call.
void semtts_samples_free(double *samples, size_t len);

// Generate speech for `text` (space-separated phoneme symbols) spliced
// between up to two aligned audio contexts; passing a null context-B
// audio path yields continuation. On success the caller owns the sample
// buffer and must release it with `semtts_samples_free`. `out_wav` may
// be null; when set, the waveform is also written there as a WAV file.
enum SemttsStatus semtts_engine_edit(const struct SemttsEngine *engine,
                                     const char *context_a_wav,
                                     const char *phonemes_a,
                                     const size_t *durations_a,
                                     size_t n_a,
                                     const char *context_b_wav,
                                     const char *phonemes_b,
                                     const size_t *durations_b,
                                     size_t n_b,
                                     const char *text,
                                     uint64_t seed,
                                     const char *out_wav,
                                     double **out_samples,
                                     size_t *out_len);

// Tokenize `input_wav` and vocode it back in the same voice. Buffer
// ownership is as in `semtts_engine_edit`.
enum SemttsStatus semtts_engine_resynth(const struct SemttsEngine *engine,
                                        const char *input_wav,
                                        const char *out_wav,
                                        double **out_samples,
                                        size_t *out_len);

// Static version string of the library.
const char *semtts_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMTTS_H */
