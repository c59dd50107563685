#ifndef VSRLAB_H
#define VSRLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VsrStatus {
  VSR_STATUS_OK = 0,
  VSR_STATUS_NULL_POINTER = 1,
  VSR_STATUS_INVALID_ARGUMENT = 2,
  VSR_STATUS_SHAPE = 3,
  VSR_STATUS_CONFIG = 4,
  VSR_STATUS_CHECKPOINT = 5,
  VSR_STATUS_IO = 6,
  VSR_STATUS_BUFFER_TOO_SMALL = 7,
  VSR_STATUS_RUNTIME = 8,
  VSR_STATUS_PANIC = 9,
} VsrStatus;

/*
 Seeded chain of degradation operators.
 */
typedef struct VsrDegradationPlan VsrDegradationPlan;

/*
 Loaded generator network.
 */
typedef struct VsrGenerator VsrGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer
 stays valid until the next call into this library from the same thread.
 */
const char *vsr_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *vsr_version(void);

/*
 Loads a generator checkpoint.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum VsrStatus vsr_generator_load(const char *path, struct VsrGenerator **out);

/*
 # Safety
 `g` must come from [`vsr_generator_load`] and not be used afterwards.
 */
void vsr_generator_free(struct VsrGenerator *g);

/*
 Number of floats [`vsr_generator_upscale`] writes for the given input.
 */
size_t vsr_output_len(size_t frames, size_t height, size_t width, uint32_t scale);

/*
 Upscales a clip by 2 or 4 (two cascaded passes).

 # Safety
 `input` must hold `frames * 3 * height * width` floats and `output`
 `output_len` writable floats.
 */
enum VsrStatus vsr_generator_upscale(const struct VsrGenerator *g,
                                     const float *input,
                                     size_t frames,
                                     size_t height,
                                     size_t width,
                                     uint32_t scale,
                                     float *output,
                                     size_t output_len);

/*
 The built-in degradation plan.

 # Safety
 `out` must be a writable pointer.
 */
enum VsrStatus vsr_plan_default(uint64_t seed, struct VsrDegradationPlan **out);

/*
 Parses a plan from one step per line (the `step.N` value syntax of the
 config file, e.g. `jpeg p=0.5 quality=50:90`). Blank lines are skipped.

 # Safety
 `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum VsrStatus vsr_plan_parse(const char *text, uint64_t seed, struct VsrDegradationPlan **out);

/*
 Number of steps in the plan, 0 for a null handle.

 # Safety
 `plan` must be null or a live handle.
 */
size_t vsr_plan_len(const struct VsrDegradationPlan *plan);

/*
 Applies the plan; output has the input's shape.

 # Safety
 `input` must hold `frames * 3 * height * width` floats and `output`
 `output_len` writable floats.
 */
enum VsrStatus vsr_plan_apply(const struct VsrDegradationPlan *plan,
                              const float *input,
                              size_t frames,
                              size_t height,
                              size_t width,
                              float *output,
                              size_t output_len);

/*
 # Safety
 `plan` must come from a `vsr_plan_*` constructor and not be used afterwards.
 */
void vsr_plan_free(struct VsrDegradationPlan *plan);

/*
 PSNR in dB with peak 1, capped at 100.

 # Safety
 Both buffers must hold `frames * 3 * height * width` floats.
 */
enum VsrStatus vsr_psnr(const float *reference,
                        const float *test,
                        size_t frames,
                        size_t height,
                        size_t width,
                        double *out);

/*
 Mean SSIM over frames and channels.

 # Safety
 Both buffers must hold `frames * 3 * height * width` floats.
 */
enum VsrStatus vsr_ssim(const float *reference,
                        const float *test,
                        size_t frames,
                        size_t height,
                        size_t width,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VSRLAB_H */
