#ifndef SPLAT_ALIGN_H
#define SPLAT_ALIGN_H

#include <stddef.h>
#include <stdint.h>

typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_POINTER = 1,
  SA_STATUS_INVALID_ARGUMENT = 2,
  SA_STATUS_IO = 3,
  SA_STATUS_FORMAT = 4,
  SA_STATUS_NOT_FOUND = 5,
  SA_STATUS_REGISTRATION = 6,
  SA_STATUS_NUMERICAL = 7,
  SA_STATUS_PANIC = 8,
  SA_STATUS_OTHER = 9,
} SaStatus;

// Opaque Gaussian splat cloud.
typedef struct SaCloud SaCloud;

// `p ↦ R·Fᵀ·diag(scale)·F·p + t`, with `F` the scaling frame.
typedef struct SaAnisotropic {
  double rotation[9];
  double translation[3];
  double scale[3];
  double frame[9];
} SaAnisotropic;

// `p ↦ scale·R·p + t`.
typedef struct SaSimilarity {
  double rotation[9];
  double translation[3];
  double scale;
} SaSimilarity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next call.
const char *sa_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *sa_version(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum SaStatus sa_cloud_load_ply(const char *path, struct SaCloud **out);

// # Safety
// `cloud` must come from this library; `path` must be NUL-terminated.
enum SaStatus sa_cloud_save_ply(const struct SaCloud *cloud, const char *path);

// Releases a cloud; null is ignored.
//
// # Safety
// `cloud` must come from this library and not be used afterwards.
void sa_cloud_free(struct SaCloud *cloud);

// # Safety
// `cloud` must come from this library; `out` must be writable.
enum SaStatus sa_cloud_len(const struct SaCloud *cloud, size_t *out);

// Copies the primitive means as `x, y, z` triples; `capacity` counts points.
//
// # Safety
// `xyz` must have room for `3·capacity` doubles.
enum SaStatus sa_cloud_means(const struct SaCloud *cloud, double *xyz, size_t capacity);

// New cloud with `t` applied to means, covariances and SH.
//
// # Safety
// Pointers must be valid; `out` receives a handle to free with `sa_cloud_free`.
enum SaStatus sa_cloud_apply_anisotropic(const struct SaCloud *cloud,
                                         const struct SaAnisotropic *t,
                                         struct SaCloud **out);

// Least-squares similarity mapping `src[i]` onto `dst[i]`.
//
// # Safety
// `src` and `dst` hold `3·n` doubles each.
enum SaStatus sa_umeyama(const double *src, const double *dst, size_t n, struct SaSimilarity *out);

// Unregularized anisotropic fit.
//
// # Safety
// `src` and `dst` hold `3·n` doubles each.
enum SaStatus sa_anisotropic_svd(const double *src,
                                 const double *dst,
                                 size_t n,
                                 struct SaAnisotropic *out);

// Regularized anisotropic fit with bounded scales; `iterations == 0` keeps the default.
//
// # Safety
// `src` and `dst` hold `3·n` doubles each.
enum SaStatus sa_anisotropic_regularized(const double *src,
                                         const double *dst,
                                         size_t n,
                                         size_t iterations,
                                         struct SaAnisotropic *out);

// Scale, centroid and multi-start ICP alignment of `gen` onto `par`.
//
// # Safety
// Cloud pointers must come from this library.
enum SaStatus sa_coarse_align(const struct SaCloud *gen,
                              const struct SaCloud *par,
                              uint64_t seed,
                              struct SaSimilarity *out);

// Halved symmetric mean nearest-neighbour distance.
//
// # Safety
// `a` holds `3·na` doubles and `b` holds `3·nb`.
enum SaStatus sa_chamfer(const double *a, size_t na, const double *b, size_t nb, double *out);

// Mean distance under the optimal one-to-one matching of seeded equal-size resamples.
//
// # Safety
// `a` holds `3·na` doubles and `b` holds `3·nb`.
enum SaStatus sa_emd(const double *a,
                     size_t na,
                     const double *b,
                     size_t nb,
                     uint64_t seed,
                     double *out);

// Generates a scene bundle into `out_dir`; `config_path` may be null for defaults.
//
// # Safety
// String arguments must be NUL-terminated.
enum SaStatus sa_synth_bundle(const char *config_path, uint64_t seed, const char *out_dir);

// Aligns object `object` of a bundle and writes the align outputs into `out_dir`.
//
// # Safety
// String arguments must be NUL-terminated; `final_residual` may be null.
enum SaStatus sa_align_bundle(const char *bundle_dir,
                              size_t object,
                              const char *config_path,
                              uint64_t seed,
                              const char *out_dir,
                              double *final_residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLAT_ALIGN_H */
