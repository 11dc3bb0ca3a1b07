#ifndef MDLOD_H
#define MDLOD_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum MdlodStatus {
  MDLOD_STATUS_OK = 0,
  MDLOD_STATUS_NULL_ARGUMENT = 1,
  MDLOD_STATUS_INVALID_UTF8 = 2,
  MDLOD_STATUS_GEOMETRY_ERROR = 3,
  MDLOD_STATUS_MESH_ERROR = 4,
  MDLOD_STATUS_SOLVER_ERROR = 5,
  MDLOD_STATUS_CONFIG_ERROR = 6,
  MDLOD_STATUS_IO_ERROR = 7,
  MDLOD_STATUS_INTERNAL_ERROR = 8,
} MdlodStatus;

/**
 * Opaque mixed-dimensional domain handle.
 */
typedef struct MdlodDomain MdlodDomain;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mdlod_version(void);

/**
 * Message of the most recent error on this thread (empty if none). The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *mdlod_last_error_message(void);

/**
 * Loads and builds a mixed-dimensional domain from a geometry spec file.
 * On success stores a new handle in `out`; release it with
 * [`mdlod_domain_free`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum MdlodStatus mdlod_domain_load(const char *path, struct MdlodDomain **out);

/**
 * Segment counts of a domain: bulk, interface, junction.
 *
 * # Safety
 * `domain` must be a live handle; count pointers may be null to skip.
 */
enum MdlodStatus mdlod_domain_counts(const struct MdlodDomain *domain,
                                     uintptr_t *n_bulk,
                                     uintptr_t *n_interface,
                                     uintptr_t *n_junction);

/**
 * Runs the structural validation of a domain and reports the number of
 * violations found (zero means the domain is valid).
 *
 * # Safety
 * `domain` must be a live handle and `n_violations` a valid pointer.
 */
enum MdlodStatus mdlod_domain_validate(const struct MdlodDomain *domain, uintptr_t *n_violations);

/**
 * Releases a domain handle. Null is a no-op.
 *
 * # Safety
 * `domain` must be null or a handle returned by [`mdlod_domain_load`] that
 * has not been freed yet.
 */
void mdlod_domain_free(struct MdlodDomain *domain);

/**
 * Runs the experiment described by a config file and writes the CSV report.
 * `out_csv` overrides the config's output path when non-null; `threads`
 * limits the worker pool (0 = all cores); with `has_seed` set, `seed`
 * overrides the seed of random coefficient fields.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string; `out_csv` must be
 * null or a valid NUL-terminated string.
 */
enum MdlodStatus mdlod_run_experiment(const char *config_path,
                                      const char *out_csv,
                                      uintptr_t threads,
                                      uint64_t seed,
                                      bool has_seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDLOD_H */
