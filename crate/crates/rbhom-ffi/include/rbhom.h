/* C interface to the certified reduced-basis homogenization toolkit. */

#pragma once

/* Generated with cbindgen:0.26.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit-code convention.
 */
typedef enum RbhomStatus {
  RBHOM_STATUS_OK = 0,
  RBHOM_STATUS_NULL_ARGUMENT = 1,
  RBHOM_STATUS_INVALID_ARGUMENT = 2,
  RBHOM_STATUS_NUMERICAL_FAILURE = 3,
  RBHOM_STATUS_BOUND_VIOLATION = 4,
  RBHOM_STATUS_IO_ERROR = 5,
} RbhomStatus;

/**
 * Certified reduced basis (opaque).
 */
typedef struct RbhomBasis RbhomBasis;

/**
 * Truth engine bound to one periodic mesh (opaque).
 */
typedef struct RbhomSystem RbhomSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the message of the most recent error on this thread into `buf`
 * (truncated, always NUL-terminated). Returns the full message length.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes, or be null (in which
 * case only the length is returned).
 */
uintptr_t rbhom_last_error_message(char *buf, uintptr_t len);

/**
 * Create a truth engine on the periodic mesh with `n_per_side` intervals
 * per side (a positive multiple of four).
 *
 * # Safety
 * `out` must be a valid pointer to a writable handle slot.
 */
enum RbhomStatus rbhom_system_new(uint32_t n_per_side, struct RbhomSystem **out);

/**
 * Release a system handle. Null is a no-op.
 *
 * # Safety
 * `system` must be a handle returned by [`rbhom_system_new`] that has not
 * been freed, or null.
 */
void rbhom_system_free(struct RbhomSystem *system);

/**
 * Number of FE degrees of freedom of the system's mesh.
 *
 * # Safety
 * `system` must be a live handle.
 */
uint32_t rbhom_system_dof_count(const struct RbhomSystem *system);

/**
 * Solve the cell problems at one parameter with the truth engine and write
 * the homogenized tensor (row-major 2x2) into `a_star`.
 *
 * # Safety
 * `system` must be a live handle and `a_star` must point to four writable
 * doubles.
 */
enum RbhomStatus rbhom_truth_tensor(const struct RbhomSystem *system,
                                    double b1,
                                    double c1,
                                    double b2,
                                    double c2,
                                    double theta,
                                    double *a_star);

/**
 * Build a certified reduced basis by the greedy offline stage over a
 * uniformly seeded training sample of `sample_count` parameters in the box
 * (delta, theta0).
 *
 * # Safety
 * `system` must be a live handle and `out` a valid handle slot.
 */
enum RbhomStatus rbhom_basis_build(const struct RbhomSystem *system,
                                   double delta,
                                   double theta0,
                                   uint32_t sample_count,
                                   uint32_t n_max,
                                   double rel_tol,
                                   uint64_t seed,
                                   struct RbhomBasis **out);

/**
 * Release a basis handle. Null is a no-op.
 *
 * # Safety
 * `basis` must be a handle returned by this library that has not been
 * freed, or null.
 */
void rbhom_basis_free(struct RbhomBasis *basis);

/**
 * Number of basis functions.
 *
 * # Safety
 * `basis` must be a live handle.
 */
uint32_t rbhom_basis_size(const struct RbhomBasis *basis);

/**
 * Store the basis container at `path`.
 *
 * # Safety
 * `basis` must be a live handle; `path` a NUL-terminated UTF-8 string.
 */
enum RbhomStatus rbhom_basis_save(const struct RbhomBasis *basis, const char *path);

/**
 * Load a basis container, verifying integrity and mesh compatibility with
 * the given system.
 *
 * # Safety
 * `system` must be a live handle, `path` a NUL-terminated UTF-8 string and
 * `out` a valid handle slot.
 */
enum RbhomStatus rbhom_basis_load(const char *path,
                                  const struct RbhomSystem *system,
                                  struct RbhomBasis **out);

/**
 * Certified online query: homogenized tensor and the 2x2 output error
 * bounds, both row-major. The cost is independent of the FE dimension.
 *
 * # Safety
 * `basis` must be a live handle; `a_star` and `delta_s` must each point to
 * four writable doubles (`delta_s` may be null if bounds are not wanted).
 */
enum RbhomStatus rbhom_online_tensor(const struct RbhomBasis *basis,
                                     double b1,
                                     double c1,
                                     double b2,
                                     double c2,
                                     double theta,
                                     double *a_star,
                                     double *delta_s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus
