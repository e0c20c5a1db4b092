#ifndef DELAY_ERK_H
#define DELAY_ERK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DerkStatus {
  DERK_STATUS_OK = 0,
  DERK_STATUS_NULL_POINTER = 1,
  DERK_STATUS_INVALID_ARGUMENT = 2,
  DERK_STATUS_DELAY_CONTRACT_VIOLATION = 3,
  DERK_STATUS_OUT_OF_COVERAGE = 4,
  DERK_STATUS_STAGE_ITERATION_DIVERGENCE = 5,
  DERK_STATUS_LOCALIZATION_FAILURE = 6,
  DERK_STATUS_CONFIG = 7,
  DERK_STATUS_IO = 8,
  DERK_STATUS_FORMAT = 9,
  DERK_STATUS_BUFFER_TOO_SMALL = 10,
  DERK_STATUS_PANIC = 11,
} DerkStatus;

// Semi-discrete problem.
typedef struct DerkProblem DerkProblem;

// Result of one integration.
typedef struct DerkSolution DerkSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *derk_last_error(void);

// `phi_k(z)`.
//
// # Safety
// `out` must be valid for one `double` write.
enum DerkStatus derk_phi_scalar(uint32_t k, double z, double *out);

// Builds a built-in problem (`example1`, `example2`, `example3`, `decay`,
// `constant-lag`) on `n` interior grid points.
//
// # Safety
// `name` must be a NUL-terminated string and `out` valid for one pointer write.
enum DerkStatus derk_problem_new(const char *name, size_t n, struct DerkProblem **out);

// # Safety
// `problem` must come from [`derk_problem_new`] and not be used afterwards. NULL is ignored.
void derk_problem_free(struct DerkProblem *problem);

// Grid size of `problem`, or 0 for NULL.
//
// # Safety
// `problem` must be NULL or a live handle.
size_t derk_problem_n(const struct DerkProblem *problem);

// Final time of `problem`, or NaN for NULL.
//
// # Safety
// `problem` must be NULL or a live handle.
double derk_problem_horizon(const struct DerkProblem *problem);

// Integrates `problem` with `method` (`euler`, `erk2`, `col3`, `gl4`) and
// constant default step `h`, inserting breakpoints when `track` is set.
//
// # Safety
// `problem` must be a live handle, `method` a NUL-terminated string and
// `out` valid for one pointer write.
enum DerkStatus derk_solve(const struct DerkProblem *problem,
                           const char *method,
                           double h,
                           bool track,
                           struct DerkSolution **out);

// # Safety
// `solution` must come from [`derk_solve`] and not be used afterwards. NULL is ignored.
void derk_solution_free(struct DerkSolution *solution);

// Number of accepted steps, or 0 for NULL.
//
// # Safety
// `solution` must be NULL or a live handle.
size_t derk_solution_steps(const struct DerkSolution *solution);

// Number of steps whose delayed argument fell inside the step.
//
// # Safety
// `solution` must be NULL or a live handle.
size_t derk_solution_overlaps(const struct DerkSolution *solution);

// Copies the state at the final time into `buf`.
//
// # Safety
// `solution` must be a live handle and `buf` valid for `len` writes.
enum DerkStatus derk_solution_final_state(const struct DerkSolution *solution,
                                          double *buf,
                                          size_t len);

// Evaluates the continuous extension at `t` into `buf`.
//
// # Safety
// Both handles must be live, `solution` must come from `problem`, and
// `buf` must be valid for `len` writes.
enum DerkStatus derk_solution_evaluate(const struct DerkSolution *solution,
                                       const struct DerkProblem *problem,
                                       double t,
                                       double *buf,
                                       size_t len);

// Discrete L2 distance between the final state and the exact solution.
//
// # Safety
// Both handles must be live and `out` valid for one `double` write.
enum DerkStatus derk_solution_error(const struct DerkSolution *solution,
                                    const struct DerkProblem *problem,
                                    double *out);

// Number of detected breakpoints, excluding the initial point.
//
// # Safety
// `solution` must be NULL or a live handle.
size_t derk_solution_breakpoint_count(const struct DerkSolution *solution);

// Copies the detected breakpoint times into `buf`.
//
// # Safety
// `solution` must be a live handle and `buf` valid for `len` writes.
enum DerkStatus derk_solution_breakpoints(const struct DerkSolution *solution,
                                          double *buf,
                                          size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELAY_ERK_H */
