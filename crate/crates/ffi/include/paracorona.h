#ifndef PARACORONA_H
#define PARACORONA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by fallible calls.
 */
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  PC_STATUS_INPUT = 2,
  PC_STATUS_PARSE = 3,
  PC_STATUS_PRECONDITION = 4,
  PC_STATUS_RESOLUTION = 5,
  PC_STATUS_DEGENERATE_FIT = 6,
  PC_STATUS_CONSTRUCTION = 7,
  PC_STATUS_REGIME_INTEGRITY = 8,
  PC_STATUS_IO = 9,
  PC_STATUS_PANIC = 10,
} PcStatus;

typedef struct PcBetas PcBetas;

typedef struct PcCorona PcCorona;

typedef struct PcGraph PcGraph;

typedef struct PcSurface PcSurface;

typedef struct PcTree PcTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pc_last_error_message(char *buf, size_t len);

/**
 * Parabolic distance |x - y| + |t - s|^{1/2} in R^n x R.
 *
 * # Safety
 * `x` and `y` must point to `n` readable doubles.
 */
double pc_dist_p(const double *x, double t, const double *y, double s, size_t n);

/**
 * Surface from `count` points: `xs` holds `count * n` coordinates, point-major.
 *
 * # Safety
 * Arrays must hold the stated number of doubles; `out` must be writable.
 */
enum PcStatus pc_surface_new(size_t n,
                             double spacing,
                             const double *xs,
                             const double *ts,
                             const double *ws,
                             size_t count,
                             struct PcSurface **out);

/**
 * Synthetic surface of the named kind (`t_plane`, `ridge`, ...) with the
 * kind's default parameters; a finite `amplitude` overrides the default.
 *
 * # Safety
 * `kind` must be a NUL-terminated string; `out` must be writable.
 */
enum PcStatus pc_surface_synthesize(const char *kind,
                                    size_t n,
                                    double spacing,
                                    double extent,
                                    double amplitude,
                                    struct PcSurface **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PcStatus pc_surface_load(const char *path, struct PcSurface **out);

/**
 * # Safety
 * `s` must be a live surface handle and `path` a NUL-terminated string.
 */
enum PcStatus pc_surface_save(const struct PcSurface *s, const char *path);

/**
 * Number of points, 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live surface handle.
 */
size_t pc_surface_len(const struct PcSurface *s);

/**
 * Number of sampling warnings recorded when the surface was loaded.
 *
 * # Safety
 * `s` must be null or a live surface handle.
 */
size_t pc_surface_warning_count(const struct PcSurface *s);

/**
 * # Safety
 * `s` must be null or a handle not yet freed.
 */
void pc_surface_free(struct PcSurface *s);

/**
 * Dyadic cube tree with default options; `max_depth` < 0 means unlimited.
 *
 * # Safety
 * `s` must be a live surface handle; `out` must be writable.
 */
enum PcStatus pc_tree_build(const struct PcSurface *s, int32_t max_depth, struct PcTree **out);

/**
 * # Safety
 * `t` must be null or a live tree handle.
 */
size_t pc_tree_len(const struct PcTree *t);

/**
 * Number of generations, 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live tree handle.
 */
size_t pc_tree_depth(const struct PcTree *t);

/**
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void pc_tree_free(struct PcTree *t);

/**
 * Beta numbers of every cube with window constant `k`.
 *
 * # Safety
 * Handles must be live and built from the same surface; `out` must be writable.
 */
enum PcStatus pc_betas_compute(const struct PcSurface *s,
                               const struct PcTree *t,
                               double k,
                               bool bilateral,
                               struct PcBetas **out);

/**
 * beta_inf, bilateral beta (NaN when not computed) and the resolved flag of one cube.
 *
 * # Safety
 * `b` must be a live handle; output pointers must be null or writable.
 */
enum PcStatus pc_betas_get(const struct PcBetas *b,
                           uint32_t cube,
                           double *beta_inf,
                           double *bbeta,
                           bool *resolved);

/**
 * # Safety
 * `b` must be null or a handle not yet freed.
 */
void pc_betas_free(struct PcBetas *b);

/**
 * Corona decomposition with the given thresholds; `kappa` 2 and the
 * window constant of the betas.
 *
 * # Safety
 * Handles must be live and consistent; `out` must be writable.
 */
enum PcStatus pc_corona_build(const struct PcTree *t,
                              const struct PcBetas *b,
                              double epsilon,
                              double delta,
                              bool bilateral,
                              struct PcCorona **out);

/**
 * # Safety
 * `c` must be null or a live corona handle.
 */
size_t pc_corona_regime_count(const struct PcCorona *c);

/**
 * # Safety
 * `c` must be null or a live corona handle.
 */
size_t pc_corona_bad_count(const struct PcCorona *c);

/**
 * Regime id of a cube, -1 for bad cubes and out-of-range ids.
 *
 * # Safety
 * `c` must be null or a live corona handle.
 */
int64_t pc_corona_assignment(const struct PcCorona *c, uint32_t cube);

/**
 * # Safety
 * `c` must be null or a handle not yet freed.
 */
void pc_corona_free(struct PcCorona *c);

/**
 * Lip(1,1/2) graph of one regime.
 *
 * # Safety
 * Handles must be live and consistent; `out` must be writable.
 */
enum PcStatus pc_graph_assemble(const struct PcSurface *s,
                                const struct PcTree *t,
                                const struct PcCorona *c,
                                uint32_t regime,
                                struct PcGraph **out);

/**
 * Number of frame coordinates y of the graph (n - 1).
 *
 * # Safety
 * `g` must be null or a live graph handle.
 */
size_t pc_graph_dim(const struct PcGraph *g);

/**
 * psi at frame coordinates (y, s); `y` holds `pc_graph_dim` doubles.
 *
 * # Safety
 * `g` must be a live handle, `y` readable for `m` doubles and `value` writable.
 */
enum PcStatus pc_graph_psi(const struct PcGraph *g,
                           const double *y,
                           size_t m,
                           double s,
                           double *value);

/**
 * # Safety
 * `g` must be null or a handle not yet freed.
 */
void pc_graph_free(struct PcGraph *g);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARACORONA_H */
