#ifndef VAETRUSS_H
#define VAETRUSS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Which design variables an optimization may change.
typedef enum VtMode {
  VT_MODE_SIMULTANEOUS = 0,
  // Areas fixed at `a_init`.
  VT_MODE_MATERIAL_ONLY = 1,
  // Material fixed to a named database entry.
  VT_MODE_AREA_ONLY = 2,
} VtMode;

// Result of every fallible call.
typedef enum VtStatus {
  VT_STATUS_OK = 0,
  VT_STATUS_NULL_POINTER = 1,
  VT_STATUS_INVALID_ARGUMENT = 2,
  VT_STATUS_IO = 3,
  VT_STATUS_INFEASIBLE = 4,
  VT_STATUS_NUMERIC = 5,
  VT_STATUS_BUFFER_TOO_SMALL = 6,
  VT_STATUS_PANIC = 7,
} VtStatus;

// Material database handle.
typedef struct VtMaterialDb VtMaterialDb;

// Trained VAE handle.
typedef struct VtModel VtModel;

// Optimization report handle.
typedef struct VtReport VtReport;

// Truss handle.
typedef struct VtTruss VtTruss;

// Problem settings. A limit that is NaN is not applied.
typedef struct VtProblem {
  double cost_limit;
  double mass_limit;
  double safety_factor;
  double a_min;
  double a_max;
  double a_init;
  uint32_t p;
  double t0;
  double mu;
  double lr;
  size_t max_iters;
  double eps_star;
  double tol;
  size_t hidden;
} VtProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *vt_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *vt_version(void);

// Default problem settings with no limits set.
struct VtProblem vt_problem_default(void);

// The bundled nine-material database.
//
// # Safety
// `out` must be a valid pointer.
enum VtStatus vt_db_table1(struct VtMaterialDb **out);

// Loads a material CSV.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum VtStatus vt_db_load(const char *path, struct VtMaterialDb **out);

// Number of materials, or 0 for a null handle.
//
// # Safety
// `db` must be null or a live handle.
size_t vt_db_len(const struct VtMaterialDb *db);

// # Safety
// `db` must be null or a handle not yet freed.
void vt_db_free(struct VtMaterialDb *db);

// Trains a VAE on `db`.
//
// # Safety
// `db` must be a live handle and `out` a valid pointer.
enum VtStatus vt_model_train(const struct VtMaterialDb *db,
                             size_t epochs,
                             double lr,
                             double beta,
                             uint64_t seed,
                             struct VtModel **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum VtStatus vt_model_load(const char *path, struct VtModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum VtStatus vt_model_save(const struct VtModel *model, const char *path);

// Decodes latent point `(z0, z1)` into E, cost, density and yield strength.
//
// # Safety
// `model` must be a live handle and `out` must hold 4 doubles.
enum VtStatus vt_model_decode(const struct VtModel *model, double z0, double z1, double *out);

// Latent embedding of database material `index`.
//
// # Safety
// `model` must be a live handle and `out` must hold 2 doubles.
enum VtStatus vt_model_embedding(const struct VtModel *model, size_t index, double *out);

// # Safety
// `model` must be null or a handle not yet freed.
void vt_model_free(struct VtModel *model);

// A bundled truss: `midcant6` or `tower47`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum VtStatus vt_truss_bundled(const char *name, struct VtTruss **out);

// Loads a truss TOML file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum VtStatus vt_truss_load(const char *path, struct VtTruss **out);

// Number of members, or 0 for a null handle.
//
// # Safety
// `truss` must be null or a live handle.
size_t vt_truss_num_members(const struct VtTruss *truss);

// Compliance of the truss with member areas `areas[0..n]` and modulus `e`.
//
// # Safety
// `truss` must be a live handle, `areas` must hold `n` doubles and
// `compliance` must be a valid pointer.
enum VtStatus vt_truss_compliance(const struct VtTruss *truss,
                                  const double *areas,
                                  size_t n,
                                  double e,
                                  double *compliance);

// # Safety
// `truss` must be null or a handle not yet freed.
void vt_truss_free(struct VtTruss *truss);

// Runs the optimize, snap and re-optimize pipeline.
//
// `model` may be null in area-only mode; `material` names the fixed
// material there and is ignored otherwise. An infeasible final design still
// produces a report; check [`vt_report_feasible`].
//
// # Safety
// Handles must be live, `problem` valid, `material` null or NUL-terminated,
// and `out` a valid pointer.
enum VtStatus vt_optimize(const struct VtTruss *truss,
                          const struct VtModel *model,
                          const struct VtMaterialDb *db,
                          const struct VtProblem *problem,
                          enum VtMode mode,
                          const char *material,
                          uint64_t seed,
                          struct VtReport **out);

// Whether the final design meets every constraint within tolerance.
//
// # Safety
// `report` must be null or a live handle.
bool vt_report_feasible(const struct VtReport *report);

// Compliance of the final design, NaN for a null handle.
//
// # Safety
// `report` must be null or a live handle.
double vt_report_j_star(const struct VtReport *report);

// Compliance before snapping, NaN for a null handle.
//
// # Safety
// `report` must be null or a live handle.
double vt_report_j_raw(const struct VtReport *report);

// Name of the selected material, owned by the report.
//
// # Safety
// `report` must be null or a live handle.
const char *vt_report_material(const struct VtReport *report);

// Copies the final member areas into `buf[0..len]`.
//
// # Safety
// `report` must be a live handle and `buf` must hold `len` doubles.
enum VtStatus vt_report_areas(const struct VtReport *report, double *buf, size_t len);

// Copies the latent optimum into `out[0..2]`; fails for area-only reports.
//
// # Safety
// `report` must be a live handle and `out` must hold 2 doubles.
enum VtStatus vt_report_z_star(const struct VtReport *report, double *out);

// The full report as JSON. Release with [`vt_string_free`].
//
// # Safety
// `report` must be null or a live handle.
char *vt_report_to_json(const struct VtReport *report);

// # Safety
// `report` must be null or a handle not yet freed.
void vt_report_free(struct VtReport *report);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void vt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VAETRUSS_H */
