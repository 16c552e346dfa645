/* Area-only sizing of the bundled cantilever through the C API. */
#include <math.h>
#include <stdio.h>

#include "vaetruss.h"

#define CHECK(call)                                                   \
  do {                                                                \
    VtStatus s_ = (call);                                             \
    if (s_ != VT_STATUS_OK) {                                         \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,               \
              vt_last_error_message());                               \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  VtMaterialDb *db = NULL;
  VtTruss *truss = NULL;
  VtReport *report = NULL;
  CHECK(vt_db_table1(&db));
  CHECK(vt_truss_bundled("midcant6", &truss));

  VtProblem problem = vt_problem_default();
  problem.mass_limit = 40.0;
  problem.max_iters = 300;
  CHECK(vt_optimize(truss, NULL, db, &problem, VT_MODE_AREA_ONLY, "AISI 304", 7,
                    &report));

  double areas[6];
  CHECK(vt_report_areas(report, areas, 6));
  double j = 0.0;
  CHECK(vt_truss_compliance(truss, areas, 6, 1.9e11, &j));
  printf("%s %zu %.6f %.6f %d\n", vt_report_material(report), vt_db_len(db),
         vt_report_j_star(report), j, (int)vt_report_feasible(report));

  int rc = fabs(j - vt_report_j_star(report)) <= 1e-9 * j ? 0 : 3;
  VtTruss *missing = NULL;
  if (vt_truss_bundled("nope", &missing) != VT_STATUS_INVALID_ARGUMENT) rc = 2;
  vt_report_free(report);
  vt_truss_free(truss);
  vt_db_free(db);
  return rc;
}
