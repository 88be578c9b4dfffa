/* End-to-end exercise of the C ABI. Build and run from the repo root:
 *
 *   cargo build -p equilex-ffi
 *   cc crates/equilex-ffi/examples/smoke.c -Icrates/equilex-ffi/include \
 *      -Ltarget/debug -lequilex_ffi -lm -o smoke
 *   LD_LIBRARY_PATH=target/debug ./smoke
 */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "equilex.h"

int main(void) {
    const char *config =
        "seed = 11\n\n"
        "[space]\nkind = \"lp\"\np = 2.0\ndim = 64\n\n"
        "[sequence]\nkind = \"unit_basis\"\n\n"
        "[builder]\nn_points = 4\n";

    EquilexBuild *build = NULL;
    EquilexStatus status = equilex_build(config, &build);
    if (status != EQUILEX_STATUS_OK || build == NULL) {
        fprintf(stderr, "build failed: %s: %s\n", equilex_status_name(status),
                equilex_last_error());
        return 1;
    }

    size_t n = equilex_build_n_points(build);
    size_t dim = equilex_build_dim(build);
    double lambda = equilex_build_lambda(build);
    if (n != 4 || dim != 64) return 2;
    if (fabs(lambda - sqrt(2.0)) > 1e-9) return 3;

    double buf[64];
    if (equilex_build_point(build, 0, buf, 64) != EQUILEX_STATUS_OK) return 4;
    if (buf[0] != 1.0) return 5;
    if (equilex_build_point(build, 0, buf, 63) != EQUILEX_STATUS_DIMENSION_MISMATCH)
        return 6;

    char *report = equilex_build_report_json(build);
    if (report == NULL || strstr(report, "\"status\":\"ok\"") == NULL) return 7;

    double defect = -1.0;
    if (equilex_verify(report, 1e-8, &defect) != EQUILEX_STATUS_OK) return 8;
    if (!(defect >= 0.0 && defect <= 1e-8)) return 9;

    equilex_string_free(report);
    equilex_build_free(build);
    equilex_build_free(NULL);
    equilex_string_free(NULL);

    printf("c-abi smoke ok: n=%zu dim=%zu lambda=%.12f defect=%.3e\n", n, dim,
           lambda, defect);
    return 0;
}
