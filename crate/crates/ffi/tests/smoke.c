#include <math.h>
#include <stdio.h>
#include <string.h>

#include "incomevis.h"

static int fail(const char *what) {
    const char *msg = ivz_last_error();
    fprintf(stderr, "%s: %s\n", what, msg ? msg : "(no message)");
    return 1;
}

int main(void) {
    const double x[] = {1.0, 2.0, 3.0};
    double g = 0.0;
    if (ivz_gini(x, NULL, 3, IVZ_GINI_METHOD_SORTED, false, &g) != IVZ_STATUS_OK) {
        return fail("gini");
    }
    if (fabs(g - 2.0 / 9.0) > 1e-12) {
        fprintf(stderr, "gini %.17g\n", g);
        return 1;
    }

    const double zeros[] = {0.0, 0.0};
    if (ivz_gini(zeros, NULL, 2, IVZ_GINI_METHOD_NAIVE, false, &g) != IVZ_STATUS_NUMERIC_ERROR) {
        return fail("zero mean accepted");
    }
    if (ivz_last_error() == NULL) {
        return fail("no message for zero mean");
    }

    IvzSegments *seg = NULL;
    double incomes[100];
    for (int i = 0; i < 100; i++) {
        incomes[i] = i + 1;
    }
    if (ivz_segment_new(incomes, NULL, 100, IVZ_SCHEME_PERCENTILE, 0, 0, &seg) != IVZ_STATUS_OK) {
        return fail("segment");
    }
    IvzBucket b;
    if (ivz_segment_get(seg, 45, &b) != IVZ_STATUS_OK || b.k != 50 || b.height != 50.0) {
        return fail("bucket 50");
    }
    ivz_segment_free(seg);

    printf("incomevis %s ok\n", ivz_version());
    return 0;
}
