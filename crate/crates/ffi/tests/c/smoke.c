#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "algebroid.h"

#define CHECK(call)                                                              \
    do {                                                                         \
        AlgebroidStatus st_ = (call);                                            \
        if (st_ != ALGEBROID_STATUS_OK) {                                        \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)st_,            \
                    algebroid_last_error() ? algebroid_last_error() : "?");      \
            return 1;                                                            \
        }                                                                        \
    } while (0)

int main(void) {
    AlgebroidSystem *sys = NULL;
    CHECK(algebroid_system_from_scenario("rolling_ball", 1e-3, &sys));

    size_t n, m, k;
    CHECK(algebroid_system_dims(sys, &n, &m, &k));
    if (n != 2 || m != 5 || k != 2) return 2;

    AlgebroidAxiomReport rep;
    CHECK(algebroid_system_check(sys, 0, &rep));
    if (!rep.is_lie || rep.samples_used != 100) return 3;

    AlgebroidTrajectory *traj = NULL;
    CHECK(algebroid_system_simulate(sys, &traj));
    size_t len = algebroid_trajectory_len(traj);
    size_t width = algebroid_trajectory_row_width(traj);
    double *row = malloc(width * sizeof(double));
    CHECK(algebroid_trajectory_row(traj, len - 1, row, width));
    /* planar velocity rotates at rate 2 from (1, 0) */
    double t = row[0];
    double err = fabs(row[3] - cos(2.0 * t)) + fabs(row[4] - sin(2.0 * t));
    free(row);
    algebroid_trajectory_free(traj);

    AlgebroidSystem *bad = NULL;
    AlgebroidStatus st = algebroid_system_from_scenario("nope", 0.0, &bad);
    if (st != ALGEBROID_STATUS_INPUT_ERROR || algebroid_last_error() == NULL) return 4;

    algebroid_system_free(sys);
    printf("ok %zu %.3e\n", len, err);
    return err < 1e-6 ? 0 : 5;
}
