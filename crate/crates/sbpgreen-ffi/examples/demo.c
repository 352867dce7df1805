#include <stdio.h>
#include <stdlib.h>
#include "sbpgreen.h"

int main(void) {
    SbpgSecondOp *op = NULL;
    if (sbpg_second_build("n21", 16, 1.0, &op) != SBPG_STATUS_OK) {
        fprintf(stderr, "build failed: %s\n", sbpg_last_error_message());
        return 1;
    }
    double xl, xr, xc, xt;
    sbpg_second_xi(op, &xl, &xr, &xc, &xt);
    printf("h*xi_T = %.15f\n", xt / 16.0);

    double gamma;
    sbpg_second_gamma(op, &gamma);
    printf("1/gamma = %.9f\n", 1.0 / gamma);

    SbpgSatSecond witness;
    sbpg_second_stable_singular_witness(op, 1.0, 0.0, &witness);
    int singular; SbpgCondition cond;
    sbpg_second_singularity(op, witness, &singular, &cond);
    printf("witness singular=%d condition=%d\n", singular, (int)cond);

    SbpgGreenSecond *green = NULL;
    witness.tau_l = witness.tau_r = 1.01;
    if (sbpg_second_invert(op, witness, &green) != SBPG_STATUS_OK) {
        fprintf(stderr, "invert failed: %s\n", sbpg_last_error_message());
        return 1;
    }
    printf("residual = %.3e\n", sbpg_green_second_residual(green));
    size_t dim = sbpg_green_second_dim(green);
    double *buf = malloc(dim * dim * sizeof(double));
    sbpg_green_second_kinv(green, buf, dim * dim);
    printf("kinv[1][1] = %.12f\n", buf[dim + 1]);
    free(buf);
    sbpg_green_second_free(green);
    sbpg_second_free(op);
    printf("version %s\n", sbpg_version());
    return 0;
}
