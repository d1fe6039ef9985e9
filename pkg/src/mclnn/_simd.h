/* Inner primitives for _ckernels.pyx. The reduction order of dot() is
   fixed by the compiled vector width, so results are reproducible for a
   given build. */
#ifndef MCLNN_SIMD_H
#define MCLNN_SIMD_H

#include <stddef.h>

static inline double mclnn_dot(const double *restrict a, const double *restrict b, ptrdiff_t n)
{
    double s = 0.0;
#pragma omp simd reduction(+:s)
    for (ptrdiff_t i = 0; i < n; i++)
        s += a[i] * b[i];
    return s;
}

/* Four dot products against one shared vector: out[k] = x_k . w, where
   x_k = x + k * ldx. */
static inline void mclnn_dot4(const double *restrict x, ptrdiff_t ldx, const double *restrict w,
                              ptrdiff_t n, double *restrict out)
{
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    const double *x0 = x, *x1 = x + ldx, *x2 = x + 2 * ldx, *x3 = x + 3 * ldx;
#pragma omp simd reduction(+:s0, s1, s2, s3)
    for (ptrdiff_t i = 0; i < n; i++) {
        double wi = w[i];
        s0 += x0[i] * wi;
        s1 += x1[i] * wi;
        s2 += x2[i] * wi;
        s3 += x3[i] * wi;
    }
    out[0] = s0;
    out[1] = s1;
    out[2] = s2;
    out[3] = s3;
}

static inline void mclnn_axpy(double alpha, const double *restrict x, double *restrict y, ptrdiff_t n)
{
#pragma omp simd
    for (ptrdiff_t i = 0; i < n; i++)
        y[i] += alpha * x[i];
}

#endif
