/* Small dense MLP forward pass used by the rollout kernel.
 * Weights are stored transposed (in, out) so every layer is a sequence of
 * contiguous axpy updates; zero inputs (inactive ReLU units) are skipped.
 * Networks with hidden widths up to MLP_WIDE are zero padded to fixed
 * widths; with AVX-512 the padded layers keep their accumulators in
 * registers, otherwise the padding only removes loop remainders. */
#ifndef MPPI_PID_MLP_H
#define MPPI_PID_MLP_H

#define MLP_WIDE 56
#define MLP_NARROW 8

static inline void mlp_axpy(double *restrict y, const double *restrict row, double a, int n)
{
    for (int j = 0; j < n; ++j)
        y[j] += row[j] * a;
}

static inline void mlp_layer(const double *restrict in, int n_in, const double *restrict WT,
                             const double *restrict b, int n_out, double *restrict out, int relu)
{
    for (int j = 0; j < n_out; ++j) out[j] = b[j];
    for (int k = 0; k < n_in; ++k)
        if (in[k] != 0.0) mlp_axpy(out, WT + (long)k * n_out, in[k], n_out);
    if (relu)
        for (int j = 0; j < n_out; ++j) out[j] = out[j] > 0.0 ? out[j] : 0.0;
}

#if defined(__AVX512F__)
#include <immintrin.h>

/* Seven 8-lane accumulators held in registers for the whole input loop. */
static inline void mlp_layer_wide(const double *restrict in, int n_in, const double *restrict WT,
                                  const double *restrict b, double *restrict out, int relu)
{
    __m512d a0 = _mm512_loadu_pd(b), a1 = _mm512_loadu_pd(b + 8), a2 = _mm512_loadu_pd(b + 16),
            a3 = _mm512_loadu_pd(b + 24), a4 = _mm512_loadu_pd(b + 32), a5 = _mm512_loadu_pd(b + 40),
            a6 = _mm512_loadu_pd(b + 48);
    for (int k = 0; k < n_in; ++k) {
        const double v = in[k];
        if (v == 0.0) continue;
        const __m512d s = _mm512_set1_pd(v);
        const double *restrict w = WT + (long)k * MLP_WIDE;
        a0 = _mm512_fmadd_pd(_mm512_loadu_pd(w), s, a0);
        a1 = _mm512_fmadd_pd(_mm512_loadu_pd(w + 8), s, a1);
        a2 = _mm512_fmadd_pd(_mm512_loadu_pd(w + 16), s, a2);
        a3 = _mm512_fmadd_pd(_mm512_loadu_pd(w + 24), s, a3);
        a4 = _mm512_fmadd_pd(_mm512_loadu_pd(w + 32), s, a4);
        a5 = _mm512_fmadd_pd(_mm512_loadu_pd(w + 40), s, a5);
        a6 = _mm512_fmadd_pd(_mm512_loadu_pd(w + 48), s, a6);
    }
    if (relu) {
        const __m512d z = _mm512_setzero_pd();
        a0 = _mm512_max_pd(a0, z); a1 = _mm512_max_pd(a1, z); a2 = _mm512_max_pd(a2, z);
        a3 = _mm512_max_pd(a3, z); a4 = _mm512_max_pd(a4, z); a5 = _mm512_max_pd(a5, z);
        a6 = _mm512_max_pd(a6, z);
    }
    _mm512_storeu_pd(out, a0); _mm512_storeu_pd(out + 8, a1); _mm512_storeu_pd(out + 16, a2);
    _mm512_storeu_pd(out + 24, a3); _mm512_storeu_pd(out + 32, a4); _mm512_storeu_pd(out + 40, a5);
    _mm512_storeu_pd(out + 48, a6);
}

static inline void mlp_layer_narrow(const double *restrict in, int n_in, const double *restrict WT,
                                    const double *restrict b, double *restrict out)
{
    __m512d a = _mm512_loadu_pd(b);
    for (int k = 0; k < n_in; ++k) {
        const double v = in[k];
        if (v == 0.0) continue;
        a = _mm512_fmadd_pd(_mm512_loadu_pd(WT + (long)k * MLP_NARROW), _mm512_set1_pd(v), a);
    }
    _mm512_storeu_pd(out, a);
}
#else
static inline void mlp_layer_wide(const double *restrict in, int n_in, const double *restrict WT,
                                  const double *restrict b, double *restrict out, int relu)
{
    mlp_layer(in, n_in, WT, b, MLP_WIDE, out, relu);
}

static inline void mlp_layer_narrow(const double *restrict in, int n_in, const double *restrict WT,
                                    const double *restrict b, double *restrict out)
{
    mlp_layer(in, n_in, WT, b, MLP_NARROW, out, 0);
}
#endif

/* wide != 0: weights/biases are padded to (n_in, MLP_WIDE) for the hidden
 * layers and (n_in, MLP_NARROW) for the output layer. */
static inline void mlp_forward3(const double *restrict z, int n_in,
                                const double *restrict W0T, const double *restrict b0, int H1,
                                const double *restrict W1T, const double *restrict b1, int H2,
                                const double *restrict W2T, const double *restrict b2, int NO,
                                double *restrict h1, double *restrict h2, double *restrict out, int wide)
{
    if (wide) {
        mlp_layer_wide(z, n_in, W0T, b0, h1, 1);
        mlp_layer_wide(h1, H1, W1T, b1, h2, 1);
        mlp_layer_narrow(h2, H2, W2T, b2, out);
    } else {
        mlp_layer(z, n_in, W0T, b0, H1, h1, 1);
        mlp_layer(h1, H1, W1T, b1, H2, h2, 1);
        mlp_layer(h2, H2, W2T, b2, NO, out, 0);
    }
}

#endif
