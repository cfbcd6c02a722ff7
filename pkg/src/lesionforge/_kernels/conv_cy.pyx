# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 2D convolution kernels (forward + both gradients).

Each kernel packs image patches into a GEMM-ready buffer with plain C
loops, then calls BLAS directly through scipy's cython_blas bindings.
This keeps BLAS throughput on the matrix product while avoiding the
strided-transpose copies a pure-numpy im2col pays on every call.

All functions expect the input already zero-padded and C-contiguous;
the wrapper in lesionforge._kernels handles padding, allocation and
unpadding. Gradient-input buffers must be zero-initialised by the
caller. Returns 0 on success, 1 if a scratch allocation failed.
"""

from libc.stdlib cimport free, malloc

from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused floating:
    float
    double


cdef inline void blas_gemm(char ta, char tb, int m, int n, int k,
                           floating* a, int lda, floating* b, int ldb,
                           floating* c, int ldc) noexcept nogil:
    cdef floating one = 1, zero = 0
    if floating is float:
        sgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &zero, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &zero, c, &ldc)


cdef void pack_patches(floating[:, :, :, ::1] xp, floating* cols,
                       Py_ssize_t Ho, Py_ssize_t Wo,
                       Py_ssize_t kh, Py_ssize_t kw,
                       Py_ssize_t stride) noexcept nogil:
    # cols[(n*Ho+oh)*Wo+ow, ci*kh*kw + i*kw + j] = xp[n, ci, oh*stride+i, ow*stride+j]
    cdef Py_ssize_t N = xp.shape[0], Cin = xp.shape[1]
    cdef Py_ssize_t n, oh, ow, ci, i, j
    cdef floating* dst = cols
    cdef floating* src
    for n in range(N):
        for oh in range(Ho):
            for ow in range(Wo):
                for ci in range(Cin):
                    for i in range(kh):
                        src = &xp[n, ci, oh * stride + i, ow * stride]
                        for j in range(kw):
                            dst[j] = src[j]
                        dst += kw


cdef void pack_grad(floating[:, :, :, ::1] gy, floating* gy2) noexcept nogil:
    # gy2[(n*Ho+oh)*Wo+ow, co] = gy[n, co, oh, ow]
    cdef Py_ssize_t N = gy.shape[0], Cout = gy.shape[1]
    cdef Py_ssize_t Ho = gy.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t HW = Ho * Wo
    cdef Py_ssize_t n, co, oh, ow
    cdef floating* src
    cdef floating* dst
    for n in range(N):
        for co in range(Cout):
            src = &gy[n, co, 0, 0]
            dst = gy2 + n * HW * Cout + co
            for ow in range(HW):
                dst[ow * Cout] = src[ow]


cpdef int conv_forward(floating[:, :, :, ::1] xp,
                       floating[:, :, :, ::1] w,
                       floating[:, :, :, ::1] y,
                       Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = xp.shape[0], Cin = xp.shape[1]
    cdef Py_ssize_t Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = y.shape[2], Wo = y.shape[3]
    cdef Py_ssize_t M = N * Ho * Wo, K = Cin * kh * kw
    cdef Py_ssize_t n, co, oh, ow, m
    cdef floating* cols = <floating*> malloc(M * K * sizeof(floating))
    cdef floating* y2 = <floating*> malloc(M * Cout * sizeof(floating))
    cdef floating* src
    cdef floating* dst
    if cols == NULL or y2 == NULL:
        free(cols)
        free(y2)
        return 1
    pack_patches(xp, cols, Ho, Wo, kh, kw, stride)
    # row-major y2(M,Cout) = cols(M,K) @ w(Cout,K)^T
    blas_gemm(c'T', c'N', <int> Cout, <int> M, <int> K,
              &w[0, 0, 0, 0], <int> K, cols, <int> K, y2, <int> Cout)
    m = 0
    for n in range(N):
        for oh in range(Ho):
            for ow in range(Wo):
                src = y2 + m * Cout
                for co in range(Cout):
                    y[n, co, oh, ow] = src[co]
                m += 1
    free(cols)
    free(y2)
    return 0


cpdef int conv_grad_input(floating[:, :, :, ::1] gy,
                          floating[:, :, :, ::1] w,
                          floating[:, :, :, ::1] gxp,
                          Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = gy.shape[0], Cout = gy.shape[1]
    cdef Py_ssize_t Ho = gy.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t Cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t M = N * Ho * Wo, K = Cin * kh * kw
    cdef Py_ssize_t n, oh, ow, ci, i, j
    cdef floating* gy2 = <floating*> malloc(M * Cout * sizeof(floating))
    cdef floating* gcols = <floating*> malloc(M * K * sizeof(floating))
    cdef floating* src
    cdef floating* dst
    if gy2 == NULL or gcols == NULL:
        free(gy2)
        free(gcols)
        return 1
    pack_grad(gy, gy2)
    # row-major gcols(M,K) = gy2(M,Cout) @ w(Cout,K)
    blas_gemm(c'N', c'N', <int> K, <int> M, <int> Cout,
              &w[0, 0, 0, 0], <int> K, gy2, <int> Cout, gcols, <int> K)
    src = gcols
    for n in range(N):
        for oh in range(Ho):
            for ow in range(Wo):
                for ci in range(Cin):
                    for i in range(kh):
                        dst = &gxp[n, ci, oh * stride + i, ow * stride]
                        for j in range(kw):
                            dst[j] += src[j]
                        src += kw
    free(gy2)
    free(gcols)
    return 0


cpdef int conv_grad_weight(floating[:, :, :, ::1] gy,
                           floating[:, :, :, ::1] xp,
                           floating[:, :, :, ::1] gw,
                           Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = gy.shape[0], Cout = gy.shape[1]
    cdef Py_ssize_t Ho = gy.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t Cin = xp.shape[1], kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t M = N * Ho * Wo, K = Cin * kh * kw
    cdef floating* cols = <floating*> malloc(M * K * sizeof(floating))
    cdef floating* gy2 = <floating*> malloc(M * Cout * sizeof(floating))
    if cols == NULL or gy2 == NULL:
        free(cols)
        free(gy2)
        return 1
    pack_patches(xp, cols, Ho, Wo, kh, kw, stride)
    pack_grad(gy, gy2)
    # row-major gw(Cout,K) = gy2(M,Cout)^T @ cols(M,K)
    blas_gemm(c'N', c'T', <int> K, <int> Cout, <int> M,
              cols, <int> K, gy2, <int> Cout, &gw[0, 0, 0, 0], <int> K)
    free(cols)
    free(gy2)
    return 0
