"""Slow reference implementations used as independent oracles in tests.

Everything here is written as directly as possible from the definition of
each quantity (explicit loops, no vectorization tricks) so a bug in the
library cannot hide in a shared code path.
"""

import numpy as np


def naive_conv2d(x, w, bias=None, stride=1, pad=0):
    """Cross-correlation by definition, all loops explicit, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    N, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    if pad:
        xp = np.zeros((N, Cin, H + 2 * pad, W + 2 * pad))
        xp[:, :, pad:pad + H, pad:pad + W] = x
    else:
        xp = x
    Ho = (xp.shape[2] - kh) // stride + 1
    Wo = (xp.shape[3] - kw) // stride + 1
    y = np.zeros((N, Cout, Ho, Wo))
    for n in range(N):
        for co in range(Cout):
            for oh in range(Ho):
                for ow in range(Wo):
                    acc = 0.0
                    for ci in range(Cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, ci, oh * stride + i, ow * stride + j] * w[co, ci, i, j]
                    y[n, co, oh, ow] = acc
    if bias is not None:
        y += np.asarray(bias, dtype=np.float64).reshape(1, -1, 1, 1)
    return y


def numeric_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued f at x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def grad_mismatch(analytic, numeric):
    """Worst elementwise |a-n| / max(1, |a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))
