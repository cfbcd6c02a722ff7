"""Pure-numpy convolution backend (im2col / col2im).

Fallback used when the compiled extension is unavailable; also handy as a
second implementation for benchmarking. Accepts float32 or float64.
"""

import numpy as np


def _out_hw(H, W, kh, kw, stride, pad):
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    return Ho, Wo


def _im2col(x, kh, kw, stride, pad):
    """Return (N*Ho*Wo, Cin*kh*kw) patch matrix."""
    N, C, H, W = x.shape
    Ho, Wo = _out_hw(H, W, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(N, C, kh, kw, Ho, Wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride), writeable=False)
    return np.ascontiguousarray(windows.transpose(0, 4, 5, 1, 2, 3)).reshape(N * Ho * Wo, C * kh * kw)


def conv_forward(x, w, stride, pad):
    N, C, H, W = x.shape
    Cout, _, kh, kw = w.shape
    Ho, Wo = _out_hw(H, W, kh, kw, stride, pad)
    cols = _im2col(x, kh, kw, stride, pad)
    y = cols @ w.reshape(Cout, -1).T
    return np.ascontiguousarray(y.reshape(N, Ho, Wo, Cout).transpose(0, 3, 1, 2))


def conv_grad_input(gy, w, x_shape, stride, pad):
    N, C, H, W = x_shape
    Cout, _, kh, kw = w.shape
    Ho, Wo = gy.shape[2], gy.shape[3]
    gy2 = gy.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, Cout)
    gcols = gy2 @ w.reshape(Cout, -1)
    gcols = gcols.reshape(N, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    Hp, Wp = H + 2 * pad, W + 2 * pad
    gxp = np.zeros((N, C, Hp, Wp), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W])
    return gxp


def conv_grad_weight(gy, x, w_shape, stride, pad):
    Cout, Cin, kh, kw = w_shape
    N = x.shape[0]
    Ho, Wo = gy.shape[2], gy.shape[3]
    cols = _im2col(x, kh, kw, stride, pad)
    gy2 = gy.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, Cout)
    return (gy2.T @ cols).reshape(Cout, Cin, kh, kw)
