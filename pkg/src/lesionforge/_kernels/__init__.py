"""Convolution kernels with backend selection at import time.

The compiled Cython extension is preferred when present; otherwise the
numpy im2col backend is used. ``LESIONFORGE_KERNELS=numpy|cython`` forces
a backend (the benchmark uses this to compare both).
"""

import importlib
import os

import numpy as np

from lesionforge._kernels import numpy_backend

_forced = os.environ.get("LESIONFORGE_KERNELS", "").strip().lower()

conv_cy = None
if _forced != "numpy":
    try:
        conv_cy = importlib.import_module("lesionforge._kernels.conv_cy")
    except ImportError:
        conv_cy = None
        if _forced == "cython":
            raise ImportError(
                "LESIONFORGE_KERNELS=cython but the compiled extension is "
                "not available; rebuild with `pip install -e . --no-build-isolation`")

BACKEND = "cython" if conv_cy is not None else "numpy"


def _check(x, w, stride, pad):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input/weights, got {x.shape} and {w.shape}")
    if x.dtype != w.dtype:
        raise ValueError(f"dtype mismatch: input {x.dtype}, weights {w.dtype}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]} channels, "
                         f"weights expect {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    if kh > x.shape[2] + 2 * pad or kw > x.shape[3] + 2 * pad:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input "
                         f"{x.shape[2] + 2 * pad}x{x.shape[3] + 2 * pad}")
    Ho = (x.shape[2] + 2 * pad - kh) // stride + 1
    Wo = (x.shape[3] + 2 * pad - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError("convolution produces an empty output")
    return Ho, Wo


def _pad(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv_forward(x, w, stride=1, pad=0):
    Ho, Wo = _check(x, w, stride, pad)
    if conv_cy is None:
        return numpy_backend.conv_forward(x, w, stride, pad)
    xp = _pad(x, pad)
    y = np.empty((x.shape[0], w.shape[0], Ho, Wo), dtype=x.dtype)
    if conv_cy.conv_forward(xp, np.ascontiguousarray(w), y, stride):
        raise MemoryError("conv_forward scratch allocation failed")
    return y


def conv_grad_input(gy, w, x_shape, stride=1, pad=0):
    if conv_cy is None:
        return numpy_backend.conv_grad_input(gy, w, x_shape, stride, pad)
    N, C, H, W = x_shape
    gxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=gy.dtype)
    if conv_cy.conv_grad_input(np.ascontiguousarray(gy), np.ascontiguousarray(w), gxp, stride):
        raise MemoryError("conv_grad_input scratch allocation failed")
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W])
    return gxp


def conv_grad_weight(gy, x, w_shape, stride=1, pad=0):
    if conv_cy is None:
        return numpy_backend.conv_grad_weight(gy, x, w_shape, stride, pad)
    gw = np.empty(w_shape, dtype=gy.dtype)
    if conv_cy.conv_grad_weight(np.ascontiguousarray(gy), _pad(x, pad), gw, stride):
        raise MemoryError("conv_grad_weight scratch allocation failed")
    return gw
