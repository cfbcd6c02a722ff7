"""Compare the compiled convolution backend against the numpy fallback.

Runs forward, input-gradient and weight-gradient kernels over the shapes
that show up in desk-scale training and prints per-call times plus the
speed ratio. Usage:

    python benchmarks/bench_kernels.py [--reps N]
"""

import argparse
import time

import numpy as np

from lesionforge._kernels import numpy_backend as nb

try:
    from lesionforge._kernels import conv_cy
except ImportError:
    conv_cy = None


def _pad(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def cy_forward(x, w, stride, pad):
    xp = _pad(x, pad)
    Ho = (xp.shape[2] - w.shape[2]) // stride + 1
    Wo = (xp.shape[3] - w.shape[3]) // stride + 1
    y = np.empty((x.shape[0], w.shape[0], Ho, Wo), dtype=x.dtype)
    conv_cy.conv_forward(xp, w, y, stride)
    return y


def cy_grad_input(gy, w, x_shape, stride, pad):
    N, C, H, W = x_shape
    gxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=gy.dtype)
    conv_cy.conv_grad_input(gy, w, gxp, stride)
    return gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp


def cy_grad_weight(gy, x, w_shape, stride, pad):
    gw = np.empty(w_shape, dtype=gy.dtype)
    conv_cy.conv_grad_weight(gy, _pad(x, pad), gw, stride)
    return gw


def timeit(f, *args, reps=50):
    f(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        f(*args)
    return (time.perf_counter() - t0) / reps * 1e3


CASES = [
    # (x shape, w shape, stride, pad): generator/discriminator blocks at 4..32 px
    ((1, 16, 32, 32), (16, 16, 3, 3), 1, 1),
    ((8, 16, 16, 16), (16, 16, 3, 3), 1, 1),
    ((16, 32, 8, 8), (32, 32, 3, 3), 1, 1),
    ((8, 64, 4, 4), (64, 64, 3, 3), 1, 1),
    ((8, 128, 4, 4), (128, 128, 3, 3), 1, 1),
    ((8, 3, 16, 16), (32, 3, 3, 3), 2, 1),
    ((8, 32, 16, 16), (3, 32, 1, 1), 1, 0),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=50)
    args = ap.parse_args()

    if conv_cy is None:
        print("compiled backend unavailable; rebuild with "
              "`pip install -e . --no-build-isolation` to compare")

    rng = np.random.default_rng(0)
    hdr = f"{'case':<42} {'kernel':<4} {'cython ms':>10} {'numpy ms':>10} {'np/cy':>7}"
    print(hdr)
    print("-" * len(hdr))
    for xs, ws, stride, pad in CASES:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        y = nb.conv_forward(x, w, stride, pad)
        gy = rng.standard_normal(y.shape).astype(np.float32)
        label = f"x{xs} w{ws} s{stride}p{pad}"
        rows = [
            ("fwd",
             (lambda: cy_forward(x, w, stride, pad)) if conv_cy else None,
             lambda: nb.conv_forward(x, w, stride, pad)),
            ("gx",
             (lambda: cy_grad_input(gy, w, x.shape, stride, pad)) if conv_cy else None,
             lambda: nb.conv_grad_input(gy, w, x.shape, stride, pad)),
            ("gw",
             (lambda: cy_grad_weight(gy, x, ws, stride, pad)) if conv_cy else None,
             lambda: nb.conv_grad_weight(gy, x, ws, stride, pad)),
        ]
        for name, fcy, fnp in rows:
            tnp = timeit(fnp, reps=args.reps)
            if fcy is not None:
                tcy = timeit(fcy, reps=args.reps)
                print(f"{label:<42} {name:<4} {tcy:>10.3f} {tnp:>10.3f} {tnp / tcy:>7.2f}")
            else:
                print(f"{label:<42} {name:<4} {'-':>10} {tnp:>10.3f} {'-':>7}")


if __name__ == "__main__":
    main()
