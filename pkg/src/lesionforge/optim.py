"""Bias-corrected adaptive-moment optimizer over named parameters."""

from __future__ import annotations

import numpy as np

from lesionforge.tensor import Parameter, TensorError


class MissingGradientError(TensorError):
    pass


class Adam:
    """Standard Adam; each parameter's effective step is multiplied by its
    lr_scale (the equalized-learning-rate multiplier, 1.0 when disabled)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0 or eps <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1):
            raise ValueError(f"bad optimizer hyperparameters: lr={lr} b1={beta1} b2={beta2} eps={eps}")
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in optimizer")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise MissingGradientError(f"parameter {p.name} has no gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            step = (self.lr * p.lr_scale) * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= step.astype(p.dtype)

    # --- checkpoint support -------------------------------------------
    def state_scalars(self):
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}

    def load_state_scalars(self, d):
        self.t = int(d["t"])
        self.lr = float(d["lr"])
        self.beta1 = float(d["beta1"])
        self.beta2 = float(d["beta2"])
        self.eps = float(d["eps"])


def adam_step(state: Adam, params=None):
    """Apply one optimizer update (module-level alias for Adam.step)."""
    if params is not None and list(params) != state.params:
        raise ValueError("optimizer was constructed over a different parameter set")
    state.step()
