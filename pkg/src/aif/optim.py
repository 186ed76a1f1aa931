"""Adaptive-moment gradient optimizer and finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .autodiff import Var
from .errors import ContractError


class Adam:
    """Bias-corrected adaptive-moment updates over a list of parameter Vars."""

    def __init__(self, params: list[Var], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, grads: list[np.ndarray] | None = None):
        """One update. Uses explicit grads if given, else each param's .grad."""
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.value)
                     for p in self.params]
        if len(grads) != len(self.params):
            raise ContractError("gradient list length does not match parameters")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.value.shape:
                raise ContractError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def grad_check(build_loss, params: list[Var], h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    build_loss() must construct a fresh tape, run the forward pass, and return
    the scalar loss Var. Relative error per parameter entry is
    |analytic - fd| / max(1e-8, |analytic| + |fd|).
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.tape.backward(loss)
    analytic = [np.array(p.grad, copy=True) if p.grad is not None else np.zeros_like(p.value)
                for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().value)
            flat[i] = orig - h
            down = float(build_loss().value)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            a = ga.reshape(-1)[i]
            err = abs(a - fd) / max(1e-8, abs(a) + abs(fd))
            worst = max(worst, err)
    return worst
