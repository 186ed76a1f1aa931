"""Fully connected networks with diagonal-Gaussian output heads.

A ``GaussianMLP`` maps an input vector (or a batch of them) to a
``DiagonalGaussian``: a stack of hidden layers feeds two affine heads, one
for the mean and one for the raw variance, which passes through softplus
plus a floor so it is always positive. Forward passes may record on a
``Tape`` for training, run tape-free for fast inference, or run ``frozen``
(graph through the inputs only, parameters treated as constants).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ContractError
from .gaussian import VARIANCE_FLOOR, DiagonalGaussian

_ACTIVATIONS = {"tanh": (np.tanh, ad.tanh)}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _softplus_np(x):
    return np.logaddexp(0.0, x)


class GaussianMLP:
    """MLP with tanh hidden layers and (mean, variance) affine heads."""

    def __init__(self, in_dim: int, out_dim: int, hidden=(64, 64), activation="tanh",
                 seed: int = 0, rng: np.random.Generator | None = None):
        if activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.seed = int(seed)
        if rng is None:
            rng = np.random.default_rng(seed)

        self.layers: list[tuple[Var, Var]] = []
        prev = self.in_dim
        for width in self.hidden:
            self.layers.append((Var(_glorot(rng, prev, width)), Var(np.zeros(width))))
            prev = width
        self.mean_head = (Var(_glorot(rng, prev, out_dim)), Var(np.zeros(out_dim)))
        self.var_head = (Var(_glorot(rng, prev, out_dim)), Var(np.zeros(out_dim)))

    def parameters(self) -> list[Var]:
        params = []
        for w, b in self.layers:
            params.extend((w, b))
        params.extend(self.mean_head)
        params.extend(self.var_head)
        return params

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.layers)):
            names.extend((f"W{i}", f"b{i}"))
        names.extend(("W_mean", "b_mean", "W_var", "b_var"))
        return names

    def forward(self, x, tape: Tape | None = None, frozen: bool = False) -> DiagonalGaussian:
        """Run the network; returns a DiagonalGaussian over the output space.

        x may be shape (in_dim,) or (n, in_dim). With a tape, outputs are
        differentiable Vars; with frozen=True parameters are constants but
        the graph still flows through x.
        """
        xv = ad.value_of(x)
        if xv.shape[-1] != self.in_dim:
            raise ContractError(f"input dimension {xv.shape[-1]} != expected {self.in_dim}")
        if tape is None and not isinstance(x, Var):
            return self._forward_np(xv)

        act = _ACTIVATIONS[self.activation][1]
        h = x if isinstance(x, Var) else Var(xv, tape)
        for w, b in self.layers:
            wv, bv = (w.value, b.value) if frozen else (w, b)
            h = act(ad.matmul(h, wv) + bv)
        wm, bm = (self.mean_head[0].value, self.mean_head[1].value) if frozen else self.mean_head
        wv_, bv_ = (self.var_head[0].value, self.var_head[1].value) if frozen else self.var_head
        mean = ad.matmul(h, wm) + bm
        variance = ad.softplus(ad.matmul(h, wv_) + bv_) + VARIANCE_FLOOR
        return DiagonalGaussian(mean, variance)

    def _forward_np(self, x: np.ndarray) -> DiagonalGaussian:
        act = _ACTIVATIONS[self.activation][0]
        h = x
        for w, b in self.layers:
            h = act(h @ w.value + b.value)
        mean = h @ self.mean_head[0].value + self.mean_head[1].value
        variance = _softplus_np(h @ self.var_head[0].value + self.var_head[1].value) + VARIANCE_FLOOR
        return DiagonalGaussian(mean, variance)

    # -- persistence helpers -------------------------------------------------

    def named_arrays(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        return [(prefix + name, p.value) for name, p in zip(self.parameter_names(), self.parameters())]

    def spec_meta(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_meta(cls, meta: dict, arrays: dict[str, np.ndarray], prefix: str = "") -> "GaussianMLP":
        net = cls(meta["in_dim"], meta["out_dim"], hidden=meta["hidden"],
                  activation=meta["activation"], seed=meta["seed"])
        for name, p in zip(net.parameter_names(), net.parameters()):
            stored = arrays[prefix + name]
            if stored.shape != p.value.shape:
                raise ContractError(f"checkpoint array {prefix + name} has shape "
                                    f"{stored.shape}, expected {p.value.shape}")
            p.value = stored.astype(np.float64)
        return net
