"""Closed-form algebra for diagonal multivariate Gaussians.

Means and variances may be plain float64 arrays or autodiff ``Var`` values;
the same formulas serve the fast inference paths and the differentiable
losses. Arrays may carry a leading batch axis: every reduction here is over
the trailing (event) axis, so a ``(n, d)`` Gaussian yields ``(n,)`` results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError

# Variances are clamped to at least this at construction; keeps log/ratio
# terms finite without changing well-scaled inputs.
VARIANCE_FLOOR = 1e-6

_LOG_2PI = float(np.log(2.0 * np.pi))


def _shape_of(x):
    return np.shape(ad.value_of(x))


@dataclass
class DiagonalGaussian:
    """Mean and per-dimension variance; the universal belief representation."""

    mean: object
    variance: object

    def __post_init__(self):
        if not isinstance(self.mean, ad.Var):
            self.mean = np.asarray(self.mean, dtype=np.float64)
        raw = self.variance
        if not isinstance(raw, ad.Var):
            raw = np.asarray(raw, dtype=np.float64)
        if _shape_of(self.mean) != _shape_of(raw):
            raise ContractError(
                f"mean shape {_shape_of(self.mean)} != variance shape {_shape_of(raw)}"
            )
        self.variance = ad.maximum(raw, VARIANCE_FLOOR)

    @property
    def dim(self) -> int:
        return int(_shape_of(self.mean)[-1])

    @property
    def mean_value(self) -> np.ndarray:
        return ad.value_of(self.mean)

    @property
    def variance_value(self) -> np.ndarray:
        return ad.value_of(self.variance)


@dataclass
class PolicyBelief:
    """Normalized probabilities over candidate policies plus the precision used."""

    probabilities: np.ndarray
    gamma: float

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if self.gamma <= 0:
            raise ContractError("precision gamma must be positive")
        if np.any(self.probabilities < 0):
            raise ContractError("policy probabilities must be nonnegative")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-12:
            raise ContractError("policy probabilities must sum to 1")


def _check_dim(x, g: DiagonalGaussian, name: str):
    if _shape_of(x)[-1] != g.dim:
        raise ContractError(f"{name} dimension {_shape_of(x)[-1]} != Gaussian dimension {g.dim}")


def log_prob(x, g: DiagonalGaussian):
    """Log density of x under g, summed over the event axis."""
    _check_dim(x, g, "x")
    quad = ad.square(ad.sub(x, g.mean)) / (2.0 * g.variance)
    terms = -0.5 * (_LOG_2PI + ad.log(g.variance)) - quad
    return ad.vsum(terms, axis=-1)


def kl_divergence(q: DiagonalGaussian, p: DiagonalGaussian):
    """KL(q || p) in closed form; nonnegative (array results clamped of fp dust)."""
    if q.dim != p.dim:
        raise ContractError(f"q dimension {q.dim} != p dimension {p.dim}")
    log_ratio = ad.log(p.variance) - ad.log(q.variance)
    quad = (q.variance + ad.square(q.mean - p.mean)) / p.variance
    out = 0.5 * ad.vsum(log_ratio + quad - 1.0, axis=-1)
    if not isinstance(out, ad.Var):
        out = np.maximum(out, 0.0)
    return out


def entropy(g: DiagonalGaussian):
    """Differential entropy of g, summed over the event axis."""
    return 0.5 * ad.vsum(1.0 + _LOG_2PI + ad.log(g.variance), axis=-1)


def reparam_sample(g: DiagonalGaussian, noise):
    """mean + sqrt(variance) * noise; differentiable in mean and variance."""
    _check_dim(noise, g, "noise")
    return g.mean + ad.sqrt(g.variance) * noise


def policy_softmax(g_values, gamma: float) -> PolicyBelief:
    """Belief over policies from their expected free energies: softmax(-gamma * G).

    Computed with max subtraction so large gamma * G never overflows; lower G
    always means higher probability.
    """
    g_values = np.asarray(g_values, dtype=np.float64)
    if g_values.size == 0:
        raise ContractError("policy_softmax requires at least one G value")
    if not np.all(np.isfinite(g_values)):
        raise ContractError("G values must be finite")
    if gamma <= 0:
        raise ContractError("precision gamma must be positive")
    z = -gamma * g_values
    z = z - z.max()
    w = np.exp(z)
    return PolicyBelief(probabilities=w / w.sum(), gamma=float(gamma))
