"""Diagonal Gaussians, categoricals, Monte-Carlo KL and free bits.

Batched convention: the last axis is the event dimension; densities reduce
over it and keep any leading batch axes.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)
SCALE_LOGIT_RANGE = (-7.0, 7.0)
PROB_FLOOR = 1e-7


class DiagGaussian:
    """Factorized Gaussian stored as (mean, log-scale); scale = exp(log_scale)."""

    def __init__(self, mean, log_scale):
        self.mean = T.as_tensor(mean)
        self.log_scale = T.as_tensor(log_scale)
        if self.mean.shape != self.log_scale.shape:
            raise ValueError(f"mean {self.mean.shape} and scale {self.log_scale.shape} differ")

    @classmethod
    def from_scale(cls, mean, scale) -> "DiagGaussian":
        scale = T.as_tensor(scale)
        if not (scale.data > 0).all():
            raise ValueError("scale must be strictly positive")
        return cls(mean, T.log(scale))

    @classmethod
    def from_logits(cls, mean, scale_logit, floor: float | None = None) -> "DiagGaussian":
        """Network parametrization: scale = exp(f), f clamped to a safe range.

        ``floor`` raises the lower clamp so that scale >= floor.
        """
        lo, hi = SCALE_LOGIT_RANGE
        if floor is not None:
            lo = max(lo, math.log(floor))
        return cls(mean, T.clip(scale_logit, lo, hi))

    @classmethod
    def standard(cls, shape) -> "DiagGaussian":
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def scale(self) -> Tensor:
        return T.exp(self.log_scale)

    @property
    def shape(self):
        return self.mean.shape


def sample_reparam(d: DiagGaussian, rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """z = mean + scale * eps with eps ~ N(0, I); returns (z, eps)."""
    eps = rng.standard_normal(d.shape)
    return d.mean + d.scale * eps, eps


def log_prob_per_dim(d: DiagGaussian, x) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != d.shape[-1]:
        raise ValueError(f"log_prob: event size {x.shape[-1]} != {d.shape[-1]}")
    z = (x - d.mean) * T.exp(-d.log_scale)
    return -0.5 * LOG_2PI - d.log_scale - 0.5 * z * z


def log_prob(d: DiagGaussian, x) -> Tensor:
    return log_prob_per_dim(d, x).sum(axis=-1)


def kl_analytic_per_dim(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    var_ratio = T.exp(2.0 * (q.log_scale - p.log_scale))
    diff = (q.mean - p.mean) * T.exp(-p.log_scale)
    return p.log_scale - q.log_scale + 0.5 * (var_ratio + diff * diff - 1.0)


def kl_analytic(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    return kl_analytic_per_dim(q, p).sum(axis=-1)


def kl_monte_carlo(log_q_at_z, log_p_at_z) -> Tensor:
    """Single-sample KL estimate log q(z) - log p(z); unbiased, may be negative."""
    return T.as_tensor(log_q_at_z) - T.as_tensor(log_p_at_z)


def free_bits(kl_per_dim, lam: float) -> Tensor:
    """Sum over dimensions of max(kl_j, lam)."""
    if lam < 0:
        raise ValueError("free bits threshold must be non-negative")
    kl = T.as_tensor(kl_per_dim)
    if lam == 0:
        return kl.sum(axis=-1)
    return T.maximum(kl, lam).sum(axis=-1)


def free_bits_shortfall(kl_per_dim, lam: float) -> Tensor:
    """Batch-level free-bits correction, summed over rows.

    The per-dimension KL is averaged over the batch rows and clamped; the
    returned value is ``n_rows * sum_j max(lam - mean_kl_j, 0)``, i.e. the amount
    by which clamping raises the summed KL. Subtracting it from a summed ELBO
    gives the free-bits objective.
    """
    kl = T.as_tensor(kl_per_dim)
    n = kl.shape[0]
    if lam == 0 or n == 0:
        return T.Tensor(0.0)
    avg = kl.mean(axis=0)
    return n * T.relu(lam - avg).sum()


class CategoricalDist:
    def __init__(self, probs):
        self.probs = T.as_tensor(probs)
        total = self.probs.data.sum(axis=-1)
        if (self.probs.data < 0).any() or not np.allclose(total, 1.0, atol=1e-9):
            raise ValueError("probabilities must be non-negative and sum to 1")

    @classmethod
    def from_logits(cls, logits) -> "CategoricalDist":
        return cls(T.softmax(logits, axis=-1))

    def log_probs(self) -> Tensor:
        return T.log(T.clip(self.probs, PROB_FLOOR, 1.0))


def categorical_log_prob(c: CategoricalDist, y_onehot) -> Tensor:
    y = np.asarray(y_onehot, dtype=np.float64)
    if y.shape != c.probs.shape or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(-1) == 1):
        raise ValueError("y must be one-hot with the same shape as the probabilities")
    return (c.log_probs() * y).sum(axis=-1)


def categorical_entropy(c: CategoricalDist) -> Tensor:
    return -(c.probs * c.log_probs()).sum(axis=-1)
