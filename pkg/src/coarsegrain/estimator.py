"""Frozen zero-shot drift/diffusion estimator.

The local estimator is a Nadaraya-Watson (Gaussian kernel) Kramers-Moyal
estimator conditioned on a context of latent transition pairs. It has no
trainable state: a context goes in, fields come out, together with exact
derivatives of the fields with respect to the query point.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import CollapsedContextError, ConfigError, DimensionMismatchError

DIFFUSION_FLOOR = 1e-6
BANDWIDTH_FLOOR = 0.05
COLLAPSE_STD = 1e-12


@dataclass(frozen=True)
class EstimatorContext:
    x: np.ndarray  # (M, d) transition starts
    x_next: np.ndarray  # (M, d)
    dt: float
    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,)
    bandwidth: np.ndarray  # (d,), standardized units

    @property
    def size(self):
        return len(self.x)

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def increments(self):
        return self.x_next - self.x

    @property
    def pairs(self):
        return np.stack([self.x, self.x_next], axis=1)


@dataclass
class FieldEstimate:
    drift: np.ndarray  # (Q, d)
    diff_sq: np.ndarray  # (Q, d)
    flags: np.ndarray  # (Q,) True where all kernel weights underflowed
    drift_jac: Optional[np.ndarray] = None  # (Q, d, d), d drift_k / d x_j
    diff_jac: Optional[np.ndarray] = None


def silverman_bandwidth(m, dim=1):
    """1.06 m^(-1/5) in standardized units, floored."""
    return np.full(dim, max(1.06 * m ** (-0.2), BANDWIDTH_FLOOR))


def context_from_pairs(x, x_next, dt, bandwidth=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
    if x.shape[0] == 1 and x.shape[1] > 1:  # a flat sequence of scalars
        x, x_next = x.T, x_next.T
    if x.shape != x_next.shape:
        raise DimensionMismatchError("transition starts and ends differ in shape")
    if len(x) < 2:
        raise ConfigError("context needs at least 2 pairs")
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    if not np.all(std >= COLLAPSE_STD):
        raise CollapsedContextError("collapsed context")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(len(x), x.shape[1])
    return EstimatorContext(x, x_next, float(dt), mean, std, np.asarray(bandwidth, dtype=np.float64))


def build_context(states, dt, max_pairs=1024, seed=0):
    """Consecutive pairs of ``states``, subsampled to ``max_pairs`` if needed."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    if len(states) < 3:
        raise ConfigError("context needs at least 3 states")
    count = len(states) - 1
    idx = np.arange(count)
    if count > max_pairs:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(count, size=max_pairs, replace=False))
    return context_from_pairs(states[idx], states[idx + 1], dt)


def estimate(ctx, queries, with_grad=False, floor=DIFFUSION_FLOOR):
    """Drift and diffusion (squared) at ``queries`` given the context."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None] if ctx.dim == 1 else q[None, :]
    if q.shape[1] != ctx.dim:
        raise DimensionMismatchError(f"query dim {q.shape[1]} != context dim {ctx.dim}")
    zq = np.ascontiguousarray((q - ctx.mean) / ctx.std)
    zc = np.ascontiguousarray((ctx.x - ctx.mean) / ctx.std)
    inc = np.ascontiguousarray(ctx.increments)
    coef = np.ascontiguousarray(0.5 / ctx.bandwidth**2)
    drift, diff, jf, jg, flags = kernels.nw_fields(zq, zc, inc, coef, ctx.dt, float(floor), bool(with_grad))
    if with_grad:
        # chain rule through the standardization z = (x - mean) / std
        jf = jf / ctx.std[None, None, :]
        jg = jg / ctx.std[None, None, :]
    return FieldEstimate(drift=drift, diff_sq=diff, flags=np.asarray(flags, dtype=bool), drift_jac=jf, diff_jac=jg)


class LocalEstimator:
    """Kernel Kramers-Moyal estimator behind the generic estimator interface."""

    supports_grad = True
    kind = "local"

    def __init__(self, floor=DIFFUSION_FLOOR):
        self.floor = floor

    def estimate(self, ctx, queries, with_grad=False):
        return estimate(ctx, queries, with_grad=with_grad, floor=self.floor)
