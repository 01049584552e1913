"""Pure-Python/numpy versions of the hot kernels.

Same signatures as the compiled ``_kernels`` module. The double-well stepper
reproduces the compiled one bit for bit; the kernel estimator agrees to
roundoff (summation order differs).
"""
import math

import numpy as np

BACKEND = "python"

# Query rows processed per block; bounds the (Q, M) temporaries.
_BLOCK = 64


def em_double_well(x0, dt, noise):
    """Euler-Maruyama for dx = 4(x - x^3) dt + sqrt(max(4 - 1.25 x^2, 0)) dW.

    Returns ``(states, bad)`` where ``bad`` is the index of the first
    non-finite state or -1.
    """
    n = len(noise) + 1
    out = [0.0] * n
    x = float(x0)
    out[0] = x
    sqrt = math.sqrt
    isfinite = math.isfinite
    bad = -1 if isfinite(x) else 0
    if bad < 0:
        for i, e in enumerate(noise.tolist(), start=1):
            g = 4.0 - 1.25 * x * x
            if g < 0.0:
                g = 0.0
            f = 4.0 * (x - x * x * x)
            x = x + dt * f + sqrt(dt * g) * e
            out[i] = x
            if not isfinite(x):
                bad = i
                break
    return np.array(out, dtype=np.float64), bad


def nw_fields(zq, zc, inc, coef, dt, floor, with_grad):
    """Nadaraya-Watson drift and diffusion in standardized coordinates.

    ``zq`` (Q, d) queries, ``zc`` (M, d) context points, ``inc`` (M, d)
    increments in original units, ``coef`` (d,) = 1 / (2 h^2). Jacobians are
    with respect to the standardized query.
    """
    q, d = zq.shape
    drift = np.empty((q, d))
    diff = np.empty((q, d))
    jf = np.zeros((q, d, d)) if with_grad else None
    jg = np.zeros((q, d, d)) if with_grad else None
    flags = np.zeros(q, dtype=bool)
    for start in range(0, q, _BLOCK):
        sl = slice(start, min(start + _BLOCK, q))
        delta = zq[sl, None, :] - zc[None, :, :]  # (B, M, d)
        energy = (delta * delta * coef).sum(axis=2)
        emin = energy.min(axis=1)
        flags[sl] = np.exp(-emin) == 0.0
        w = np.exp(-(energy - emin[:, None]))
        w /= w.sum(axis=1, keepdims=True)
        f = w @ inc / dt
        resid = inc[None, :, :] - dt * f[:, None, :]
        r2 = resid * resid
        g = np.einsum("bm,bmk->bk", w, r2) / dt
        floored = g < floor
        drift[sl] = f
        diff[sl] = np.where(floored, floor, g)
        if with_grad:
            # d log w_i / d z_j and its weighted mean
            a = -2.0 * coef * delta
            a -= np.einsum("bm,bmj->bj", w, a)[:, None, :]
            wa = w[:, :, None] * a
            jf[sl] = np.einsum("bmj,mk->bkj", wa, inc) / dt
            jgb = np.einsum("bmj,bmk->bkj", wa, r2) / dt
            jgb[floored] = 0.0
            jg[sl] = jgb
    return drift, diff, jf, jg, flags
