"""Independent reference computations used by the tests.

Everything here is written from the formulas directly, in extended precision
(``np.longdouble``), without calling into the package's numerics. Central
differences of these functions are the gradient oracle.
"""
import numpy as np

LD = np.longdouble


def mlp(layers, X):
    h = X
    for k, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if k < len(layers) - 1:
            h = np.tanh(h)
    return h


def split_layers(flat, dims_enc, dims_dec):
    flat = np.asarray(flat, dtype=LD)
    out, off = [], 0
    for dims in (dims_enc, dims_dec):
        layers = []
        for k in range(len(dims) - 1):
            o, i = dims[k + 1], dims[k]
            W = flat[off:off + o * i].reshape(o, i)
            off += o * i
            b = flat[off:off + o]
            off += o
            layers.append((W, b))
        out.append(layers)
    assert off == len(flat)
    return out


def nw_fields(x_ctx, x_next_ctx, dt, bandwidth, queries, floor=1e-6):
    """Kernel Kramers-Moyal drift and squared diffusion, straight from the definition."""
    x_ctx = np.asarray(x_ctx, dtype=LD)
    inc = np.asarray(x_next_ctx, dtype=LD) - x_ctx
    mean = x_ctx.mean(axis=0)
    std = np.sqrt(((x_ctx - mean) ** 2).mean(axis=0))
    zc = (x_ctx - mean) / std
    zq = (np.asarray(queries, dtype=LD) - mean) / std
    h = np.asarray(bandwidth, dtype=LD)
    e = (((zq[:, None, :] - zc[None, :, :]) / h) ** 2).sum(axis=2) / 2
    w = np.exp(-(e - e.min(axis=1, keepdims=True)))
    w = w / w.sum(axis=1, keepdims=True)
    drift = (w @ inc) / LD(dt)
    resid = inc[None, :, :] - LD(dt) * drift[:, None, :]
    diff = np.einsum("qm,qmk->qk", w, resid * resid) / LD(dt)
    return drift, np.maximum(diff, LD(floor))


def dynamics_loss(flat, dims_enc, dims_dec, Y, dt, ctx_x, ctx_next, bandwidth, batch, eps,
                  frozen_fields=None):
    """Loss of a batch; ``frozen_fields`` = (drift, diff) held fixed (detached policy)."""
    enc, dec = split_layers(flat, dims_enc, dims_dec)
    Y = np.asarray(Y, dtype=LD)
    batch = np.asarray(batch)
    x = mlp(enc, Y[batch])
    if frozen_fields is None:
        f, g = nw_fields(ctx_x, ctx_next, dt, bandwidth, x)
    else:
        f, g = (np.asarray(v, dtype=LD) for v in frozen_fields)
    z = x + LD(dt) * f + np.asarray(eps, dtype=LD) * np.sqrt(LD(dt) * g)
    r = mlp(dec, z) - Y[batch + 1]
    return (r * r).sum()


def central_gradient(fun, theta, step=1e-6):
    """Central differences of a scalar function of a parameter vector, in longdouble."""
    theta = np.asarray(theta, dtype=LD)
    grad = np.empty(len(theta), dtype=LD)
    for k in range(len(theta)):
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += LD(step)
        tm[k] -= LD(step)
        grad[k] = (fun(tp) - fun(tm)) / (LD(2) * LD(step))
    return grad


def relative_errors(analytic, reference, threshold=1e-8):
    """Elementwise |a - r| / |r| where |r| exceeds ``threshold``."""
    analytic = np.asarray(analytic, dtype=LD)
    reference = np.asarray(reference, dtype=LD)
    mask = np.abs(reference) > threshold
    return np.abs(analytic[mask] - reference[mask]) / np.abs(reference[mask]), int(mask.sum())


def blob_position(frames, center_row, center_col, scale_px):
    """Analytic inverse of the blob renderer: log-parabolic peak interpolation.

    Exact for a Gaussian profile whose peak is away from the frame edge.
    """
    row = frames[:, int(round(center_row)), :]
    k = np.clip(row.argmax(axis=1), 1, row.shape[1] - 2)
    idx = np.arange(len(row))
    lm, l0, lp = (np.log(row[idx, k + s]) for s in (-1, 0, 1))
    c0 = k + 0.5 * (lm - lp) / (lm - 2 * l0 + lp)
    return (c0 - center_col) / scale_px


def histogram_modes(samples, lo=-2.0, hi=2.0, width=0.1, smooth=True):
    """Centres of strict local maxima of a (1-2-1 smoothed) histogram."""
    edges = np.arange(lo, hi + width / 2, width)
    counts, _ = np.histogram(samples, bins=edges)
    counts = counts.astype(float)
    if smooth:
        padded = np.concatenate([[0.0], counts, [0.0]])
        counts = 0.25 * padded[:-2] + 0.5 * padded[1:-1] + 0.25 * padded[2:]
    # bin centres on the decimal lattice, free of accumulated roundoff
    centres = np.round(0.5 * (edges[:-1] + edges[1:]), 12)
    modes = []
    for i in range(len(counts)):
        left = counts[i - 1] if i > 0 else -np.inf
        right = counts[i + 1] if i < len(counts) - 1 else -np.inf
        if counts[i] > left and counts[i] >= right and counts[i] > 0:
            modes.append(centres[i])
    return modes
