"""Dynamics-constrained autoencoder loss and the training loop.

Only the encoder/decoder parameters are optimized. The drift and diffusion
used inside the loss come from a frozen estimator conditioned on a context of
encoded transitions; the context is always treated as a constant.
"""
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import estimator as est
from . import nn
from .errors import CollapsedContextError, ConfigError, DivergenceError, NumericalError

# Stream ids for the per-step counter-based generators.
_STREAM_CONTEXT = 0
_STREAM_BATCH = 1
_STREAM_EPS = 2


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch_size: int = 256
    context_size: int = 1024
    context_refresh_every: int = 1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_through_estimator: bool = True
    seed: int = 0
    latent_dim: int = 1
    hidden: tuple = (128, 64)
    activation: str = "tanh"
    estimator_kind: str = "local"
    endpoint: str = ""
    timeout: float = 30.0
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.context_size < 2:
            raise ConfigError("context_size must be >= 2")
        if self.context_refresh_every < 1:
            raise ConfigError("context_refresh_every must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.estimator_kind not in ("local", "remote"):
            raise ConfigError(f"unknown estimator kind {self.estimator_kind!r}")
        if self.estimator_kind == "remote":
            if not self.endpoint:
                raise ConfigError("remote estimator needs an endpoint")
            if self.grad_through_estimator:
                raise ConfigError("remote estimators only support grad_through_estimator = false")


@dataclass
class LossTrace:
    loss: list = field(default_factory=list)
    loss_per_pixel: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    refreshed: list = field(default_factory=list)
    underflow: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def same_values(self, other):
        """Equality ignoring wall-clock times."""
        return (self.loss == other.loss and self.loss_per_pixel == other.loss_per_pixel
                and self.refreshed == other.refreshed and self.underflow == other.underflow)

    def write_csv(self, path, meta=None):
        with open(path, "w", encoding="utf-8") as fh:
            for key, value in (meta or {}).items():
                fh.write(f"# {key}={value}\n")
            fh.write("step,loss,refresh_flag\n")
            for i, (l, r) in enumerate(zip(self.loss, self.refreshed)):
                fh.write(f"{i},{l!r},{int(r)}\n")


def latent_step(x, f_hat, g_hat, dt, eps):
    """x + dt f + eps * sqrt(dt g): one Euler-Maruyama step in latent space."""
    x, f_hat, g_hat, eps = (np.asarray(a, dtype=np.float64) for a in (x, f_hat, g_hat, eps))
    if not (x.shape == f_hat.shape == g_hat.shape == eps.shape):
        raise ConfigError(f"shape mismatch {x.shape} {f_hat.shape} {g_hat.shape} {eps.shape}")
    return x + dt * f_hat + eps * np.sqrt(dt * g_hat)


def dynamics_loss(params, Y, dt, ctx, batch, eps, estimator=None, grad_through_estimator=True,
                  need_grad=True):
    """Loss summed over batch and pixels, and its gradient.

    ``Y`` is the (N, D) observation matrix, ``batch`` 0-based transition
    indices i (pairs ``Y[i] -> Y[i+1]``), ``eps`` (B, d) standard normals.
    Returns ``(loss, grad, fields)``; ``grad`` is None if ``need_grad`` is false.
    """
    estimator = estimator or est.LocalEstimator()
    batch = np.asarray(batch)
    if batch.min() < 0 or batch.max() > len(Y) - 2:
        raise ConfigError("batch index outside the transition range")
    use_jac = grad_through_estimator and need_grad
    if use_jac and not estimator.supports_grad:
        raise ConfigError("estimator does not provide query gradients")

    Yi = Y[batch]
    target = Y[batch + 1]
    x, enc_acts = nn.mlp_forward(params.encoder, params.enc_spec, Yi)
    fields = estimator.estimate(ctx, x, with_grad=use_jac)
    f, g = fields.drift, fields.diff_sq
    root = np.sqrt(dt * g)
    z = x + dt * f + eps * root
    pred, dec_acts = nn.mlp_forward(params.decoder, params.dec_spec, z)
    resid = pred - target
    loss = float(np.sum(resid * resid))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss")
    if not need_grad:
        return loss, None, fields

    grad = params.like(np.zeros_like(params.flat))
    gz = nn.mlp_backward(params.decoder, params.dec_spec, dec_acts, 2.0 * resid, grad.decoder)
    gx = gz.copy()
    if use_jac:
        # z_k = x_k + dt f_k(x) + eps_k sqrt(dt g_k(x))
        gx += dt * np.einsum("bk,bkj->bj", gz, fields.drift_jac)
        dz_dg = eps * dt / (2.0 * root)
        gx += np.einsum("bk,bkj->bj", gz * dz_dg, fields.diff_jac)
    nn.mlp_backward(params.encoder, params.enc_spec, enc_acts, gx, grad.encoder, input_grad=False)
    return loss, grad, fields


def _rng(seed, step, stream):
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, (int(step) << 8) | stream]))


def refresh_context(params, Y, dt, context_size, seed, step):
    """Encode a seeded subsample of transitions (forward only) into a context."""
    n_pairs = len(Y) - 1
    if n_pairs > context_size:
        idx = np.sort(_rng(seed, step, _STREAM_CONTEXT).choice(n_pairs, size=context_size, replace=False))
    else:
        idx = np.arange(n_pairs)
    x = nn.encode(params, Y[idx])
    x_next = nn.encode(params, Y[idx + 1])
    return est.context_from_pairs(x, x_next, dt)


def make_estimator(cfg):
    if cfg.estimator_kind == "remote":
        from .remote import RemoteEstimator

        return RemoteEstimator(cfg.endpoint, timeout=cfg.timeout)
    return est.LocalEstimator()


def train(frames, dt, cfg, params=None, callback=None):
    """Optimize encoder/decoder parameters under the dynamics-constrained loss.

    ``frames`` is an (N, D) or (N, H, W) array: training only sees the
    observations and the time step. Returns ``(params, trace)``.
    """
    Y = np.asarray(frames, dtype=np.float64)
    Y = Y.reshape(len(Y), -1)
    if len(Y) < 2:
        raise ConfigError("need at least 2 frames")
    if params is None:
        enc, dec = nn.autoencoder_specs(Y.shape[1], cfg.latent_dim, cfg.hidden, cfg.activation)
        params = nn.init_params(enc, dec, cfg.seed)
    state = nn.AdamState.fresh(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    estimator = make_estimator(cfg)
    trace = LossTrace()
    n_pairs = len(Y) - 1
    bsz = min(cfg.batch_size, n_pairs)
    ctx = None
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        refreshed = ctx is None or step % cfg.context_refresh_every == 0
        if refreshed:
            try:
                ctx = refresh_context(params, Y, dt, cfg.context_size, cfg.seed, step)
            except CollapsedContextError as exc:
                raise CollapsedContextError(f"collapsed context at step {step}", step=step) from exc
        batch = _rng(cfg.seed, step, _STREAM_BATCH).choice(n_pairs, size=bsz, replace=False)
        eps = _rng(cfg.seed, step, _STREAM_EPS).standard_normal((bsz, params.latent_dim))
        try:
            loss, grad, fields = dynamics_loss(params, Y, dt, ctx, batch, eps, estimator,
                                               cfg.grad_through_estimator)
        except NumericalError as exc:
            raise type(exc)(f"{exc} at step {step}") from exc
        params, state = nn.adam_step(params, grad, state)
        trace.loss.append(loss)
        trace.loss_per_pixel.append(loss / (bsz * Y.shape[1]))
        trace.refreshed.append(bool(refreshed))
        trace.underflow.append(int(np.count_nonzero(fields.flags)))
        trace.wall_clock.append(time.perf_counter() - t0)
        if callback is not None:
            callback(step, params, trace)
    return params, trace
