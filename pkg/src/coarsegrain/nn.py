"""Encoder/decoder MLPs with hand-written backward passes, and Adam.

Parameters live in one flat float64 vector; per-layer weights ``W`` (out x in)
and biases ``b`` are views into it, in the order
``enc W1, enc b1, ..., enc WL, enc bL, dec W1, dec b1, ..., dec WL, dec bL``.
That flat order is also the checkpoint payload layout.
"""
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatchError, DivergenceError, HeaderError, TruncatedPayloadError

_ACTIVATIONS = {
    # name: (f, f' expressed through the activation output)
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
}


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple
    activation: str = "tanh"

    def __post_init__(self):
        dims = tuple(int(v) for v in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigError(f"invalid layer dims {dims}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def shapes(self):
        d = self.layer_dims
        return [((d[k + 1], d[k]), (d[k + 1],)) for k in range(len(d) - 1)]

    @property
    def n_params(self):
        return sum(o * i + o for (o, i), _ in self.shapes)

    def reversed(self):
        return MlpSpec(tuple(reversed(self.layer_dims)), self.activation)


def autoencoder_specs(obs_dim, latent_dim, hidden=(128, 64), activation="tanh"):
    """Symmetric pair: obs -> h1 -> h2 -> latent and back."""
    enc = MlpSpec((obs_dim, *hidden, latent_dim), activation)
    return enc, enc.reversed()


def _layer_views(flat, spec, offset):
    layers = []
    for (wshape, bshape) in spec.shapes:
        nw = wshape[0] * wshape[1]
        W = flat[offset:offset + nw].reshape(wshape)
        offset += nw
        b = flat[offset:offset + bshape[0]]
        offset += bshape[0]
        layers.append((W, b))
    return layers, offset


@dataclass
class AutoencoderParams:
    enc_spec: MlpSpec
    dec_spec: MlpSpec
    flat: np.ndarray
    encoder: list = field(init=False, repr=False)
    decoder: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.enc_spec.layer_dims[-1] != self.dec_spec.layer_dims[0]:
            raise ConfigError("encoder output dim must equal decoder input dim")
        if self.enc_spec.layer_dims[0] != self.dec_spec.layer_dims[-1]:
            raise ConfigError("encoder input dim must equal decoder output dim")
        self.flat = np.asarray(self.flat, dtype=np.float64)
        n = self.enc_spec.n_params + self.dec_spec.n_params
        if self.flat.shape != (n,):
            raise DimensionMismatchError(f"expected {n} parameters, got {self.flat.shape}")
        self.encoder, off = _layer_views(self.flat, self.enc_spec, 0)
        self.decoder, _ = _layer_views(self.flat, self.dec_spec, off)

    @property
    def obs_dim(self):
        return self.enc_spec.layer_dims[0]

    @property
    def latent_dim(self):
        return self.enc_spec.layer_dims[-1]

    def like(self, flat):
        """Same architecture, different values (used for gradients)."""
        return AutoencoderParams(self.enc_spec, self.dec_spec, flat)

    def copy(self):
        return self.like(self.flat.copy())


def init_params(enc_spec, dec_spec, seed):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = AutoencoderParams(enc_spec, dec_spec, np.zeros(enc_spec.n_params + dec_spec.n_params))
    for W, _ in params.encoder + params.decoder:
        limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


def mlp_forward(layers, spec, X):
    """Forward pass on a batch ``X`` (B, in). Returns output and activation cache."""
    act, _ = _ACTIVATIONS[spec.activation]
    acts = [X]
    h = X
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if k < last:
            h = act(h)
        acts.append(h)
    return h, acts


def mlp_backward(layers, spec, acts, grad_out, grad_layers=None, input_grad=True):
    """Backpropagate ``grad_out`` (B, out) through a cached forward pass.

    Writes parameter gradients into ``grad_layers`` (same structure as
    ``layers``) when given, and returns the gradient with respect to the input
    (None when ``input_grad`` is false).
    """
    _, dact = _ACTIVATIONS[spec.activation]
    g = grad_out
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        if k < len(layers) - 1:
            g = g * dact(acts[k + 1])
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at layer {k + 1}", layer=k + 1)
        if grad_layers is not None:
            gW, gb = grad_layers[k]
            gW += g.T @ acts[k]
            gb += g.sum(axis=0)
        if k == 0 and not input_grad:
            return None
        g = g @ W
    return g


def _check_dim(arr, n, what):
    if arr.shape[-1] != n:
        raise DimensionMismatchError(f"{what}: expected last dim {n}, got {arr.shape[-1]}")


def encode(params, y):
    y = np.asarray(y, dtype=np.float64)
    _check_dim(y, params.obs_dim, "encode")
    out, _ = mlp_forward(params.encoder, params.enc_spec, np.atleast_2d(y))
    return out if y.ndim > 1 else out[0]


def decode(params, x):
    x = np.asarray(x, dtype=np.float64)
    _check_dim(x, params.latent_dim, "decode")
    out, _ = mlp_forward(params.decoder, params.dec_spec, np.atleast_2d(x))
    return out if x.ndim > 1 else out[0]


def reconstruction_loss(params, Y):
    """Sum of squared errors of decode(encode(Y)) against Y, with its gradient."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    X, enc_acts = mlp_forward(params.encoder, params.enc_spec, Y)
    R, dec_acts = mlp_forward(params.decoder, params.dec_spec, X)
    diff = R - Y
    grad = params.like(np.zeros_like(params.flat))
    gx = mlp_backward(params.decoder, params.dec_spec, dec_acts, 2.0 * diff, grad.decoder)
    mlp_backward(params.encoder, params.enc_spec, enc_acts, gx, grad.encoder, input_grad=False)
    return float(np.sum(diff * diff)), grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        n = params.flat.size
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(params, grads, state):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    g = grads.flat if isinstance(grads, AutoencoderParams) else np.asarray(grads)
    if g.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise DimensionMismatchError("parameter, gradient and moment shapes differ")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    mhat = m / (1.0 - state.beta1**t)
    vhat = v / (1.0 - state.beta2**t)
    flat = params.flat - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return params.like(flat), new_state


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_FORMAT = "coarsegrain-checkpoint"


def _ckpt_paths(path):
    path = os.fspath(path)
    stem = path[:-5] if path.endswith(".json") else path
    return stem + ".json", stem + ".bin"


def save_checkpoint(params, path, seed=None, step=0, extra=None):
    """JSON header + little-endian float64 payload in flat layer order."""
    head_path, bin_path = _ckpt_paths(path)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "encoder": {"layer_dims": list(params.enc_spec.layer_dims), "activation": params.enc_spec.activation},
        "decoder": {"layer_dims": list(params.dec_spec.layer_dims), "activation": params.dec_spec.activation},
        "layer_order": "enc W1,b1..WL,bL then dec W1,b1..WL,bL; W row-major (out, in)",
        "n_params": int(params.flat.size),
        "seed": seed,
        "step": int(step),
        "dtype": "<f8",
        "payload": os.path.basename(bin_path),
    }
    if extra:
        header.update(extra)
    with open(head_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(bin_path, "wb") as fh:
        fh.write(params.flat.astype("<f8").tobytes())
    return head_path, bin_path


def load_checkpoint(path):
    """Returns ``(params, header)``."""
    head_path, bin_path = _ckpt_paths(path)
    with open(head_path, encoding="utf-8") as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as exc:
            raise HeaderError(f"{head_path}: malformed header ({exc})") from exc
    try:
        if header["format"] != CHECKPOINT_FORMAT:
            raise HeaderError(f"{head_path}: not a checkpoint")
        enc = MlpSpec(tuple(header["encoder"]["layer_dims"]), header["encoder"]["activation"])
        dec = MlpSpec(tuple(header["decoder"]["layer_dims"]), header["decoder"]["activation"])
        n = int(header["n_params"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise HeaderError(f"{head_path}: malformed header ({exc})") from exc
    if n != enc.n_params + dec.n_params:
        raise DimensionMismatchError(f"{head_path}: n_params={n} does not match layer dims")
    bin_path = os.path.join(os.path.dirname(head_path), header.get("payload", os.path.basename(bin_path)))
    with open(bin_path, "rb") as fh:
        raw = fh.read()
    if len(raw) != 8 * n:
        raise TruncatedPayloadError(f"{bin_path}: truncated payload ({len(raw)} bytes, expected {8 * n})")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return AutoencoderParams(enc, dec, flat), header
