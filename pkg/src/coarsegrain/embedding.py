"""Gaussian-blob video rendering and the on-disk video dataset format.

A dataset is a pair of files: ``<stem>.json`` (header) and ``<stem>.bin``
(payload). The payload holds the frames as little-endian float64 in
row-major order, frames concatenated in time order, optionally followed by
the source latent states (N x d, float64) when ``has_latent`` is set.
"""
import json
import os
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionMismatchError, HeaderError, TruncatedPayloadError
from .sde import Trajectory

FORMAT_NAME = "coarsegrain-video"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BlobConfig:
    grid_h: int = 51
    grid_w: int = 51
    sigma_px: float = 2.5
    scale_px: float = 10.0
    center_row: float = 25.0
    center_col: float = 25.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ConfigError("grid dimensions must be positive")
        if not self.sigma_px > 0:
            raise ConfigError("sigma_px must be > 0")
        if self.scale_px == 0:
            raise ConfigError("scale_px must be nonzero")
        if not self.amplitude > 0:
            raise ConfigError("amplitude must be > 0")

    def column_center(self, x):
        """Continuous column of the blob center for latent ``x``."""
        return self.center_col + self.scale_px * np.asarray(x, dtype=np.float64)


def render_blob(x, cfg):
    """One ``grid_h x grid_w`` frame with the blob centred at column(x)."""
    return render_frames(np.atleast_1d(np.asarray(x, dtype=np.float64))[:1], cfg)[0]


def render_frames(xs, cfg):
    """Frames for a sequence of scalar latents, shape ``(N, grid_h, grid_w)``."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    rows = np.arange(cfg.grid_h, dtype=np.float64)
    cols = np.arange(cfg.grid_w, dtype=np.float64)
    c0 = cfg.column_center(xs)
    dc2 = (cols[None, :] - c0[:, None]) ** 2  # (N, W)
    dr2 = (rows - cfg.center_row) ** 2  # (H,)
    return cfg.amplitude * np.exp(-(dc2[:, None, :] + dr2[None, :, None]) / (2.0 * cfg.sigma_px**2))


@dataclass
class VideoDataset:
    frames: np.ndarray  # (N, H, W)
    dt: float
    blob: BlobConfig
    source_latent: Optional[Trajectory] = None
    config_hash: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise DimensionMismatchError("frames must have shape (N, H, W)")
        if len(self.frames) < 2:
            raise ConfigError("a dataset needs at least 2 frames")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.source_latent is not None and len(self.source_latent) != len(self.frames):
            raise DimensionMismatchError("source latent length differs from frame count")

    def __len__(self):
        return len(self.frames)

    @property
    def flat(self):
        """Frames as observation vectors, shape ``(N, H*W)``."""
        return self.frames.reshape(len(self.frames), -1)

    @property
    def obs_dim(self):
        return self.frames.shape[1] * self.frames.shape[2]


def embed_trajectory(traj, cfg, config_hash=""):
    if traj.dim != 1:
        raise DimensionMismatchError(f"blob renderer needs a 1-d latent, got d={traj.dim}")
    frames = render_frames(traj.states[:, 0], cfg)
    return VideoDataset(frames=frames, dt=traj.dt, blob=cfg, source_latent=traj, config_hash=config_hash)


def _paths(path):
    path = os.fspath(path)
    stem = path[:-5] if path.endswith(".json") else path
    return stem + ".json", stem + ".bin"


def save_dataset(ds, path):
    head_path, bin_path = _paths(path)
    n, h, w = ds.frames.shape
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n_frames": n,
        "grid_h": h,
        "grid_w": w,
        "dt": ds.dt,
        "blob": asdict(ds.blob),
        "has_latent": ds.source_latent is not None,
        "latent_dim": ds.source_latent.dim if ds.source_latent is not None else 0,
        "latent_seed": ds.source_latent.seed if ds.source_latent is not None else None,
        "dtype": "<f8",
        "payload": os.path.basename(bin_path),
        "config_hash": ds.config_hash,
    }
    with open(head_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(bin_path, "wb") as fh:
        fh.write(ds.frames.astype("<f8").tobytes(order="C"))
        if ds.source_latent is not None:
            fh.write(ds.source_latent.states.astype("<f8").tobytes(order="C"))
    return head_path, bin_path


_REQUIRED = ("format", "version", "n_frames", "grid_h", "grid_w", "dt", "blob", "has_latent", "latent_dim")


def load_dataset(path):
    head_path, bin_path = _paths(path)
    with open(head_path, encoding="utf-8") as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as exc:
            raise HeaderError(f"{head_path}: malformed header ({exc})") from exc
    if not isinstance(header, dict) or any(k not in header for k in _REQUIRED):
        raise HeaderError(f"{head_path}: malformed header (missing fields)")
    if header["format"] != FORMAT_NAME or header["version"] != FORMAT_VERSION:
        raise HeaderError(f"{head_path}: unsupported format {header['format']!r} v{header['version']}")
    try:
        blob = BlobConfig(**header["blob"])
    except (TypeError, ConfigError) as exc:
        raise HeaderError(f"{head_path}: malformed blob config ({exc})") from exc
    n, h, w, d = (int(header[k]) for k in ("n_frames", "grid_h", "grid_w", "latent_dim"))
    if n < 2 or h < 1 or w < 1 or (blob.grid_h, blob.grid_w) != (h, w):
        raise DimensionMismatchError(f"{head_path}: inconsistent dimensions {n}x{h}x{w} vs blob {blob.grid_h}x{blob.grid_w}")
    if header["has_latent"] and d < 1:
        raise DimensionMismatchError(f"{head_path}: has_latent with latent_dim={d}")
    if "payload" in header:
        bin_path = os.path.join(os.path.dirname(head_path), header["payload"])
    with open(bin_path, "rb") as fh:
        raw = fh.read()
    n_frame_vals = n * h * w
    n_lat_vals = n * d if header["has_latent"] else 0
    expected = 8 * (n_frame_vals + n_lat_vals)
    if len(raw) != expected:
        raise TruncatedPayloadError(f"{bin_path}: truncated payload ({len(raw)} bytes, expected {expected})")
    vals = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    frames = vals[:n_frame_vals].reshape(n, h, w)
    latent = None
    if header["has_latent"]:
        latent = Trajectory(dt=float(header["dt"]), states=vals[n_frame_vals:].reshape(n, d), seed=header.get("latent_seed"))
    return VideoDataset(frames=frames, dt=float(header["dt"]), blob=blob, source_latent=latent,
                        config_hash=header.get("config_hash", ""))


def write_argmax_csv(ds, path):
    """Per-frame argmax column of the blob-centre row, for debugging."""
    row = int(round(ds.blob.center_row))
    row = min(max(row, 0), ds.frames.shape[1] - 1)
    cols = ds.frames[:, row, :].argmax(axis=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,argmax_col\n")
        for i, c in enumerate(cols):
            fh.write(f"{i},{int(c)}\n")
