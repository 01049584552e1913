"""SDE systems with diagonal diffusion and an Euler-Maruyama simulator."""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, DivergenceError, HeaderError


@dataclass(frozen=True)
class SdeSystem:
    """dx = drift(x) dt + diag(sqrt(diffusion_sq(x))) dW.

    ``drift`` and ``diffusion_sq`` map a length-``dim`` array to a
    length-``dim`` array. ``kernel`` names a compiled stepper specialised to
    this system, if one exists.
    """

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion_sq: Callable[[np.ndarray], np.ndarray]
    name: str = "sde"
    kernel: Optional[str] = None


def _dw_drift(x):
    x = np.asarray(x, dtype=np.float64)
    return 4.0 * (x - x * x * x)


def _dw_diffusion_sq(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(4.0 - 1.25 * x * x, 0.0)


def double_well_system():
    """dx = 4(x - x^3) dt + sqrt(max(4 - 1.25 x^2, 0)) dW, in one dimension."""
    return SdeSystem(
        dim=1,
        drift=_dw_drift,
        diffusion_sq=_dw_diffusion_sq,
        name="double_well",
        kernel="double_well",
    )


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.002
    n_steps: int = 5000
    x0: tuple = (0.0,)
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))


@dataclass
class Trajectory:
    dt: float
    states: np.ndarray  # (N, d)
    seed: Optional[int] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def times(self):
        return np.arange(len(self.states)) * self.dt

    def __len__(self):
        return len(self.states)


def noise_stream(seed, n_steps, dim):
    """Standard normal increments from a counter-based (Philox) generator."""
    gen = np.random.Generator(np.random.Philox(int(seed)))
    return gen.standard_normal((max(n_steps - 1, 0), dim))


def euler_maruyama(system, config, noise=None):
    """Simulate ``config.n_steps`` states starting at ``config.x0``.

    ``noise`` overrides the seeded draws, shape ``(n_steps - 1, dim)``.
    Raises DivergenceError naming the first step whose state is non-finite.
    """
    x0 = np.asarray(config.x0, dtype=np.float64)
    if x0.shape != (system.dim,):
        raise ConfigError(f"x0 has length {x0.size}, system dim is {system.dim}")
    if noise is None:
        noise = noise_stream(config.seed, config.n_steps, system.dim)
    noise = np.ascontiguousarray(noise, dtype=np.float64).reshape(config.n_steps - 1, system.dim)
    dt = float(config.dt)

    if system.kernel == "double_well":
        states, bad = kernels.em_double_well(float(x0[0]), dt, np.ascontiguousarray(noise[:, 0]))
        states = states[:, None]
    else:
        states, bad = _em_generic(system, x0, dt, noise)
    if bad >= 0:
        raise DivergenceError(f"non-finite state at step {bad}", step=int(bad))
    return Trajectory(dt=dt, states=states, seed=config.seed)


def _em_generic(system, x0, dt, noise):
    n = len(noise) + 1
    states = np.empty((n, system.dim))
    x = x0.copy()
    states[0] = x
    if not np.all(np.isfinite(x)):
        return states, 0
    for i in range(1, n):
        f = np.asarray(system.drift(x), dtype=np.float64)
        g = np.asarray(system.diffusion_sq(x), dtype=np.float64)
        # roundoff guard; systems already clamp
        x = x + dt * f + np.sqrt(np.maximum(dt * g, 0.0)) * noise[i - 1]
        states[i] = x
        if not np.all(np.isfinite(x)):
            return states[: i + 1], i
    return states, -1


def write_trajectory_csv(traj, path, meta=None):
    """CSV with header ``t,x1[,x2,...]``; values use shortest round-trip repr.

    ``meta`` entries are written as leading ``# key=value`` comment lines.
    """
    cols = ["t"] + [f"x{k + 1}" for k in range(traj.dim)]
    meta = {"dt": repr(traj.dt), "seed": traj.seed, **(meta or {})}
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        fh.write(",".join(cols) + "\n")
        for i, row in enumerate(traj.states):
            fh.write(",".join([repr(i * traj.dt)] + [repr(float(v)) for v in row]) + "\n")


def read_trajectory_csv(path):
    """Inverse of :func:`write_trajectory_csv`; returns ``(trajectory, meta)``."""
    comments = []
    rows = []
    header = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif header is None:
                header = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
    if header is None or header[0] != "t" or len(header) < 2:
        raise HeaderError(f"{path}: expected header 't,x1,...'")
    if any(len(r) != len(header) for r in rows):
        raise HeaderError(f"{path}: row width does not match header")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    meta = dict(c.split("=", 1) for c in comments if "=" in c)
    if "dt" in meta:
        dt = float(meta["dt"])
    elif len(data) > 1:
        dt = data[1, 0] - data[0, 0]
    else:
        raise HeaderError(f"{path}: cannot infer dt from a single row")
    seed = int(meta["seed"]) if meta.get("seed", "None") != "None" else None
    return Trajectory(dt=dt, states=data[:, 1:], seed=seed), meta
