"""Gauge alignment, field curves in ground-truth units, run reports.

The learned latent is identifiable only up to reparameterization; we fix the
gauge with a least-squares affine map onto the ground-truth latent. This is
the only module that reads ground truth.
"""
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import estimator as est
from . import nn
from .errors import CollapsedLatentError, ConfigError, DimensionMismatchError
from .sde import double_well_system


@dataclass(frozen=True)
class AlignmentMap:
    """truth ~= a * learned + b."""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.a == 0:
            raise ConfigError(f"invalid alignment a={self.a}, b={self.b}")

    def __call__(self, x):
        return self.a * np.asarray(x, dtype=np.float64) + self.b

    def preimage(self, u):
        return (np.asarray(u, dtype=np.float64) - self.b) / self.a

    def inverse(self):
        return AlignmentMap(1.0 / self.a, -self.b / self.a)


@dataclass
class FieldCurve:
    grid: np.ndarray
    drift: np.ndarray
    diff_sq: np.ndarray

    def __post_init__(self):
        self.grid, self.drift, self.diff_sq = (np.asarray(v, dtype=np.float64).reshape(-1)
                                               for v in (self.grid, self.drift, self.diff_sq))
        if not (len(self.grid) == len(self.drift) == len(self.diff_sq)):
            raise DimensionMismatchError("curve arrays differ in length")


@dataclass(frozen=True)
class GridSpec:
    lo: float = -1.2
    hi: float = 1.2
    n: int = 33

    def points(self):
        return np.linspace(self.lo, self.hi, self.n)


def align_latent(learned, truth):
    learned = np.asarray(learned, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if learned.shape != truth.shape or len(learned) < 2:
        raise DimensionMismatchError("learned and truth must have equal length >= 2")
    dl = learned - learned.mean()
    var = np.dot(dl, dl)
    if not var > 1e-24 * len(dl):
        raise CollapsedLatentError("collapsed latent")
    a = np.dot(dl, truth - truth.mean()) / var
    b = truth.mean() - a * learned.mean()
    return AlignmentMap(float(a), float(b))


def transform_field(curve, amap):
    """Re-express a curve given in learned units in truth units (u = a x + b)."""
    return FieldCurve(grid=amap(curve.grid), drift=amap.a * curve.drift, diff_sq=amap.a**2 * curve.diff_sq)


def pearson(u, v):
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    du, dv = u - u.mean(), v - v.mean()
    return float(np.dot(du, dv) / np.sqrt(np.dot(du, du) * np.dot(dv, dv)))


def zero_crossings(func, grid, values=None, tol=1e-10, max_iter=200):
    """Sign changes of ``func`` on ``grid``, refined by bisection.

    A value of exactly zero counts as positive. Crossings come back sorted.
    """
    grid = np.asarray(grid, dtype=np.float64)
    values = np.asarray(values if values is not None else func(grid), dtype=np.float64)
    pos = values >= 0
    roots = []
    for i in range(len(grid) - 1):
        if pos[i] == pos[i + 1]:
            continue
        lo, hi, plo = grid[i], grid[i + 1], pos[i]
        for _ in range(max_iter):
            if hi - lo <= tol:
                break
            mid = 0.5 * (lo + hi)
            if (func(np.array([mid]))[0] >= 0) == plo:
                lo = mid
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    return roots


def rmse(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class RunReport:
    seed: Optional[int]
    alignment: AlignmentMap
    corr: float
    drift_rmse: float
    diff_rmse: float
    drift_zero_crossings: list
    recon_mse_per_pixel: Optional[float]
    curve: FieldCurve  # estimate on learned latent, truth units
    truth_curve: FieldCurve  # analytic fields
    truth_coord_curve: Optional[FieldCurve] = None  # same estimator on the true latent
    underflow_queries: int = 0
    loss_initial: Optional[float] = None
    loss_final: Optional[float] = None
    loss_trace: str = ""
    config_hash: str = ""

    def to_dict(self):
        def curve(c):
            return None if c is None else {"grid": c.grid.tolist(), "drift": c.drift.tolist(), "diff_sq": c.diff_sq.tolist()}

        return {
            "seed": self.seed,
            "alignment": {"a": self.alignment.a, "b": self.alignment.b},
            "corr": self.corr,
            "drift_rmse": self.drift_rmse,
            "diff_rmse": self.diff_rmse,
            "drift_zero_crossings": [float(v) for v in self.drift_zero_crossings],
            "recon_mse_per_pixel": self.recon_mse_per_pixel,
            "curve": curve(self.curve),
            "truth_curve": curve(self.truth_curve),
            "truth_coord_curve": curve(self.truth_coord_curve),
            "underflow_queries": int(self.underflow_queries),
            "loss_initial": self.loss_initial,
            "loss_final": self.loss_final,
            "loss_trace": self.loss_trace,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, d):
        def curve(c):
            return None if c is None else FieldCurve(c["grid"], c["drift"], c["diff_sq"])

        return cls(
            seed=d["seed"],
            alignment=AlignmentMap(d["alignment"]["a"], d["alignment"]["b"]),
            corr=d["corr"],
            drift_rmse=d["drift_rmse"],
            diff_rmse=d["diff_rmse"],
            drift_zero_crossings=list(d["drift_zero_crossings"]),
            recon_mse_per_pixel=d["recon_mse_per_pixel"],
            curve=curve(d["curve"]),
            truth_curve=curve(d["truth_curve"]),
            truth_coord_curve=curve(d.get("truth_coord_curve")),
            underflow_queries=d.get("underflow_queries", 0),
            loss_initial=d.get("loss_initial"),
            loss_final=d.get("loss_final"),
            loss_trace=d.get("loss_trace", ""),
            config_hash=d.get("config_hash", ""),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def write_curves_csv(self, path):
        c, t = self.curve, self.truth_curve
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("u,drift_true,drift_est,diffsq_true,diffsq_est\n")
            for row in zip(c.grid, t.drift, c.drift, t.diff_sq, c.diff_sq):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def analytic_curve(grid, system=None):
    system = system or double_well_system()
    grid = np.asarray(grid, dtype=np.float64)
    return FieldCurve(grid, system.drift(grid), system.diffusion_sq(grid))


def estimated_curve(ctx, grid, amap, estimator=None):
    """Estimator on the learned context, evaluated on a truth-unit grid."""
    estimator = estimator or est.LocalEstimator()
    fe = estimator.estimate(ctx, amap.preimage(grid)[:, None])
    learned = FieldCurve(amap.preimage(grid), fe.drift[:, 0], fe.diff_sq[:, 0])
    return transform_field(learned, amap), int(np.count_nonzero(fe.flags))


def evaluate_latents(learned, truth, dt, grid_spec=GridSpec(), context_size=0, seed=0,
                     estimator=None, system=None):
    """All latent-space metrics of a run, given learned and true latents (N,)."""
    estimator = estimator or est.LocalEstimator()
    learned = np.asarray(learned, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    amap = align_latent(learned, truth)
    corr = pearson(amap(learned), truth)
    max_pairs = context_size if context_size > 0 else len(learned)
    ctx = est.build_context(learned, dt, max_pairs=max_pairs, seed=seed)
    grid = grid_spec.points()
    curve, n_flag = estimated_curve(ctx, grid, amap, estimator)
    ref = analytic_curve(grid, system)

    def aligned_drift(u):
        fe = estimator.estimate(ctx, amap.preimage(u)[:, None])
        return amap.a * fe.drift[:, 0]

    crossings = zero_crossings(aligned_drift, grid, curve.drift)
    truth_ctx = est.build_context(truth, dt, max_pairs=max_pairs, seed=seed)
    truth_coord, _ = estimated_curve(truth_ctx, grid, AlignmentMap(1.0, 0.0), estimator)
    return RunReport(
        seed=None,
        alignment=amap,
        corr=corr,
        drift_rmse=rmse(curve.drift, ref.drift),
        diff_rmse=rmse(curve.diff_sq, ref.diff_sq),
        drift_zero_crossings=crossings,
        recon_mse_per_pixel=None,
        curve=curve,
        truth_curve=ref,
        truth_coord_curve=truth_coord,
        underflow_queries=n_flag,
    )


def reconstruction_mse(params, Y, chunk=1024):
    """Mean squared error per pixel of decode(encode(y)) over all frames."""
    Y = np.asarray(Y, dtype=np.float64).reshape(len(Y), -1)
    total = 0.0
    for s in range(0, len(Y), chunk):
        block = Y[s:s + chunk]
        r = nn.decode(params, nn.encode(params, block)) - block
        total += float(np.sum(r * r))
    return total / Y.size


def evaluate_run(params, dataset, truth=None, grid_spec=GridSpec(), context_size=0, seed=None,
                 estimator=None, trace=None, final_window=10):
    """Encode every frame, align to ground truth and score the recovered fields."""
    truth = truth if truth is not None else dataset.source_latent
    if truth is None:
        raise ConfigError("evaluation needs the source latent trajectory")
    if params.latent_dim != 1:
        raise DimensionMismatchError("evaluation supports a 1-d latent only")
    learned = nn.encode(params, dataset.flat)[:, 0]
    report = evaluate_latents(learned, truth.states[:, 0], dataset.dt, grid_spec, context_size,
                              seed=0, estimator=estimator)
    report.seed = seed
    report.recon_mse_per_pixel = reconstruction_mse(params, dataset.flat)
    if trace is not None and len(trace):
        report.loss_initial = float(trace.loss[0])
        report.loss_final = float(np.mean(trace.loss[-final_window:]))
    return report


def aggregate_runs(reports, lo_pct=5.0, hi_pct=95.0):
    """Per-grid-point mean and percentile bands, plus a metric table."""
    if len(reports) < 2:
        raise ConfigError("need >= 2 reports")
    grid = reports[0].curve.grid
    for r in reports[1:]:
        if r.curve.grid.shape != grid.shape or not np.allclose(r.curve.grid, grid, rtol=0, atol=1e-9):
            raise DimensionMismatchError("mismatched grids")
    drift = np.stack([r.curve.drift for r in reports])
    diff = np.stack([r.curve.diff_sq for r in reports])

    def bands(arr):
        return {
            "mean": arr.mean(axis=0).tolist(),
            "lo": np.percentile(arr, lo_pct, axis=0, method="inverted_cdf").tolist(),
            "hi": np.percentile(arr, hi_pct, axis=0, method="inverted_cdf").tolist(),
        }

    metrics = ("corr", "drift_rmse", "diff_rmse", "recon_mse_per_pixel")
    table = [{"seed": r.seed, **{m: getattr(r, m) for m in metrics},
              "n_crossings": len(r.drift_zero_crossings)} for r in reports]
    summary = {}
    for m in metrics:
        vals = np.array([np.nan if getattr(r, m) is None else getattr(r, m) for r in reports], dtype=np.float64)
        summary[m] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return {
        "n_runs": len(reports),
        "percentiles": [lo_pct, hi_pct],
        "grid": grid.tolist(),
        "drift": bands(drift),
        "diff_sq": bands(diff),
        "truth": {"drift": reports[0].truth_curve.drift.tolist(), "diff_sq": reports[0].truth_curve.diff_sq.tolist()},
        "per_seed": table,
        "summary": summary,
    }
