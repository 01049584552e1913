"""Pipeline configuration: TOML file + ``--set section.key=value`` overrides."""
import copy
import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .embedding import BlobConfig
from .errors import ConfigError
from .evaluation import GridSpec
from .sde import SimConfig
from .training import TrainConfig

ENDPOINT_ENV = "COARSEGRAIN_ESTIMATOR_ENDPOINT"
SECTIONS = ("simulation", "blob", "model", "training", "eval", "run")


def default_config_text():
    return resources.files("coarsegrain").joinpath("default_config.toml").read_text(encoding="utf-8")


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw, assignment):
    if "=" not in assignment:
        raise ConfigError(f"override must look like section.key=value: {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"unknown config key {key!r}")
    section, name = parts
    if name not in raw.get(section, {}):
        raise ConfigError(f"unknown config key {key!r}")
    raw[section][name] = _parse_value(value.strip())


def load_raw(path=None, overrides=()):
    """Defaults, then the file at ``path`` (section-wise merge), then overrides."""
    raw = tomllib.loads(default_config_text())
    if path:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section, values in user.items():
            if section not in SECTIONS or not isinstance(values, dict):
                raise ConfigError(f"{path}: unknown section [{section}]")
            for k, v in values.items():
                if k not in raw[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{k}")
                raw[section][k] = v
    for item in overrides:
        apply_override(raw, item)
    env_endpoint = os.environ.get(ENDPOINT_ENV)
    if env_endpoint:
        raw["training"]["endpoint"] = env_endpoint
    return raw


def config_hash(*parts):
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class PipelineConfig:
    raw: dict
    sim: SimConfig
    blob: BlobConfig
    train: TrainConfig
    grid: GridSpec
    eval_context_size: int
    final_window: int
    seeds: list
    jobs: int
    out: str

    def dataset_hash(self):
        return config_hash(self.raw["simulation"], self.raw["blob"])

    def train_hash(self, seed=None):
        tr = dict(self.raw["training"])
        tr.pop("endpoint", None)
        tr.pop("timeout", None)
        if seed is not None:
            tr["seed"] = seed
        return config_hash(self.dataset_hash(), self.raw["model"], tr)

    def train_config(self, seed):
        return TrainConfig(**{**_train_kwargs(self.raw), "seed": int(seed)})


def _train_kwargs(raw):
    tr = dict(raw["training"])
    m = raw["model"]
    return {**tr, "hidden": tuple(m["hidden"]), "activation": m["activation"], "latent_dim": m["latent_dim"]}


def build(raw):
    try:
        s, b, e, r = raw["simulation"], raw["blob"], raw["eval"], raw["run"]
        sim = SimConfig(dt=float(s["dt"]), n_steps=int(s["n_steps"]), x0=tuple(s["x0"]), seed=int(s["seed"]))
        blob = BlobConfig(**b)
        train = TrainConfig(**_train_kwargs(raw))
        grid = GridSpec(float(e["grid_lo"]), float(e["grid_hi"]), int(e["grid_n"]))
        if grid.n < 2 or not grid.hi > grid.lo:
            raise ConfigError("eval grid needs n >= 2 and hi > lo")
        seeds = [int(v) for v in r["seeds"]]
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return PipelineConfig(raw=copy.deepcopy(raw), sim=sim, blob=blob, train=train, grid=grid,
                          eval_context_size=int(e["context_size"]), final_window=int(e["final_window"]),
                          seeds=seeds, jobs=int(r["jobs"]), out=str(r["out"]))


def load_config(path=None, overrides=()):
    return build(load_raw(path, overrides))


def parse_seeds(text):
    """``"0..9"`` (inclusive), ``"0,3,5"`` or a single integer."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc
