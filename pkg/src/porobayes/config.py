"""JSON run configuration: schema, typed builders, hashing.

One JSON file describes a whole run; each section maps onto one of the
library's parameter dataclasses and omitted keys fall back to the dataclass
defaults.  Unknown sections or keys are rejected so that typos fail fast.
The sha256 hash of the canonical (sorted, compact) JSON text is embedded in
every output an invocation produces, tying artifacts back to their inputs.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .biot_fem import BoundarySpec, PhysicalParams, TimeSteppingConfig
from .errors import ConfigError
from .gmsfem import OfflineConfig
from .mcmc import ChainConfig
from .mesh import GridSpec
from .randfield import CovarianceSpec, MaterialLaw
from .surrogate import TrainConfig

__all__ = ["RunConfig", "load_config", "build_run_config", "config_hash"]

_CHAIN_EXTRA = {"sampler": "two-stage", "first_stage": "ms"}
_SURROGATE_DEFAULTS = {
    "conv_channels": [8, 16],
    "dense_widths": [128],
    "dropout": 0.10,
    "n_samples": 400,
    "epochs": 500,
    "lr": 1.0e-3,
    "batch_size": 32,
    "val_split": 0.0,
    "seed": None,
}
_SOLVE_DEFAULTS = {"solver": "fine", "theta": "sample"}
_ERRORS_DEFAULTS = {"m_plus_list": [0, 1, 2, 3, 4, 6, 8]}
_OBS_DEFAULTS = {"source": "synthetic", "seed": None, "path": ""}
_PATH_KEYS = ("kle", "basis", "dataset", "models", "observable")


def config_hash(raw):
    """Short hash of the canonical JSON text of a config dict."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _section(raw, name, allowed):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    return dict(sec)


def _build(cls, kwargs, name):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {name!r}: {exc}") from exc


def _listify(sec):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in sec.items()}


@dataclass
class RunConfig:
    """Validated configuration with constructed parameter objects."""

    grid: GridSpec
    covariance: CovarianceSpec
    law: MaterialLaw
    params: PhysicalParams
    bc: BoundarySpec
    ts: TimeSteppingConfig
    offline: OfflineConfig
    chain: ChainConfig
    sampler: str
    first_stage: str
    surrogate: dict
    solve: dict
    errors: dict
    observation: dict
    paths: dict
    seed: int
    raw: dict = field(repr=False)
    hash: str = ""

    def path(self, key, out_dir):
        """Artifact stem for ``key``, resolved against the output directory."""
        p = Path(self.paths[key])
        return p if p.is_absolute() else Path(out_dir) / p


def build_run_config(raw):
    """Validate a parsed JSON dict and construct the typed sections."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"seed", "grid", "covariance", "material", "physical", "boundary",
             "timestepping", "offline", "chain", "surrogate", "solve", "errors",
             "observation", "paths"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    gsec = _section(raw, "grid", ("dim", "fine_cells", "coarse_cells", "extent"))
    if "dim" not in gsec or "fine_cells" not in gsec or "coarse_cells" not in gsec:
        raise ConfigError("config section 'grid' needs dim, fine_cells and coarse_cells")
    grid = _build(GridSpec, _listify(gsec), "grid")

    csec = _section(raw, "covariance", ("sigma2", "corr_len", "n_terms"))
    cov_kwargs = {"sigma2": csec.get("sigma2", 1.0),
                  "corr_len": csec.get("corr_len", 0.2),
                  "L": csec.get("n_terms", 20)}
    covariance = _build(CovarianceSpec, cov_kwargs, "covariance")

    law = _build(MaterialLaw, _section(
        raw, "material", ("phi_min", "phi_max", "a", "b", "exponent", "eta")),
        "material")
    params = _build(PhysicalParams, _section(
        raw, "physical", ("biot_modulus", "alpha", "viscosity", "eta")), "physical")

    bsec = _section(raw, "boundary",
                    ("rollers", "robin_side", "gamma", "p_far", "surface"))
    bc = _build(BoundarySpec, {"dim": grid.dim, **_listify(bsec)}, "boundary")

    ts = _build(TimeSteppingConfig, _section(
        raw, "timestepping", ("t_max", "n_steps", "p0")), "timestepping")
    offline = _build(OfflineConfig, _section(
        raw, "offline", ("n_realizations", "snapshot_type", "m_plus", "weights")),
        "offline")

    chsec = _section(raw, "chain",
                     ("n_iter", "delta", "sigma_f", "beta", "seed",
                      "coarse_scale_convention", "sampler", "first_stage"))
    sampler = chsec.pop("sampler", _CHAIN_EXTRA["sampler"])
    first_stage = chsec.pop("first_stage", _CHAIN_EXTRA["first_stage"])
    if sampler not in ("single", "two-stage"):
        raise ConfigError("chain.sampler must be 'single' or 'two-stage'")
    if first_stage not in ("ms", "ml"):
        raise ConfigError("chain.first_stage must be 'ms' or 'ml'")
    chsec.setdefault("seed", seed + 2)
    chain = _build(ChainConfig, chsec, "chain")

    surrogate = {**_SURROGATE_DEFAULTS,
                 **_section(raw, "surrogate", tuple(_SURROGATE_DEFAULTS))}
    if surrogate["seed"] is None:
        surrogate["seed"] = seed + 3

    solve = {**_SOLVE_DEFAULTS, **_section(raw, "solve", tuple(_SOLVE_DEFAULTS))}
    if solve["solver"] not in ("fine", "ms"):
        raise ConfigError("solve.solver must be 'fine' or 'ms'")

    errors = {**_ERRORS_DEFAULTS, **_section(raw, "errors", tuple(_ERRORS_DEFAULTS))}
    if not errors["m_plus_list"] or any(
            not isinstance(m, int) or m < 0 for m in errors["m_plus_list"]):
        raise ConfigError("errors.m_plus_list must be nonnegative integers")

    observation = {**_OBS_DEFAULTS,
                   **_section(raw, "observation", tuple(_OBS_DEFAULTS))}
    if observation["source"] not in ("synthetic", "file"):
        raise ConfigError("observation.source must be 'synthetic' or 'file'")
    if observation["seed"] is None:
        observation["seed"] = seed + 1
    if observation["source"] == "file" and not observation["path"]:
        raise ConfigError("observation.source 'file' needs observation.path")

    psec = _section(raw, "paths", _PATH_KEYS)
    paths = {k: psec.get(k, k) for k in _PATH_KEYS}

    return RunConfig(
        grid=grid, covariance=covariance, law=law, params=params, bc=bc, ts=ts,
        offline=offline, chain=chain, sampler=sampler, first_stage=first_stage,
        surrogate=surrogate, solve=solve, errors=errors, observation=observation,
        paths=paths, seed=seed, raw=raw, hash=config_hash(raw),
    )


def load_config(path):
    """Read and validate a JSON config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return build_run_config(raw)
