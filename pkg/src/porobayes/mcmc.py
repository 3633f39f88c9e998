"""Random-walk samplers over the expansion coefficients theta.

The likelihood compares the final-time surface displacement trace of a
forward model against observed data through the relative misfit

    E(theta) = ||F(theta) - F_obs||^2 / ||F_obs||^2.

``run_single_stage`` accepts or rejects with the fine model only.
``run_two_stage`` screens each proposal with a cheap first stage (multiscale
solve or trained surrogate) at scale sigma_c, and only survivors pay for a
fine solve; the second-stage ratio removes the screening bias.

Every iteration consumes a fixed block of random numbers (L proposal
normals, then two uniforms) no matter which branch runs, so runs with
matched seeds stay draw-for-draw comparable across sampler variants and
parameter sweeps.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .biot_fem import assemble_fine, solve_fine, trace_surface
from .gmsfem import coarse_observable
from .mesh import surface_nodes
from .randfield import material_fields, porosity_from_field, realize_field

__all__ = [
    "Observable",
    "ChainConfig",
    "ChainRecord",
    "misfit_relative",
    "misfit_general",
    "random_walk_propose",
    "accept_prob_single",
    "accept_prob_stage1",
    "accept_prob_stage2",
    "run_single_stage",
    "run_two_stage",
    "fine_forward",
    "ms_forward",
]


@dataclass
class Observable:
    """Flat observable vector plus its layout for validation."""

    values: np.ndarray
    dim: int = 0
    n_surface: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.dim and self.n_surface and self.values.size != self.dim * self.n_surface:
            raise ValueError("observable length does not match dim * n_surface")


def _values(obs):
    return obs.values if isinstance(obs, Observable) else np.asarray(obs, dtype=float)


def misfit_relative(F, F_obs):
    """Relative squared misfit ||F - F_obs||^2 / ||F_obs||^2."""
    F = _values(F)
    F_obs = _values(F_obs)
    if F.shape != F_obs.shape:
        raise ValueError(f"observable shapes differ: {F.shape} vs {F_obs.shape}")
    denom = float(F_obs @ F_obs)
    if denom <= 0.0:
        raise ValueError("observed data has zero norm")
    d = F - F_obs
    return float(d @ d) / denom


def misfit_general(times, sim_series, obs_series, surface_weights=None,
                   sim_fields=None, obs_fields=None):
    """Sensor-series plus snapshot-field misfit.

    Point sensors contribute sum_i int_0^T |u_i(t) - u_obs,i(t)|^2 dt via
    trapezoidal quadrature over ``times``; optional field snapshots add
    sum_j int_S |u(x, t_j) - u_obs(x, t_j)|^2 ds with the given surface
    quadrature weights.

    Parameters
    ----------
    times : (n_t,) sample times.
    sim_series, obs_series : (n_sensors, n_t, n_comp) arrays.
    surface_weights : (n_surf,) quadrature weights, required with fields.
    sim_fields, obs_fields : (n_snap, n_surf, n_comp) arrays, optional.
    """
    sim_series = np.asarray(sim_series, dtype=float)
    obs_series = np.asarray(obs_series, dtype=float)
    if sim_series.size == 0 and (sim_fields is None or np.size(sim_fields) == 0):
        raise ValueError("no observation data given")
    if sim_series.shape != obs_series.shape:
        raise ValueError("sensor series shapes differ")
    total = 0.0
    if sim_series.size:
        times = np.asarray(times, dtype=float)
        sq = np.sum((sim_series - obs_series) ** 2, axis=2)
        total += float(np.trapezoid(sq, times, axis=1).sum())
    if sim_fields is not None:
        sim_fields = np.asarray(sim_fields, dtype=float)
        obs_fields = np.asarray(obs_fields, dtype=float)
        if sim_fields.shape != obs_fields.shape:
            raise ValueError("snapshot field shapes differ")
        if surface_weights is None:
            raise ValueError("surface quadrature weights required with field snapshots")
        w = np.asarray(surface_weights, dtype=float)
        sq = np.sum((sim_fields - obs_fields) ** 2, axis=2)
        total += float((sq @ w).sum())
    return total


def random_walk_propose(theta, delta, rng):
    """Symmetric proposal theta + delta * r with r ~ N(0, I)."""
    theta = np.asarray(theta, dtype=float)
    return theta + delta * rng.standard_normal(theta.shape[0])


def _clamped_exp(arg):
    return 1.0 if arg >= 0.0 else math.exp(arg)


def accept_prob_single(E_new, E_old, sigma_f):
    """min(1, exp(-(E_new - E_old) / sigma_f^2))."""
    return _clamped_exp(-(E_new - E_old) / sigma_f**2)


def accept_prob_stage1(Es_new, Es_old, sigma_c2):
    """Screening probability min(1, exp(-(E*_new - E*_old) / sigma_c^2))."""
    return _clamped_exp(-(Es_new - Es_old) / sigma_c2)


def accept_prob_stage2(E_new, E_old, Es_new, Es_old, sigma_f, sigma_c2):
    """Correction min(1, exp(-dE / sigma_f^2 + dE* / sigma_c^2))."""
    arg = -(E_new - E_old) / sigma_f**2 + (Es_new - Es_old) / sigma_c2
    return _clamped_exp(arg)


@dataclass
class ChainConfig:
    """Sampler settings.

    ``coarse_scale_convention`` picks how the screening scale derives from
    (beta, sigma_f): ``"variance"`` sets sigma_c^2 = beta sigma_f^2 and
    ``"stddev"`` sets sigma_c = beta sigma_f.
    """

    n_iter: int = 1000
    delta: float = 0.5
    sigma_f: float = 0.02
    beta: float = 2.0
    seed: int = 0
    theta_init: np.ndarray = None
    coarse_scale_convention: str = "variance"

    def __post_init__(self):
        if self.n_iter < 0:
            raise ValueError("n_iter must be nonnegative")
        if self.delta <= 0 or self.sigma_f <= 0 or self.beta <= 0:
            raise ValueError("delta, sigma_f and beta must be positive")
        if self.coarse_scale_convention not in ("variance", "stddev"):
            raise ValueError("coarse_scale_convention must be 'variance' or 'stddev'")
        if self.theta_init is not None:
            self.theta_init = np.asarray(self.theta_init, dtype=float)

    @property
    def sigma_c2(self):
        if self.coarse_scale_convention == "variance":
            return self.beta * self.sigma_f**2
        return (self.beta * self.sigma_f) ** 2


@dataclass
class ChainRecord:
    """Per-iteration log of one run plus counters.

    ``stage1_E`` / ``stage2_E`` are NaN on iterations where that stage did
    not run; for the single-stage sampler only ``stage2_E`` (the fine
    misfit) is populated.
    """

    theta_proposed: np.ndarray = field(repr=False)
    stage1_E: np.ndarray = field(repr=False)
    stage1_pass: np.ndarray = field(repr=False)
    stage2_E: np.ndarray = field(repr=False)
    accepted: np.ndarray = field(repr=False)
    theta_current: np.ndarray = field(repr=False)
    theta_final: np.ndarray = field(repr=False)
    accepted_thetas: np.ndarray = field(repr=False)
    n_iter: int
    n_fine: int
    n_accepted: int
    two_stage: bool

    def summary(self):
        return {
            "iterations": int(self.n_iter),
            "fine_evaluations": int(self.n_fine),
            "accepted": int(self.n_accepted),
            "acceptance_rate": (self.n_accepted / self.n_iter) if self.n_iter else 0.0,
            "two_stage": bool(self.two_stage),
        }

    def to_csv(self, path, config_hash=""):
        """Write the per-iteration log; floats use shortest round-trip repr."""
        with open(path, "w", newline="") as fh:
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            w = csv.writer(fh)
            w.writerow(["iteration", "stage1_E", "stage1_pass", "stage2_E",
                        "accepted", "theta_norm"])
            for i in range(self.n_iter):
                w.writerow([
                    i,
                    repr(float(self.stage1_E[i])),
                    int(self.stage1_pass[i]),
                    repr(float(self.stage2_E[i])),
                    int(self.accepted[i]),
                    repr(float(np.linalg.norm(self.theta_proposed[i]))),
                ])


def _init_record(n_iter, L):
    return dict(
        theta_proposed=np.zeros((n_iter, L)),
        stage1_E=np.full(n_iter, np.nan),
        stage1_pass=np.zeros(n_iter, dtype=bool),
        stage2_E=np.full(n_iter, np.nan),
        accepted=np.zeros(n_iter, dtype=bool),
        theta_current=np.zeros((n_iter, L)),
    )


def _initial_theta(config, L, rng):
    if config.theta_init is not None:
        theta = np.asarray(config.theta_init, dtype=float)
        if theta.shape != (L,):
            raise ValueError(f"theta_init has shape {theta.shape}, expected ({L},)")
        return theta
    return rng.standard_normal(L)


def run_single_stage(config, forward, F_obs, L=None):
    """Metropolis sampling with the fine model only.

    Parameters
    ----------
    config : ChainConfig
    forward : callable theta -> observable array (the fine model).
    F_obs : observed observable.
    L : int, optional
        Parameter dimension; defaults to the observed theta_init length or
        the observable length (identity forward).
    """
    F_obs = _values(F_obs)
    if L is None:
        L = config.theta_init.shape[0] if config.theta_init is not None else F_obs.size
    rng = np.random.default_rng(config.seed)
    theta = _initial_theta(config, L, rng)
    E_cur = misfit_relative(forward(theta), F_obs)

    rec = _init_record(config.n_iter, L)
    acc = []
    n_acc = 0
    for i in range(config.n_iter):
        r = rng.standard_normal(L)
        u1 = rng.uniform()
        rng.uniform()  # stage-2 slot, kept for matched-seed comparability
        prop = theta + config.delta * r
        E_new = misfit_relative(forward(prop), F_obs)
        rec["theta_proposed"][i] = prop
        rec["stage2_E"][i] = E_new
        if u1 < accept_prob_single(E_new, E_cur, config.sigma_f):
            theta, E_cur = prop, E_new
            rec["accepted"][i] = True
            acc.append(prop.copy())
            n_acc += 1
        rec["theta_current"][i] = theta
    return ChainRecord(
        **rec, theta_final=theta.copy(),
        accepted_thetas=np.array(acc) if acc else np.zeros((0, L)),
        n_iter=config.n_iter, n_fine=config.n_iter, n_accepted=n_acc,
        two_stage=False,
    )


def run_two_stage(config, first_stage, fine, F_obs, L=None):
    """Two-stage sampling: screen with ``first_stage``, confirm with ``fine``.

    Counters satisfy n_accepted <= n_fine <= n_iter; ``n_fine`` counts the
    proposals that passed the screening stage.
    """
    F_obs = _values(F_obs)
    if L is None:
        L = config.theta_init.shape[0] if config.theta_init is not None else F_obs.size
    sigma_c2 = config.sigma_c2
    rng = np.random.default_rng(config.seed)
    theta = _initial_theta(config, L, rng)
    E_cur = misfit_relative(fine(theta), F_obs)
    Es_cur = misfit_relative(first_stage(theta), F_obs)

    rec = _init_record(config.n_iter, L)
    acc = []
    n_acc = 0
    n_fine = 0
    for i in range(config.n_iter):
        r = rng.standard_normal(L)
        u1 = rng.uniform()
        u2 = rng.uniform()
        prop = theta + config.delta * r
        rec["theta_proposed"][i] = prop
        Es_new = misfit_relative(first_stage(prop), F_obs)
        rec["stage1_E"][i] = Es_new
        if u1 < accept_prob_stage1(Es_new, Es_cur, sigma_c2):
            rec["stage1_pass"][i] = True
            n_fine += 1
            E_new = misfit_relative(fine(prop), F_obs)
            rec["stage2_E"][i] = E_new
            if u2 < accept_prob_stage2(E_new, E_cur, Es_new, Es_cur,
                                       config.sigma_f, sigma_c2):
                theta, E_cur, Es_cur = prop, E_new, Es_new
                rec["accepted"][i] = True
                acc.append(prop.copy())
                n_acc += 1
        rec["theta_current"][i] = theta
    return ChainRecord(
        **rec, theta_final=theta.copy(),
        accepted_thetas=np.array(acc) if acc else np.zeros((0, L)),
        n_iter=config.n_iter, n_fine=n_fine, n_accepted=n_acc,
        two_stage=True,
    )


def fine_forward(fine_mesh, kle, law, params, bc, ts, surface_ids=None):
    """theta -> final-time surface trace via the fine solver."""
    if surface_ids is None:
        surface_ids = surface_nodes(fine_mesh, bc.surface)

    def forward(theta):
        Y = realize_field(kle, theta)
        fields = material_fields(porosity_from_field(Y, law), law)
        system = assemble_fine(fine_mesh, fields, params, bc, keep_raw=False)
        sol = solve_fine(system, ts)
        return trace_surface(sol, fine_mesh, surface_ids)

    return forward


def ms_forward(fine_mesh, kle, law, params, bc, ts, basis, surface_ids=None):
    """theta -> final-time surface trace via the multiscale solver."""
    if surface_ids is None:
        surface_ids = surface_nodes(fine_mesh, bc.surface)

    def forward(theta):
        Y = realize_field(kle, theta)
        fields = material_fields(porosity_from_field(Y, law), law)
        system = assemble_fine(fine_mesh, fields, params, bc, keep_raw=False)
        return coarse_observable(system, basis, ts, surface_ids)

    return forward
