"""Batch command-line front end.

    porobayes <kle|basis|solve|errors|dataset|train|mcmc> --config FILE
              [--seed N] [--out DIR]

Each command is a pure function of the config file, its input artifacts and
the seeds: repeated runs write byte-identical outputs (no timestamps).  Every
output embeds the config hash.  Exit codes: 0 success, 2 configuration or
artifact error, 3 numerical failure.  The environment variable
PORBAYES_THREADS caps the worker count of the offline basis stage.

Seeds derive from the master ``seed`` unless a section overrides them:
observation truth seed+1, chain seed+2, surrogate dataset seed+3, target
realization for solve/errors seed+4.  Offline realizations use the master
seed itself.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import container
from .biot_fem import assemble_fine, roller_dofs, solve_fine, trace_surface
from .config import load_config
from .errors import ConfigError, NumericalError
from .gmsfem import (assemble_ms_basis, averaged_fields, build_local_bases,
                     coarse_observable, dof_table, relative_errors, solve_coarse)
from .mcmc import fine_forward, misfit_relative, ms_forward, run_single_stage, run_two_stage
from .mesh import build_coarse_mesh, build_fine_mesh, partition_of_unity, surface_nodes
from .randfield import (build_kle, energy_ratio, material_fields,
                        porosity_from_field, realize_field)
from .surrogate import (NnSpec, TrainConfig, build_model, forward, generate_dataset,
                        metrics, ml_forward, train, SurrogateModel)

__all__ = ["main"]


def _workers():
    try:
        return max(1, int(os.environ.get("PORBAYES_THREADS", "1")))
    except ValueError:
        return 1


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows, config_hash):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _meshes(cfg):
    fine = build_fine_mesh(cfg.grid)
    coarse = build_coarse_mesh(cfg.grid)
    return fine, coarse


def _offline_realizations(cfg, kle):
    rng = np.random.default_rng(cfg.seed)
    out = []
    for _ in range(cfg.offline.n_realizations):
        theta = rng.standard_normal(cfg.covariance.L)
        phi = porosity_from_field(realize_field(kle, theta), cfg.law)
        out.append(material_fields(phi, cfg.law))
    return out


def _target_theta(cfg, kle):
    src = cfg.solve["theta"]
    if src == "sample":
        return np.random.default_rng(cfg.seed + 4).standard_normal(cfg.covariance.L)
    theta, _ = container.read_array(src)
    if theta.ndim != 1 or theta.size != cfg.covariance.L:
        raise ConfigError(
            f"theta file {src}: expected a vector of length {cfg.covariance.L}"
        )
    return theta


def _load_basis_for(cfg, out_dir, fine):
    basis = container.load_basis(cfg.path("basis", out_dir), fine.spec.grid_hash())
    if basis.snapshot_type != cfg.offline.snapshot_type:
        raise ConfigError(
            f"basis artifact holds {basis.snapshot_type} snapshots, "
            f"config asks for {cfg.offline.snapshot_type}"
        )
    return basis


def cmd_kle(cfg, out_dir):
    fine, _ = _meshes(cfg)
    kle = build_kle(cfg.covariance, fine)
    stem = cfg.path("kle", out_dir)
    container.save_kle(stem, kle, extra={"config_hash": cfg.hash, "seed": cfg.seed})
    _write_json(str(stem) + ".run.json", {
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "n_terms": cfg.covariance.L,
        "energy_fraction": energy_ratio(kle, cfg.covariance.L),
    })
    return 0


def cmd_basis(cfg, out_dir):
    fine, coarse = _meshes(cfg)
    kle = container.load_kle(cfg.path("kle", out_dir), fine.spec.grid_hash())
    pou = partition_of_unity(coarse, fine)
    realizations = _offline_realizations(cfg, kle)
    avg = averaged_fields(realizations, cfg.law.eta, cfg.offline.weight_vector())
    locs = build_local_bases(fine, coarse, realizations, avg, cfg.offline,
                             workers=_workers())
    basis = assemble_ms_basis(fine, coarse, pou, locs, cfg.offline.m_plus,
                              constrained=roller_dofs(fine, cfg.bc),
                              snapshot_type=cfg.offline.snapshot_type)
    stem = cfg.path("basis", out_dir)
    container.save_basis(stem, basis, extra={"config_hash": cfg.hash, "seed": cfg.seed})
    rows = [(lb.node, float(lb.pressure_vals[-1]), float(lb.displacement_vals[-1]))
            for lb in locs]
    _write_csv(Path(out_dir) / "basis_eigs.csv",
               ["node", "pressure_eig_tail", "displacement_eig_tail"], rows, cfg.hash)
    _write_json(str(stem) + ".run.json", {
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "m_plus": cfg.offline.m_plus,
        "dof_coarse": basis.dof_coarse,
        "snapshot_type": cfg.offline.snapshot_type,
    })
    return 0


def cmd_solve(cfg, out_dir):
    fine, coarse = _meshes(cfg)
    kle = container.load_kle(cfg.path("kle", out_dir), fine.spec.grid_hash())
    theta = _target_theta(cfg, kle)
    phi = porosity_from_field(realize_field(kle, theta), cfg.law)
    system = assemble_fine(fine, material_fields(phi, cfg.law), cfg.params, cfg.bc,
                           keep_raw=False)
    if cfg.solve["solver"] == "fine":
        sol = solve_fine(system, cfg.ts)
    else:
        basis = _load_basis_for(cfg, out_dir, fine)
        sol = solve_coarse(system, basis, cfg.ts)
    surf = surface_nodes(fine, cfg.bc.surface)
    F = trace_surface(sol, fine, surf)

    rows = []
    n = fine.n_nodes
    for k, t in enumerate(sol.times):
        row = [k, float(t), float(sol.p[k].min()), float(sol.p[k].mean()),
               float(sol.p[k].max())]
        for c in range(fine.dim):
            uc = sol.u[k, c * n:(c + 1) * n]
            row += [float(uc.min()), float(uc.mean()), float(uc.max())]
        rows.append(row)
    header = ["step", "time", "p_min", "p_mean", "p_max"]
    for c in range(fine.dim):
        a = "xyz"[c]
        header += [f"u{a}_min", f"u{a}_mean", f"u{a}_max"]
    _write_csv(Path(out_dir) / "solution.csv", header, rows, cfg.hash)
    container.write_array(
        str(cfg.path("observable", out_dir)) + ".pbm", F,
        {"config_hash": cfg.hash, "solver": cfg.solve["solver"],
         "surface": cfg.bc.surface, "n_surface": int(surf.size),
         "dim": fine.dim, "grid_hash": fine.spec.grid_hash()})
    return 0


def cmd_errors(cfg, out_dir):
    fine, coarse = _meshes(cfg)
    kle = container.load_kle(cfg.path("kle", out_dir), fine.spec.grid_hash())
    m_list = list(cfg.errors["m_plus_list"])
    pou = partition_of_unity(coarse, fine)
    realizations = _offline_realizations(cfg, kle)
    avg = averaged_fields(realizations, cfg.law.eta, cfg.offline.weight_vector())
    locs = build_local_bases(fine, coarse, realizations, avg, cfg.offline,
                             max_m_plus=max(m_list), workers=_workers())

    theta = _target_theta(cfg, kle)
    phi = porosity_from_field(realize_field(kle, theta), cfg.law)
    system = assemble_fine(fine, material_fields(phi, cfg.law), cfg.params, cfg.bc,
                           keep_raw=False)
    sol_f = solve_fine(system, cfg.ts)

    table = dof_table(fine.dim, coarse.n_nodes, m_list)
    rows = []
    for (m, M_p, M_u, dof_c) in table:
        basis = assemble_ms_basis(fine, coarse, pou, locs, m,
                                  constrained=system.constrained,
                                  snapshot_type=cfg.offline.snapshot_type)
        sol_ms = solve_coarse(system, basis, cfg.ts)
        e_p, e_u = relative_errors(sol_f, sol_ms, fine)
        rows.append([m, M_p, M_u, dof_c, float(e_p), float(e_u)])
    _write_csv(Path(out_dir) / "errors.csv",
               ["m_plus", "M_p", "M_u", "DOF_c", "e_p_percent", "e_u_percent"],
               rows, cfg.hash)
    return 0


def cmd_dataset(cfg, out_dir):
    fine, coarse = _meshes(cfg)
    kle = container.load_kle(cfg.path("kle", out_dir), fine.spec.grid_hash())
    basis = _load_basis_for(cfg, out_dir, fine)
    datasets = generate_dataset(fine, kle, cfg.law, cfg.params, cfg.bc, cfg.ts,
                                basis, cfg.surrogate["n_samples"],
                                seed=cfg.surrogate["seed"])
    stem = cfg.path("dataset", out_dir)
    container.save_datasets(stem, datasets, extra={"config_hash": cfg.hash})
    rows = [(d.component, d.n_samples,
             float(d.q_transform.lo.min()), float(d.q_transform.hi.max()))
            for d in datasets]
    _write_csv(Path(out_dir) / "dataset_summary.csv",
               ["component", "n_samples", "q_min", "q_max"], rows, cfg.hash)
    return 0


def cmd_train(cfg, out_dir):
    fine, _ = _meshes(cfg)
    datasets = container.load_datasets(cfg.path("dataset", out_dir))
    sur = cfg.surrogate
    spec = NnSpec(input_shape=tuple(cfg.grid.fine_cells[::-1]),
                  conv_channels=tuple(sur["conv_channels"]),
                  dense_widths=tuple(sur["dense_widths"]),
                  n_outputs=datasets[0].q.shape[1],
                  dropout=sur["dropout"])
    tcfg_base = dict(epochs=sur["epochs"], lr=sur["lr"],
                     batch_size=sur["batch_size"], val_split=sur["val_split"])
    surrogates = []
    metric_rows = []
    history_rows = []
    for d in datasets:
        model = build_model(spec, seed=sur["seed"] + 50 + d.component)
        tcfg = TrainConfig(seed=sur["seed"] + 100 + d.component, **tcfg_base)
        history, _ = train(model, d.x, d.q, tcfg)
        pred = d.q_transform.unscale(forward(model, d.x))
        ref = d.q_transform.unscale(d.q)
        mse, rmse, mae = metrics(pred, ref)
        metric_rows.append([d.component, float(history[-1]) if history else 0.0,
                            float(mse), float(rmse), float(mae)])
        history_rows += [[d.component, e, float(l)] for e, l in enumerate(history)]
        surrogates.append(SurrogateModel(model=model, x_transform=d.x_transform,
                                         q_transform=d.q_transform,
                                         component=d.component))
    stem = cfg.path("models", out_dir)
    container.save_surrogates(stem, surrogates, extra={"config_hash": cfg.hash})
    _write_csv(Path(out_dir) / "train_metrics.csv",
               ["component", "final_loss", "mse", "rmse_percent", "mae_percent"],
               metric_rows, cfg.hash)
    _write_csv(Path(out_dir) / "train_history.csv",
               ["component", "epoch", "loss"], history_rows, cfg.hash)
    return 0


def _observed(cfg, out_dir, fwd_fine, L):
    if cfg.observation["source"] == "file":
        path = cfg.observation["path"]
        p = Path(path)
        F, _ = container.read_array(p if p.is_absolute() else Path(out_dir) / p)
        return F
    theta_true = np.random.default_rng(cfg.observation["seed"]).standard_normal(L)
    return fwd_fine(theta_true)


def cmd_mcmc(cfg, out_dir):
    fine, coarse = _meshes(cfg)
    kle = container.load_kle(cfg.path("kle", out_dir), fine.spec.grid_hash())
    surf = surface_nodes(fine, cfg.bc.surface)
    fwd_fine = fine_forward(fine, kle, cfg.law, cfg.params, cfg.bc, cfg.ts,
                            surface_ids=surf)
    F_obs = _observed(cfg, out_dir, fwd_fine, cfg.covariance.L)

    if cfg.sampler == "single":
        record = run_single_stage(cfg.chain, fwd_fine, F_obs, L=cfg.covariance.L)
        stage = "fine-only"
    else:
        if cfg.first_stage == "ms":
            basis = _load_basis_for(cfg, out_dir, fine)
            fwd_first = ms_forward(fine, kle, cfg.law, cfg.params, cfg.bc, cfg.ts,
                                   basis, surface_ids=surf)
        else:
            surrogates = container.load_surrogates(cfg.path("models", out_dir))
            fwd_first = ml_forward(surrogates, fine, kle, cfg.law)
        record = run_two_stage(cfg.chain, fwd_first, fwd_fine, F_obs,
                               L=cfg.covariance.L)
        stage = cfg.first_stage

    record.to_csv(Path(out_dir) / "chain.csv", config_hash=cfg.hash)
    container.write_array(Path(out_dir) / "accepted_theta.pbm",
                          record.accepted_thetas,
                          {"config_hash": cfg.hash, "n_accepted": record.n_accepted})
    summary = record.summary()
    summary.update({
        "config_hash": cfg.hash,
        "first_stage": stage,
        "seed": cfg.seed,
        "chain_seed": cfg.chain.seed,
        "observation_seed": (cfg.observation["seed"]
                            if cfg.observation["source"] == "synthetic" else None),
        "sigma_f": cfg.chain.sigma_f,
        "beta": cfg.chain.beta,
        "delta": cfg.chain.delta,
    })
    _write_json(Path(out_dir) / "mcmc_summary.json", summary)
    return 0


_COMMANDS = {
    "kle": cmd_kle,
    "basis": cmd_basis,
    "solve": cmd_solve,
    "errors": cmd_errors,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "mcmc": cmd_mcmc,
}


def _parser():
    ap = argparse.ArgumentParser(
        prog="porobayes",
        description="Poroelastic Bayesian inversion pipeline (batch commands).")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--out", default=".", help="output directory")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            raw = dict(cfg.raw)
            raw["seed"] = args.seed
            from .config import build_run_config

            cfg = build_run_config(raw)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
