"""Command-line runner emitting bit-stable CSV data files.

Commands:
  run                execute a preset or config-file run, write outputs
  check-derivatives  finite-difference audit of every derivative kernel
  list-presets       show the named experiment table
  diff               compare two output CSVs within a tolerance

Outputs of `run` under --out: trajectory.csv (per-step solver scalars),
diagnostics.csv (t, H, KE, PE, delta), error.csv (against the closed-form
oracle, when one applies), snapshots/t_<time>.csv (pushed sample clouds),
tracked/<idx>.csv (tracked-point position and velocity series),
checkpoints/step_<l>.csv (theta and p components), meta.json. Numeric CSV
fields carry 17 significant digits; identical config and seed reproduce
byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, integrator, maps, metric, potentials, presets

FMT = "%.17g"


def _fmt(x) -> str:
    return FMT % float(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (float, np.floating))
                              else str(v) for v in row) + "\n")


def run_command(argv) -> int:
    ap = argparse.ArgumentParser(prog="whflow run")
    ap.add_argument("--preset", default=None)
    ap.add_argument("--config", default=None, help="JSON config file (or a meta.json)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--dt", type=float, default=None)
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--samples", type=int, default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--diag-every", type=int, default=None, dest="diag_every")
    ap.add_argument("--resample", choices=["frozen", "per_step"], default=None)
    args = ap.parse_args(argv)

    file_cfg = None
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        if "config" in file_cfg and "map" not in file_cfg:
            file_cfg = file_cfg["config"]  # rerun from a meta.json
    if args.preset is None and file_cfg is None:
        print("error: need --preset or --config", file=sys.stderr)
        return 2
    try:
        cfg = presets.resolve(args.preset, file_cfg, vars(args))
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2

    t_start = time.perf_counter()
    try:
        record, desc, cfg = execute(cfg)
    except (integrator.DivergenceError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t_start

    out = Path(cfg["output_dir"])
    write_outputs(record, desc, cfg, out)
    meta = {
        "config": cfg,
        "seed": cfg["solver"]["seed"],
        "code_version": __version__,
        "wall_time_seconds": wall,
        "final_energies": {
            "hamiltonian": float(record.hamiltonian[-1]),
            "kinetic": float(record.kinetic[-1]),
            "potential": float(record.potential[-1]),
        },
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out} ({len(record)} rows, {wall:.1f}s)")
    return 0


def execute(cfg: dict):
    """Run the integrator for a resolved config dict."""
    desc = presets.build_map(cfg)
    potential = presets.build_potential(cfg)
    phi0 = presets.build_phi0(cfg)
    solver_cfg = presets.build_solver_config(cfg)
    theta0 = cfg.get("theta0")
    if theta0 is not None:
        theta0 = np.asarray(theta0, dtype=np.float64)
    tracked = cfg.get("tracked_points") or None
    record = integrator.run(desc, potential, phi0, solver_cfg,
                            tracked_points=tracked, theta0=theta0)
    return record, desc, cfg


def write_outputs(record, desc, cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    n_rows = len(record)

    _write_csv(out / "trajectory.csv",
               ["step", "t", "hamiltonian", "kinetic", "potential",
                "minres_iterations", "minres_residual", "fpi_residual"],
               ((l, float(record.times[l]), float(record.hamiltonian[l]),
                 float(record.kinetic[l]), float(record.potential[l]),
                 int(record.minres_iterations[l]),
                 float(record.minres_residual[l]), float(record.fpi_residual[l]))
                for l in range(n_rows)))

    _write_csv(out / "diagnostics.csv",
               ["t", "hamiltonian", "kinetic", "potential", "delta"],
               ((float(record.times[l]), float(record.hamiltonian[l]),
                 float(record.kinetic[l]), float(record.potential[l]),
                 float(record.delta[l])) for l in range(n_rows)))

    solver = cfg["solver"]
    eval_batch = maps.SampleBatch.standard_normal(
        solver["seed"] + presets.SNAPSHOT_SEED_OFFSET,
        int(cfg.get("snapshot_cap", 10000)), desc.d)

    oracle_fn = presets.build_oracle(cfg, record.times)
    if oracle_fn is not None:
        err = diagnostics.traj_error(desc, record.thetas, record.times,
                                     oracle_fn, eval_batch.points)
        _write_csv(out / "error.csv", ["t", "mean_err", "mse"],
                   ((float(t), float(e), float(s)) for t, e, s in err.per_time))

    for t_snap in cfg.get("snapshot_times", []):
        l = int(round(float(t_snap) / solver["h"]))
        if not 0 <= l < n_rows:
            raise ValueError(f"snapshot time {t_snap} outside the run horizon")
        X = maps.forward(desc, record.thetas[l], eval_batch.points)
        _write_csv(out / "snapshots" / f"t_{t_snap:g}.csv",
                   [f"x{k}" for k in range(desc.d)],
                   (tuple(float(v) for v in row) for row in X))

    if record.tracked_points is not None:
        for idx in range(record.tracked_points.shape[0]):
            rows = ((float(record.times[l]),
                     *(float(v) for v in record.tracked_positions[l, idx]),
                     *(float(v) for v in record.tracked_velocities[l, idx]))
                    for l in range(n_rows))
            _write_csv(out / "tracked" / f"{idx}.csv",
                       ["t"] + [f"x{k}" for k in range(desc.d)]
                       + [f"v{k}" for k in range(desc.d)], rows)

    every = int(cfg.get("checkpoint_every", 0) or 0)
    if every > 0:
        for l in range(0, n_rows, every):
            _write_csv(out / "checkpoints" / f"step_{l}.csv",
                       ["component", "theta", "p"],
                       ((k, float(record.thetas[l, k]), float(record.ps[l, k]))
                        for k in range(desc.m)))


# -- derivative audit ---------------------------------------------------------


def derivative_checks(d: int = 2, trials: int = 20, seed: int = 0,
                      width: int = 8) -> dict[str, tuple[float, float]]:
    """Max observed error per finite-difference/consistency check.

    Returns {check name: (worst value, threshold)}; every kernel the solver
    relies on is audited against central differences or a brute-force
    assembly on desk-size problems.
    """
    rng = np.random.default_rng(seed)
    descs = {
        "affine": maps.MapDescriptor("affine", d),
        "diagonal": maps.MapDescriptor("diagonal", d),
        "resnet": maps.MapDescriptor("resnet", d, (width, width)),
    }
    results: dict[str, tuple[float, float]] = {}

    def fd_dir(fn, theta, v, eps):
        return (fn(theta + eps * v) - fn(theta - eps * v)) / (2 * eps)

    for name, desc in descs.items():
        worst_jvp = worst_vjp = worst_sq = worst_adj = 0.0
        eye = np.eye(desc.m)
        for _ in range(trials):
            # moderate weights keep the FD oracle's truncation error small
            theta = (maps.init_identity(desc, seed)
                     + 0.1 * rng.standard_normal(desc.m))
            z = rng.standard_normal(d)
            v = rng.standard_normal(desc.m)
            v /= np.linalg.norm(v)  # jvp is linear in v; audit a unit direction
            u = rng.standard_normal(d)
            eps = 1e-4 * (1 + np.linalg.norm(theta))

            jv = maps.jvp(desc, theta, z, v)
            fd = fd_dir(lambda th: maps.forward(desc, th, z), theta, v, eps)
            worst_jvp = max(worst_jvp,
                            np.linalg.norm(jv - fd) / max(np.linalg.norm(fd), 1e-12))

            vj = maps.vjp(desc, theta, z, u)
            worst_adj = max(worst_adj, abs(jv @ u - vj @ v)
                            / max(abs(jv @ u), 1e-12))
            # full FD gradient of theta -> T(z) . u, compared in vector norm
            fd_vj = np.array([fd_dir(lambda th: maps.forward(desc, th, z) @ u,
                                     theta, e, eps) for e in eye])
            worst_vjp = max(worst_vjp, np.linalg.norm(vj - fd_vj)
                            / max(np.linalg.norm(fd_vj), 1e-12))

            sq = maps.jvp_sq_grad(desc, theta, z, v)
            if desc.kind in ("affine", "diagonal"):
                worst_sq = max(worst_sq, float(np.max(np.abs(sq))))
            else:
                def g(th):
                    y = maps.jvp(desc, th, z, v)
                    return np.array(0.5 * float(y @ y))

                fd_sq = np.array([fd_dir(g, theta, e, eps) for e in eye])
                worst_sq = max(worst_sq, np.linalg.norm(sq - fd_sq)
                               / max(np.linalg.norm(fd_sq), 1e-12))
        results[f"{name}.jvp_fd"] = (worst_jvp, 1e-5)
        results[f"{name}.vjp_fd"] = (worst_vjp, 1e-5)
        results[f"{name}.adjoint"] = (worst_adj, 1e-12)
        results[f"{name}.jvp_sq_grad"] = (worst_sq, 1e-5)

    # metric operator versus brute-force assembly on a small resnet
    desc = descs["resnet"]
    theta = maps.init_identity(desc, seed) + 0.3 * rng.standard_normal(desc.m)
    batch = maps.SampleBatch.standard_normal(seed + 1, 64, d)
    op = metric.MetricOperator(desc, theta, batch)
    G = np.zeros((desc.m, desc.m))
    for i in range(batch.n):
        J = np.column_stack([maps.jvp(desc, theta, batch.points[i], e)
                             for e in np.eye(desc.m)])
        G += J.T @ J
    G /= batch.n
    eta = rng.standard_normal(desc.m)
    results["metric.apply_vs_assembled"] = (
        float(np.max(np.abs(op.apply(eta) - G @ eta))), 1e-10)

    # potential gradients versus finite differences of the value
    pots = {
        "quadratic": potentials.QuadraticPotential(rng.uniform(0.3, 2.0, d)),
        "interaction": potentials.InteractionPotential(0.1),
    }
    pbatch = maps.SampleBatch.standard_normal(seed + 2, 48, d)
    for pname, pot in pots.items():
        worst = 0.0
        for _ in range(max(3, trials // 4)):
            theta = (maps.init_identity(desc, seed)
                     + 0.3 * rng.standard_normal(desc.m))
            w = rng.standard_normal(desc.m)
            eps = 1e-5 * (1 + np.linalg.norm(theta))
            g = potentials.grad(pot, desc, theta, pbatch)
            fd = (potentials.value(pot, desc, theta + eps * w, pbatch)
                  - potentials.value(pot, desc, theta - eps * w, pbatch)) / (2 * eps)
            worst = max(worst, abs(g @ w - fd) / max(abs(fd), 1e-10))
        results[f"potential.{pname}_grad_fd"] = (worst, 1e-5)
    return results


def check_derivatives_command(argv) -> int:
    ap = argparse.ArgumentParser(prog="whflow check-derivatives")
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    results = derivative_checks(args.d, args.trials, args.seed)
    ok = True
    for name, (value, threshold) in results.items():
        passed = value < threshold
        ok = ok and passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:32s} "
              f"max {_fmt(value)}  (threshold {threshold:g})")
    return 0 if ok else 1


def list_presets_command(argv) -> int:
    for name in sorted(presets.PRESETS):
        cfg = presets.PRESETS[name]
        solver = cfg["solver"]
        print(f"{name:20s} map={cfg['map']['kind']:8s} d={cfg['map']['d']:<3d}"
              f" potential={cfg['potential']['kind']:16s}"
              f" h={solver['h']:g} steps={solver['steps']}"
              f" T={solver['h'] * solver['steps']:g}")
    return 0


def diff_command(argv) -> int:
    ap = argparse.ArgumentParser(prog="whflow diff")
    ap.add_argument("a")
    ap.add_argument("b")
    ap.add_argument("--rtol", type=float, default=1e-12)
    ap.add_argument("--atol", type=float, default=0.0)
    args = ap.parse_args(argv)

    def load(path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        return header, data

    try:
        ha, da = load(args.a)
        hb, db = load(args.b)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if ha != hb:
        print(f"headers differ: {ha} vs {hb}")
        return 1
    if da.shape != db.shape:
        print(f"shapes differ: {da.shape} vs {db.shape}")
        return 1
    both_nan = np.isnan(da) & np.isnan(db)
    close = np.isclose(da, db, rtol=args.rtol, atol=args.atol) | both_nan
    if np.all(close):
        print(f"match: {da.shape[0]} rows within rtol={args.rtol:g} atol={args.atol:g}")
        return 0
    bad = np.argwhere(~close)
    r, c = bad[0]
    print(f"{bad.shape[0]} mismatches; first at row {r + 1} column {ha[c]}: "
          f"{_fmt(da[r, c])} vs {_fmt(db[r, c])}")
    return 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    commands = {
        "run": run_command,
        "check-derivatives": check_derivatives_command,
        "list-presets": list_presets_command,
        "diff": diff_command,
    }
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: whflow {run,check-derivatives,list-presets,diff} [options]")
        return 0 if argv else 2
    cmd = commands.get(argv[0])
    if cmd is None:
        print(f"error: unknown command {argv[0]!r}", file=sys.stderr)
        return 2
    return cmd(argv[1:])


if __name__ == "__main__":
    sys.exit(main())
