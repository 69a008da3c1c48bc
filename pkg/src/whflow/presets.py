"""Named experiment configurations and config-dict resolution.

A run configuration is a plain JSON-able dict with sections ``map``,
``potential``, ``phi0``, ``solver`` plus output controls. Presets fill the
dict; a config file overrides preset keys; command-line flags override both.
Desk-scale variants (smaller batches, shorter horizons) ship alongside the
full-scale presets and are what the acceptance suite exercises.
"""

from __future__ import annotations

import copy

import numpy as np

from . import integrator, maps, oracles, potentials

SNAPSHOT_SEED_OFFSET = 2_000_003


def _base(**overrides):
    cfg = {
        "map": {"kind": "resnet", "d": 2, "hidden": [50, 50]},
        "potential": {"kind": "zero"},
        "phi0": {"kind": "zero"},
        "solver": {
            "h": 0.002, "steps": 1000, "n_in": 1, "gamma": 0.5,
            "minres_tol": 3e-4, "minres_max_iter": None,
            "n_metric": 50000, "n_potential": None,
            "resample": "frozen", "seed": 0, "stepper": "symplectic",
            "inner_mode": "gd", "warm_start": True, "diag_every": 10,
        },
        "tracked_points": [],
        "snapshot_times": [],
        "snapshot_cap": 10000,
        "checkpoint_every": 0,
        "theta0": None,
        "oracle": "auto",
        "output_dir": "runs/out",
    }
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


def _lissajous(ratio_num, ratio_den):
    r2 = (ratio_num / ratio_den) ** 2
    return _base(
        potential={"kind": "quadratic", "a": [4.0 * r2, 4.0]},
        phi0={"kind": "quadratic_diag", "coeffs": [1.0, -1.0]},
        solver={"h": 0.002, "steps": 20000},
        tracked_points=[[1.0, 1.0]],
    )


PRESETS = {
    # zero potential: straight-line transport with a caustic at t = 1
    "geodesic2d": _base(
        phi0={"kind": "quadratic_diag", "coeffs": [-1.0, 0.0]},
        solver={"h": 0.002, "steps": 2000},
        tracked_points=[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.5]],
        snapshot_times=[0.0, 0.5, 1.0, 1.5, 2.0],
    ),
    "geodesic2d-affine": _base(
        map={"kind": "affine", "d": 2, "hidden": []},
        phi0={"kind": "quadratic_diag", "coeffs": [-1.0, 0.0]},
        solver={"h": 0.002, "steps": 1250, "n_metric": 5000,
                "minres_tol": 1e-12},
        tracked_points=[[1.0, 0.0], [1.0, 2.0], [-0.5, 0.3]],
        snapshot_times=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5],
    ),
    # 2-d harmonic oscillator, exactly representable by the affine family
    "ho2d-affine": _base(
        map={"kind": "affine", "d": 2, "hidden": []},
        potential={"kind": "quadratic", "a": [2.25, 0.36]},
        phi0={"kind": "quadratic_diag", "coeffs": [-1.0, 0.0]},
        solver={"h": 0.002, "steps": 10000, "n_metric": 5000,
                "minres_tol": 1e-10},
        tracked_points=[[1.0, 1.0]],
    ),
    "ho2d-resnet": _base(
        potential={"kind": "quadratic", "a": [2.25, 0.36]},
        phi0={"kind": "quadratic_diag", "coeffs": [-1.0, 0.0]},
        solver={"h": 0.005, "steps": 1257, "n_metric": 5000},
        tracked_points=[[1.0, 1.0]],
    ),
    "lissajous-r12": _lissajous(1, 2),
    "lissajous-r23": _lissajous(2, 3),
    "lissajous-r34": _lissajous(3, 4),
    "velocity2d": _base(
        potential={"kind": "quadratic", "a": [1.0, 2.0 / 3.0]},
        phi0={"kind": "quadratic_diag", "coeffs": [-1.0, 0.0]},
        solver={"h": 0.002, "steps": 1000},
        tracked_points=[[1.0, 0.5], [0.5, -1.0]],
    ),
    "ho10d": _base(
        map={"kind": "resnet", "d": 10, "hidden": [80, 80]},
        potential={"kind": "quadratic", "a": [0.75] + [1.0] * 9},
        phi0={"kind": "quadratic_diag", "coeffs": [0.0] + [1.0] * 9},
        solver={"h": 0.001, "steps": 6283},
        snapshot_times=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5],
    ),
    "ho10d-desk": _base(
        map={"kind": "resnet", "d": 10, "hidden": [80, 80]},
        potential={"kind": "quadratic", "a": [0.75] + [1.0] * 9},
        phi0={"kind": "quadratic_diag", "coeffs": [0.0] + [1.0] * 9},
        solver={"h": 0.005, "steps": 400, "n_metric": 5000},
        snapshot_times=[0.0, 0.5, 1.0, 1.5],
    ),
    "interaction2d": _base(
        potential={"kind": "interaction", "b": 0.1},
        solver={"h": 0.005, "steps": 200, "n_potential": 12000},
        tracked_points=[[1.0, 0.0], [-0.5, 0.5]],
    ),
    "interaction2d-desk": _base(
        potential={"kind": "interaction", "b": 0.1},
        solver={"h": 0.005, "steps": 200, "n_metric": 2000,
                "n_potential": 2000},
        tracked_points=[[1.0, 0.0], [-0.5, 0.5]],
    ),
    "entropy-diag": _base(
        map={"kind": "diagonal", "d": 1, "hidden": []},
        potential={"kind": "entropy_diagonal"},
        phi0={"kind": "quadratic_diag", "coeffs": [1.0]},
        solver={"h": 0.01, "steps": 200},
        tracked_points=[[1.0]],
    ),
}


def resolve(preset: str | None, file_cfg: dict | None, flags: dict) -> dict:
    """Merge preset defaults, config-file keys, and CLI flag overrides."""
    if preset is None and file_cfg is not None:
        preset = file_cfg.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise KeyError(f"unknown preset {preset!r}; see list-presets")
        cfg = copy.deepcopy(PRESETS[preset])
        cfg["preset"] = preset
    else:
        cfg = _base()
    if file_cfg:
        for key, val in file_cfg.items():
            if key == "preset":
                continue
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(val)
            else:
                cfg[key] = val

    solver = cfg["solver"]
    horizon = solver["h"] * solver["steps"]
    if flags.get("dt") is not None:
        solver["h"] = float(flags["dt"])
        if flags.get("steps") is None:
            # keep the preset's physical horizon when only dt changes
            solver["steps"] = int(round(horizon / solver["h"]))
    if flags.get("steps") is not None:
        solver["steps"] = int(flags["steps"])
    if flags.get("samples") is not None:
        solver["n_metric"] = int(flags["samples"])
    if flags.get("seed") is not None:
        solver["seed"] = int(flags["seed"])
    if flags.get("diag_every") is not None:
        solver["diag_every"] = int(flags["diag_every"])
    if flags.get("resample") is not None:
        solver["resample"] = flags["resample"]
    if flags.get("out") is not None:
        cfg["output_dir"] = flags["out"]
    return cfg


def build_map(cfg: dict) -> maps.MapDescriptor:
    sec = cfg["map"]
    return maps.MapDescriptor(sec["kind"], int(sec["d"]),
                              tuple(sec.get("hidden") or ()))


def build_potential(cfg: dict):
    sec = cfg["potential"]
    kind = sec["kind"]
    if kind == "zero":
        return potentials.ZeroPotential()
    if kind == "quadratic":
        return potentials.QuadraticPotential(np.asarray(sec["a"], dtype=np.float64))
    if kind == "interaction":
        return potentials.InteractionPotential(float(sec.get("b", 0.1)))
    if kind == "entropy_diagonal":
        return potentials.EntropyDiagonal()
    if kind == "entropy_affine":
        return potentials.EntropyAffine()
    raise ValueError(f"unknown potential kind {kind!r}")


def build_phi0(cfg: dict):
    """Initial velocity field grad Phi_0 as a callable on (N, d), or None."""
    sec = cfg["phi0"]
    kind = sec["kind"]
    if kind == "zero":
        return None
    if kind == "quadratic_diag":
        coeffs = np.asarray(sec["coeffs"], dtype=np.float64)
        return lambda X: X * coeffs
    raise ValueError(f"unknown phi0 kind {kind!r}")


def build_solver_config(cfg: dict) -> integrator.SolverConfig:
    sec = dict(cfg["solver"])
    sec["checkpoint_every"] = cfg.get("checkpoint_every", 0)
    return integrator.SolverConfig(**sec)


def build_oracle(cfg: dict, times: np.ndarray):
    """Closed-form oracle_fn(Z, t) backing error.csv, when one applies.

    zero potential + quadratic initial phase: straight-line flow;
    quadratic potential + quadratic phase: oscillator closed form;
    diagonal entropy with unit initial data: scalar profile from the
    reference ODE integration. Returns None when no closed form applies.
    """
    if cfg.get("oracle") in (None, "none"):
        return None
    pot = cfg["potential"]["kind"]
    phi = cfg["phi0"]
    if pot == "zero" and phi["kind"] == "quadratic_diag":
        coeffs = np.asarray(phi["coeffs"], dtype=np.float64)
        return lambda Z, t: Z + t * (Z * coeffs)
    if pot == "quadratic" and phi["kind"] == "quadratic_diag":
        spec = oracles.QuadraticSpec(np.asarray(cfg["potential"]["a"], dtype=np.float64),
                                     np.asarray(phi["coeffs"], dtype=np.float64))
        return lambda Z, t: oracles.ho_exact(Z, spec, t)[0]
    if (pot == "entropy_diagonal" and phi["kind"] == "quadratic_diag"
            and np.all(np.asarray(phi["coeffs"]) == 1.0)):
        h = cfg["solver"]["h"]
        dvals = oracles.entropy_oracle(times, step=min(1e-4, h / 100.0))
        lookup = {round(float(t), 12): dvals[i] for i, t in enumerate(times)}

        def fn(Z, t):
            return Z * lookup[round(float(t), 12)]

        return fn
    return None
