"""Experiment configuration, orchestration and machine-readable outputs.

Config files are flat ``key = value`` text ('#' starts a comment).  Unknown
keys are rejected.  ``run --builtin paper6`` needs no file: all physical
defaults of the adaptive-convergence experiment are embedded.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adaptivity import AdaptConfig, adapt_loop
from .atomistic import SolverError
from .chain import LatticeConfig, LatticeFunction
from .coupling import CoupledState, solve_ac, stencils_from_gradients
from .estimators import StabilityError
from .mesh import build_initial
from .potential import PotentialModel, assumption_ratios, eam, lennard_jones, morse

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "builtin_force", "main"]

CSV_COLUMNS = [
    "iteration",
    "dof",
    "n_atomistic",
    "true_error",
    "eta_mo",
    "eta_cg",
    "eta_z",
    "eta_hybrid",
    "osc",
    "total_bound",
    "efficiency_factor",
    "kappa",
    "c_a",
    "audit_ok",
]


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


_DEFAULTS = {
    "L": 128,
    "N": None,  # default 2*(L+8)
    "eps": None,  # default 1/N
    "F": 1.0,
    "max_dof": 200,
    "theta": 0.5,
    "estimator": "residual",
    "potential": "eam",
    "eam_a": 4.4,
    "eam_b": 3.0,
    "eam_c": 5.0,
    "eam_rho0": None,  # default 6*exp(-b)
    "morse_alpha": 5.0,
    "force": "paper6",
    "newton_tol": 1e-10,
    "newton_max_iter": 100,
    "c_a": "auto",
    "audit": True,
    "seed": 0,
    "corrupt": 0.0,
    "dump_meshes": False,
    "out_dir": ".",
}

_INT_KEYS = {"L", "N", "max_dof", "newton_max_iter", "seed"}
_FLOAT_KEYS = {"eps", "F", "theta", "eam_a", "eam_b", "eam_c", "eam_rho0", "morse_alpha", "newton_tol", "corrupt"}
_BOOL_KEYS = {"audit", "dump_meshes"}


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.raw[key]

    # -- derived objects -------------------------------------------------------

    def lattice(self) -> LatticeConfig:
        L = self.raw["L"]
        N = self.raw["N"] if self.raw["N"] is not None else 2 * (L + 8)
        eps = self.raw["eps"] if self.raw["eps"] is not None else 1.0 / N
        return LatticeConfig(N=N, eps=eps, F=self.raw["F"])

    def model(self) -> PotentialModel:
        kind = self.raw["potential"]
        if kind == "eam":
            return eam(
                a=self.raw["eam_a"],
                b=self.raw["eam_b"],
                c=self.raw["eam_c"],
                rho0=self.raw["eam_rho0"],
            )
        if kind == "morse":
            return morse(alpha=self.raw["morse_alpha"])
        if kind == "lj":
            return lennard_jones()
        raise ConfigError(f"unknown potential {kind!r}")

    def force(self) -> LatticeFunction:
        return builtin_force(self.raw["force"], self.lattice(), self.raw["L"])

    def adapt_config(self, estimator: str | None = None) -> AdaptConfig:
        ca = self.raw["c_a"]
        return AdaptConfig(
            lattice=self.lattice(),
            model=self.model(),
            f=self.force(),
            L=self.raw["L"],
            theta=self.raw["theta"],
            max_dof=self.raw["max_dof"],
            estimator=estimator or self.raw["estimator"],
            newton_tol=self.raw["newton_tol"],
            newton_max_iter=self.raw["newton_max_iter"],
            with_audit=self.raw["audit"],
            c_a_fixed=None if ca == "auto" else float(ca),
        )


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"boolean expected for {key!r}, got {value!r}")
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat key = value text; unknown keys are rejected."""
    raw = dict(_DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            raw[key] = _coerce(key, value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    cfg = ExperimentConfig(raw=raw)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    raw = cfg.raw
    if raw["L"] < 8:
        raise ConfigError("L must be at least 8")
    if not 0 < raw["theta"] < 1:
        raise ConfigError("theta must lie in (0, 1)")
    if raw["estimator"] not in ("residual", "hybrid"):
        raise ConfigError("estimator must be 'residual' or 'hybrid'")
    if raw["force"] not in ("paper6", "zero"):
        raise ConfigError("force must be 'paper6' or 'zero'")
    if raw["c_a"] != "auto":
        try:
            ca = float(raw["c_a"])
        except ValueError as exc:
            raise ConfigError("c_a must be 'auto' or a positive number") from exc
        if ca <= 0:
            raise ConfigError("c_a must be positive")
    lattice = cfg.lattice()  # raises on inconsistent N/eps/F
    if raw["max_dof"] <= 14:
        raise ConfigError("max_dof must exceed the initial mesh size")
    if lattice.N < raw["L"] + 6:
        raise ConfigError("N too small for the force band; need N >= L + 6")


def builtin_force(name: str, lattice: LatticeConfig, L: int) -> LatticeFunction:
    """Builtin dead loads.  'paper6' is the antisymmetric |x|^-1-type field:
    mean-zero by f(-l) = -f(l), zero at l = 0 and outside the band |l| <= L."""
    vals = np.zeros(lattice.n_sites)
    if name == "zero":
        return LatticeFunction(lattice, vals)
    if name != "paper6":
        raise ConfigError(f"unknown force {name!r}")
    eps = lattice.eps
    for i, l in enumerate(lattice.labels()):
        if 0 < l <= L:
            vals[i] = 0.4 * (1.0 / (2.0 * eps * l) - 1.0)
        elif -L <= l < 0:
            vals[i] = 0.4 * (1.0 + 1.0 / (2.0 * eps * l))
    f = LatticeFunction(lattice, vals)
    assert abs(vals.sum()) == 0.0, "builtin load must be mean-zero exactly"
    return f


# -- commands ------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.17g}"
    return str(x)


def cmd_run(cfg: ExperimentConfig) -> int:
    out_dir = Path(cfg["out_dir"])
    audits: list = []
    try:
        records = adapt_loop(cfg.adapt_config(), collect_audits=audits)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except StabilityError as exc:
        print(f"stability failure: {exc}", file=sys.stderr)
        return 4
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "records.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    _fmt(v)
                    for v in (
                        r.iteration, r.dof, r.n_atomistic, r.true_error,
                        r.eta_mo, r.eta_cg, r.eta_z, r.eta_hybrid, r.osc,
                        r.total_bound, r.efficiency_factor, r.kappa, r.c_a,
                        r.audit_ok,
                    )
                ]
            )
    if cfg["dump_meshes"]:
        _dump_run_details(cfg, out_dir)
    print(f"wrote {out_dir / 'records.csv'} ({len(records)} iterations)")
    return 0


def _dump_run_details(cfg: ExperimentConfig, out_dir: Path) -> None:
    """Re-run the loop dumping per-iteration mesh and report JSON files."""
    from .estimators import build_report
    from .adaptivity import doerfler_mark, refine, _indicators

    ac = cfg.adapt_config()
    mesh = build_initial(ac.L, ac.lattice, seed_halfwidth=ac.seed_halfwidth)
    it = 0
    while True:
        it += 1
        state, _ = solve_ac(mesh, ac.model, ac.f, tol=ac.newton_tol, max_iter=ac.newton_max_iter)
        report = build_report(state, ac.model, ac.f, c_a=ac.c_a_fixed)
        (out_dir / f"mesh_{it:03d}.json").write_text(mesh.to_json())
        (out_dir / f"report_{it:03d}.json").write_text(report.to_json())
        if mesh.dof >= ac.max_dof:
            break
        marks = doerfler_mark(_indicators(report, mesh, ac.estimator), ac.theta)
        if not marks:
            break
        new_mesh = refine(mesh, marks)
        if new_mesh.dof == mesh.dof and new_mesh.n_atomistic == mesh.n_atomistic:
            break
        mesh = new_mesh


def cmd_check_potential(cfg: ExperimentConfig) -> int:
    """Print the derivative-ratio table for the EAM, Morse and LJ models."""
    lattice = cfg.lattice()
    f = cfg.force()
    models = [
        ("eam", cfg.model() if cfg["potential"] == "eam" else eam()),
        ("morse", morse(alpha=cfg["morse_alpha"])),
        ("lj", lennard_jones()),
    ]
    mesh = build_initial(cfg["L"], lattice)
    print(f"{'model':8s} {'r1':>12s} {'r2':>12s} {'r3':>12s}  sign table")
    code = 0
    for name, model in models:
        try:
            state, _ = solve_ac(mesh, model, f, tol=cfg["newton_tol"], max_iter=cfg["newton_max_iter"])
        except SolverError as exc:
            print(f"{name:8s} solver failure: {exc}", file=sys.stderr)
            code = 3
            continue
        d1, d2, dm1, dm2 = stencils_from_gradients(state)
        idx = _continuum_interface_indices(state)
        stencils = np.stack([d1[idx], d2[idx], dm1[idx], dm2[idx]], axis=1)
        ratios = assumption_ratios(model, stencils)
        signs = " ".join(f"{k}:{v}" for k, v in ratios.sign_table.items())
        print(
            f"{name:8s} {ratios.formatted(ratios.r1):>12s} "
            f"{ratios.formatted(ratios.r2):>12s} {ratios.formatted(ratios.r3):>12s}  {signs}"
        )
    return code


def _continuum_interface_indices(state: CoupledState) -> np.ndarray:
    mesh = state.mesh
    cfg = mesh.cfg
    mask = np.ones(cfg.n_sites, dtype=bool)
    mask[cfg.index(mesh.atomistic_sites)] = False
    return np.where(mask)[0]


def cmd_audit(cfg: ExperimentConfig) -> int:
    """Run the adaptive loop with the efficiency audit; exit 5 on violation."""
    out_dir = Path(cfg["out_dir"])
    audits: list = []
    ac = cfg.adapt_config()
    ac = replace(ac, with_audit=True)
    if cfg["corrupt"] > 0:
        return _audit_corrupted(cfg, out_dir)
    try:
        adapt_loop(ac, collect_audits=audits)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except StabilityError as exc:
        print(f"stability failure: {exc}", file=sys.stderr)
        return 4
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = "[" + ",".join(a.to_json() for a in audits) + "]"
    (out_dir / "audit.json").write_text(payload)
    bad = sum(not a.ok for a in audits)
    print(f"audit: {len(audits)} iterations, {bad} with violations -> {out_dir / 'audit.json'}")
    return 5 if bad else 0


def _audit_corrupted(cfg: ExperimentConfig, out_dir: Path) -> int:
    """Plumbing check: perturb the coupled solution and re-audit one mesh."""
    from .atomistic import AtomisticProblem, solve_a
    from .efficiency import audit as run_audit

    ac = cfg.adapt_config()
    problem = AtomisticProblem(ac.lattice, ac.model, ac.f)
    y_a, _ = solve_a(problem, tol=ac.newton_tol, max_iter=ac.newton_max_iter)
    mesh = build_initial(ac.L, ac.lattice)
    state, _ = solve_ac(mesh, ac.model, ac.f, tol=ac.newton_tol, max_iter=ac.newton_max_iter)
    rng = np.random.default_rng(cfg["seed"])
    noise = cfg["corrupt"] * rng.standard_normal(mesh.n_nodes)
    state = CoupledState(mesh, state.nodal_u + noise - np.mean(noise))
    aud = run_audit(y_a, state, ac.model, ac.f)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "audit.json").write_text("[" + aud.to_json() + "]")
    print(
        f"corrupted audit: checked {aud.checked} rows, {aud.violations} violations, "
        f"worst margin {aud.worst_margin:.3e}"
    )
    return 5 if not aud.ok else 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acchain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (
        ("run", "run the adaptive experiment and write records.csv"),
        ("check-potential", "print derivative-ratio tables for EAM/Morse/LJ"),
        ("audit", "run the efficiency audit each iteration; exit 5 on violation"),
    ):
        p = sub.add_parser(name, help=descr)
        p.add_argument("--config", type=str, default=None, help="config file path")
        p.add_argument("--builtin", type=str, default=None, help="builtin experiment name (paper6)")
        p.add_argument("--out-dir", type=str, default=None)
        p.add_argument("--estimator", choices=("residual", "hybrid"), default=None)
        p.add_argument("--max-dof", type=int, default=None)
        p.add_argument("--theta", type=float, default=None)
        p.add_argument("--dump-meshes", action="store_true")
        p.add_argument("--corrupt", type=float, default=None, help="noise amplitude for the audit plumbing check")
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config is not None and args.builtin is not None:
        raise ConfigError("give either --config or --builtin, not both")
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = parse_config(path.read_text())
    else:
        builtin = args.builtin or "paper6"
        if builtin != "paper6":
            raise ConfigError(f"unknown builtin {builtin!r}")
        cfg = parse_config("")
    overrides = {}
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.estimator is not None:
        overrides["estimator"] = args.estimator
    if args.max_dof is not None:
        overrides["max_dof"] = args.max_dof
    if args.theta is not None:
        overrides["theta"] = args.theta
    if args.dump_meshes:
        overrides["dump_meshes"] = True
    if args.corrupt is not None:
        overrides["corrupt"] = args.corrupt
    if overrides:
        raw = dict(cfg.raw)
        raw.update(overrides)
        cfg = ExperimentConfig(raw=raw)
        _validate(cfg)
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        return cmd_run(cfg)
    if args.command == "check-potential":
        return cmd_check_potential(cfg)
    if args.command == "audit":
        return cmd_audit(cfg)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
