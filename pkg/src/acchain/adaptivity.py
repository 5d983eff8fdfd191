"""Bulk-chasing adaptivity: marking, refinement execution and the outer loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .atomistic import AtomisticProblem, solve_a
from .chain import Deformation, LatticeConfig, LatticeFunction
from .coupling import CoupledState, solve_ac
from .efficiency import audit as run_audit
from .estimators import build_report, total_bound
from .mesh import ACMesh, MeshError, build_initial, merge_into_atomistic, validate
from .potential import PotentialModel

__all__ = ["AdaptConfig", "AdaptRecord", "doerfler_mark", "refine", "adapt_loop", "true_error"]


@dataclass(frozen=True)
class AdaptConfig:
    lattice: LatticeConfig
    model: PotentialModel
    f: LatticeFunction
    L: int
    theta: float = 0.5
    max_dof: int = 200
    estimator: str = "residual"  # residual | hybrid
    newton_tol: float = 1e-10
    newton_max_iter: int = 100
    with_audit: bool = True
    c_a_fixed: float | None = None  # bypass the eigenvalue surrogate
    seed_halfwidth: int = 0

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.estimator not in ("residual", "hybrid"):
            raise ValueError("estimator must be 'residual' or 'hybrid'")


@dataclass(frozen=True)
class AdaptRecord:
    iteration: int
    dof: int
    n_atomistic: int
    true_error: float
    eta_mo: float
    eta_cg: float
    eta_z: float
    eta_hybrid: float
    osc: float
    eta_res_total: float
    total_bound: float
    efficiency_factor: float
    kappa: float
    c_a: float
    audit_ok: bool


def doerfler_mark(rho2: np.ndarray, theta: float) -> list[int]:
    """Minimal set of elements carrying a theta-fraction of the squared mass.

    Greedy by descending squared indicator; ties resolved toward the lower
    element index, which makes the marking deterministic.
    """
    rho2 = np.asarray(rho2, dtype=float)
    if np.any(rho2 < 0):
        raise ValueError("squared indicators must be nonnegative")
    total = float(rho2.sum())
    if total == 0.0:
        return []
    order = np.argsort(-rho2, kind="stable")
    acc = 0.0
    marks: list[int] = []
    for j in order:
        acc += float(rho2[j])
        marks.append(int(j))
        if acc >= theta * total:
            break
    return marks


def refine(mesh: ACMesh, marks) -> ACMesh:
    """Bisect the marked elements; a marked length-eps element next to the
    interface grows the atomistic region instead.  Unrefinable marks (fixed
    or deep length-eps elements) are skipped."""
    merges: list[str] = []
    targets: list[int] = []
    for j in marks:
        j = int(j)
        if mesh.is_fixed(j):
            continue
        if j in mesh.elems_atomistic() or j in mesh.elems_interface():
            raise MeshError(f"marked element {j} is not a continuum element")
        if mesh.elem_natoms(j) == 1:
            if j == mesh.left_special:
                merges.append("left")
            elif j == mesh.right_special_elem:
                merges.append("right")
            # a deep length-eps element can be neither bisected nor merged
        else:
            left, _ = mesh.elem_span(j)
            targets.append(int(mesh.cfg.wrap_label(left + mesh.elem_natoms(j) // 2)))
    out = mesh
    for side in merges:
        j = out.left_special if side == "left" else out.right_special_elem
        out = merge_into_atomistic(out, j)
    fresh = [t for t in sorted(set(targets)) if t not in out.nodes]
    if fresh:
        nodes = np.sort(np.concatenate([out.nodes, np.asarray(fresh, dtype=int)]))
        k1 = int(np.searchsorted(nodes, out.nodes[out.k1]))
        k2 = int(np.searchsorted(nodes, out.nodes[out.k2]))
        from dataclasses import replace

        out = replace(out, nodes=nodes, k1=k1, k2=k2)
    bad = validate(out)
    if bad:
        raise MeshError(f"refinement produced an invalid mesh: {bad}")
    return out


def true_error(y_a: Deformation, state: CoupledState) -> float:
    """||y'_a - y'_ac||_{l2_eps} over the whole lattice."""
    eprime = y_a.gradient() - state.interpolate().gradient()
    return math.sqrt(state.mesh.cfg.eps * float(np.sum(eprime**2)))


def adapt_loop(cfg: AdaptConfig, collect_audits: list | None = None) -> list[AdaptRecord]:
    """Run the adaptive refinement loop and record one row per iteration.

    The atomistic reference is solved once (the lattice never changes); each
    iteration then solves the coupled problem, assembles the estimator
    report, optionally audits the efficiency inequalities, and refines.
    """
    problem = AtomisticProblem(cfg.lattice, cfg.model, cfg.f)
    y_a, _ = solve_a(problem, tol=cfg.newton_tol, max_iter=cfg.newton_max_iter)
    mesh = build_initial(cfg.L, cfg.lattice, seed_halfwidth=cfg.seed_halfwidth)
    records: list[AdaptRecord] = []
    iteration = 0
    while True:
        iteration += 1
        state, _ = solve_ac(
            mesh, cfg.model, cfg.f, tol=cfg.newton_tol, max_iter=cfg.newton_max_iter
        )
        report = build_report(state, cfg.model, cfg.f, c_a=cfg.c_a_fixed)
        tb = total_bound(report)
        err = true_error(y_a, state)
        audit_ok = True
        if cfg.with_audit:
            aud = run_audit(y_a, state, cfg.model, cfg.f)
            audit_ok = aud.ok
            if collect_audits is not None:
                collect_audits.append(aud)
        records.append(
            AdaptRecord(
                iteration=iteration,
                dof=mesh.dof,
                n_atomistic=mesh.n_atomistic,
                true_error=err,
                eta_mo=report.eta_mo,
                eta_cg=report.eta_cg,
                eta_z=report.eta_z,
                eta_hybrid=report.eta_hybrid,
                osc=report.osc_total,
                eta_res_total=math.sqrt(report.eta_mo**2 + report.eta_cg**2),
                total_bound=tb,
                efficiency_factor=tb / err if err > 0 else math.inf,
                kappa=report.constants.kappa,
                c_a=report.c_a,
                audit_ok=audit_ok,
            )
        )
        if mesh.dof >= cfg.max_dof:
            break
        rho2 = _indicators(report, mesh, cfg.estimator)
        marks = doerfler_mark(rho2, cfg.theta)
        if not marks:
            break
        new_mesh = refine(mesh, marks)
        if new_mesh.dof == mesh.dof and new_mesh.n_atomistic == mesh.n_atomistic:
            break  # every marked element was unrefinable
        mesh = new_mesh
    return records


def _indicators(report, mesh: ACMesh, estimator: str) -> np.ndarray:
    if estimator == "residual":
        rho2 = (report.eta_mo_T**2 + report.eta_cg_T**2) / report.c_a**2
    else:
        rho2 = report.eta_hybrid_T**2 / report.c_a**2
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    mask[mesh.elems_kc()] = True
    for j in range(mesh.n_nodes):
        if mesh.is_fixed(j):
            mask[j] = False
    return np.where(mask, rho2, 0.0)
