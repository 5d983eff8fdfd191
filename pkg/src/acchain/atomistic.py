"""Full atomistic model: energy, first variation, stress, Hessian, Newton solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import AdmissibilityError, Deformation, LatticeConfig, LatticeFunction
from .potential import PotentialModel, _eval, _grad, _hess

__all__ = [
    "AtomisticProblem",
    "SolveReport",
    "SolverError",
    "energy_a",
    "grad_a",
    "stress_a",
    "stress_a_field",
    "hessian_a",
    "solve_a",
    "damped_newton",
]

_OFFSETS = (1, 2, -1, -2, 0)
# coefficient of y_{l+offset} inside g_i = (y_{l+delta_i} - y_l)/eps
_COMP_OF_OFFSET = {1: 0, 2: 1, -1: 2, -2: 3}


class SolverError(RuntimeError):
    """Newton iteration failed (line search, gap closure or max iterations)."""


@dataclass(frozen=True)
class AtomisticProblem:
    cfg: LatticeConfig
    model: PotentialModel
    f: LatticeFunction

    def __post_init__(self):
        if not self.f.is_mean_zero():
            raise ValueError("dead load must be mean-zero on the period")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual_norm: float
    min_forward_gap: float


def _stencils(y: Deformation):
    d1, d2, dm1, dm2 = y.stencil_arrays()
    if np.any(d1 <= 0):
        raise AdmissibilityError("deformation has a nonpositive forward gap")
    return d1, d2, dm1, dm2


def energy_a(p: AtomisticProblem, y: Deformation) -> float:
    """Total energy per period: eps * sum V(Dy_l) - <f, y>_eps."""
    d1, d2, dm1, dm2 = _stencils(y)
    vals = _eval(p.model, d1, d2, dm1, dm2)
    if not np.all(np.isfinite(vals)):
        raise AdmissibilityError("site energy non-finite")
    stored = p.cfg.eps * float(np.sum(vals))
    return stored - p.cfg.eps * float(p.f.values @ y.positions())


def grad_a(p: AtomisticProblem, y: Deformation) -> LatticeFunction:
    """Nodal residual forces dE_a/dy_l, assembled from the site gradients."""
    d1, d2, dm1, dm2 = _stencils(y)
    g = _grad(p.model, d1, d2, dm1, dm2)  # (4, 2N)
    if not np.all(np.isfinite(g)):
        raise AdmissibilityError("site gradient non-finite")
    out = np.zeros(p.cfg.n_sites)
    for comp, off in ((0, 1), (1, 2), (2, -1), (3, -2)):
        out += np.roll(g[comp], off)  # contribution to y_{l+off} from site l
        out -= g[comp]
    out -= p.cfg.eps * p.f.values
    return LatticeFunction(p.cfg, out)


def stress_a_field(model: PotentialModel, y: Deformation) -> np.ndarray:
    """Atomistic stress at every site, paired with backward differences v'."""
    d1, d2, dm1, dm2 = _stencils(y)
    g = _grad(model, d1, d2, dm1, dm2)
    # sigma_l = d1V(Dy_{l-1}) - dm1V(Dy_l) + d2V(Dy_{l-2}) + d2V(Dy_{l-1})
    #           - dm2V(Dy_l) - dm2V(Dy_{l+1})
    return (
        np.roll(g[0], 1)
        - g[2]
        + np.roll(g[1], 2)
        + np.roll(g[1], 1)
        - g[3]
        - np.roll(g[3], -1)
    )


def stress_a(p: AtomisticProblem, y: Deformation, label: int) -> float:
    return float(stress_a_field(p.model, y)[p.cfg.index(label)])


def hessian_a(p: AtomisticProblem, y: Deformation) -> sp.csr_matrix:
    """Second derivative of the total energy; periodic, bandwidth 4."""
    n = p.cfg.n_sites
    d1, d2, dm1, dm2 = _stencils(y)
    h = _hess(p.model, d1, d2, dm1, dm2)  # (4, 4, 2N)
    eps = p.cfg.eps
    sites = np.arange(n)
    rows, cols, data = [], [], []
    offs = (1, 2, -1, -2)
    for i, oi in enumerate(offs):
        for j, oj in enumerate(offs):
            hij = h[i, j] / eps
            for (ra, ca, sgn) in (
                ((sites + oi) % n, (sites + oj) % n, 1.0),
                ((sites + oi) % n, sites, -1.0),
                (sites, (sites + oj) % n, -1.0),
                (sites, sites, 1.0),
            ):
                rows.append(ra)
                cols.append(ca)
                data.append(sgn * hij)
    H = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return H.tocsr()


def _solve_kkt(H, w: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the constrained Newton system [[H, w], [w^T, 0]] d = [rhs, 0]."""
    n = w.size
    b = np.concatenate([rhs, [0.0]])
    if sp.issparse(H):
        wc = sp.csr_matrix(w.reshape(-1, 1))
        K = sp.bmat([[H, wc], [wc.T, None]], format="csc")
        sol = spla.splu(K).solve(b)
    else:
        K = np.zeros((n + 1, n + 1))
        K[:n, :n] = H
        K[:n, n] = w
        K[n, :n] = w
        sol = np.linalg.solve(K, b)
    return sol[:n]


def damped_newton(
    u0: np.ndarray,
    *,
    energy,
    gradient,
    hessian,
    constraint: np.ndarray,
    admissible,
    residual_norm,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> tuple[np.ndarray, int, float]:
    """Damped Newton on the affine constraint {constraint . u = 0}.

    ``admissible(u)`` must reject configurations that close a gap; a trial
    step violating it is rejected by the backtracking line search.
    """
    u = u0 - (constraint @ u0) / (constraint @ constraint) * constraint
    if not admissible(u):
        raise AdmissibilityError("initial guess is inadmissible")
    for it in range(max_iter + 1):
        g = gradient(u)
        g = g - (constraint @ g) / (constraint @ constraint) * constraint
        res = residual_norm(g)
        if res < tol:
            return u, it, res
        if it == max_iter:
            raise SolverError(f"Newton did not converge in {max_iter} iterations (residual {res:.3e})")
        H = hessian(u)
        d = _solve_kkt(H, constraint, -g)
        slope = float(g @ d)
        if not np.isfinite(slope) or slope >= 0:
            d = -g
            slope = float(g @ d)
        e0 = energy(u)
        # allowance keeps the Armijo test meaningful once predicted decreases
        # drop below floating-point resolution of the total energy
        fuzz = 4 * np.finfo(float).eps * (abs(e0) + 1.0)
        alpha = 1.0
        while True:
            trial = u + alpha * d
            if admissible(trial):
                try:
                    et = energy(trial)
                except AdmissibilityError:
                    et = np.inf
                if et <= e0 + 1e-4 * alpha * slope + fuzz:
                    break
            alpha *= 0.5
            if alpha < 1e-12:
                if not admissible(u + 1e-12 * d):
                    raise SolverError("gap closure: every trial step makes a forward gap nonpositive")
                raise SolverError("line search failure")
        u = trial
    raise SolverError("unreachable")


def solve_a(
    p: AtomisticProblem,
    y0: Deformation | None = None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> tuple[Deformation, SolveReport]:
    """Minimize the atomistic energy over mean-zero periodic displacements."""
    cfg = p.cfg
    if y0 is None:
        y0 = Deformation.uniform(cfg)
    ones = np.ones(cfg.n_sites)

    def energy(u):
        return energy_a(p, Deformation(cfg, u))

    def gradient(u):
        return grad_a(p, Deformation(cfg, u)).values

    def hessian(u):
        return hessian_a(p, Deformation(cfg, u))

    def admissible(u):
        return bool(np.all(Deformation(cfg, u).forward_gaps() > 0))

    def residual_norm(g):
        return float(np.sqrt(cfg.eps * np.sum(g * g)))

    u, iters, res = damped_newton(
        y0.u.copy(),
        energy=energy,
        gradient=gradient,
        hessian=hessian,
        constraint=ones,
        admissible=admissible,
        residual_norm=residual_norm,
        tol=tol,
        max_iter=max_iter,
    )
    y = Deformation(cfg, u - np.mean(u))
    gap = float(np.min(y.forward_gaps()))
    return y, SolveReport(iterations=iters, final_residual_norm=res, min_forward_gap=gap)
