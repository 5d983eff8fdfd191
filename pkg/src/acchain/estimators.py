"""A posteriori error estimators for the coupled solution.

Residual family: the stress-discrepancy field R_mo with its node/element
bounds, the coarse-graining residual driven by element averages of the load,
and the data oscillation.  Recovery family: the weighted gradient-averaging
operator and its element/node estimators.  The hybrid estimator replaces the
residual parts by recovery proxies in the continuum and keeps the exact
residual at the interface.  A Hessian-eigenvalue surrogate supplies the
stability constant that turns residuals into an error bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .atomistic import AtomisticProblem, hessian_a, stress_a_field
from .chain import Deformation, LatticeFunction
from .coupling import CoupledState, stencils_from_gradients, stress_ac_atomwise
from .mesh import ACMesh, kappa as mesh_kappa
from .potential import (
    GROUP_NN_DIAG,
    GROUP_NNN1,
    PotentialModel,
    _hess,
)

__all__ = [
    "EstimatorReport",
    "EstimatorConstants",
    "StabilityError",
    "model_residual",
    "eta_mo",
    "fbar_element",
    "oscillation",
    "eta_cg",
    "recover_gradient",
    "eta_z",
    "aposteriori_constants",
    "eta_hybrid",
    "stability_constant",
    "total_bound",
    "build_report",
]


class StabilityError(RuntimeError):
    """The stability surrogate found a nonpositive smallest eigenvalue."""


# -- model residual -----------------------------------------------------------

def model_residual(state: CoupledState, model: PotentialModel) -> np.ndarray:
    """Stress discrepancy R_mo at every site of the coupled solution."""
    interp = state.interpolate()
    return stress_a_field(model, interp) - stress_ac_atomwise(state, model)


def _window_sum(R2: np.ndarray, mesh: ACMesh, label: int, lo: int, hi: int) -> float:
    sites = np.arange(label + lo, label + hi + 1)
    return float(np.sum(R2[mesh.cfg.index(sites)]))


def eta_mo(R: np.ndarray, mesh: ACMesh) -> tuple[np.ndarray, np.ndarray, float]:
    """Nodewise and elementwise residual bounds plus the total."""
    eps = mesh.cfg.eps
    K = mesh.n_nodes
    R2 = np.asarray(R) ** 2
    eta2_k = np.zeros(K)
    inner = np.zeros(K)  # six-site interior window around each node
    for k in range(K):
        inner[k] = eps * _window_sum(R2, mesh, int(mesh.nodes[k]), -2, 3)
    for k in mesh.nodes_kc_ring():
        eta2_k[k] = inner[k]
    kl, kr = mesh.left_special, mesh.right_special_node
    eta2_k[kl] = eps * _window_sum(R2, mesh, int(mesh.nodes[kl]), -2, 4)
    eta2_k[kr] = eps * _window_sum(R2, mesh, int(mesh.nodes[kr]), -3, 3)

    eta2_T = np.zeros(K)
    for j in mesh.elems_kc_ring():
        eta2_T[j] = 0.5 * (inner[(j - 1) % K] + inner[j])
    eta2_T[kl] = 0.5 * inner[(kl - 1) % K] + eta2_k[kl]
    jr = mesh.right_special_elem
    eta2_T[jr] = eta2_k[kr] + 0.5 * inner[jr]
    total = math.sqrt(float(np.sum(eta2_T[mesh.elems_kc()])))
    return np.sqrt(eta2_k), np.sqrt(eta2_T), total


# -- coarse-graining residual and oscillation ---------------------------------

def _elem_forces(f: LatticeFunction, mesh: ACMesh, j: int) -> np.ndarray:
    return f.values[mesh.cfg.index(mesh.elem_atoms(j))]


def fbar_element(f: LatticeFunction, mesh: ACMesh, j: int) -> float:
    """Signed discrete-RMS average of the load on element j."""
    vals = _elem_forces(f, mesh, j)
    if np.all(vals == 0.0):
        return 0.0
    if np.all(vals >= 0.0):
        sign = 1.0
    elif np.all(vals <= 0.0):
        sign = -1.0
    else:
        sign = 1.0 if float(np.mean(vals)) >= 0 else -1.0  # sign-change fallback
    h = mesh.elem_length(j)
    rms = math.sqrt(mesh.cfg.eps * float(np.sum(vals**2)) / h)
    return sign * rms


def oscillation(f: LatticeFunction, mesh: ACMesh, j: int) -> float:
    """Data oscillation h_T * ||f - fbar_T|| on element j."""
    vals = _elem_forces(f, mesh, j)
    h = mesh.elem_length(j)
    fb = fbar_element(f, mesh, j)
    return h * math.sqrt(mesh.cfg.eps * float(np.sum((vals - fb) ** 2)))


def eta_cg(
    f: LatticeFunction, mesh: ACMesh
) -> tuple[np.ndarray, np.ndarray, float, float, np.ndarray, np.ndarray]:
    """Elementwise/nodewise coarse-graining residual, totals and oscillation."""
    K = mesh.n_nodes
    eta_T = np.zeros(K)
    osc_T = np.zeros(K)
    fbar_T = np.zeros(K)
    for j in mesh.elems_kc():
        fbar_T[j] = fbar_element(f, mesh, j)
        h = mesh.elem_length(j)
        eta_T[j] = h ** 1.5 * abs(fbar_T[j]) / math.sqrt(2.0)
        osc_T[j] = oscillation(f, mesh, j)
    eta_k = np.zeros(K)
    half = math.sqrt(2.0) / 2.0
    for k in mesh.nodes_kc_ring():
        eta_k[k] = half * math.sqrt(eta_T[k] ** 2 + eta_T[(k + 1) % K] ** 2)
    eta_k[mesh.left_special] = half * eta_T[mesh.left_special]
    eta_k[mesh.right_special_node] = half * eta_T[mesh.right_special_elem]
    total = math.sqrt(float(np.sum(eta_T**2)))
    osc_total = math.sqrt(float(np.sum(osc_T**2)))
    return eta_T, eta_k, total, osc_total, osc_T, fbar_T


# -- gradient recovery --------------------------------------------------------

def recover_gradient(state: CoupledState) -> np.ndarray:
    """Nodal recovered gradients; NaN at nodes where recovery is undefined."""
    mesh = state.mesh
    K = mesh.n_nodes
    grads = state.gradients()
    h = mesh.lengths()
    G = np.full(K, np.nan)
    for k in mesh.nodes_kc():
        k1 = (k + 1) % K
        G[k] = (h[k] * grads[k] + h[k1] * grads[k1]) / (h[k] + h[k1])
    G[mesh.k1 - 1] = grads[mesh.k1 - 1]
    G[mesh.k2 + 1] = grads[mesh.k2 + 2]
    return G


def _recovery_error_sq(state: CoupledState, G: np.ndarray, j: int) -> float:
    """eps * sum over element-j sites of (G_h - grad y_h)^2, one-sided."""
    mesh = state.mesh
    eps = mesh.cfg.eps
    left, right = mesh.elem_span(j)
    gl, gr = G[(j - 1) % mesh.n_nodes], G[j]
    atoms = np.arange(left + 1, right + 1)
    vals = gl + (gr - gl) * (atoms - left) / (right - left) - state.gradients()[j]
    return eps * float(np.sum(vals**2))


def eta_z(state: CoupledState) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradient-recovery estimator: element array, node array, total."""
    mesh = state.mesh
    K = mesh.n_nodes
    G = recover_gradient(state)
    grads = state.gradients()
    h = mesh.lengths()

    eta_T = np.zeros(K)
    for j in mesh.elems_kc_ring():
        eta_T[j] = math.sqrt(_recovery_error_sq(state, G, j))
    jl, jr = mesh.left_special, mesh.right_special_elem
    eta_T[jl] = math.sqrt(
        _recovery_error_sq(state, G, jl) + _recovery_error_sq(state, G, mesh.k1 - 1)
    )
    eta_T[jr] = math.sqrt(
        _recovery_error_sq(state, G, jr) + _recovery_error_sq(state, G, mesh.k2 + 2)
    )

    eta_k = np.zeros(K)
    for k in mesh.nodes_kc():
        k1 = (k + 1) % K
        hw = 0.5 * (h[k] + h[k1])
        eta_k[k] = math.sqrt(h[k] * h[k1] / (4.0 * hw)) * abs(grads[k1] - grads[k])
    total = math.sqrt(float(np.sum(eta_T**2)))
    return eta_T, eta_k, total


# -- constants and the hybrid estimator ---------------------------------------

@dataclass(frozen=True)
class EstimatorConstants:
    kappa: float
    kappa_in_range: bool
    m2_nn: float
    M2_nn: float
    m2_nnn: float
    M2_nnn: float
    czcg_lower: float
    czcg_upper: float
    czmo_lower: float
    czmo_upper: float

    @property
    def czcg(self) -> float:
        return 0.5 * (self.czcg_lower + self.czcg_upper)

    @property
    def czmo(self) -> float:
        return 0.5 * (self.czmo_lower + self.czmo_upper)


def aposteriori_constants(state: CoupledState, model: PotentialModel) -> EstimatorConstants:
    """Derivative bounds over the continuum/interface stencils plus kappa."""
    mesh = state.mesh
    cfg = mesh.cfg
    if mesh.elems_kc().size == 0:
        raise ValueError("empty continuum region")
    d1, d2, dm1, dm2 = stencils_from_gradients(state)
    atom_idx = cfg.index(mesh.atomistic_sites)
    mask = np.ones(cfg.n_sites, dtype=bool)
    mask[atom_idx] = False
    hess = _hess(model, d1[mask], d2[mask], dm1[mask], dm2[mask])  # (4,4,n)

    def group_abs(group):
        return np.abs(np.concatenate([hess[i, j] for (i, j) in group]))

    nn = group_abs(GROUP_NN_DIAG)
    n1 = group_abs(GROUP_NNN1)
    kap, in_range = mesh_kappa(mesh)
    m2_nn, M2_nn = float(nn.min()), float(nn.max())
    m2_nnn, M2_nnn = float(n1.min()), float(n1.max())
    return EstimatorConstants(
        kappa=kap,
        kappa_in_range=in_range,
        m2_nn=m2_nn,
        M2_nn=M2_nn,
        m2_nnn=m2_nnn,
        M2_nnn=M2_nnn,
        czcg_lower=(2 * kap - 1) * m2_nn / (math.sqrt(2.0) * kap),
        czcg_upper=10.0 * math.sqrt(3.0 * kap) * M2_nn / (2 * kap - 1),
        czmo_lower=0.5 * kap * m2_nnn,
        czmo_upper=6.0 * kap * M2_nnn / (2 * kap - 1),
    )


def eta_hybrid_from_parts(
    mesh: ACMesh,
    eta_z_T: np.ndarray,
    eta_z_k: np.ndarray,
    eta_mo_k: np.ndarray,
    constants: EstimatorConstants,
) -> tuple[np.ndarray, float]:
    """Combine recovery proxies with the exact interface residual."""
    K = mesh.n_nodes
    n_atoms = np.array([mesh.elem_natoms(j) for j in range(K)], dtype=float)
    n_tilde = 0.5 * (n_atoms + np.roll(n_atoms, -1))  # per node k: elems k, k+1
    czcg, czmo = constants.czcg, constants.czmo

    def proxy2(k: int) -> float:
        return (czmo * eta_z_k[k]) ** 2 / n_tilde[k]

    eta2 = np.zeros(K)
    for j in mesh.elems_kc_ring():
        eta2[j] = (czcg * eta_z_T[j]) ** 2 + 0.5 * (proxy2((j - 1) % K) + proxy2(j))
    jl, jr = mesh.left_special, mesh.right_special_elem
    eta2[jl] = (czcg * eta_z_T[jl]) ** 2 + 0.5 * proxy2((jl - 1) % K) + eta_mo_k[jl] ** 2
    eta2[jr] = (
        (czcg * eta_z_T[jr]) ** 2
        + eta_mo_k[mesh.right_special_node] ** 2
        + 0.5 * proxy2(jr)
    )
    return np.sqrt(eta2), math.sqrt(float(np.sum(eta2[mesh.elems_kc()])))


def eta_hybrid(
    state: CoupledState, model: PotentialModel, R: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    if R is None:
        R = model_residual(state, model)
    emo_k, _, _ = eta_mo(R, state.mesh)
    ez_T, ez_k, _ = eta_z(state)
    consts = aposteriori_constants(state, model)
    return eta_hybrid_from_parts(state.mesh, ez_T, ez_k, emo_k, consts)


# -- stability constant and the total bound -----------------------------------

def _gradient_gram(n: int, eps: float) -> sp.csr_matrix:
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    B = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    B[0, n - 1] = -1.0
    B[n - 1, 0] = -1.0
    return (B / eps).tocsr()


def stability_constant(p: AtomisticProblem, y: Deformation) -> float:
    """Surrogate stability constant: the smallest eigenvalue of the atomistic
    Hessian at y, restricted to mean-zero displacements and measured against
    the gradient inner product."""
    n = p.cfg.n_sites
    H = hessian_a(p, y).toarray()
    B = _gradient_gram(n, p.cfg.eps).toarray()
    Q = sla.null_space(np.ones((1, n)))
    A_r = Q.T @ H @ Q
    B_r = Q.T @ B @ Q
    lam = sla.eigh(A_r, B_r, subset_by_index=[0, 0], eigvals_only=True)[0]
    if not lam > 0:
        raise StabilityError(f"nonpositive stability eigenvalue {lam:.3e}")
    return float(lam)


# -- report -------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorReport:
    mesh: ACMesh
    R_mo: np.ndarray
    eta_mo_k: np.ndarray
    eta_mo_T: np.ndarray
    eta_cg_k: np.ndarray
    eta_cg_T: np.ndarray
    eta_z_k: np.ndarray
    eta_z_T: np.ndarray
    eta_hybrid_T: np.ndarray
    osc_T: np.ndarray
    fbar_T: np.ndarray
    eta_mo: float
    eta_cg: float
    eta_z: float
    eta_hybrid: float
    osc_total: float
    constants: EstimatorConstants
    c_a: float
    interface_jump_ok: bool

    def to_json(self) -> str:
        c = self.constants
        return json.dumps(
            {
                "totals": {
                    "eta_mo": self.eta_mo,
                    "eta_cg": self.eta_cg,
                    "eta_z": self.eta_z,
                    "eta_hybrid": self.eta_hybrid,
                    "osc": self.osc_total,
                },
                "constants": {
                    "kappa": c.kappa,
                    "kappa_in_range": c.kappa_in_range,
                    "m2_nn": c.m2_nn,
                    "M2_nn": c.M2_nn,
                    "m2_nnn": c.m2_nnn,
                    "M2_nnn": c.M2_nnn,
                    "C_z_cg": c.czcg,
                    "C_z_mo": c.czmo,
                    "c_a": self.c_a,
                },
                "interface_jump_ok": self.interface_jump_ok,
                "per_element": {
                    "eta_mo_T": self.eta_mo_T.tolist(),
                    "eta_cg_T": self.eta_cg_T.tolist(),
                    "eta_z_T": self.eta_z_T.tolist(),
                    "eta_hybrid_T": self.eta_hybrid_T.tolist(),
                    "osc_T": self.osc_T.tolist(),
                },
                "per_node": {
                    "eta_mo_k": self.eta_mo_k.tolist(),
                    "eta_cg_k": self.eta_cg_k.tolist(),
                    "eta_z_k": self.eta_z_k.tolist(),
                },
                "R_mo": self.R_mo.tolist(),
            }
        )


def _interface_jump_ok(state: CoupledState) -> bool:
    """Diagnostic for the interface-jump hypothesis of the recovery analysis."""
    mesh = state.mesh
    g = state.gradients()
    k1, k2 = mesh.k1, mesh.k2

    def ratio(num, den):
        if den == 0.0:
            return 0.0 if num == 0.0 else math.inf
        return abs(num / den)

    den_l = g[k1 - 2] - g[k1 - 1]
    den_r = g[k2 + 2] - g[k2 + 3]
    ratios = [
        ratio(g[k1 - 1] - g[k1], den_l),
        ratio(g[k1] - g[k1 + 1], den_l),
        ratio(g[k2] - g[k2 + 1], den_r),
        ratio(g[k2 + 1] - g[k2 + 2], den_r),
    ]
    return max(ratios) <= 3.0


def build_report(
    state: CoupledState,
    model: PotentialModel,
    f: LatticeFunction,
    c_a: float | None = None,
) -> EstimatorReport:
    """Assemble the complete estimator report at a solved coupled state."""
    mesh = state.mesh
    R = model_residual(state, model)
    emo_k, emo_T, emo = eta_mo(R, mesh)
    ecg_T, ecg_k, ecg, osc_total, osc_T, fbar_T = eta_cg(f, mesh)
    ez_T, ez_k, ez = eta_z(state)
    consts = aposteriori_constants(state, model)
    ehyb_T, ehyb = eta_hybrid_from_parts(mesh, ez_T, ez_k, emo_k, consts)
    if c_a is None:
        problem = AtomisticProblem(mesh.cfg, model, f)
        c_a = stability_constant(problem, state.interpolate())
    return EstimatorReport(
        mesh=mesh,
        R_mo=R,
        eta_mo_k=emo_k,
        eta_mo_T=emo_T,
        eta_cg_k=ecg_k,
        eta_cg_T=ecg_T,
        eta_z_k=ez_k,
        eta_z_T=ez_T,
        eta_hybrid_T=ehyb_T,
        osc_T=osc_T,
        fbar_T=fbar_T,
        eta_mo=emo,
        eta_cg=ecg,
        eta_z=ez,
        eta_hybrid=ehyb,
        osc_total=osc_total,
        constants=consts,
        c_a=c_a,
        interface_jump_ok=_interface_jump_ok(state),
    )


def total_bound(report: EstimatorReport, c_a: float | None = None) -> float:
    """Reliability bound (1/c_a) * sqrt(eta_mo^2 + eta_cg^2 + osc^2/2)."""
    ca = report.c_a if c_a is None else c_a
    if not ca > 0:
        raise StabilityError("total bound requires a positive stability constant")
    return (
        math.sqrt(report.eta_mo**2 + report.eta_cg**2 + 0.5 * report.osc_total**2) / ca
    )
