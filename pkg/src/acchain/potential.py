"""Four-argument site potentials with analytic derivatives.

A site potential V takes the rescaled neighbour differences
(D_1 y, D_2 y, D_-1 y, D_-2 y) of one atom.  Built-in instances: an EAM
model (pair part plus embedding), Morse and Lennard-Jones pair models, and
a custom variant backed by user callables.  All derivatives are hand-coded
chain rules, validated against finite differences in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import AdmissibilityError, BondStencil

__all__ = [
    "PotentialModel",
    "DerivativeRatios",
    "eam",
    "morse",
    "lennard_jones",
    "custom",
    "harmonic_nn",
    "eval_V",
    "grad_V",
    "hess_V",
    "cauchy_born",
    "assumption_ratios",
    "UNBOUNDED",
]

# Distinguished "unbounded ratio" sentinel; serializers emit the string "inf".
UNBOUNDED = math.inf

# Index map for the component order (1, 2, -1, -2).
_SIGNS = np.array([1.0, 1.0, -1.0, -1.0])

# Second-derivative groups of the interaction-strength hierarchy.  Pairs are
# (row, col) into the 4x4 Hessian with the component order above.
GROUP_NN_DIAG = ((0, 0), (2, 2))
GROUP_NNN1 = ((0, 2), (2, 0), (1, 1), (3, 3))
GROUP_NNN2 = ((0, 1), (2, 3), (1, 0), (3, 2), (3, 0), (1, 2), (2, 1), (0, 3))
GROUP_NNN3 = ((1, 3), (3, 1))

SIGN_TABLE_GROUPS = {
    "d11": ((0, 0), (2, 2)),
    "d1m1": ((0, 2), (2, 0)),
    "d22": ((1, 1), (3, 3)),
    "d12": ((0, 1), (1, 0)),
    "d1m2": ((0, 3), (3, 0)),
    "d2m1": ((1, 2), (2, 1)),
    "dm1m2": ((2, 3), (3, 2)),
    "d2m2": ((1, 3), (3, 1)),
}


@dataclass(frozen=True)
class PotentialModel:
    """A site potential; ``kind`` selects the functional form."""

    kind: str
    params: dict = field(default_factory=dict)

    def scaled(self, s: float) -> "PotentialModel":
        """The potential multiplied by a positive scalar."""
        base = self

        def value(g1, g2, g3, g4):
            return s * _eval(base, g1, g2, g3, g4)

        def grad(g1, g2, g3, g4):
            return s * _grad(base, g1, g2, g3, g4)

        def hess(g1, g2, g3, g4):
            return s * _hess(base, g1, g2, g3, g4)

        return custom(value, grad, hess)


def eam(a: float = 4.4, b: float = 3.0, c: float = 5.0, rho0: float | None = None) -> PotentialModel:
    """EAM chain model: half-sum of Morse-type pair bonds plus embedding."""
    if rho0 is None:
        rho0 = 6.0 * math.exp(-b)
    return PotentialModel("eam", {"a": a, "b": b, "c": c, "rho0": rho0})


def morse(alpha: float = 5.0) -> PotentialModel:
    """Morse pair model phi(r) = e^{-2*alpha*(r-1)} - 2 e^{-alpha*(r-1)}."""
    return PotentialModel("morse", {"alpha": alpha})


def lennard_jones() -> PotentialModel:
    """Lennard-Jones pair model phi(r) = r^-12 - 2 r^-6."""
    return PotentialModel("lj", {})


def custom(value: Callable, grad: Callable, hess: Callable) -> PotentialModel:
    """Potential from user callables over the four stencil components."""
    return PotentialModel("custom", {"value": value, "grad": grad, "hess": hess})


def harmonic_nn(k0: float, f0: float = 1.0) -> PotentialModel:
    """Quadratic nearest-neighbour spring, V = k0/2 (d1 - f0)^2."""

    def value(g1, g2, g3, g4):
        return 0.5 * k0 * (g1 - f0) ** 2

    def grad(g1, g2, g3, g4):
        z = np.zeros_like(np.asarray(g1, dtype=float))
        return np.stack([k0 * (g1 - f0) + z, z, z, z])

    def hess(g1, g2, g3, g4):
        n = np.shape(np.asarray(g1, dtype=float))
        h = np.zeros((4, 4) + n)
        h[0, 0] = k0
        return h

    return custom(value, grad, hess)


# -- pair functions -----------------------------------------------------------

def _pair_funcs(model: PotentialModel):
    """(phi, phi', phi'') for the model's pair part."""
    if model.kind == "eam":
        a = model.params["a"]

        def phi(r):
            return np.exp(-2 * a * (r - 1)) - 2 * np.exp(-a * (r - 1))

        def dphi(r):
            return -2 * a * np.exp(-2 * a * (r - 1)) + 2 * a * np.exp(-a * (r - 1))

        def ddphi(r):
            return 4 * a * a * np.exp(-2 * a * (r - 1)) - 2 * a * a * np.exp(-a * (r - 1))

        return phi, dphi, ddphi
    if model.kind == "morse":
        al = model.params["alpha"]

        def phi(r):
            return np.exp(-2 * al * (r - 1)) - 2 * np.exp(-al * (r - 1))

        def dphi(r):
            return -2 * al * np.exp(-2 * al * (r - 1)) + 2 * al * np.exp(-al * (r - 1))

        def ddphi(r):
            return 4 * al * al * np.exp(-2 * al * (r - 1)) - 2 * al * al * np.exp(-al * (r - 1))

        return phi, dphi, ddphi
    if model.kind == "lj":

        def phi(r):
            return r ** -12.0 - 2 * r ** -6.0

        def dphi(r):
            return -12 * r ** -13.0 + 12 * r ** -7.0

        def ddphi(r):
            return 156 * r ** -14.0 - 84 * r ** -8.0

        return phi, dphi, ddphi
    raise ValueError(f"no pair form for kind {model.kind!r}")


def _embedding(model: PotentialModel):
    b, c, rho0 = model.params["b"], model.params["c"], model.params["rho0"]

    def psi(r):
        return np.exp(-b * r)

    def dpsi(r):
        return -b * np.exp(-b * r)

    def ddpsi(r):
        return b * b * np.exp(-b * r)

    def ft(rho):
        d = rho - rho0
        return c * (d ** 2 + d ** 4)

    def dft(rho):
        d = rho - rho0
        return c * (2 * d + 4 * d ** 3)

    def ddft(rho):
        d = rho - rho0
        return c * (2 + 12 * d ** 2)

    return psi, dpsi, ddpsi, ft, dft, ddft


def _bond_lengths(g1, g2, g3, g4, kind: str):
    """Positive bond lengths (g1, g2, -g3, -g4); domain checked for LJ."""
    r = np.stack(np.broadcast_arrays(
        np.asarray(g1, dtype=float), np.asarray(g2, dtype=float),
        -np.asarray(g3, dtype=float), -np.asarray(g4, dtype=float)))
    if kind == "lj" and np.any(r <= 0):
        raise AdmissibilityError("nonpositive bond length for Lennard-Jones")
    return r


def _eval(model, g1, g2, g3, g4):
    if model.kind == "custom":
        return model.params["value"](g1, g2, g3, g4)
    phi, _, _ = _pair_funcs(model)
    r = _bond_lengths(g1, g2, g3, g4, model.kind)
    out = 0.5 * np.sum(phi(r), axis=0)
    if model.kind == "eam":
        psi, _, _, ft, _, _ = _embedding(model)
        out = out + ft(np.sum(psi(r), axis=0))
    return out


def _grad(model, g1, g2, g3, g4):
    if model.kind == "custom":
        return np.asarray(model.params["grad"](g1, g2, g3, g4), dtype=float)
    _, dphi, _ = _pair_funcs(model)
    r = _bond_lengths(g1, g2, g3, g4, model.kind)
    signs = _SIGNS.reshape((4,) + (1,) * (r.ndim - 1))
    out = 0.5 * signs * dphi(r)
    if model.kind == "eam":
        psi, dpsi, _, _, dft, _ = _embedding(model)
        rho = np.sum(psi(r), axis=0)
        out = out + dft(rho) * signs * dpsi(r)
    return out


def _hess(model, g1, g2, g3, g4):
    if model.kind == "custom":
        return np.asarray(model.params["hess"](g1, g2, g3, g4), dtype=float)
    _, _, ddphi = _pair_funcs(model)
    r = _bond_lengths(g1, g2, g3, g4, model.kind)
    tail = r.shape[1:]
    out = np.zeros((4, 4) + tail)
    dd = ddphi(r)
    for i in range(4):
        out[i, i] = 0.5 * dd[i]
    if model.kind == "eam":
        psi, dpsi, ddpsi, _, dft, ddft = _embedding(model)
        rho = np.sum(psi(r), axis=0)
        signs = _SIGNS.reshape((4,) + (1,) * (r.ndim - 1))
        p = signs * dpsi(r)  # d rho / d g_i
        f1, f2 = dft(rho), ddft(rho)
        out = out + f2 * np.einsum("i...,j...->ij...", p, p)
        for i in range(4):
            out[i, i] = out[i, i] + f1 * ddpsi(r[i])
    return out


def _unpack(g):
    if isinstance(g, BondStencil):
        return g.d1, g.d2, g.dm1, g.dm2
    g = np.asarray(g, dtype=float)
    return g[0], g[1], g[2], g[3]


def eval_V(model: PotentialModel, g) -> float:
    """V at one stencil; raises AdmissibilityError on a non-finite result."""
    out = _eval(model, *_unpack(g))
    if not np.all(np.isfinite(out)):
        raise AdmissibilityError("potential evaluated outside its domain")
    return float(out)


def grad_V(model: PotentialModel, g) -> np.ndarray:
    """Analytic partials (d1, d2, d-1, d-2), matching the component order."""
    out = _grad(model, *_unpack(g))
    if not np.all(np.isfinite(out)):
        raise AdmissibilityError("potential gradient outside its domain")
    return np.asarray(out, dtype=float).reshape(4)


def hess_V(model: PotentialModel, g) -> np.ndarray:
    """Analytic symmetric 4x4 second partials."""
    out = _hess(model, *_unpack(g))
    if not np.all(np.isfinite(out)):
        raise AdmissibilityError("potential hessian outside its domain")
    return np.asarray(out, dtype=float).reshape(4, 4)


_CB = np.array([1.0, 2.0, -1.0, -2.0])


def cauchy_born(model: PotentialModel, F: float) -> tuple[float, float, float]:
    """Cauchy-Born density W(F) = V(F, 2F, -F, -2F) and its derivatives."""
    if not F > 0:
        raise AdmissibilityError("Cauchy-Born density needs F > 0")
    g = (F, 2 * F, -F, -2 * F)
    w = eval_V(model, g)
    w1 = float(_CB @ grad_V(model, g))
    w2 = float(_CB @ hess_V(model, g) @ _CB)
    return w, w1, w2


def cauchy_born_arrays(model: PotentialModel, F: np.ndarray):
    """Vectorized (W, W', W'') over an array of gradients."""
    F = np.asarray(F, dtype=float)
    g = (F, 2 * F, -F, -2 * F)
    w = _eval(model, *g)
    grads = _grad(model, *g)
    hesses = _hess(model, *g)
    w1 = np.einsum("i,i...->...", _CB, grads)
    w2 = np.einsum("i,ij...,j->...", _CB, hesses, _CB)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
        raise AdmissibilityError("Cauchy-Born density outside its domain")
    return w, w1, w2


@dataclass(frozen=True)
class DerivativeRatios:
    """Interaction-strength hierarchy of second derivatives along a solution."""

    r1: float
    r2: float
    r3: float
    sign_table: dict
    m2_nn: float
    M2_nn: float
    m2_nnn: float
    M2_nnn: float

    def formatted(self, x: float) -> str:
        return "inf" if math.isinf(x) else f"{x:.6g}"


def _group_values(hesses: np.ndarray, group) -> np.ndarray:
    return np.concatenate([hesses[:, i, j] for (i, j) in group])


def _sign_of(vals: np.ndarray, tol: float = 1e-14) -> str:
    if np.all(np.abs(vals) <= tol):
        return "0"
    if np.all(vals > -tol):
        return "+"
    if np.all(vals < tol):
        return "-"
    return "mixed"


def assumption_ratios(model: PotentialModel, stencils) -> DerivativeRatios:
    """Ratios between derivative groups, evaluated over a stencil list."""
    stencils = list(stencils)
    if not stencils:
        raise ValueError("empty stencil list")
    g = np.array([_unpack(s) for s in stencils], dtype=float).T
    hesses = np.moveaxis(_hess(model, g[0], g[1], g[2], g[3]), -1, 0)  # (n,4,4)

    nn = np.abs(_group_values(hesses, GROUP_NN_DIAG))
    n1 = np.abs(_group_values(hesses, GROUP_NNN1))
    n2 = np.abs(_group_values(hesses, GROUP_NNN2))
    n3 = np.abs(_group_values(hesses, GROUP_NNN3))

    def ratio(num_min, den_max):
        if den_max == 0.0:
            return UNBOUNDED
        return float(num_min / den_max)

    sign_table = {
        name: _sign_of(_group_values(hesses, grp))
        for name, grp in SIGN_TABLE_GROUPS.items()
    }
    return DerivativeRatios(
        r1=ratio(nn.min(), n1.max()),
        r2=ratio(n1.min(), n2.max()),
        r3=ratio(n2.min(), n3.max()),
        sign_table=sign_table,
        m2_nn=float(nn.min()),
        M2_nn=float(nn.max()),
        m2_nnn=float(n1.min()),
        M2_nnn=float(n1.max()),
    )
