"""Periodic 1D lattice: configuration, lattice functions and finite differences.

The chain has 2N atoms per period with site labels -N+1, ..., N.  Everything
downstream (potentials, solvers, estimators) works with displacements stored
against the affine background eps*F*l, so finite differences of the affine
part are exact across the period seam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LatticeConfig",
    "LatticeFunction",
    "Deformation",
    "BondStencil",
    "diff_stencil",
    "lp_norm",
    "project_mean_zero",
    "AdmissibilityError",
]


class AdmissibilityError(ValueError):
    """Raised when a deformation or stencil leaves the admissible range."""


@dataclass(frozen=True)
class LatticeConfig:
    """Periodic chain of 2N atoms, spacing eps, macroscopic gradient F."""

    N: int
    eps: float
    F: float = 1.0

    def __post_init__(self):
        if self.N < 8:
            raise ValueError(f"N must be at least 8, got {self.N}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.F > 0:
            raise ValueError("F must be positive")

    @property
    def n_sites(self) -> int:
        return 2 * self.N

    @property
    def period(self) -> float:
        return 2 * self.N * self.eps

    def labels(self) -> np.ndarray:
        """Site labels -N+1 .. N in storage order."""
        return np.arange(-self.N + 1, self.N + 1)

    def index(self, label):
        """Storage index of a site label, with periodic wrap."""
        return (np.asarray(label) + self.N - 1) % (2 * self.N)

    def wrap_label(self, label):
        """Map an arbitrary integer label into (-N, N]."""
        return (np.asarray(label) + self.N - 1) % (2 * self.N) - self.N + 1


@dataclass(frozen=True)
class LatticeFunction:
    """Values on one period of the lattice, indexed by site label with wrap."""

    cfg: LatticeConfig
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.cfg.n_sites,):
            raise ValueError(
                f"expected {self.cfg.n_sites} values, got shape {vals.shape}"
            )
        object.__setattr__(self, "values", vals)

    def __getitem__(self, label):
        return self.values[self.cfg.index(label)]

    def mean(self) -> float:
        return float(np.mean(self.values))

    def is_mean_zero(self, rtol: float = 1e-12) -> bool:
        scale = np.max(np.abs(self.values))
        return abs(self.values.sum()) <= rtol * max(scale, 1.0) * self.cfg.n_sites


@dataclass(frozen=True)
class BondStencil:
    """Rescaled differences (D_1 y, D_2 y, D_-1 y, D_-2 y) at one site."""

    d1: float
    d2: float
    dm1: float
    dm2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d1, self.d2, self.dm1, self.dm2])


@dataclass(frozen=True)
class Deformation:
    """A deformation y_l = eps*F*l + u_l, stored as its periodic displacement."""

    cfg: LatticeConfig
    u: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.u, dtype=float)
        if vals.shape != (self.cfg.n_sites,):
            raise ValueError(
                f"expected {self.cfg.n_sites} displacements, got {vals.shape}"
            )
        object.__setattr__(self, "u", vals)

    @classmethod
    def uniform(cls, cfg: LatticeConfig) -> "Deformation":
        return cls(cfg, np.zeros(cfg.n_sites))

    def positions(self) -> np.ndarray:
        """y values in storage order (one period, labels -N+1..N)."""
        return self.cfg.eps * self.cfg.F * self.cfg.labels() + self.u

    def displacement(self) -> LatticeFunction:
        return LatticeFunction(self.cfg, self.u)

    def stencil_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(d1, d2, dm1, dm2) for every site, in storage order."""
        eps, F, u = self.cfg.eps, self.cfg.F, self.u
        d1 = F + (np.roll(u, -1) - u) / eps
        d2 = 2 * F + (np.roll(u, -2) - u) / eps
        dm1 = -F + (np.roll(u, 1) - u) / eps
        dm2 = -2 * F + (np.roll(u, 2) - u) / eps
        return d1, d2, dm1, dm2

    def forward_gaps(self) -> np.ndarray:
        """D_1 y at every site; admissibility means all entries positive."""
        return self.stencil_arrays()[0]

    def gradient(self) -> np.ndarray:
        """Backward differences y'_l = (y_l - y_{l-1})/eps in storage order."""
        u = self.u
        return self.cfg.F + (u - np.roll(u, 1)) / self.cfg.eps


def diff_stencil(y: Deformation, label: int) -> BondStencil:
    """Finite-difference stencil of a deformation at one (wrapped) site."""
    i = int(y.cfg.index(label))
    d1, d2, dm1, dm2 = y.stencil_arrays()
    return BondStencil(float(d1[i]), float(d2[i]), float(dm1[i]), float(dm2[i]))


def lp_norm(values, p, sites, eps: float) -> float:
    """Discrete l^p_eps norm over a nonempty set of values.

    ``values`` may be a LatticeFunction (then ``sites`` are labels) or a plain
    array (then ``sites`` are indices into it, or None for all entries).
    """
    if isinstance(values, LatticeFunction):
        sites = np.asarray(sites)
        if sites.size == 0:
            raise ValueError("empty site set")
        v = values.values[values.cfg.index(sites)]
    else:
        v = np.asarray(values, dtype=float)
        if sites is not None:
            sites = np.asarray(sites)
            if sites.size == 0:
                raise ValueError("empty site set")
            v = v[sites]
        if v.size == 0:
            raise ValueError("empty site set")
    if p == np.inf or p == "inf":
        return float(np.max(np.abs(v)))
    p = float(p)
    return float((eps * np.sum(np.abs(v) ** p)) ** (1.0 / p))


def project_mean_zero(v: LatticeFunction) -> LatticeFunction:
    """Subtract the mean; idempotent linear projection onto mean-zero."""
    return LatticeFunction(v.cfg, v.values - np.mean(v.values))
