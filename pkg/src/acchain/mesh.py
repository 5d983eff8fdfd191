"""Coarse meshes on lattice sites with atomistic/interface/continuum regions.

Nodes are lattice labels sorted into one period; element j spans
[nodes[j-1], nodes[j]] with element 0 wrapping around the period seam.
Positions k1 < k2 in the node array delimit the single atomistic region:
atomistic sites are nodes[k1+1 .. k2-1], interface sites are
nodes[k1-1], nodes[k1], nodes[k2], nodes[k2+1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .chain import LatticeConfig

__all__ = ["ACMesh", "MeshError", "build_initial", "validate", "bisect", "merge_into_atomistic", "kappa"]


class MeshError(ValueError):
    """Raised by refinement primitives on violated preconditions."""


@dataclass(frozen=True)
class ACMesh:
    cfg: LatticeConfig
    nodes: np.ndarray  # sorted int labels within (-N, N]
    k1: int  # node position of the left atomistic delimiter
    k2: int  # node position of the right atomistic delimiter
    fixed_spans: frozenset  # {(left_label, right_label)} of immutable elements

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=int)
        object.__setattr__(self, "nodes", nodes)

    # -- basic geometry -------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def dof(self) -> int:
        return self.nodes.size

    def elem_span(self, j: int) -> tuple[int, int]:
        """(left_label, right_label) of element j; j=0 wraps below -N+1."""
        right = int(self.nodes[j])
        left = int(self.nodes[j - 1]) - (2 * self.cfg.N if j == 0 else 0)
        return left, right

    def elem_atoms(self, j: int) -> np.ndarray:
        """Labels of the sites in element j: left+1 .. right (unwrapped)."""
        left, right = self.elem_span(j)
        return np.arange(left + 1, right + 1)

    def elem_natoms(self, j: int) -> int:
        left, right = self.elem_span(j)
        return right - left

    def elem_length(self, j: int) -> float:
        return self.elem_natoms(j) * self.cfg.eps

    def lengths(self) -> np.ndarray:
        n = np.diff(self.nodes, prepend=self.nodes[-1] - 2 * self.cfg.N)
        return n * self.cfg.eps

    def is_fixed(self, j: int) -> bool:
        return self.elem_span(j) in self.fixed_spans

    # -- regions --------------------------------------------------------------

    @property
    def atomistic_sites(self) -> np.ndarray:
        return self.nodes[self.k1 + 1 : self.k2]

    @property
    def interface_sites(self) -> np.ndarray:
        return self.nodes[[self.k1 - 1, self.k1, self.k2, self.k2 + 1]]

    @property
    def n_atomistic(self) -> int:
        return self.k2 - self.k1 - 1

    def elems_atomistic(self) -> np.ndarray:
        return np.arange(self.k1 + 1, self.k2 + 1)

    def elems_interface(self) -> np.ndarray:
        return np.array([self.k1, self.k2 + 1])

    def elems_continuum(self) -> np.ndarray:
        """Elements whose interior lies in the continuum region."""
        return np.concatenate(
            [np.arange(0, self.k1), np.arange(self.k2 + 2, self.n_nodes)]
        )

    def elems_kc(self) -> np.ndarray:
        """Continuum elements not adjacent to the interface."""
        return np.concatenate(
            [np.arange(0, self.k1 - 1), np.arange(self.k2 + 3, self.n_nodes)]
        )

    def elems_kc_ring(self) -> np.ndarray:
        """Continuum elements further inside (drops the two specials)."""
        keep = [j for j in self.elems_kc() if j not in (self.k1 - 2, self.k2 + 3)]
        return np.asarray(keep, dtype=int)

    def nodes_kc(self) -> np.ndarray:
        """Node positions whose site lies in the continuum region."""
        return np.concatenate(
            [np.arange(0, self.k1 - 1), np.arange(self.k2 + 2, self.n_nodes)]
        )

    def nodes_kc_ring(self) -> np.ndarray:
        """Continuum nodes not adjacent to the interface nodes."""
        keep = [k for k in self.nodes_kc() if k not in (self.k1 - 2, self.k2 + 2)]
        return np.asarray(keep, dtype=int)

    @property
    def left_special(self) -> int:
        """Element (and node) position absorbing the left interface residual."""
        return self.k1 - 2

    @property
    def right_special_node(self) -> int:
        return self.k2 + 2

    @property
    def right_special_elem(self) -> int:
        return self.k2 + 3

    # -- serialization --------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "N": self.cfg.N,
                "eps": self.cfg.eps,
                "F": self.cfg.F,
                "nodes": self.nodes.tolist(),
                "k1": self.k1,
                "k2": self.k2,
                "atomistic": self.atomistic_sites.tolist(),
                "interface": self.interface_sites.tolist(),
                "fixed": sorted(self.fixed_spans),
            }
        )


def build_initial(L: int, cfg: LatticeConfig, seed_halfwidth: int = 0) -> ACMesh:
    """Initial mesh with nodes 0, +-1..+-4, +-L, +-(L+5) and the period node.

    ``seed_halfwidth`` widens the initial atomistic region to {-s..s} (the
    default single-site seed matches the refinement algorithm's step 1, with
    the +-4 nodes providing the length-eps buffer next to the interface).
    """
    if L < 8:
        raise MeshError("L must be at least 8")
    s = seed_halfwidth
    if L <= s + 5:
        raise MeshError("L too small for the requested atomistic seed")
    if cfg.N < L + 6:
        raise MeshError("period too small for the initial mesh")
    core = np.arange(-(s + 4), s + 5)
    labels = sorted(set(core.tolist()) | {-L, L, -(L + 5), L + 5, cfg.N})
    nodes = np.asarray(labels, dtype=int)
    k1 = int(np.searchsorted(nodes, -(s + 1)))
    k2 = int(np.searchsorted(nodes, s + 1))
    fixed = frozenset({(-(L + 5), -L), (L, L + 5)})
    m = ACMesh(cfg=cfg, nodes=nodes, k1=k1, k2=k2, fixed_spans=fixed)
    bad = validate(m)
    if bad:
        raise MeshError(f"initial mesh violates {bad}")
    return m


def validate(m: ACMesh) -> list[str]:
    """Check (T1)-(T5) and the structural margins; empty list means ok."""
    out = []
    n = m.nodes
    N = m.cfg.N
    if n.dtype.kind != "i" or np.any(n <= -N) or np.any(n > N):
        out.append("T1")
    if np.any(np.diff(n) <= 0):
        out.append("T1")
    if not (3 <= m.k1 and m.k1 < m.k2 and m.k2 <= m.n_nodes - 4):
        out.append("T2")
        return out
    # atomistic resolution: nodes k1..k2 are consecutive lattice sites
    if not np.all(np.diff(n[m.k1 : m.k2 + 1]) == 1):
        out.append("T2")
    # interface elements have length eps
    if m.elem_natoms(m.k1) != 1 or m.elem_natoms(m.k2 + 1) != 1:
        out.append("T3")
    # first continuum element next to the interface has length eps
    if m.elem_natoms(m.k1 - 1) != 1 or m.elem_natoms(m.k2 + 2) != 1:
        out.append("T5")
    return out


def bisect(m: ACMesh, j: int) -> ACMesh:
    """Split element j at the lattice site nearest its midpoint (ties down)."""
    if m.is_fixed(j):
        raise MeshError(f"element {j} is fixed and cannot be refined")
    if j in m.elems_atomistic() or j in m.elems_interface():
        raise MeshError(f"element {j} is not a continuum element")
    na = m.elem_natoms(j)
    if na < 2:
        raise MeshError(f"element {j} has length eps; must merge instead")
    left, _ = m.elem_span(j)
    new = left + na // 2
    new = int(m.cfg.wrap_label(new))
    nodes = np.sort(np.append(m.nodes, new))
    k1 = int(np.searchsorted(nodes, m.nodes[m.k1]))
    k2 = int(np.searchsorted(nodes, m.nodes[m.k2]))
    out = replace(m, nodes=nodes, k1=k1, k2=k2)
    bad = validate(out)
    if bad:
        raise MeshError(f"bisection produced an invalid mesh: {bad}")
    return out


def merge_into_atomistic(m: ACMesh, j: int) -> ACMesh:
    """Grow the atomistic region by one site toward element j's side.

    ``j`` must be one of the interface-adjacent continuum elements (the
    length-eps buffer or the special element next to it, on either side).
    """
    if j in (m.k1 - 2, m.k1 - 1):
        side = "left"
    elif j in (m.k2 + 2, m.k2 + 3):
        side = "right"
    else:
        raise MeshError(f"element {j} is not adjacent to the interface region")
    nodes = m.nodes
    if side == "left":
        new_k1_label = int(nodes[m.k1]) - 1  # old inner interface atom joins A
        need = new_k1_label - 2  # (T5): first atom outside the new interface
        k1_label = new_k1_label
        k2_label = int(nodes[m.k2])
    else:
        new_k2_label = int(nodes[m.k2]) + 1
        need = new_k2_label + 2
        k1_label = int(nodes[m.k1])
        k2_label = new_k2_label
    need = int(m.cfg.wrap_label(need))
    if need not in nodes:
        nodes = np.sort(np.append(nodes, need))
    k1 = int(np.searchsorted(nodes, k1_label))
    k2 = int(np.searchsorted(nodes, k2_label))
    out = replace(m, nodes=nodes, k1=k1, k2=k2)
    bad = validate(out)
    if bad:
        raise MeshError(f"merge produced an invalid mesh: {bad}")
    return out


def kappa(m: ACMesh) -> tuple[float, bool]:
    """Mesh-regularity constant over continuum nodes, clamped into (1/2, 1].

    Returns (kappa, in_range) where ``in_range`` reports whether the raw
    minimum already sat inside (1/2, 1].
    """
    h = m.lengths()
    K = m.n_nodes
    raw = 1.0
    for k in m.nodes_kc():
        hk = h[k]
        hk1 = h[(k + 1) % K]
        hw = 0.5 * (hk + hk1)
        raw = min(raw, hw / hk, hw / hk1)
    in_range = 0.5 < raw <= 1.0
    clamped = min(max(raw, np.nextafter(0.5, 1.0)), 1.0)
    return float(clamped), bool(in_range)
