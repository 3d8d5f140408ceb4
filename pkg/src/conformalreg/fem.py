"""Lumped mass and cotangent stiffness operators, plus their conformally
deformed variants."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .mesh import TriMesh, face_geometry


@dataclass(frozen=True)
class FemOperators:
    """Discrete surface operators.

    Attributes
    ----------
    mass : (n,) array
        Diagonal of the lumped mass matrix M: one third of the incident
        triangle area per vertex.
    stiffness : csr_matrix
        Symmetric cotangent stiffness matrix S with zero row sums.
    """

    mass: np.ndarray
    stiffness: sparse.csr_matrix
    lump_sqrt: np.ndarray = field(init=False)  # diagonal of L, M = L^T L

    def __post_init__(self):
        m = np.ascontiguousarray(self.mass, dtype=np.float64)
        if np.any(m <= 0):
            raise ValueError("mass matrix diagonal must be strictly positive")
        m.flags.writeable = False
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "lump_sqrt", np.sqrt(m))

    @property
    def n(self) -> int:
        return len(self.mass)

    def mass_matrix(self) -> sparse.dia_matrix:
        return sparse.diags(self.mass)

    def total_area(self) -> float:
        return float(self.mass.sum())


@dataclass(frozen=True)
class DeformedOperators:
    """Operators of the conformally deformed metric, for positive factor w.

    The deformed stiffness S_bar = L^-T diag(w)^-1 S diag(w)^-1 L^-1 is kept
    as a composition of diagonal scalings around one sparse multiply; it is
    never densified.
    """

    base: FemOperators
    w: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        if w.shape != (self.base.n,):
            raise ValueError(f"w must have shape ({self.base.n},)")
        if np.any(w <= 0):
            raise ValueError("conformal factor w must be strictly positive")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @property
    def mass_deformed(self) -> np.ndarray:
        """Diagonal of Mw = diag(w) M diag(w)."""
        return self.w**2 * self.base.mass

    @property
    def deformed_area(self) -> float:
        """w^T M w."""
        return float(np.dot(self.w**2, self.base.mass))

    def apply_sbar(self, x: np.ndarray) -> np.ndarray:
        """Apply S_bar(w) to a vector or matrix of column vectors."""
        scale = self.w * self.base.lump_sqrt
        y = x / (scale[:, None] if x.ndim == 2 else scale)
        y = self.base.stiffness @ y
        return y / (scale[:, None] if x.ndim == 2 else scale)

    def sbar_quadratic(self, x: np.ndarray) -> float:
        """x^T S_bar x, summed over columns when x is a matrix."""
        return float(np.sum(x * self.apply_sbar(x)))


def mass_matrix(mesh: TriMesh) -> np.ndarray:
    """Diagonal of the lumped mass matrix: M_ii = (1/3) sum of incident areas."""
    geo = face_geometry(mesh)
    m = np.zeros(mesh.n_vertices)
    third = geo.areas / 3.0
    for c in range(3):
        np.add.at(m, mesh.triangles[:, c], third)
    return m


def stiffness_matrix(mesh: TriMesh) -> sparse.csr_matrix:
    """Cotangent stiffness matrix.

    Off-diagonal S_ij = -1/2 (cot a_ij + cot b_ij) accumulated over the one
    or two triangles containing edge (i, j); diagonal chosen so rows sum to
    zero. Negative cotangents from obtuse triangles are kept unclamped.
    """
    geo = face_geometry(mesh)
    t = mesh.triangles
    rows, cols, vals = [], [], []
    for c in range(3):
        i = t[:, (c + 1) % 3]
        j = t[:, (c + 2) % 3]
        wij = -0.5 * geo.cotangents[:, c]  # angle at corner c is opposite edge (i, j)
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([wij, wij])
    n = mesh.n_vertices
    S = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    S.setdiag(-np.asarray(S.sum(axis=1)).ravel())
    return S


def assemble(mesh: TriMesh) -> FemOperators:
    """Assemble both operators for a validated mesh."""
    return FemOperators(mass=mass_matrix(mesh), stiffness=stiffness_matrix(mesh))


def deform(ops: FemOperators, w: np.ndarray) -> DeformedOperators:
    """Deformed operators for a strictly positive per-vertex factor w."""
    return DeformedOperators(base=ops, w=np.asarray(w, dtype=np.float64))


def negative_weight_count(ops: FemOperators) -> int:
    """Diagnostic: number of positive off-diagonal stiffness entries.

    (Off-diagonals of S are -cot weights; obtuse triangles make them > 0.)
    """
    coo = sparse.coo_matrix(ops.stiffness)
    off = coo.row != coo.col
    return int(np.sum(coo.data[off] > 1e-14))


def save_mass(ops: FemOperators, path: str | Path) -> None:
    np.savetxt(path, ops.mass)


def save_stiffness_triplets(ops: FemOperators, path: str | Path) -> None:
    """Write S in `i j value` coordinate text format."""
    coo = sparse.coo_matrix(ops.stiffness)
    with Path(path).open("w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
