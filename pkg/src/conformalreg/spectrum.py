"""Eigensystems of the discrete surface operators: the natural basis of each
surface and the warm-started deformed reinitialization basis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import eigsh

from . import stiefel
from .fem import DeformedOperators, FemOperators


class EigenSolverError(RuntimeError):
    """Sparse eigensolver failed to converge."""


@dataclass(frozen=True)
class EigenBasis:
    """Generalized eigenpairs S phi = lambda M phi.

    ``vectors`` columns are orthonormal against the mass matrix named by
    ``metric`` ("mass" for the undeformed operators).
    """

    values: np.ndarray  # (k,), ascending
    vectors: np.ndarray  # (n, k)
    metric: str = "mass"

    @property
    def k(self) -> int:
        return len(self.values)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first significant entry of each column positive (reproducible
    sign convention across runs and platforms)."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        idx = np.nonzero(np.abs(col) > 1e-8 * np.abs(col).max())[0]
        if idx.size and col[idx[0]] < 0:
            out[:, j] = -col
    return out


def lb_basis(ops: FemOperators, k: int, maxiter: int | None = None) -> EigenBasis:
    """First k generalized eigenpairs of (S, M), M-orthonormal, via
    shift-invert around a small negative shift (S is PSD with a zero mode).
    """
    n = ops.n
    if not 0 < k < n:
        raise ValueError(f"need 0 < k < n, got k={k}, n={n}")
    # eigenvalue scale sets the shift; the pencil is singular exactly at 0
    scale = float(ops.stiffness.diagonal().sum() / ops.mass.sum())
    sigma = -1e-6 * max(scale, 1.0)
    rng = np.random.default_rng(0)  # fixed start vector for determinism
    v0 = rng.standard_normal(n)
    try:
        vals, vecs = eigsh(
            ops.stiffness.tocsc(),
            k=k,
            M=ops.mass_matrix().tocsc(),
            sigma=sigma,
            which="LM",
            v0=v0,
            maxiter=maxiter,
        )
    except Exception as exc:  # ARPACK failures surface as several types
        raise EigenSolverError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(vals)
    vals = vals[order]
    vecs = _fix_signs(vecs[:, order])
    return EigenBasis(values=vals, vectors=vecs, metric="mass")


def basis_residuals(ops: FemOperators, basis: EigenBasis) -> np.ndarray:
    """Per-column relative residual ||S phi - lambda M phi|| / ||S phi||."""
    S_phi = ops.stiffness @ basis.vectors
    M_phi = basis.vectors * ops.mass[:, None]
    res = S_phi - M_phi * basis.values[None, :]
    denom = np.maximum(np.linalg.norm(S_phi, axis=0), 1e-30)
    return np.linalg.norm(res, axis=0) / denom


def reinit_basis(
    dops: DeformedOperators,
    warm: np.ndarray,
    opts: stiefel.StiefelOptions | None = None,
) -> np.ndarray:
    """Orthonormal frame minimizing tr(Psi^T S_bar(w) Psi), warm-started.

    Deliberately avoids a fresh eigensolve: descending from the warm start
    keeps the sign and multiplicity resolution already achieved, while the
    trace can only decrease.
    """
    n, k = warm.shape
    problem = stiefel.StiefelProblem(
        n=n,
        k=k,
        objective=lambda X: dops.sbar_quadratic(X),
        gradient=lambda X: 2.0 * dops.apply_sbar(X),
    )
    result = stiefel.minimize(problem, warm, opts)
    return result.X
