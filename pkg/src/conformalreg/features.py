"""Corresponding feature functions: landmark indicators, heat diffusion
snapshots and spectral band-pass (WKS-style) descriptors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .fem import DeformedOperators, FemOperators
from .mesh import TriMesh
from .spectrum import EigenBasis


@dataclass(frozen=True)
class FeatureSet:
    """Feature functions as columns of ``values`` (n x l).

    ``provenance`` records landmarks and parameters so metric-dependent kinds
    (heat, wks) can be recomputed under a deformed metric.
    """

    values: np.ndarray
    kind: str  # {"indicator", "heat", "wks"}
    landmarks: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


def _check_landmarks(landmarks, n: int) -> np.ndarray:
    lm = np.asarray(landmarks, dtype=np.int64)
    if lm.ndim != 1 or lm.size == 0:
        raise ValueError("landmarks must be a nonempty 1-D index list")
    if len(np.unique(lm)) != len(lm):
        raise ValueError("duplicate landmark index")
    if lm.min() < 0 or lm.max() >= n:
        raise ValueError("landmark index out of range")
    return lm


def indicator_features(mesh: TriMesh, landmarks) -> FeatureSet:
    """One column per landmark, valued 1 at the landmark and 0 elsewhere.

    Indicator values do not depend on the metric, so these features never
    need recomputation under deformation.
    """
    lm = _check_landmarks(landmarks, mesh.n_vertices)
    values = np.zeros((mesh.n_vertices, len(lm)))
    values[lm, np.arange(len(lm))] = 1.0
    return FeatureSet(values=values, kind="indicator", landmarks=lm)


def default_heat_dt(ops: FemOperators) -> float:
    """Mean vertex mass: a dimensionally consistent diffusion step."""
    return 0.5 * ops.total_area() / ops.n


def heat_features(
    ops: FemOperators | DeformedOperators,
    landmarks,
    times,
    dt: float,
) -> FeatureSet:
    """Crank-Nicolson heat snapshots seeded by landmark indicators.

    ``times`` are step counts; one column per (landmark, step count) pair.
    Deformed operators diffuse with the w^2-scaled mass matrix, which changes
    the diffusion but still conserves total heat exactly (S has zero row
    sums).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(ops, DeformedOperators):
        mass, S = ops.mass_deformed, ops.base.stiffness
        n = ops.base.n
    else:
        mass, S = ops.mass, ops.stiffness
        n = ops.n
    lm = _check_landmarks(landmarks, n)
    steps = [int(t) for t in times]
    if any(t < 0 for t in steps):
        raise ValueError("snapshot step counts must be nonnegative")

    M = sparse.diags(mass)
    lhs = (M + (dt / 2.0) * S).tocsc()
    rhs = (M - (dt / 2.0) * S).tocsr()
    try:
        lu = splu(lhs)
    except RuntimeError as exc:
        raise RuntimeError(f"heat-step factorization failed: {exc}") from exc

    cols = []
    for v in lm:
        u = np.zeros(n)
        u[v] = 1.0
        snapshots = {}
        done = 0
        for target in sorted(set(steps)):
            while done < target:
                u = lu.solve(rhs @ u)
                done += 1
            snapshots[target] = u.copy()
        cols.extend(snapshots[t] for t in steps)
    values = np.column_stack(cols)
    return FeatureSet(
        values=values,
        kind="heat",
        landmarks=lm,
        params={"times": steps, "dt": dt},
    )


def wks_features(basis: EigenBasis, landmarks, energies, sigma: float) -> FeatureSet:
    """Spectral band-pass descriptors.

    Column per (landmark, energy) with value
    WKS(x, e) = sum_i phi_i(x)^2 exp(-(e - log l_i)^2 / 2 sigma^2) / Z(e),
    where Z normalizes the band weights to 1 and the sum runs over the
    nontrivial (positive) eigenvalues.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lm = _check_landmarks(landmarks, basis.vectors.shape[0])
    tol = 1e-8 * max(basis.values.max(), 1.0)
    keep = basis.values > tol
    vals = basis.values[keep]
    vecs = basis.vectors[:, keep]
    if vals.size < 2:
        raise ValueError("need at least 2 nontrivial eigenpairs for WKS")
    if np.any(vals <= 0):
        raise ValueError("nonpositive eigenvalue passed to log")
    log_l = np.log(vals)
    cols = []
    for _ in lm:
        for e in energies:
            weights = np.exp(-((e - log_l) ** 2) / (2.0 * sigma**2))
            z = weights.sum()
            if z <= 0:
                raise ValueError(f"empty spectral band at energy {e}")
            cols.append((vecs**2) @ (weights / z))
    values = np.column_stack(cols)
    return FeatureSet(
        values=values,
        kind="wks",
        landmarks=lm,
        params={"energies": list(map(float, energies)), "sigma": float(sigma), "k": basis.k},
    )


def default_wks_sigma(basis: EigenBasis) -> float:
    """Half the mean gap of the log-eigenvalues (nontrivial part)."""
    vals = basis.values[basis.values > 1e-8 * max(basis.values.max(), 1.0)]
    log_l = np.log(vals)
    if len(log_l) < 2:
        raise ValueError("need at least 2 nontrivial eigenvalues")
    return 0.5 * float(np.diff(log_l).mean())


def normalize_features(feats: FeatureSet, mass: np.ndarray, scale: float = 1.0) -> FeatureSet:
    """Rescale each column to M-norm ``scale``.

    Feature magnitudes set how strongly the coefficient-alignment energy
    competes with the spectral terms; normalizing makes that balance
    independent of the feature kind and mesh resolution.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    norms = np.sqrt(np.einsum("ij,ij->j", feats.values, mass[:, None] * feats.values))
    if np.any(norms <= 0):
        raise ValueError("cannot normalize a zero feature column")
    return FeatureSet(
        values=scale * feats.values / norms[None, :],
        kind=feats.kind,
        landmarks=feats.landmarks,
        params=feats.params,
    )


def recompute_features(
    feats: FeatureSet,
    ops: FemOperators | DeformedOperators,
    basis: EigenBasis | None = None,
) -> FeatureSet:
    """Rebuild metric-dependent features under (possibly deformed) operators.

    Indicators are metric-independent and returned unchanged.
    """
    if feats.kind == "indicator":
        return feats
    if feats.kind == "heat":
        return heat_features(ops, feats.landmarks, feats.params["times"], feats.params["dt"])
    if feats.kind == "wks":
        if basis is None:
            raise ValueError("WKS recomputation requires an eigenbasis")
        return wks_features(basis, feats.landmarks, feats.params["energies"], feats.params["sigma"])
    raise ValueError(f"unknown feature kind {feats.kind!r}")
