"""Recover the deformed basis, extract dense point-to-point maps and evaluate
them (normalized geodesic error, conformal-factor comparison)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra

from .mesh import TriMesh, face_geometry, total_area


@dataclass(frozen=True)
class Correspondence:
    """Per-source-vertex target index map."""

    indices: np.ndarray  # (n1,), target vertex per source vertex
    method: str = "knn"
    k: int = 0

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def save(self, path: str | Path) -> None:
        np.savetxt(path, self.indices, fmt="%d")

    @classmethod
    def load(cls, path: str | Path, method: str = "file") -> "Correspondence":
        return cls(indices=np.loadtxt(path, dtype=np.int64, ndmin=1), method=method)


@dataclass(frozen=True)
class ErrorReport:
    """Normalized geodesic errors and their cumulative curve on [0, 0.25]."""

    errors: np.ndarray
    grid: np.ndarray
    curve: np.ndarray
    exact_fraction: float
    frac_le_005: float
    mean: float
    median: float

    def save_curve_csv(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            fh.write("x,fraction\n")
            for x, f in zip(self.grid, self.curve):
                fh.write(f"{x},{f}\n")

    def summary(self) -> dict:
        return {
            "exact_fraction": self.exact_fraction,
            "frac_le_005": self.frac_le_005,
            "mean": self.mean,
            "median": self.median,
        }

    def save_summary_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def recover_basis(w: np.ndarray, psibar: np.ndarray, lump_sqrt: np.ndarray) -> np.ndarray:
    """Invert the frame substitution: Psi = diag(w)^-1 L^-1 Psi_bar.

    The result is orthonormal against the deformed mass matrix
    diag(w) M diag(w) whenever Psi_bar has orthonormal columns.
    """
    w = np.asarray(w, dtype=np.float64)
    l = np.asarray(lump_sqrt, dtype=np.float64)
    if np.any(w <= 0) or np.any(l <= 0):
        raise ValueError("w and L diagonal must be strictly positive")
    return psibar / (w * l)[:, None]


def point_map(phi: np.ndarray, psi: np.ndarray, weighting: np.ndarray | None = None) -> Correspondence:
    """Nearest-row match: each source row of phi maps to the closest target
    row of psi in Euclidean distance; ties break to the lowest index."""
    if phi.shape[1] != psi.shape[1]:
        raise ValueError("basis column counts differ")
    k = phi.shape[1]
    if k == 0:
        raise ValueError("empty basis")
    if weighting is not None:
        phi = phi * weighting[None, :]
        psi = psi * weighting[None, :]
    # exact blockwise search; argmin returns the first (lowest-index) minimum
    psi_sq = np.einsum("ij,ij->i", psi, psi)
    out = np.empty(len(phi), dtype=np.int64)
    block = max(1, 2_000_000 // max(len(psi), 1))
    for start in range(0, len(phi), block):
        chunk = phi[start : start + block]
        d2 = psi_sq[None, :] - 2.0 * (chunk @ psi.T)
        out[start : start + len(chunk)] = np.argmin(d2, axis=1)
    return Correspondence(indices=out, method="knn", k=k)


def functional_map(phi: np.ndarray, psi: np.ndarray, mass_src: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Transport the function h from the source to the target:
    Psi Phi^T M1 h."""
    if phi.shape[1] != psi.shape[1]:
        raise ValueError("basis column counts differ")
    if h.shape[0] != phi.shape[0]:
        raise ValueError("h length does not match the source basis")
    return psi @ (phi.T @ (mass_src * h))


def edge_graph(mesh: TriMesh) -> sparse.csr_matrix:
    """Sparse symmetric graph of Euclidean edge lengths."""
    e = mesh.edges()
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    g = sparse.coo_matrix(
        (np.concatenate([lengths, lengths]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )
    return g.tocsr()


def geodesic_errors(
    target: TriMesh,
    mapped: Correspondence,
    ground_truth: Correspondence,
    grid_max: float = 0.25,
    grid_points: int = 101,
) -> ErrorReport:
    """Graph-geodesic distance between mapped and ground-truth target vertices,
    normalized by sqrt(target area)."""
    if len(mapped) != len(ground_truth):
        raise ValueError("maps are defined on different source vertex sets")
    graph = edge_graph(target)
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp != 1:
        raise ValueError("target mesh is disconnected")
    sources = np.unique(ground_truth.indices)
    dist = dijkstra(graph, directed=False, indices=sources)
    row = {int(v): i for i, v in enumerate(sources)}
    raw = np.array(
        [dist[row[int(g)], m] for g, m in zip(ground_truth.indices, mapped.indices)]
    )
    errors = raw / np.sqrt(total_area(target))
    grid = np.linspace(0.0, grid_max, grid_points)
    curve = np.array([(errors <= x).mean() for x in grid])
    return ErrorReport(
        errors=errors,
        grid=grid,
        curve=curve,
        exact_fraction=float((errors == 0).mean()),
        frac_le_005=float((errors <= 0.05).mean()),
        mean=float(errors.mean()),
        median=float(np.median(errors)),
    )


def first_ring_areas(mesh: TriMesh) -> np.ndarray:
    """Per-vertex sum of incident triangle areas."""
    geo = face_geometry(mesh)
    out = np.zeros(mesh.n_vertices)
    for c in range(3):
        np.add.at(out, mesh.triangles[:, c], geo.areas)
    return out


def conformal_ground_truth(source: TriMesh, target: TriMesh, gt: Correspondence) -> np.ndarray:
    """Log conformal factor from first-ring area ratios under a known map:
    u(p) = 1/2 log(ring area at p / ring area at gt(p))."""
    if len(gt) != source.n_vertices:
        raise ValueError("ground truth must be defined for every source vertex")
    ring_src = first_ring_areas(source)
    ring_tgt = first_ring_areas(target)
    if np.any(ring_src <= 0) or np.any(ring_tgt <= 0):
        raise ValueError("vertex with empty first ring")
    return 0.5 * np.log(ring_src / ring_tgt[gt.indices])
