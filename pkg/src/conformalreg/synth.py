"""Synthetic test-pair generation: primitive meshes, scaling, normal noise
and landmark perturbation."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh, vertex_neighbors


def tetrahedron() -> TriMesh:
    """Regular tetrahedron inscribed in the unit sphere."""
    v = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    ) / np.sqrt(3.0)
    t = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], dtype=np.int64)
    return TriMesh(v, t)


def icosahedron(radius: float = 1.0) -> TriMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    v *= radius / np.linalg.norm(v[0])
    t = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return TriMesh(v, t)


def icosphere(subdivisions: int, radius: float = 1.0) -> TriMesh:
    """Icosahedron subdivided ``subdivisions`` times, projected onto the
    sphere of the given radius. Three subdivisions give 642 vertices."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be nonnegative")
    mesh = icosahedron(radius)
    verts = [tuple(p) for p in mesh.vertices]
    tris = [tuple(t) for t in mesh.triangles]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                p = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0
                p *= radius / np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(tuple(p))
            return cache[key]

        new_tris = []
        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        tris = new_tris
    return TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int64))


def scaled(mesh: TriMesh, c: float) -> TriMesh:
    if c <= 0:
        raise ValueError("scale factor must be positive")
    return TriMesh(mesh.vertices * c, mesh.triangles)


def add_normal_noise(mesh: TriMesh, sigma: float, rng: np.random.Generator) -> TriMesh:
    """Displace each vertex along its normal by Gaussian noise with standard
    deviation ``sigma`` times the bounding box diagonal."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return mesh
    normals = mesh.vertex_normals()
    amp = sigma * mesh.bbox_diagonal()
    offsets = rng.normal(0.0, amp, size=mesh.n_vertices)
    return TriMesh(mesh.vertices + offsets[:, None] * normals, mesh.triangles)


def random_landmarks(mesh: TriMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly chosen distinct landmark vertices."""
    if not 0 < count <= mesh.n_vertices:
        raise ValueError("landmark count out of range")
    return np.sort(rng.choice(mesh.n_vertices, size=count, replace=False))


def farthest_point_landmarks(mesh: TriMesh, count: int, seed_vertex: int = 0) -> np.ndarray:
    """Well-spread landmarks via farthest-point sampling in Euclidean space."""
    if not 0 < count <= mesh.n_vertices:
        raise ValueError("landmark count out of range")
    chosen = [seed_vertex]
    d = np.linalg.norm(mesh.vertices - mesh.vertices[seed_vertex], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(mesh.vertices - mesh.vertices[nxt], axis=1))
    return np.array(sorted(chosen), dtype=np.int64)


def perturb_landmarks(
    mesh: TriMesh,
    landmarks: np.ndarray,
    fraction: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Replace a fixed fraction of landmarks by a uniformly chosen first-ring
    neighbor each. Exactly round(fraction * len) landmarks are moved."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    landmarks = np.asarray(landmarks, dtype=np.int64)
    n_perturb = int(round(fraction * len(landmarks)))
    out = landmarks.copy()
    which = rng.choice(len(landmarks), size=n_perturb, replace=False)
    for idx in which:
        nbrs = vertex_neighbors(mesh, int(landmarks[idx]))
        out[idx] = rng.choice(nbrs)
    return out
