"""Triangle mesh container, loaders (OFF/OBJ) and local geometric queries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# Relative area threshold below which a triangle counts as degenerate,
# scaled by the squared bounding box diagonal.
DEFAULT_AREA_EPS = 1e-12


class MeshError(ValueError):
    """Base class for mesh validation and parsing failures."""


class MeshFormatError(MeshError):
    """Raised when a mesh file cannot be parsed."""


class NonManifoldError(MeshError):
    """Raised when an edge has more than two incident triangles."""


class DegenerateTriangleError(MeshError):
    """Raised when a triangle has (near-)zero area."""


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) float array
        Vertex coordinates.
    triangles : (m, 3) int array
        Zero-based vertex index triples.
    normals : (n, 3) float array, optional
        Per-vertex unit normals. Computed lazily when absent.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must be (m, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def edges(self) -> np.ndarray:
        """Unique undirected edges as a (n_edges, 2) sorted-index array."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def vertex_normals(self) -> np.ndarray:
        """Per-vertex normals, area-weighted average of incident face normals."""
        if self.normals is not None:
            return self.normals
        v, t = self.vertices, self.triangles
        fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        out = np.zeros_like(v)
        for c in range(3):
            np.add.at(out, t[:, c], fn)
        norms = np.linalg.norm(out, axis=1)
        norms[norms == 0] = 1.0
        return out / norms[:, None]


@dataclass(frozen=True)
class FaceGeometry:
    """Per-face areas, per-corner cotangents and per-vertex first rings."""

    areas: np.ndarray  # (m,)
    cotangents: np.ndarray  # (m, 3), corner order matches triangle columns
    rings: tuple = field(repr=False)  # rings[i]: triangle indices incident to vertex i

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())


def _edge_counts(triangles: np.ndarray) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in triangles:
        for i, j in ((a, b), (b, c), (c, a)):
            key = (int(i), int(j)) if i < j else (int(j), int(i))
            counts[key] = counts.get(key, 0) + 1
    return counts


def validate_mesh(mesh: TriMesh, area_eps: float = DEFAULT_AREA_EPS) -> None:
    """Check manifoldness and triangle quality; raise on violation.

    Boundary edges (one incident triangle) are allowed here; the registration
    pipeline separately requires closed meshes via :func:`require_closed`.
    """
    for (i, j), c in _edge_counts(mesh.triangles).items():
        if c > 2:
            raise NonManifoldError(f"edge ({i}, {j}) has {c} incident triangles")
    areas = triangle_areas(mesh)
    thresh = area_eps * mesh.bbox_diagonal() ** 2
    bad = np.nonzero(areas <= thresh)[0]
    if bad.size:
        raise DegenerateTriangleError(
            f"{bad.size} zero-area triangle(s), first at index {bad[0]}"
        )


def is_closed(mesh: TriMesh) -> bool:
    """True when every edge has exactly two incident triangles."""
    return all(c == 2 for c in _edge_counts(mesh.triangles).values())


def euler_characteristic(mesh: TriMesh) -> int:
    return mesh.n_vertices - len(mesh.edges()) + mesh.n_triangles


def require_closed(mesh: TriMesh) -> None:
    """Registration precondition: closed genus-zero surface."""
    if not is_closed(mesh):
        raise MeshError("mesh has boundary edges; registration requires a closed surface")
    chi = euler_characteristic(mesh)
    if chi != 2:
        raise MeshError(f"Euler characteristic {chi} != 2; expected a genus-zero surface")


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    v, t = mesh.vertices, mesh.triangles
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    return 0.5 * np.linalg.norm(cross, axis=1)


def total_area(mesh: TriMesh) -> float:
    """Sum of triangle areas."""
    return float(triangle_areas(mesh).sum())


def face_geometry(mesh: TriMesh, area_eps: float = DEFAULT_AREA_EPS) -> FaceGeometry:
    """Areas, corner cotangents and first rings for all faces/vertices.

    Corner ``c`` of triangle ``(i0, i1, i2)`` is the interior angle at vertex
    ``i_c``; its cotangent is ``dot(u, v) / |u x v|`` for the two edge vectors
    leaving that corner.
    """
    v, t = mesh.vertices, mesh.triangles
    cots = np.empty((len(t), 3))
    doubled = None
    for c in range(3):
        p = v[t[:, c]]
        u = v[t[:, (c + 1) % 3]] - p
        w = v[t[:, (c + 2) % 3]] - p
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        if doubled is None:
            doubled = cross  # |u x w| is twice the area, same for every corner
        with np.errstate(divide="ignore", invalid="ignore"):
            cots[:, c] = np.einsum("ij,ij->i", u, w) / cross
    areas = 0.5 * doubled
    thresh = area_eps * mesh.bbox_diagonal() ** 2
    if np.any(areas <= thresh) or not np.all(np.isfinite(cots)):
        raise DegenerateTriangleError("degenerate (collinear) triangle encountered")
    rings = [[] for _ in range(mesh.n_vertices)]
    for ti, tri in enumerate(t):
        for vi in tri:
            rings[vi].append(ti)
    rings = tuple(np.asarray(r, dtype=np.int64) for r in rings)
    return FaceGeometry(areas=areas, cotangents=cots, rings=rings)


def first_ring(mesh: TriMesh, i: int) -> np.ndarray:
    """Indices of the triangles incident to vertex ``i``."""
    if not 0 <= i < mesh.n_vertices:
        raise IndexError(f"vertex index {i} out of range [0, {mesh.n_vertices})")
    mask = np.any(mesh.triangles == i, axis=1)
    return np.nonzero(mask)[0]


def vertex_neighbors(mesh: TriMesh, i: int) -> np.ndarray:
    """Vertex indices sharing an edge with vertex ``i``."""
    tris = mesh.triangles[first_ring(mesh, i)]
    nbrs = np.unique(tris)
    return nbrs[nbrs != i]


# ---------------------------------------------------------------------------
# File I/O


def load_mesh(path: str | Path, fmt: str = "auto", area_eps: float = DEFAULT_AREA_EPS) -> TriMesh:
    """Load and validate an ASCII OFF or OBJ mesh.

    OBJ face indices are converted from 1-based to 0-based.
    """
    path = Path(path)
    if fmt == "auto":
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    text = path.read_text()
    if fmt == "off":
        mesh = _parse_off(text)
    elif fmt == "obj":
        mesh = _parse_obj(text)
    else:
        raise MeshFormatError(f"unsupported mesh format {fmt!r}")
    validate_mesh(mesh, area_eps=area_eps)
    return mesh


def _content_lines(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text: str) -> TriMesh:
    lines = list(_content_lines(text))
    if not lines:
        raise MeshFormatError("empty OFF file")
    first = lines.pop(0)
    if first.upper().startswith("OFF"):
        rest = first[3:].strip()
        if rest:  # counts packed onto the header line
            lines.insert(0, rest)
    else:
        raise MeshFormatError("missing OFF header")
    try:
        nv, nf = (int(x) for x in lines.pop(0).split()[:2])
        verts = np.array([[float(x) for x in lines[i].split()[:3]] for i in range(nv)])
        faces = []
        for i in range(nv, nv + nf):
            parts = lines[i].split()
            if int(parts[0]) != 3:
                raise MeshFormatError("only triangular faces are supported")
            faces.append([int(x) for x in parts[1:4]])
    except (ValueError, IndexError) as exc:
        raise MeshFormatError(f"malformed OFF file: {exc}") from exc
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def _parse_obj(text: str) -> TriMesh:
    verts, faces = [], []
    for line in _content_lines(text):
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                if len(parts) != 4:
                    raise MeshFormatError("only triangular faces are supported")
                # tokens may carry /vt/vn suffixes
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
            else:
                logger.warning("ignoring OBJ record %r", tag)
        except (ValueError, IndexError) as exc:
            raise MeshFormatError(f"malformed OBJ line {line!r}") from exc
    if not verts or not faces:
        raise MeshFormatError("OBJ file has no vertices or faces")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))


def save_off(mesh: TriMesh, path: str | Path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"3 {i} {j} {k}\n")
