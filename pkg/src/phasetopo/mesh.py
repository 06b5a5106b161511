"""Structured Q1/H1 grids over boxes, boundary regions and the DOF map."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

DIRICHLET = "dirichlet_displacement"
NEUMANN = "neumann_traction"
PASSIVE = "passive_solid"
REGION_KINDS = (DIRICHLET, NEUMANN, PASSIVE)

# parent coordinates of the element nodes (VTK ordering)
Q1_NODES = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
H1_NODES = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=float,
)
Q1_FACES = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
H1_FACES = np.array(
    [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]]
)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    extents: tuple = ()
    divisions: tuple = ()
    # all elements are translates of element 0 (structured box grids)
    uniform: bool = False

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def h_e(self) -> float:
        """Largest element edge length."""
        edges = Q1_FACES if self.dim == 2 else _H1_EDGES
        X = self.nodes[self.elements]
        d = X[:, edges[:, 0]] - X[:, edges[:, 1]]
        return float(np.sqrt((d**2).sum(-1)).max())

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents)) if self.extents else float("nan")

    def boundary_faces(self):
        """(element, local face) pairs whose face is shared by no other element."""
        local = Q1_FACES if self.dim == 2 else H1_FACES
        conn = self.elements[:, local]  # (nel, nfaces, nfn)
        key = np.sort(conn.reshape(-1, local.shape[1]), axis=1)
        _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        once = counts[inv.ravel()] == 1
        idx = np.flatnonzero(once)
        return idx // len(local), idx % len(local)

    def with_nodes(self, nodes) -> "Mesh":
        """Same topology with moved nodes (drops the uniform flag)."""
        nodes = np.asarray(nodes, dtype=float)
        if nodes.shape != self.nodes.shape:
            raise MeshError("node array shape changed")
        return Mesh(self.dim, nodes, self.elements, self.extents, self.divisions, False)


_H1_EDGES = np.array(
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4],
     [0, 4], [1, 5], [2, 6], [3, 7]]
)


@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box; ``None`` bounds are unbounded."""

    lo: tuple
    hi: tuple

    def contains(self, pts, tol):
        pts = np.atleast_2d(pts)
        lo = np.array([-np.inf if v is None else v for v in self.lo], dtype=float)
        hi = np.array([np.inf if v is None else v for v in self.hi], dtype=float)
        return np.all((pts >= lo - tol) & (pts <= hi + tol), axis=1)

    def overlaps(self, cell_lo, cell_hi, tol):
        lo = np.array([-np.inf if v is None else v for v in self.lo], dtype=float)
        hi = np.array([np.inf if v is None else v for v in self.hi], dtype=float)
        return np.all((cell_hi > lo + tol) & (cell_lo < hi - tol), axis=1)

    def __str__(self):
        return f"Box(lo={self.lo}, hi={self.hi})"


def plane(dim: int, axis: int, value: float) -> Box:
    lo = [None] * dim
    hi = [None] * dim
    lo[axis] = hi[axis] = value
    return Box(tuple(lo), tuple(hi))


@dataclass(frozen=True)
class BoundaryRegion:
    name: str
    kind: str
    nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=int))
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    elements: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    # fixed displacement, traction vector or fixed phi value
    data: np.ndarray | float = 0.0
    # displacement components constrained by a Dirichlet region
    components: tuple = ()


def build_box_grid(extents, divisions, dim=None) -> Mesh:
    """Regular grid of Q1 (2D) or H1 (3D) elements on [0, L_1] x ... x [0, L_n].

    Nodes are numbered with the x index running fastest.
    """
    extents = tuple(float(v) for v in extents)
    divisions = tuple(int(v) for v in divisions)
    dim = len(extents) if dim is None else dim
    if dim not in (2, 3) or len(extents) != dim or len(divisions) != dim:
        raise MeshError(f"need {dim} extents and divisions for a {dim}D grid")
    if any(not v > 0 for v in extents):
        raise MeshError(f"extents must be positive, got {extents}")
    if any(v < 1 for v in divisions):
        raise MeshError(f"divisions must be >= 1, got {divisions}")

    axes = [np.linspace(0.0, L, n + 1) for L, n in zip(extents, divisions)]
    grids = np.meshgrid(*axes, indexing="ij")
    # x fastest: transpose the ij grid to (z, y, x) before flattening
    nodes = np.stack([g.transpose(tuple(reversed(range(dim)))).ravel() for g in grids], axis=1)

    stride = np.cumprod((1,) + tuple(n + 1 for n in divisions[:-1]))
    corner = Q1_NODES if dim == 2 else H1_NODES
    offsets = ((corner + 1) / 2).astype(int) @ stride
    idx = np.array(list(product(*[range(n) for n in reversed(divisions)])))[:, ::-1]
    base = idx @ stride
    elements = base[:, None] + offsets[None, :]
    return Mesh(dim, nodes, elements.astype(np.int64), extents, divisions, True)


def _tolerance(mesh: Mesh) -> float:
    span = np.ptp(mesh.nodes, axis=0).max()
    return 1e-9 * span


def select_region(mesh: Mesh, where: Box, kind: str, data=None, name=None, components=None) -> BoundaryRegion:
    """Tag the nodes, boundary faces or elements lying in ``where``."""
    if kind not in REGION_KINDS:
        raise MeshError(f"unknown region kind {kind!r}")
    tol = _tolerance(mesh)
    name = name or f"{kind}@{where}"

    if kind == DIRICHLET:
        nodes = np.flatnonzero(where.contains(mesh.nodes, tol))
        if len(nodes) == 0:
            raise MeshError(f"no nodes selected by {where}")
        comps = tuple(range(mesh.dim)) if components is None else tuple(components)
        vals = np.broadcast_to(np.asarray(0.0 if data is None else data, dtype=float), (mesh.dim,)).copy()
        return BoundaryRegion(name, kind, nodes=nodes, data=vals, components=comps)

    if kind == NEUMANN:
        if data is None:
            raise MeshError(f"traction region {name} needs a traction vector")
        local = Q1_FACES if mesh.dim == 2 else H1_FACES
        el, lf = mesh.boundary_faces()
        faces = mesh.elements[el[:, None], local[lf]]
        inside = where.contains(mesh.nodes[faces.ravel()], tol).reshape(faces.shape).all(axis=1)
        if not inside.any():
            raise MeshError(f"no boundary faces selected by {where}")
        faces = faces[inside]
        normals = _outward_normals(mesh, faces, el[inside])
        t = np.broadcast_to(np.asarray(data, dtype=float), (mesh.dim,)).copy()
        return BoundaryRegion(name, kind, nodes=np.unique(faces), faces=faces, normals=normals, data=t)

    X = mesh.nodes[mesh.elements]
    elems = np.flatnonzero(where.overlaps(X.min(axis=1), X.max(axis=1), tol))
    if len(elems) == 0:
        raise MeshError(f"no elements selected by {where}")
    nodes = np.unique(mesh.elements[elems])
    return BoundaryRegion(name, kind, nodes=nodes, elements=elems, data=float(1.0 if data is None else data))


def _outward_normals(mesh, faces, owners):
    X = mesh.nodes[faces]
    if mesh.dim == 2:
        d = X[:, 1] - X[:, 0]
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
    else:
        n = np.cross(X[:, 2] - X[:, 0], X[:, 3] - X[:, 1])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    away = X.mean(axis=1) - mesh.nodes[mesh.elements[owners]].mean(axis=1)
    flip = np.sign(np.einsum("ij,ij->i", n, away))
    return n * np.where(flip == 0, 1.0, flip)[:, None]


class DofMap:
    """Interleaved per-node unknowns (u_1..u_dim, phi) plus an optional
    scalar multiplier appended after the free entries.

    ``index[g]`` is the reduced index of global entry ``g`` or -1 when the
    entry is constrained.
    """

    CONSTRAINED = -1

    def __init__(self, mesh: Mesh, regions=(), with_lambda=False):
        self.dim = mesh.dim
        self.n_nodes = mesh.n_nodes
        self.per_node = mesh.dim + 1
        self.n_total = self.n_nodes * self.per_node
        fixed = np.zeros(self.n_total, dtype=bool)
        self.prescribed = np.zeros(self.n_total)
        for r in regions:
            if r.kind == DIRICHLET:
                for c in r.components:
                    g = r.nodes * self.per_node + c
                    fixed[g] = True
                    self.prescribed[g] = r.data[c]
            elif r.kind == PASSIVE:
                g = r.nodes * self.per_node + self.dim
                fixed[g] = True
                self.prescribed[g] = r.data
        self.fixed = fixed
        self.free = np.flatnonzero(~fixed)
        self.index = np.full(self.n_total, self.CONSTRAINED, dtype=np.int64)
        self.index[self.free] = np.arange(len(self.free))
        self.n_free = len(self.free)
        self.lam = self.n_free if with_lambda else None

    @property
    def size(self) -> int:
        return self.n_free + (1 if self.lam is not None else 0)

    @property
    def n_constrained(self) -> int:
        return int(self.fixed.sum())

    def u_dofs(self, node=None):
        nodes = np.arange(self.n_nodes) if node is None else np.atleast_1d(node)
        return nodes[:, None] * self.per_node + np.arange(self.dim)

    def phi_dofs(self):
        return np.arange(self.n_nodes) * self.per_node + self.dim
