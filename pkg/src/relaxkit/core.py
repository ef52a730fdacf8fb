"""
Shared representations: boxes, regular gradient grids, Lagrangians, sampled
slices, simplicial meshes and piecewise-linear fields.

A Lagrangian is a vectorised evaluator ``f(x, u, xi)``: ``x`` has shape
``(..., d)``, ``u`` shape ``(...)`` and ``xi`` shape ``(..., N)``; leading
dimensions broadcast.  Values are non-negative reals, ``+inf`` being allowed
only for restricted or tabulated Lagrangians.  Inside a :class:`SampledSlice`
``+inf`` is stored as the reserved value :data:`SENTINEL`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "SENTINEL",
    "BoxDomain",
    "XiGrid",
    "Lagrangian",
    "SampledSlice",
    "Mesh",
    "PLField",
    "make_grid",
    "sample_slice",
    "restrict_slice",
    "field_gradient",
    "is_sentinel",
    "interval_mesh",
    "uniform_interval",
    "graded_interval",
    "rect_mesh",
    "refine",
    "interpolate",
    "probe_autonomy",
]

#: Reserved value encoding ``+inf`` in slices and envelopes.
SENTINEL = float(np.finfo(np.float64).max)


def is_sentinel(values) -> NDArray[np.bool_]:
    return np.asarray(values) >= SENTINEL


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Boxes and grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoxDomain:
    lo: NDArray[np.float64]
    hi: NDArray[np.float64]

    # value semantics; the generated __eq__ would compare arrays elementwise
    def __eq__(self, other):
        if not isinstance(other, BoxDomain):
            return NotImplemented
        return self.lo.tolist() == other.lo.tolist() and self.hi.tolist() == other.hi.tolist()

    def __hash__(self):
        return hash((tuple(self.lo.tolist()), tuple(self.hi.tolist())))

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ValueError(f"box bounds must be matching 1-d vectors, got {lo!r} and {hi!r}")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("box bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"box needs lo < hi on every axis, got lo={lo.tolist()} hi={hi.tolist()}")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    @property
    def dim(self) -> int:
        return self.lo.size

    @classmethod
    def cube(cls, half_width: float, dim: int = 1) -> "BoxDomain":
        return cls(-half_width * np.ones(dim), half_width * np.ones(dim))

    def contains(self, points, tol: float = 0.0) -> NDArray[np.bool_]:
        p = np.atleast_2d(points)
        return np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=-1)

    def inner_radius(self) -> float:
        """Radius of the largest origin-centred ball inside the box (0 if the
        origin is outside)."""
        if np.any(self.lo > 0) or np.any(self.hi < 0):
            return 0.0
        return float(min(np.min(-self.lo), np.min(self.hi)))


@dataclass(frozen=True)
class XiGrid:
    """Closed regular lattice over a box in gradient space.

    Node ``i`` along axis ``k`` is ``np.linspace(lo[k], hi[k], counts[k])[i]``,
    so endpoints are exact.  Flat indices follow C order, which makes flat
    order agree with lexicographic multi-index order.
    """

    box: BoxDomain
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if len(counts) != self.box.dim:
            raise ValueError(f"need one count per axis ({self.box.dim}), got {counts}")
        if any(c < 2 for c in counts):
            raise ValueError(f"every axis needs at least 2 nodes, got counts={counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> NDArray[np.float64]:
        return (self.box.hi - self.box.lo) / (np.array(self.counts) - 1)

    def axes(self) -> list[NDArray[np.float64]]:
        return [np.linspace(lo, hi, c) for lo, hi, c in zip(self.box.lo, self.box.hi, self.counts)]

    def node(self, multi_index: Sequence[int]) -> NDArray[np.float64]:
        if len(multi_index) != self.dim:
            raise IndexError(f"multi-index {tuple(multi_index)} has wrong length")
        return self._nodes[np.ravel_multi_index(tuple(int(i) for i in multi_index), self.counts)].copy()

    def nodes(self) -> NDArray[np.float64]:
        """All nodes as an ``(size, N)`` array in flat order (read-only)."""
        return self._nodes

    @cached_property
    def _nodes(self) -> NDArray[np.float64]:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        out = np.stack([m.ravel() for m in mesh], axis=-1)
        out.setflags(write=False)
        return out

    def multi_index(self, flat) -> tuple:
        return tuple(int(i) for i in np.unravel_index(int(flat), self.counts))

    def flat_index(self, multi_index) -> int:
        return int(np.ravel_multi_index(tuple(multi_index), self.counts))

    def find_node(self, xi, tol: float | None = None) -> int | None:
        """Flat index of the node equal to ``xi`` (within ``tol``), else None."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        h = self.spacing
        tol = 1e-9 * float(np.max(h)) if tol is None else tol
        idx = []
        for k, ax in enumerate(self.axes()):
            i = int(np.rint((xi[k] - self.box.lo[k]) / h[k]))
            if i < 0 or i >= self.counts[k] or abs(ax[i] - xi[k]) > tol:
                return None
            idx.append(i)
        return self.flat_index(idx)

    def neighbours(self) -> NDArray[np.int64]:
        """Face-adjacent node pairs ``(E, 2)`` (4-neighbour in 2D)."""
        ids = np.arange(self.size).reshape(self.counts)
        pairs = []
        for k in range(self.dim):
            a = np.take(ids, np.arange(self.counts[k] - 1), axis=k).ravel()
            b = np.take(ids, np.arange(1, self.counts[k]), axis=k).ravel()
            pairs.append(np.stack([a, b], axis=1))
        return np.concatenate(pairs, axis=0)

    def on_box_boundary(self) -> NDArray[np.bool_]:
        mi = np.stack(np.unravel_index(np.arange(self.size), self.counts), axis=-1)
        return np.any((mi == 0) | (mi == np.array(self.counts) - 1), axis=-1)


def make_grid(box: BoxDomain, counts) -> XiGrid:
    """Regular closed lattice on ``box`` with ``counts`` nodes per axis."""
    if not isinstance(box, BoxDomain):
        lo, hi = box
        box = BoxDomain(lo, hi)
    return XiGrid(box, tuple(np.atleast_1d(counts)))


# ---------------------------------------------------------------------------
# Lagrangians
# ---------------------------------------------------------------------------

LagrangianFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Lagrangian:
    """Evaluator descriptor for ``f(x, u, xi)``.

    ``recession`` optionally gives the asymptotic slopes
    ``(lim f(x,u,-t)/t, lim f(x,u,t)/t)`` as ``t -> inf`` for one-dimensional
    gradients (``inf`` for superlinear growth).  One-dimensional envelopes
    can use it to account for behaviour outside the sampled box.
    """

    name: str
    func: LagrangianFn
    xi_dim: int = 1
    kind: str = "builtin"
    params: dict = field(default_factory=dict)
    autonomous: bool = False
    state_free: bool = False
    smooth: bool = False
    envelope_known: bool = False
    recession: Callable[[np.ndarray, float], tuple[float, float]] | None = None
    parts: tuple = ()

    def __call__(self, x, u, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 0:
            xi = xi[None]
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        u = np.asarray(u, dtype=float)
        return np.asarray(self.func(x, u, xi), dtype=float)

    def __add__(self, other: "Lagrangian") -> "Lagrangian":
        return composite(self, other)

    def at(self, x, u) -> Callable[[np.ndarray], np.ndarray]:
        """Gradient-only view ``xi -> f(x, u, xi)``."""
        return lambda xi: self(x, u, xi)


def composite(*parts: Lagrangian, name: str | None = None) -> Lagrangian:
    """Sum of Lagrangians sharing a gradient dimension."""
    dims = {p.xi_dim for p in parts}
    if len(dims) != 1:
        raise ValueError(f"cannot add Lagrangians with gradient dimensions {sorted(dims)}")
    flat = []
    for p in parts:
        flat.extend(p.parts if p.kind == "composite" else (p,))

    def func(x, u, xi):
        return sum(p.func(x, u, xi) for p in flat)

    return Lagrangian(
        name=name or " + ".join(p.name for p in flat),
        func=func,
        xi_dim=dims.pop(),
        kind="composite",
        autonomous=all(p.autonomous for p in flat),
        state_free=all(p.state_free for p in flat),
        smooth=all(p.smooth for p in flat),
        parts=tuple(flat),
    )


def probe_autonomy(f: Lagrangian, xs, u: float, xis, rtol: float = 1e-12) -> bool:
    """Spot check that ``f`` does not depend on ``x`` at the given probes."""
    xis = np.atleast_2d(xis)
    ref = f(np.asarray(xs[0], float), u, xis)
    return all(
        np.allclose(f(np.asarray(x, float), u, xis), ref, rtol=rtol, atol=0.0, equal_nan=True)
        for x in xs[1:]
    )


# ---------------------------------------------------------------------------
# Slices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampledSlice:
    """Values of ``f(x, u, .)`` at every node of a grid (``SENTINEL`` = +inf)."""

    grid: XiGrid
    values: NDArray[np.float64]
    x: NDArray[np.float64] | None = None
    u: float | None = None
    recession: tuple[float, float] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.size:
            raise ValueError(f"slice has {v.size} values for a grid of {self.grid.size} nodes")
        v = np.where(np.isposinf(v), SENTINEL, v)
        if np.any(np.isnan(v)):
            raise ValueError("slice values contain NaN")
        if np.any(v < 0):
            i = int(np.argmin(v))
            raise ValueError(f"negative value {v[i]} at node {self.grid.multi_index(i)}")
        object.__setattr__(self, "values", _frozen(v))
        if self.x is not None:
            object.__setattr__(self, "x", _frozen(np.atleast_1d(self.x)))

    @property
    def finite(self) -> NDArray[np.bool_]:
        return ~is_sentinel(self.values)

    def with_values(self, values) -> "SampledSlice":
        return SampledSlice(self.grid, values, self.x, self.u, self.recession)


def sample_slice(f: Lagrangian, grid: XiGrid, x=None, u: float = 0.0,
                 with_recession: bool = False) -> SampledSlice:
    """Tabulate ``f(x, u, .)`` on every node of ``grid``."""
    if grid.dim != f.xi_dim:
        raise ValueError(f"{f.name} takes {f.xi_dim}-d gradients, grid is {grid.dim}-d")
    x = np.zeros(1) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    nodes = grid.nodes()
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.broadcast_to(f(x, float(u), nodes), (grid.size,)).astype(float)
    bad = np.isnan(vals) | np.isneginf(vals) | (vals < 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"{f.name} returned {vals[i]} at node {grid.multi_index(i)} (xi={nodes[i].tolist()})"
        )
    rec = None
    if with_recession and f.recession is not None and grid.dim == 1:
        rec = tuple(float(s) for s in f.recession(x, float(u)))
    return SampledSlice(grid, vals, x, float(u), rec)


def restrict_slice(s: SampledSlice, radius: float | None = None, mask=None) -> SampledSlice:
    """Replace values outside the closed ball of ``radius`` (or outside a node
    mask) by the sentinel."""
    if (radius is None) == (mask is None):
        raise ValueError("give exactly one of radius or mask")
    if mask is None:
        norms = np.linalg.norm(s.grid.nodes(), axis=1)
        keep = norms <= radius * (1 + 1e-12)
    else:
        keep = np.asarray(mask, dtype=bool).ravel()
    return SampledSlice(s.grid, np.where(keep, s.values, SENTINEL), s.x, s.u, None)


# ---------------------------------------------------------------------------
# Meshes and fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh:
    vertices: NDArray[np.float64]
    cells: NDArray[np.int64]
    boundary_vertices: NDArray[np.int64]
    domain: BoxDomain | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        c = np.asarray(self.cells, dtype=np.int64)
        if c.ndim != 2 or c.shape[1] != v.shape[1] + 1:
            raise ValueError(f"cells must be simplices with {v.shape[1] + 1} vertices")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "cells", _frozen(c, np.int64))
        object.__setattr__(self, "boundary_vertices",
                           _frozen(np.unique(np.asarray(self.boundary_vertices, np.int64)), np.int64))
        meas = self.cell_measures()
        if np.any(meas <= 0):
            raise ValueError(f"degenerate cell {int(np.argmin(meas))}")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def edge_matrices(self) -> NDArray[np.float64]:
        """``(C, d, d)`` rows ``v_i - v_0``."""
        p = self.vertices[self.cells]
        return p[:, 1:, :] - p[:, :1, :]

    def cell_measures(self) -> NDArray[np.float64]:
        d = self.dim
        det = np.linalg.det(self.edge_matrices()) if d > 1 else self.edge_matrices()[:, 0, 0]
        return np.abs(det) / math.factorial(d)

    def barycenters(self) -> NDArray[np.float64]:
        return self.vertices[self.cells].mean(axis=1)

    def diameter(self) -> float:
        p = self.vertices[self.cells]
        return float(np.max(np.linalg.norm(p[:, :, None, :] - p[:, None, :, :], axis=-1)))

    def locate(self, points, tol: float = 1e-12):
        """Cell index and barycentric weights of each point (cell -1 if none)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            pts = pts.reshape(-1, self.dim)
        inv = np.linalg.inv(self.edge_matrices().transpose(0, 2, 1))
        v0 = self.vertices[self.cells[:, 0]]
        cell = np.full(len(pts), -1)
        lam = np.zeros((len(pts), self.dim + 1))
        for k, p in enumerate(pts):
            mu = np.einsum("cij,cj->ci", inv, p - v0)
            full = np.concatenate([1 - mu.sum(axis=1, keepdims=True), mu], axis=1)
            ok = np.flatnonzero(np.all(full >= -tol, axis=1))
            if ok.size:
                cell[k] = ok[0]
                lam[k] = full[ok[0]]
        return cell, lam


def interval_mesh(points) -> Mesh:
    x = np.asarray(points, dtype=float).ravel()
    if np.any(np.diff(x) <= 0):
        raise ValueError("interval mesh points must be strictly increasing")
    n = x.size
    cells = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return Mesh(x[:, None], cells, np.array([0, n - 1]), BoxDomain([x[0]], [x[-1]]))


def uniform_interval(a: float, b: float, n_cells: int) -> Mesh:
    return interval_mesh(np.linspace(a, b, n_cells + 1))


def graded_interval(a: float, b: float, n_cells: int, grade: float = 1.0) -> Mesh:
    """Mesh of ``[a, b]`` with nodes ``a + (b - a) (i/n)^grade`` (refined near ``a``)."""
    t = np.linspace(0.0, 1.0, n_cells + 1) ** grade
    t[-1] = 1.0
    return interval_mesh(a + (b - a) * t)


def rect_mesh(lo, hi, counts) -> Mesh:
    """Structured triangulation of a rectangle; ``counts`` vertices per axis,
    each square split along its main diagonal."""
    box = BoxDomain(lo, hi)
    if box.dim != 2:
        raise ValueError("rect_mesh builds 2-d meshes only")
    nx, ny = (int(c) for c in counts)
    if nx < 2 or ny < 2:
        raise ValueError(f"rect_mesh needs at least 2 vertices per axis, got {(nx, ny)}")
    xs, ys = np.linspace(box.lo[0], box.hi[0], nx), np.linspace(box.lo[1], box.hi[1], ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    vid = np.arange(nx * ny).reshape(nx, ny)
    cells = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b, c, d = vid[i, j], vid[i + 1, j], vid[i + 1, j + 1], vid[i, j + 1]
            cells.append((a, b, c))
            cells.append((a, c, d))
    bnd = np.flatnonzero((verts[:, 0] == xs[0]) | (verts[:, 0] == xs[-1])
                         | (verts[:, 1] == ys[0]) | (verts[:, 1] == ys[-1]))
    return Mesh(verts, np.array(cells), bnd, box)


def refine(mesh: Mesh, times: int = 1) -> Mesh:
    """Uniform refinement: interval bisection in 1D, red refinement in 2D.
    Refined meshes are nested in the original one."""
    for _ in range(times):
        if mesh.dim == 1:
            x = np.sort(np.concatenate([mesh.vertices[:, 0], mesh.barycenters()[:, 0]]))
            mesh = interval_mesh(x)
            continue
        if mesh.dim != 2:
            raise NotImplementedError("refinement is implemented for 1-d and 2-d meshes")
        verts = [tuple(v) for v in mesh.vertices]
        edge_mid: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in edge_mid:
                edge_mid[key] = len(verts)
                verts.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))
            return edge_mid[key]

        cells = []
        for a, b, c in mesh.cells:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            cells += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        V = np.array(verts)
        bnd = _boundary_of(V, mesh.domain) if mesh.domain is not None else _boundary_from_edges(np.array(cells))
        mesh = Mesh(V, np.array(cells), bnd, mesh.domain)
    return mesh


def _boundary_of(V, box: BoxDomain) -> np.ndarray:
    on = np.zeros(len(V), dtype=bool)
    for k in range(box.dim):
        scale = box.hi[k] - box.lo[k]
        on |= np.isclose(V[:, k], box.lo[k], atol=1e-12 * scale, rtol=0)
        on |= np.isclose(V[:, k], box.hi[k], atol=1e-12 * scale, rtol=0)
    return np.flatnonzero(on)


def _boundary_from_edges(cells) -> np.ndarray:
    from collections import Counter
    cnt = Counter()
    for tri in cells:
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            cnt[(min(a, b), max(a, b))] += 1
    return np.unique([v for e, k in cnt.items() if k == 1 for v in e])


@dataclass(frozen=True)
class PLField:
    """Continuous piecewise-linear scalar field given by nodal values."""

    mesh: Mesh
    nodal: NDArray[np.float64]

    def __post_init__(self):
        v = np.asarray(self.nodal, dtype=float).ravel()
        if v.size != self.mesh.vertices.shape[0]:
            raise ValueError("need one nodal value per mesh vertex")
        object.__setattr__(self, "nodal", _frozen(v))

    def gradients(self) -> NDArray[np.float64]:
        """Cell-wise constant gradients ``(C, d)``."""
        D = self.mesh.edge_matrices()
        du = self.nodal[self.mesh.cells[:, 1:]] - self.nodal[self.mesh.cells[:, :1]]
        if self.mesh.dim == 1:
            return du / D[:, :, 0]
        return np.linalg.solve(D, du[..., None])[..., 0]

    def barycenter_values(self) -> NDArray[np.float64]:
        return self.nodal[self.mesh.cells].mean(axis=1)

    def evaluate(self, points) -> NDArray[np.float64]:
        pts = np.asarray(points, dtype=float)
        if self.mesh.dim == 1:
            return np.interp(pts.ravel(), self.mesh.vertices[:, 0], self.nodal)
        cell, lam = self.mesh.locate(pts)
        if np.any(cell < 0):
            raise ValueError("point outside the mesh")
        return np.einsum("pi,pi->p", lam, self.nodal[self.mesh.cells[cell]])


def field_gradient(u: PLField, cell: int) -> NDArray[np.float64]:
    """Exact gradient of ``u`` on one cell."""
    if not 0 <= cell < u.mesh.n_cells:
        raise IndexError(f"cell {cell} out of range")
    ids = u.mesh.cells[cell]
    P = u.mesh.vertices[ids]
    D = P[1:] - P[:1]
    scale = float(np.max(np.abs(D))) or 1.0
    det = np.linalg.det(D) if D.shape[0] > 1 else D[0, 0]
    if abs(det) <= 1e-14 * scale ** D.shape[0]:
        raise ValueError(f"cell {cell} is degenerate")
    return np.linalg.solve(D, u.nodal[ids[1:]] - u.nodal[ids[0]])


def interpolate(mesh: Mesh, fn: Callable[[np.ndarray], np.ndarray]) -> PLField:
    """Nodal interpolant of ``fn`` (called on the ``(V, d)`` vertex array)."""
    return PLField(mesh, np.asarray(fn(mesh.vertices), dtype=float).ravel())
