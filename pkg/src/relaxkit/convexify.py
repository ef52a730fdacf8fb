"""Convex envelopes of sampled slices.

One-dimensional slices use a monotone lower chain; two-dimensional slices
use the lower facets of the qhull convex hull of the epigraph point cloud.
Both produce, per node, the envelope value and (where one exists) a convex
combination of finite nodes realising it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .core import (
    SENTINEL,
    BoxDomain,
    Lagrangian,
    SampledSlice,
    XiGrid,
    is_sentinel,
    make_grid,
    restrict_slice,
    sample_slice,
)

__all__ = [
    "TOL_1D",
    "TOL_ND",
    "ConvexDecomposition",
    "AffineMap",
    "EnvelopeResult",
    "XiPolicy",
    "envelope",
    "envelope_1d",
    "envelope_nd",
    "restricted_bipolar",
    "decompose",
    "best_affine_minorant",
    "bipolar_limit",
]

TOL_1D = 1e-9
TOL_ND = 1e-7

# barycentric slack when deciding whether a node lies in a facet
_BARY_EPS = 1e-10


def default_tol(dim: int) -> float:
    return TOL_1D if dim == 1 else TOL_ND


@dataclass(frozen=True)
class ConvexDecomposition:
    weights: NDArray[np.float64]
    points: NDArray[np.float64]
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if p.shape[0] != w.size:
            raise ValueError("one point per weight")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "points", p)

    @property
    def size(self) -> int:
        return self.weights.size

    def barycenter(self) -> NDArray[np.float64]:
        return self.weights @ self.points

    def value(self, values_at_points) -> float:
        return float(np.dot(self.weights, values_at_points))

    def value_on(self, grid_values) -> float:
        """Weighted value read off a full grid array through ``indices``."""
        if len(self.indices) != self.size:
            raise ValueError("this decomposition carries no grid indices")
        return float(np.dot(self.weights, np.asarray(grid_values)[list(self.indices)]))

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "points": self.points.tolist()}


@dataclass(frozen=True)
class AffineMap:
    slope: NDArray[np.float64]
    offset: float

    def __call__(self, xi) -> NDArray[np.float64]:
        """Values at one point or at rows of points, always as an array."""
        xi = np.asarray(xi, dtype=float)
        return np.atleast_2d(xi).reshape(-1, self.slope.size) @ self.slope + self.offset


@dataclass(frozen=True, eq=False)
class EnvelopeResult:
    """Envelope values on a grid plus the hull pieces they came from.

    ``facets`` holds, for each lower-hull piece, the flat indices of its
    vertices (rows sorted, rows in lexicographic order).  ``rays`` holds the
    recession slopes used by the 1-d chain, if any.
    """

    grid: XiGrid
    env_values: NDArray[np.float64]
    certificates: tuple
    method: str
    source: NDArray[np.float64]
    tol: float
    facets: NDArray[np.int64]
    degenerate: bool = False
    rays: tuple[float, float] | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def finite(self) -> NDArray[np.bool_]:
        return ~is_sentinel(self.env_values)

    def value_at_node(self, xi) -> float:
        i = self.grid.find_node(xi)
        if i is None:
            raise KeyError(f"{np.asarray(xi).tolist()} is not a grid node")
        return float(self.env_values[i])

    def locate(self, xi):
        """Facet vertex indices and barycentric weights of the hull piece
        containing ``xi``; None outside the finite hull."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        nodes = self.grid.nodes()
        for fac in self.facets:
            lam = _barycentric(nodes[fac], xi)
            if lam is not None:
                return fac, lam
        return None

    def evaluate(self, points) -> NDArray[np.float64]:
        """Hull height at arbitrary points (``SENTINEL`` outside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.grid.dim == 1:
            pts = pts.reshape(-1, 1)
            return _chain_eval(self, pts[:, 0])
        out = np.empty(len(pts))
        for k, p in enumerate(pts):
            hit = self.locate(p)
            out[k] = SENTINEL if hit is None else float(np.dot(hit[1], self.source[hit[0]]))
        return out

    def as_slice(self) -> SampledSlice:
        return SampledSlice(self.grid, self.env_values, recession=self.rays)


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

def _barycentric(P: np.ndarray, p: np.ndarray, eps: float = _BARY_EPS):
    """Weights ``lam >= 0`` with ``lam @ P = p`` and ``sum(lam) = 1``, or None.

    ``P`` may have fewer than ``N + 1`` rows (lower-dimensional pieces).
    """
    A = np.vstack([P.T, np.ones(P.shape[0])])
    b = np.append(p, 1.0)
    lam, *_ = np.linalg.lstsq(A, b, rcond=None)
    scale = max(1.0, float(np.max(np.abs(P))))
    if np.any(lam < -eps) or np.linalg.norm(A @ lam - b) > eps * scale:
        return None
    return np.clip(lam, 0.0, None) / np.clip(lam, 0.0, None).sum()


def _certificate(grid: XiGrid, idx, lam) -> ConvexDecomposition:
    idx = np.asarray(idx)
    keep = lam > 1e-14
    lam = lam[keep] / lam[keep].sum()
    idx = idx[keep]
    nodes = grid.nodes()
    return ConvexDecomposition(lam, nodes[idx], tuple(int(i) for i in idx))


def _trivial(grid: XiGrid, i: int) -> ConvexDecomposition:
    return ConvexDecomposition(np.ones(1), grid.nodes()[i:i + 1], (int(i),))


def _finalise(grid, f, env, certs, tol):
    """Clamp to ``f`` and mark nodes where ``f`` itself is (within tol) the
    envelope with the trivial certificate."""
    fin_f = ~is_sentinel(f)
    fin_e = ~is_sentinel(env)
    env = np.where(fin_f & fin_e, np.minimum(env, f), env)
    env = np.where(fin_f & ~fin_e, f, env)
    for i in np.flatnonzero(fin_f):
        if f[i] - env[i] <= tol * max(1.0, abs(env[i])):
            certs[i] = _trivial(grid, i)
    return env, certs


# ---------------------------------------------------------------------------
# 1-d chain
# ---------------------------------------------------------------------------

def _lower_chain(x: np.ndarray, y: np.ndarray) -> list[int]:
    """Andrew's monotone chain, lower part; ``x`` strictly increasing.
    Collinear interior points are dropped."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def _apply_rays(x, y, chain, rays):
    s_left, s_right = rays
    if math.isfinite(s_right):
        while len(chain) >= 2:
            a, b = chain[-2], chain[-1]
            if (y[b] - y[a]) / (x[b] - x[a]) > s_right:
                chain.pop()
            else:
                break
    if math.isfinite(s_left):
        while len(chain) >= 2:
            a, b = chain[0], chain[1]
            if (y[b] - y[a]) / (x[b] - x[a]) < -s_left:
                chain.pop(0)
            else:
                break
    return chain


def _chain_vertices(facets) -> np.ndarray:
    if facets.shape[1] == 2 and len(facets):
        return np.concatenate([facets[:, 0], facets[-1:, 1]])
    return facets.ravel()


def _chain_eval(env: EnvelopeResult, t: np.ndarray) -> np.ndarray:
    x = env.grid.axes()[0]
    ids = _chain_vertices(env.facets)
    vx, vy = x[ids], env.source[ids]
    out = np.interp(t, vx, vy)
    left, right = t < vx[0], t > vx[-1]
    s_left, s_right = env.rays if env.rays is not None else (math.inf, math.inf)
    out = np.where(left, vy[0] + s_left * (vx[0] - t) if math.isfinite(s_left) else SENTINEL, out)
    out = np.where(right, vy[-1] + s_right * (t - vx[-1]) if math.isfinite(s_right) else SENTINEL, out)
    return out


def envelope_1d(s: SampledSlice, tol: float = TOL_1D, use_recession: bool = True) -> EnvelopeResult:
    """Lower convex chain of the finite points of a 1-d slice.

    When the slice carries recession slopes (and ``use_recession``), the
    chain is closed by rays of those slopes, which is the envelope of the
    function on the whole line provided the slice box is past the region
    where the function approaches its asymptotic slope.
    """
    if s.grid.dim != 1:
        raise ValueError(f"envelope_1d needs a 1-d grid, got dimension {s.grid.dim}")
    f = s.values
    fin = np.flatnonzero(~is_sentinel(f))
    if fin.size == 0:
        raise ValueError("every node of the slice is the sentinel; the envelope is +inf")
    rays = s.recession if (use_recession and s.recession is not None) else None
    if fin.size < 2 and rays is None:
        raise ValueError("need at least 2 finite nodes for a 1-d envelope")
    x = s.grid.axes()[0]
    xf, yf = x[fin], f[fin]
    chain = _lower_chain(xf, yf)
    if rays is not None:
        chain = _apply_rays(xf, yf, chain, rays)
    verts = fin[chain]

    env = np.full(s.grid.size, SENTINEL)
    certs: list = [None] * s.grid.size
    facets = np.stack([verts[:-1], verts[1:]], axis=1) if verts.size > 1 else np.empty((0, 2), np.int64)
    for a, b in facets:
        for i in range(a, b + 1):
            w = (x[b] - x[i]) / (x[b] - x[a])
            env[i] = w * f[a] + (1 - w) * f[b]
            lam = np.array([w, 1 - w])
            certs[i] = _certificate(s.grid, [a, b], lam)
    for v in verts:
        env[v] = f[v]
        certs[v] = _trivial(s.grid, v)
    if rays is not None:
        lo, hi = verts[0], verts[-1]
        if math.isfinite(rays[0]):
            env[:lo] = f[lo] + rays[0] * (x[lo] - x[:lo])
        if math.isfinite(rays[1]):
            env[hi + 1:] = f[hi] + rays[1] * (x[hi + 1:] - x[hi])
    env, certs = _finalise(s.grid, f, env, certs, tol)
    degenerate = len(verts) == 2 and bool(np.all(f[fin] - env[fin] <= tol * np.maximum(1.0, np.abs(env[fin]))))
    if len(facets) == 0:
        facets = verts[None, :].astype(np.int64)
    return EnvelopeResult(s.grid, _ro(env), tuple(certs), "chain_1d", s.values, tol,
                          np.asarray(facets, np.int64), degenerate, rays)


def _ro(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# N-d lower hull
# ---------------------------------------------------------------------------

def envelope_nd(s: SampledSlice, tol: float | None = None) -> EnvelopeResult:
    """Lower convex hull of ``{(node, value)}`` over the finite nodes."""
    grid = s.grid
    N = grid.dim
    tol = default_tol(N) if tol is None else tol
    f = s.values
    fin = np.flatnonzero(~is_sentinel(f))
    nodes = grid.nodes()
    if fin.size == 0:
        raise ValueError("every node of the slice is the sentinel; the envelope is +inf")
    X, y = nodes[fin], f[fin]
    Xc = X - X[0]
    span = float(np.max(np.ptp(X, axis=0))) if fin.size > 1 else 0.0
    xi_rank = np.linalg.matrix_rank(Xc, tol=1e-12 * max(span, 1.0)) if fin.size > 1 else 0
    if xi_rank == 0:
        raise ValueError(f"finite nodes have affine hull the single point {X[0].tolist()}")
    if xi_rank < N:
        return _envelope_on_line(s, fin, tol)

    yr = float(np.ptp(y))
    zscale = span / yr if yr > 0 else 1.0
    pts = np.column_stack([X, (y - y.min()) * zscale])
    degenerate = np.linalg.matrix_rank(pts - pts[0], tol=1e-12 * max(span, 1.0)) <= N
    if degenerate:
        facets = _affine_pieces(X, fin, N)
    else:
        try:
            hull = ConvexHull(pts, qhull_options="Qt Qbb Qc")
        except QhullError as exc:  # pragma: no cover - rank check should catch this
            raise ValueError(f"hull construction failed: {exc}") from exc
        lower = hull.equations[:, N] < -1e-12
        facets = fin[hull.simplices[lower]]
        # drop facets whose projection is flat
        keep = [np.linalg.matrix_rank(nodes[fc[1:]] - nodes[fc[0]], tol=1e-12 * max(span, 1.0)) == N
                for fc in facets]
        facets = facets[np.array(keep, dtype=bool)]
    facets = np.sort(facets, axis=1)
    facets = facets[np.lexsort(facets.T[::-1])]

    env = np.full(grid.size, SENTINEL)
    certs: list = [None] * grid.size
    _fill_from_facets(grid, f, facets, env, certs)
    env, certs = _finalise(grid, f, env, certs, tol)
    return EnvelopeResult(grid, _ro(env), tuple(certs), "lower_hull_nd", s.values, tol,
                          facets.astype(np.int64), bool(degenerate), None)


def _affine_pieces(X, fin, N):
    if len(X) == N + 1:
        return fin[None, :]
    if N == 1:
        order = np.argsort(X[:, 0])
        ids = fin[order]
        return np.stack([ids[:-1], ids[1:]], axis=1)
    tri = Delaunay(X, qhull_options="Qt Qbb Qc Qz")
    return fin[tri.simplices]


def _fill_from_facets(grid: XiGrid, f, facets, env, certs):
    nodes = grid.nodes()
    lo, h = grid.box.lo, grid.spacing
    counts = np.array(grid.counts)
    assigned = np.zeros(grid.size, dtype=bool)
    for fac in facets:
        P = nodes[fac]
        i_lo = np.maximum(np.ceil((P.min(axis=0) - lo) / h - 1e-9).astype(int), 0)
        i_hi = np.minimum(np.floor((P.max(axis=0) - lo) / h + 1e-9).astype(int), counts - 1)
        if np.any(i_hi < i_lo):
            continue
        rng = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(i_lo, i_hi)], indexing="ij")
        cand = np.ravel_multi_index(tuple(r.ravel() for r in rng), grid.counts)
        cand = cand[~assigned[cand]]
        if cand.size == 0:
            continue
        A = np.vstack([P.T, np.ones(len(fac))])
        B = np.vstack([nodes[cand].T, np.ones(cand.size)])
        lam = np.linalg.lstsq(A, B, rcond=None)[0].T
        resid = np.linalg.norm(lam @ A.T - B.T, axis=1)
        inside = np.all(lam >= -_BARY_EPS, axis=1) & (resid <= _BARY_EPS * max(1.0, float(np.max(np.abs(P)))))
        for i, l in zip(cand[inside], lam[inside]):
            l = np.clip(l, 0.0, None)
            l /= l.sum()
            env[i] = float(np.dot(l, f[fac]))
            certs[i] = _certificate(grid, fac, l)
            assigned[i] = True


def _envelope_on_line(s: SampledSlice, fin, tol) -> EnvelopeResult:
    grid = s.grid
    nodes = grid.nodes()
    X = nodes[fin]
    direction = X[np.argmax(np.linalg.norm(X - X[0], axis=1))] - X[0]
    direction /= np.linalg.norm(direction)
    warnings.warn(
        f"finite nodes are collinear along {direction.tolist()} through {X[0].tolist()}; "
        "computing the envelope on that line only",
        RuntimeWarning,
        stacklevel=3,
    )
    rel = nodes - X[0]
    t_all = rel @ direction
    on_line = np.linalg.norm(rel - np.outer(t_all, direction), axis=1) <= 1e-9 * float(np.max(grid.spacing))
    ids = np.flatnonzero(on_line)
    ids = ids[np.argsort(t_all[ids], kind="stable")]
    tt, ff = t_all[ids], s.values[ids]
    fin_mask = ~is_sentinel(ff)
    chain = _lower_chain(tt[fin_mask], ff[fin_mask])
    verts = ids[fin_mask][chain]
    facets = np.sort(np.stack([verts[:-1], verts[1:]], axis=1), axis=1)
    env = np.full(grid.size, SENTINEL)
    certs: list = [None] * grid.size
    _fill_from_facets(grid, s.values, facets, env, certs)
    env, certs = _finalise(grid, s.values, env, certs, tol)
    return EnvelopeResult(grid, _ro(env), tuple(certs), "lower_hull_nd", s.values, tol,
                          facets.astype(np.int64), False, None,
                          (f"collinear finite nodes, direction {direction.tolist()}",))


def envelope(s: SampledSlice, tol: float | None = None) -> EnvelopeResult:
    """Dispatch on grid dimension: chain in 1-d, lower hull otherwise."""
    if s.grid.dim == 1:
        return envelope_1d(s, TOL_1D if tol is None else tol)
    return envelope_nd(s, tol)


# ---------------------------------------------------------------------------
# restricted envelopes, certificates, minorants
# ---------------------------------------------------------------------------

def restricted_bipolar(s: SampledSlice, K: float, tol: float | None = None) -> EnvelopeResult:
    """Envelope of the slice with every node outside the closed ball ``B_K``
    set to +inf."""
    if K <= 0:
        raise ValueError(f"radius must be positive, got {K}")
    slack = 1e-9 * max(1.0, K)
    if np.any(s.grid.box.lo > -K + slack) or np.any(s.grid.box.hi < K - slack):
        raise ValueError(
            f"grid box {s.grid.box.lo.tolist()}..{s.grid.box.hi.tolist()} does not contain B_{K}"
        )
    r = restrict_slice(s, radius=K)
    if not np.any(r.finite):
        raise ValueError(f"no finite node inside B_{K}")
    return envelope(r, tol)


def decompose(env: EnvelopeResult, xi) -> ConvexDecomposition:
    """Convex combination of finite nodes realising the envelope at ``xi``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if not bool(env.grid.box.contains(xi, tol=1e-12)[0]):
        raise ValueError(f"{xi.tolist()} is outside the grid box")
    i = env.grid.find_node(xi)
    if i is not None:
        cert = env.certificates[i]
        if cert is None:
            raise ValueError(f"no finite decomposition at node {env.grid.multi_index(i)}")
        return cert
    hit = env.locate(xi)
    if hit is None:
        raise ValueError(f"{xi.tolist()} lies outside the finite part of the envelope")
    fac, lam = hit
    return _certificate(env.grid, fac, lam)


def best_affine_minorant(s: SampledSlice, xi0, env: EnvelopeResult | None = None) -> AffineMap:
    """Supporting hyperplane of the lower hull at ``xi0``.

    At a point shared by several hull pieces the slopes of all of them are
    averaged, which stays in the subdifferential.
    """
    env = envelope(s) if env is None else env
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    nodes = env.grid.nodes()
    N = env.grid.dim
    slopes = []
    if N == 1 and env.rays is not None:
        vx = nodes[np.unique(env.facets), 0]
        if xi0[0] < vx[0] - 1e-12 or xi0[0] > vx[-1] + 1e-12:
            s_l, s_r = env.rays
            slope = -s_l if xi0[0] < vx[0] else s_r
            val = float(env.evaluate(xi0)[0])
            return AffineMap(np.array([slope]), val - slope * xi0[0])
    for fac in env.facets:
        if _barycentric(nodes[fac], xi0, eps=1e-9) is None:
            continue
        P, v = nodes[fac], env.source[fac]
        A = np.column_stack([P, np.ones(len(fac))])
        coef = np.linalg.lstsq(A, v, rcond=None)[0]
        slopes.append(coef[:N])
    if not slopes:
        raise ValueError(f"the envelope is +inf at {xi0.tolist()}")
    zeta = np.mean(slopes, axis=0)
    val = float(env.evaluate(xi0[None, :])[0])
    return AffineMap(zeta, val - float(zeta @ xi0))


# ---------------------------------------------------------------------------
# stabilisation along a radius ladder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class XiPolicy:
    """How to lay out gradient grids.

    ``spacing`` is an upper bound on the node spacing, ``margin`` extends
    the box past the radius of interest, ``extent`` fixes the half width
    for callers that need one box (per-cell envelopes), and
    ``use_recession`` lets 1-d slices close the chain with recession rays.
    """

    spacing: float = 0.05
    margin: float = 0.0
    use_recession: bool = False
    extent: float | None = None

    def grid_for(self, radius: float, dim: int) -> XiGrid:
        half = radius + self.margin
        n = int(math.ceil(2 * half / self.spacing - 1e-9)) + 1
        return make_grid(BoxDomain.cube(half, dim), [n] * dim)


def bipolar_limit(f: Lagrangian, x, u: float, K_ladder, grid_policy: XiPolicy | None = None,
                  tol: float = 1e-9, window: float = 1.0):
    """Follow ``(f restricted to B_K)**`` along increasing ``K``.

    Returns ``(stabilized, K_star, env)``: ``K_star`` is the first radius
    whose values on the probe window agree with the next radius within
    ``tol``; ``env`` is the envelope at ``K_star`` (the last one otherwise).
    """
    K_ladder = [float(k) for k in K_ladder]
    if len(K_ladder) < 1 or np.any(np.diff(K_ladder) <= 0):
        raise ValueError("K_ladder must be strictly increasing")
    if K_ladder[0] < window:
        raise ValueError(f"first radius {K_ladder[0]} is inside the probe window {window}")
    policy = grid_policy or XiPolicy()
    N = f.xi_dim
    nprobe = int(math.ceil(2 * window / policy.spacing)) + 1
    axis = np.linspace(-window, window, nprobe)
    probes = np.stack([m.ravel() for m in np.meshgrid(*([axis] * N), indexing="ij")], axis=-1)
    probes = probes[np.linalg.norm(probes, axis=1) <= window + 1e-12]

    envs, vals = [], []
    for K in K_ladder:
        grid = policy.grid_for(K, N)
        s = sample_slice(f, grid, x, u)
        if np.any(~s.finite):
            raise ValueError(f"{f.name} must be finite-valued on the sampled box")
        e = restricted_bipolar(s, K, tol=None)
        envs.append(e)
        vals.append(e.evaluate(probes))
    for j in range(1, len(vals)):
        rise = np.max(vals[j] - vals[j - 1])
        if rise > tol:
            raise RuntimeError(
                f"restricted envelope increased by {rise:.3g} from K={K_ladder[j - 1]} to K={K_ladder[j]}"
            )
    for j in range(len(vals) - 1):
        if np.max(np.abs(vals[j + 1] - vals[j])) <= tol:
            return True, K_ladder[j], envs[j]
    return False, K_ladder[-1], envs[-1]
