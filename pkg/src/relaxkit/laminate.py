"""
Oscillating sequences that realise relaxed energies.

In 1D each cell is split into ``n`` periods, and each period into pieces
whose lengths are proportional to the certificate weights and whose slopes
are the certificate points.  In 2D a simple laminate oscillates along
``xi_1 - xi_2`` and is switched off near the cell boundary by a
piecewise-linear cutoff.  Both are returned as refined :class:`PLField`s so
their energies need no quadrature beyond the midpoint rule on sub-cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write, fmt, write_json
from .convexify import ConvexDecomposition, XiPolicy
from .core import BoxDomain, Lagrangian, Mesh, PLField, interpolate, interval_mesh, refine
from .detachment import construct_phi
from .energy import energy, relaxed_energy

__all__ = [
    "SequenceReport",
    "laminate_1d",
    "laminate_nd",
    "relaxation_sequence",
    "strong_recovery_sequence",
    "verify_weak_star",
    "sup_distance",
    "w1p_distance",
    "export_sequence",
]

# certificates must reproduce the cell gradient to this accuracy
CERT_TOL = 1e-8


@dataclass
class SequenceReport:
    indices: list
    sup_norm_dist: list
    grad_sup: list
    energy_f: list
    energy_target: float
    w1p_dist: dict
    grad_bound: float
    energy_tol: float
    weak_star_ok: bool = False
    energy_converged: bool = False
    strong_ok: bool | None = None
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "indices": self.indices,
            "sup_norm_dist": self.sup_norm_dist,
            "grad_sup": self.grad_sup,
            "energy_f": self.energy_f,
            "energy_target": self.energy_target,
            "w1p_dist": {str(p): v for p, v in self.w1p_dist.items()},
            "grad_bound": self.grad_bound,
            "energy_tol": self.energy_tol,
            "weak_star_ok": self.weak_star_ok,
            "energy_converged": self.energy_converged,
            "strong_ok": self.strong_ok,
            "extras": self.extras,
        }


def _check_cert(cert: ConvexDecomposition, grad, cell: int):
    if cert is None:
        raise ValueError(f"cell {cell} has no finite convex decomposition")
    if abs(cert.weights.sum() - 1) > 1e-12 or np.any(cert.weights < 0):
        raise ValueError(f"cell {cell}: weights {cert.weights.tolist()} are not a convex combination")
    err = float(np.max(np.abs(cert.barycenter() - grad)))
    if err > CERT_TOL * max(1.0, float(np.max(np.abs(cert.points)))):
        raise ValueError(f"cell {cell}: certificate barycenter misses the gradient by {err:.3g}")


# ---------------------------------------------------------------------------
# 1D
# ---------------------------------------------------------------------------

def laminate_1d(u: PLField, decomps: Sequence[ConvexDecomposition | None], n: int) -> PLField:
    """Sawtooth refinement of ``u`` with ``n`` periods per cell.

    ``None`` entries (and one-point certificates) leave the cell unchanged.
    Original vertices keep their values exactly.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    mesh = u.mesh
    if mesh.dim != 1:
        raise ValueError("laminate_1d needs a 1-d mesh")
    if len(decomps) != mesh.n_cells:
        raise ValueError(f"need one decomposition per cell ({mesh.n_cells}), got {len(decomps)}")
    grads = u.gradients()[:, 0]
    xs, vals = [], []
    order = np.argsort(mesh.barycenters()[:, 0])
    for c in order:
        ia, ib = mesh.cells[c]
        if mesh.vertices[ia, 0] > mesh.vertices[ib, 0]:
            ia, ib = ib, ia
        a, b = mesh.vertices[ia, 0], mesh.vertices[ib, 0]
        ua, ub = u.nodal[ia], u.nodal[ib]
        cert = decomps[c]
        xs.append(a)
        vals.append(ua)
        if cert is None or cert.size == 1:
            continue
        _check_cert(cert, np.array([grads[c]]), c)
        period = (b - a) / n
        w, slopes = cert.weights, cert.points[:, 0]
        steps = np.cumsum(w)[:-1]
        for k in range(n):
            base = a + k * period
            if k > 0:
                xs.append(base)
                vals.append(ua + k * period * float(w @ slopes))
            acc = 0.0
            for j, t in enumerate(steps):
                acc += w[j] * slopes[j] * period
                xs.append(base + t * period)
                vals.append(ua + k * period * float(w @ slopes) + acc)
    last = order[-1]
    ib = max(mesh.cells[last], key=lambda i: mesh.vertices[i, 0])
    xs.append(mesh.vertices[ib, 0])
    vals.append(u.nodal[ib])
    new = interval_mesh(np.array(xs))
    return PLField(new, np.array(vals))


# ---------------------------------------------------------------------------
# 2D
# ---------------------------------------------------------------------------

def _clip(poly: np.ndarray, a: np.ndarray, b: float, keep_le: bool) -> np.ndarray:
    """Part of a convex polygon with ``a.x <= b`` (or ``>= b``)."""
    s = poly @ a - b
    if not keep_le:
        s = -s
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        sp, sq = s[i], s[(i + 1) % m]
        if sp <= 0:
            out.append(p)
        if (sp < 0 < sq) or (sq < 0 < sp):
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
    return np.array(out) if out else np.empty((0, 2))


def _area(poly) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _split(polys, a, b, min_area):
    out = []
    for P in polys:
        s = P @ a - b
        if s.min() >= -1e-14 or s.max() <= 1e-14:
            out.append(P)
            continue
        for side in (True, False):
            Q = _clip(P, a, b, side)
            if len(Q) >= 3 and _area(Q) > min_area:
                out.append(Q)
    return out


def laminate_nd(u: PLField, decomps: Sequence[ConvexDecomposition | None], n: int,
                cutoff_delta: float, band_refine: int = 2):
    """Simple laminate in each triangle, faded out within ``cutoff_delta`` of
    the triangle's edges.

    Returns ``(field, info)``; ``info`` records the amplitude, the gradient
    excess caused by the cutoff and the band volume.
    """
    mesh = u.mesh
    if mesh.dim != 2:
        raise ValueError("laminate_nd supports 2-d triangle meshes")
    if n < 1 or cutoff_delta <= 0:
        raise ValueError("need n >= 1 and cutoff_delta > 0")
    if len(decomps) != mesh.n_cells:
        raise ValueError(f"need one decomposition per cell ({mesh.n_cells}), got {len(decomps)}")
    grads = u.gradients()
    scale = mesh.diameter()
    key_tol = 1e-11 * max(scale, 1.0)
    verts: dict[tuple, int] = {}
    coords: list[np.ndarray] = []
    values: list[float] = []
    cells: list[tuple[int, int, int]] = []
    band_flags: list[bool] = []
    amp_max, excess, band_vol = 0.0, 0.0, 0.0

    def vid(p, val):
        k = tuple(np.round(p / key_tol).astype(np.int64))
        if k not in verts:
            verts[k] = len(coords)
            coords.append(np.array(p, float))
            values.append(float(val))
        return verts[k]

    for c in range(mesh.n_cells):
        ids = mesh.cells[c]
        T = mesh.vertices[ids]
        uT = u.nodal[ids]
        cert = decomps[c]
        # original vertices keep their nodal values bit for bit
        for i in range(3):
            vid(T[i], uT[i])
        lin = _affine(T, uT)
        if cert is None or cert.size == 1:
            a, b_, cc = (vid(T[i], uT[i]) for i in range(3))
            cells.append((a, b_, cc))
            band_flags.append(False)
            continue
        if cert.size > 2:
            raise ValueError(
                f"cell {c} needs a {cert.size}-point decomposition; only simple laminates are "
                "supported in 2-d (nested lamination is not implemented)"
            )
        _check_cert(cert, grads[c], c)
        (a1, a2), (x1, x2) = cert.weights, cert.points
        d = x1 - x2
        dn = float(np.linalg.norm(d))
        e = d / dn
        amp = a1 * a2 * dn / n
        amp_max = max(amp_max, amp)
        excess = max(excess, amp / cutoff_delta)

        def saw(p):
            t = n * (p @ e)
            frac = t - np.floor(t)
            return np.where(frac < a1, a2 * dn * frac, a1 * dn * (1 - frac)) / n

        # distances to the three edge lines (positive inside)
        edges = []
        for i in range(3):
            p, q, r = T[(i + 1) % 3], T[(i + 2) % 3], T[i]
            nrm = np.array([q[1] - p[1], p[0] - q[0]])
            nrm /= np.linalg.norm(nrm)
            off = float(nrm @ p)
            if nrm @ r - off < 0:
                nrm, off = -nrm, -off
            edges.append((nrm, off))

        def dist(p):
            return np.min([p @ nr - of for nr, of in edges], axis=0)

        def value(p):
            psi = np.clip(dist(p) / cutoff_delta, 0.0, 1.0)
            return lin(p) + psi * saw(p)

        lines = []
        proj = T @ e
        for k in range(int(math.floor(n * proj.min())) - 1, int(math.ceil(n * proj.max())) + 2):
            lines.append((e, k / n))
            lines.append((e, (k + a1) / n))
        for nr, of in edges:
            lines.append((nr, of + cutoff_delta))
        for i in range(3):
            for j in range(i + 1, 3):
                lines.append((edges[i][0] - edges[j][0], edges[i][1] - edges[j][1]))
        polys = [T.copy()]
        min_area = 1e-14 * _area(T)
        for nr, of in lines:
            if np.linalg.norm(nr) < 1e-14:
                continue
            polys = _split(polys, nr, of, min_area)
        for P in polys:
            centre = P.mean(axis=0)
            in_band = bool(dist(centre) < cutoff_delta)
            tris = [(P[0], P[k], P[k + 1]) for k in range(1, len(P) - 1)]
            if in_band:
                band_vol += _area(P)
                for _ in range(band_refine):
                    tris = [t for tri in tris for t in _red(tri)]
            for tri in tris:
                if _area(np.array(tri)) <= min_area:
                    continue
                tv = []
                for p in tri:
                    on_edge = dist(p) <= 1e-12 * max(scale, 1.0)
                    tv.append(vid(p, lin(p) if on_edge else value(p)))
                cells.append(tuple(tv))
                band_flags.append(in_band)

    V = np.array(coords)
    dom = mesh.domain
    from .core import _boundary_of
    bnd = _boundary_of(V, dom) if dom is not None else np.array([], dtype=np.int64)
    new = Mesh(V, np.array(cells), bnd, dom)
    info = {"amplitude": amp_max, "cutoff_gradient_excess": excess, "band_volume": band_vol,
            "band_cells": np.array(band_flags)}
    return PLField(new, np.array(values)), info


def _affine(T, uT):
    A = np.column_stack([T, np.ones(3)])
    coef = np.linalg.solve(A, uT)
    return lambda p: np.asarray(p) @ coef[:2] + coef[2]


def _red(tri):
    a, b, c = (np.asarray(p) for p in tri)
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

def _nested_values(coarse: PLField, fine_points: np.ndarray) -> np.ndarray:
    return coarse.evaluate(fine_points if coarse.mesh.dim > 1 else fine_points[:, 0])


def sup_distance(un: PLField, u: PLField) -> float:
    """``max |u_n - u|``; exact when ``u_n``'s mesh refines ``u``'s."""
    return float(np.max(np.abs(un.nodal - _nested_values(u, un.mesh.vertices))))


def w1p_distance(un: PLField, u, p: float, grad_u=None) -> float:
    """Discrete ``W^{1,p}`` distance on ``u_n``'s mesh.  ``u`` is a coarser
    PLField on a nested mesh or a callable; ``grad_u`` (callable) is needed
    with a callable ``u``."""
    mesh = un.mesh
    xc = mesh.barycenters()
    meas = mesh.cell_measures()
    if isinstance(u, PLField):
        uc = _nested_values(u, xc)
        cell, _ = u.mesh.locate(xc) if u.mesh.dim > 1 else (None, None)
        if u.mesh.dim == 1:
            edges = np.sort(u.mesh.vertices[:, 0])
            idx = np.clip(np.searchsorted(edges, xc[:, 0]) - 1, 0, len(edges) - 2)
            slopes = np.diff(u.nodal[np.argsort(u.mesh.vertices[:, 0])]) / np.diff(edges)
            gu = slopes[idx][:, None]
        else:
            gu = u.gradients()[cell]
    else:
        uc = np.asarray(u(xc), float).ravel()
        gu = np.asarray(grad_u(xc), float).reshape(len(xc), -1)
    du = un.barycenter_values() - uc
    dg = np.linalg.norm(un.gradients() - gu, axis=1)
    return float((np.sum(meas * (np.abs(du) ** p + dg ** p))) ** (1.0 / p))


def verify_weak_star(fields: Sequence[PLField], u: PLField, bound: float) -> dict:
    """Uniform convergence trend plus a uniform gradient bound."""
    d = [sup_distance(fn, u) for fn in fields]
    g = [float(np.max(np.linalg.norm(fn.gradients(), axis=1))) for fn in fields]
    tail = d[len(d) // 2:]
    decay = d[-1] <= d[0] / 4 + 1e-15 and all(b <= a + 1e-15 for a, b in zip(tail, tail[1:]))
    bounded = max(g) <= bound
    return {"ok": bool(decay and bounded), "sup_norm_dist": d, "grad_sup": g, "bound": bound,
            "decay_ok": bool(decay), "bounded_ok": bool(bounded)}


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def relaxation_sequence(f: Lagrangian, u: PLField, schedule, xi_policy: XiPolicy,
                        cutoff_delta: float | None = None, energy_tol: float = 1e-6,
                        ps: Sequence[float] = (1.0, 2.0)):
    """Laminates for each ``n`` in ``schedule`` built from the per-cell
    certificates of the relaxed energy, with the convergence report."""
    rel = relaxed_energy(f, u, xi_policy)
    certs = list(rel.certificates)
    dim = u.mesh.dim
    bad = [c for c, cert in enumerate(certs) if cert is None]
    if bad:
        raise ValueError(f"cells {bad} have no finite decomposition")
    fields, extras = [], {"cutoff": []}
    for n in schedule:
        if dim == 1:
            fields.append(laminate_1d(u, certs, int(n)))
        else:
            delta = cutoff_delta if cutoff_delta is not None else 0.5 / n
            fn, info = laminate_nd(u, certs, int(n), delta)
            fields.append(fn)
            extras["cutoff"].append({k: v for k, v in info.items() if k != "band_cells"})
    pts = np.concatenate([c.points for c in certs])
    bound = float(np.max(np.linalg.norm(pts, axis=1)))
    if dim > 1:
        bound += max((e["cutoff_gradient_excess"] for e in extras["cutoff"]), default=0.0)
    bound *= 1 + 1e-9
    rep = _report(f, fields, u, list(schedule), rel.total, bound, energy_tol, ps)
    if dim == 1:
        extras.pop("cutoff")
    rep.extras.update(extras)
    return fields, rep


def _report(f, fields, u, indices, target, bound, energy_tol, ps) -> SequenceReport:
    ws = verify_weak_star(fields, u, bound)
    ef = [energy(f, fn).total for fn in fields]
    w1p = {p: [w1p_distance(fn, u, p) for fn in fields] for p in ps}
    rep = SequenceReport(indices, ws["sup_norm_dist"], ws["grad_sup"], ef, target, w1p, bound, energy_tol)
    rep.weak_star_ok = ws["ok"]
    rep.energy_converged = abs(ef[-1] - target) <= energy_tol
    return rep


def strong_recovery_sequence(f: Lagrangian, u: PLField, p: float, xi_policy: XiPolicy,
                             exact: Callable | None = None, grad_exact: Callable | None = None,
                             levels: int = 4, tol: float = 1e-9, energy_tol: float = 1e-6):
    """Refinement ladder of ``u`` (or of ``exact``) for fields whose energy
    does not see the detachment set.

    Refuses when ``f > f**`` at some cell's ``(u, grad u)``.
    """
    raw = energy(f, u)
    rel = relaxed_energy(f, u, xi_policy)
    meas = u.mesh.cell_measures()
    gap = (raw.per_cell - rel.per_cell) / meas
    detached = np.flatnonzero(gap > tol * np.maximum(1.0, np.abs(raw.per_cell / meas)))
    if detached.size:
        raise ValueError(
            f"f exceeds its envelope at the field's gradient on {detached.size} cells "
            f"(detachment cells: {detached.tolist()[:20]}); strong recovery is impossible"
        )
    if exact is None:
        exact = lambda pts: u.evaluate(pts if u.mesh.dim > 1 else pts[:, 0])
    fields = []
    mesh = u.mesh
    for _ in range(levels):
        fields.append(interpolate(mesh, exact))
        mesh = refine(mesh)
    ref = interpolate(refine(mesh), exact) if grad_exact is None else None

    def dist(fn):
        if grad_exact is not None:
            return w1p_distance(fn, exact, p, grad_exact)
        # the reference is finer than every ladder member, so compare on it
        return w1p_distance(ref, fn, p)

    w = [dist(fn) for fn in fields]
    ef = [energy(f, fn).total for fn in fields]
    target = raw.total if grad_exact is None else ef[-1]
    sq = [float(np.sum(fn.mesh.cell_measures() * np.sqrt(1 + np.sum(fn.gradients() ** 2, axis=1))))
          for fn in fields]
    if p == 1:
        phi = construct_phi((u.gradients(), meas))
        aux_name = "f + Phi + sqrt(1+|xi|^2)"
        aux = [energy(f, fn).total + float(np.sum(fn.mesh.cell_measures() * (phi(fn.gradients()) + np.sqrt(
            1 + np.sum(fn.gradients() ** 2, axis=1))))) for fn in fields]
    else:
        aux_name = f"f + |xi|^{p:g}"
        aux = [energy(f, fn).total + float(np.sum(fn.mesh.cell_measures()
                                                  * np.linalg.norm(fn.gradients(), axis=1) ** p))
               for fn in fields]
    grads = [float(np.max(np.linalg.norm(fn.gradients(), axis=1))) for fn in fields]
    rep = SequenceReport(list(range(levels)), [sup_distance(ref, fn) if ref is not None else 0.0 for fn in fields],
                         grads, ef, raw.total, {p: w}, max(grads), energy_tol)
    rep.weak_star_ok = True
    rep.strong_ok = bool(w[-1] <= max(w[0] / 4, tol) and all(b <= a + tol for a, b in zip(w, w[1:])))
    rep.energy_converged = abs(ef[-1] - raw.total) <= energy_tol * max(1.0, abs(raw.total))
    rep.extras = {"aux_energy_name": aux_name, "aux_energy": aux,
                  "sqrt_integral": sq, "energy_relaxed": rel.total, "energy_target_kind": "E[f](u)"}
    return fields, rep


def export_sequence(directory, fields: Sequence[PLField], report: SequenceReport) -> Path:
    """One ``field_<k>.csv`` per member (``vertex_index,x...,value``) and
    ``report.json``."""
    out = Path(directory)
    for k, fn in enumerate(fields):
        d = fn.mesh.dim
        head = "vertex_index," + ",".join(f"x{i}" for i in range(d)) + ",value"
        rows = [head]
        for i, (p, v) in enumerate(zip(fn.mesh.vertices, fn.nodal)):
            rows.append(f"{i}," + ",".join(fmt(c) for c in p) + f",{fmt(v)}")
        atomic_write(out / f"field_{k}.csv", "\n".join(rows) + "\n")
    write_json(out / "report.json", report.to_json())
    return out
