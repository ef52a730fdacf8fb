"""Energies of piecewise-linear fields and discrete Lavrentiev-gap scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from ._parallel import pmap
from .convexify import XiPolicy, decompose, envelope
from .core import SENTINEL, Lagrangian, Mesh, PLField, is_sentinel, sample_slice

__all__ = [
    "EnergyBreakdown",
    "energy",
    "relaxed_energy",
    "GapRun",
    "GapReport",
    "lavrentiev_scan",
    "discrete_energy_1d",
]


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    per_cell: NDArray[np.float64]
    quadrature: str = "midpoint"
    envelope_mode: str = "raw"
    certificates: tuple = ()

    def to_json(self) -> dict:
        return {"total": self.total, "per_cell": self.per_cell.tolist(),
                "quadrature": self.quadrature, "envelope_mode": self.envelope_mode}


def _cell_args(u: PLField):
    mesh = u.mesh
    return mesh.barycenters(), u.barycenter_values(), u.gradients(), mesh.cell_measures()


def energy(f: Lagrangian, u: PLField) -> EnergyBreakdown:
    """Midpoint rule per cell; exact in the gradient since it is cell-constant."""
    xc, uc, grads, meas = _cell_args(u)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.asarray(f(xc, uc, grads), dtype=float)
    bad = ~np.isfinite(vals) | (vals >= SENTINEL)
    if np.any(bad):
        c = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{f.name} is not finite on cell {c} (gradient {grads[c].tolist()})")
    per_cell = meas * vals
    return EnergyBreakdown(float(np.sum(per_cell)), per_cell)


def relaxed_energy(f: Lagrangian, u: PLField, xi_policy: XiPolicy) -> EnergyBreakdown:
    """Midpoint rule for ``f**``, with one envelope per cell.

    Slices are shared between cells with identical ``(x, u)`` arguments
    when ``f`` ignores them.  The certificate of each cell's gradient is
    kept for laminate construction.
    """
    if xi_policy.extent is None:
        raise ValueError("relaxed_energy needs xi_policy.extent (half width of the gradient box)")
    xc, uc, grads, meas = _cell_args(u)
    ext = float(xi_policy.extent)
    too_big = np.max(np.abs(grads), axis=1) > ext * (1 + 1e-12)
    if np.any(too_big):
        c = int(np.flatnonzero(too_big)[0])
        raise ValueError(f"cell {c} gradient {grads[c].tolist()} is outside the gradient box [-{ext}, {ext}]^N")
    grid = xi_policy.grid_for(ext - xi_policy.margin, f.xi_dim)
    use_rec = xi_policy.use_recession and f.xi_dim == 1

    def key(c):
        kx = () if f.autonomous else tuple(np.round(xc[c], 12))
        ku = () if f.state_free else (round(float(uc[c]), 12),)
        return kx + ku

    keys = [key(c) for c in range(len(meas))]
    uniq = sorted(set(keys))
    first = {k: keys.index(k) for k in uniq}

    def build(k):
        c = first[k]
        return envelope(sample_slice(f, grid, xc[c], uc[c], with_recession=use_rec))

    envs = dict(zip(uniq, pmap(build, uniq)))
    vals = np.empty(len(meas))
    certs = []
    for c, k in enumerate(keys):
        env = envs[k]
        v = float(env.evaluate(grads[c][None, :])[0])
        node = grid.find_node(grads[c])
        if node is not None:
            v = float(env.env_values[node])
        if v >= SENTINEL:
            raise ValueError(f"envelope is +inf at the gradient of cell {c}")
        vals[c] = v
        try:
            certs.append(decompose(env, grads[c]))
        except ValueError:
            certs.append(None)
    per_cell = meas * vals
    return EnergyBreakdown(float(np.sum(per_cell)), per_cell, "midpoint", "envelope", tuple(certs))


# ---------------------------------------------------------------------------
# Lavrentiev scans (one space dimension)
# ---------------------------------------------------------------------------

def discrete_energy_1d(f: Lagrangian, mesh: Mesh, u_left: float, slopes) -> float:
    """Midpoint energy of the PL field with ``u(a) = u_left`` and the given
    cell slopes."""
    h = np.diff(mesh.vertices[:, 0])
    u = u_left + np.concatenate([[0.0], np.cumsum(slopes * h)])
    uc = 0.5 * (u[1:] + u[:-1])
    xc = mesh.barycenters()
    return float(np.sum(h * f(xc, uc, np.asarray(slopes)[:, None])))


class _Problem:
    """Energy of slope vectors ``s`` with ``sum(s*h) = rise``, and its gradient."""

    def __init__(self, f: Lagrangian, mesh: Mesh, ua: float, ub: float):
        if mesh.dim != 1:
            raise NotImplementedError("Lavrentiev scans are implemented for one space dimension")
        order = np.argsort(mesh.vertices[:, 0])
        x = mesh.vertices[order, 0]
        self.f = f
        self.h = np.diff(x)
        self.xc = (0.5 * (x[1:] + x[:-1]))[:, None]
        self.ua = ua
        self.rise = ub - ua

    def _uc(self, s):
        inc = s * self.h
        return self.ua + np.concatenate([[0.0], np.cumsum(inc)[:-1]]) + 0.5 * inc

    def value(self, s) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            v = float(np.sum(self.h * self.f(self.xc, self._uc(s), s[:, None])))
        return v if math.isfinite(v) else math.inf

    def grad(self, s) -> np.ndarray:
        uc = self._uc(s)
        du = 1e-6 * np.maximum(1.0, np.abs(uc))
        ds = 1e-6 * np.maximum(1.0, np.abs(s))
        with np.errstate(over="ignore", invalid="ignore"):
            fu = (self.f(self.xc, uc + du, s[:, None]) - self.f(self.xc, uc - du, s[:, None])) / (2 * du)
            fs = (self.f(self.xc, uc, (s + ds)[:, None]) - self.f(self.xc, uc, (s - ds)[:, None])) / (2 * ds)
        w = self.h * fu
        # d u_c(i) / d s_j = h_j for j < i and h_j / 2 for j = i
        later = np.concatenate([np.cumsum(w[::-1])[::-1][1:], [0.0]])
        return self.h * fs + self.h * (0.5 * w + later)

    def project(self, y, L: float) -> np.ndarray:
        h, c = self.h, self.rise
        if not math.isfinite(L):
            return y - h * (h @ y - c) / (h @ h)
        if L * h.sum() < abs(c) * (1 - 1e-12):
            raise ValueError(f"no field with |u'| <= {L} meets the boundary data")
        # sum(h * clip(y - mu*h, -L, L)) is piecewise linear and non-increasing
        # in mu with kinks at (y -+ L)/h; bracket the root among the kinks
        knots = np.unique(np.concatenate([(y - L) / h, (y + L) / h]))
        vals = np.clip(y[None, :] - knots[:, None] * h[None, :], -L, L) @ h - c
        k = int(np.searchsorted(-vals, 0.0, side="left"))
        if k == 0:
            mu = knots[0]
        elif k == len(knots):
            mu = knots[-1]
        else:
            m0, m1, v0, v1 = knots[k - 1], knots[k], vals[k - 1], vals[k]
            mu = m0 if v0 == v1 else m0 + (m1 - m0) * v0 / (v0 - v1)
        return np.clip(y - mu * h, -L, L)


def _pgd(prob: _Problem, s0, L: float, max_iter: int, gtol: float = 1e-12, stall: int = 200):
    """Projected gradient with Barzilai-Borwein steps and a non-monotone
    Armijo safeguard.  Returns ``(s, value, converged, iterations)``."""
    s = prob.project(s0, L)
    E = prob.value(s)
    g = prob.grad(s)
    alpha = 1.0 / max(1.0, float(np.max(np.abs(g))))
    history = [E]
    for it in range(1, max_iter + 1):
        ref = max(history[-10:])
        while True:
            cand = prob.project(s - alpha * g, L)
            d = cand - s
            Ec = prob.value(cand)
            if Ec <= ref + 1e-4 * float(g @ d) or np.max(np.abs(d)) <= 1e-15:
                break
            alpha *= 0.5
            if alpha < 1e-30:
                return s, E, False, it
        if np.max(np.abs(d)) <= gtol * max(1.0, float(np.max(np.abs(s)))):
            return cand, Ec, True, it
        if it > stall and history[-stall] - Ec <= 1e-10 * abs(Ec) + 1e-300:
            return cand, Ec, True, it
        gc = prob.grad(cand)
        y = gc - g
        sy = float(d @ y)
        alpha = float(d @ d) / sy if sy > 0 else min(1e10, alpha * 4)
        s, E, g = cand, Ec, gc
        history.append(E)
    return s, E, False, max_iter


@dataclass
class GapRun:
    mesh_h: float
    n_cells: int
    L: float
    inf_estimate: float
    converged: int
    starts: int
    best_slopes: list = field(default_factory=list)


@dataclass
class GapReport:
    runs: list
    unconstrained: dict
    gap_lower_bound: float
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "runs": [
                {"mesh_h": r.mesh_h, "n_cells": r.n_cells, "L": r.L, "inf_estimate": r.inf_estimate,
                 "converged": r.converged, "starts": r.starts}
                for r in self.runs
            ],
            "unconstrained": self.unconstrained,
            "gap_lower_bound": self.gap_lower_bound,
            "notes": self.notes,
            "language": "estimates from multi-start local minimisation; global optimality is not claimed",
        }

    def curves_csv(self) -> str:
        from ._io import fmt
        lines = ["mesh_h,L,inf_estimate"]
        for r in self.runs:
            lines.append(f"{fmt(r.mesh_h)},{fmt(r.L)},{fmt(r.inf_estimate)}")
        for r in self.unconstrained.get("per_mesh", []):
            lines.append(f"{fmt(r['mesh_h'])},inf,{fmt(r['inf_estimate'])}")
        return "\n".join(lines) + "\n"

    def min_constrained(self, mesh_index: int = -1) -> dict[float, float]:
        hs = sorted({r.mesh_h for r in self.runs}, reverse=True)
        target = hs[mesh_index]
        return {r.L: r.inf_estimate for r in self.runs if r.mesh_h == target}


def _boundary_values(phi, mesh: Mesh):
    x = mesh.vertices[:, 0]
    a, b = float(x.min()), float(x.max())
    if isinstance(phi, PLField):
        return float(phi.evaluate([a])[0]), float(phi.evaluate([b])[0])
    if callable(phi):
        return float(phi(a)), float(phi(b))
    ua, ub = phi
    return float(ua), float(ub)


def lavrentiev_scan(f: Lagrangian, phi, meshes: Sequence[Mesh], L_ladder, *, starts: int = 8,
                    seed: int = 0, max_iter: int = 4000) -> GapReport:
    """Constrained (``|u'| <= L``) and unconstrained discrete infima on each
    mesh by projected gradient descent from ``starts`` random initial fields.

    ``phi`` is a PLField, a callable, or a pair ``(u(a), u(b))``.
    """
    L_ladder = sorted(float(L) for L in L_ladder)
    rng = np.random.default_rng(seed)
    runs: list[GapRun] = []
    unc = []
    notes = []
    for mesh in meshes:
        ua, ub = _boundary_values(phi, mesh)
        prob = _Problem(f, mesh, ua, ub)
        n = len(prob.h)
        # random monotone-ish profiles between the boundary values, as slopes
        inits = []
        for _ in range(starts):
            inner = np.sort(rng.uniform(0, 1, n - 1))
            nodal = ua + (ub - ua) * np.concatenate([[0.0], inner, [1.0]])
            inits.append(np.diff(nodal) / prob.h)
        mesh_h = float(np.max(prob.h))
        for L in L_ladder + [math.inf]:
            if L * prob.h.sum() < abs(ub - ua) * (1 - 1e-12):
                notes.append(f"L={L} cannot meet the boundary data on mesh h={mesh_h:.3g}; skipped")
                continue
            results = pmap(lambda s0: _pgd(prob, s0, L, max_iter), inits)
            vals = [r[1] for r in results]
            best = int(np.argmin(vals))
            conv = sum(bool(r[2]) for r in results)
            if math.isfinite(L):
                runs.append(GapRun(mesh_h, n, L, float(vals[best]), conv, starts, results[best][0].tolist()))
            else:
                unc.append({"mesh_h": mesh_h, "n_cells": n, "inf_estimate": float(vals[best]),
                            "converged": conv, "starts": starts})
    best_unc = min(r["inf_estimate"] for r in unc)
    finest = min(r["mesh_h"] for r in unc)
    finest_unc = [r for r in unc if r["mesh_h"] == finest][0]["inf_estimate"]
    largest = [r for r in runs if r.L == L_ladder[-1]]
    best_con = min((r.inf_estimate for r in largest), default=math.inf)
    gap = max(0.0, best_con - best_unc) if math.isfinite(best_con) else 0.0
    return GapReport(runs, {"best": best_unc, "finest_mesh": finest_unc, "per_mesh": unc}, gap, notes)
