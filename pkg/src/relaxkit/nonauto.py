"""Moving essential infima and the (H1)/(H2) checks for x-dependent
Lagrangians.

The essential infimum over ``Omega ∩ B_eps(x)`` is replaced by a minimum over
finitely many sample points (mesh barycenters in the ball and ``x`` itself),
so every value here is an upper bound of the exact one.  For Lagrangians
continuous in ``x`` the two agree in the refinement limit.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ._io import fmt
from ._parallel import pmap
from .convexify import envelope
from .core import SENTINEL, Lagrangian, Mesh, SampledSlice, XiGrid, is_sentinel, sample_slice

__all__ = [
    "EssInfField",
    "moving_essinf",
    "verify_lemma32",
    "check_H1",
    "check_H2",
    "check_aux_inequality",
    "DEFAULT_EPS_LADDER",
]

DEFAULT_EPS_LADDER = (0.4, 0.2, 0.1)


@dataclass(frozen=True)
class EssInfField:
    base: str
    epsilon: float
    x_mesh: Mesh
    u_probes: NDArray[np.float64]
    grid: XiGrid
    values: NDArray[np.float64]
    samples: tuple
    sampling_floor: NDArray[np.float64]

    def slice(self, cell: int, k: int) -> SampledSlice:
        return SampledSlice(self.grid, self.values[cell, k], self.x_mesh.barycenters()[cell],
                            float(self.u_probes[k]))


def _ball_samples(mesh: Mesh, eps: float):
    xc = mesh.barycenters()
    D = np.linalg.norm(xc[:, None, :] - xc[None, :, :], axis=-1)
    sets = []
    for c in range(len(xc)):
        idx = np.flatnonzero(D[c] <= eps * (1 + 1e-12))
        if idx.size < 2:
            raise ValueError(
                f"eps={eps} is below the mesh resolution: the ball around cell {c} holds no other sample"
            )
        sets.append(idx)
    return xc, sets


def _slices(f: Lagrangian, grid: XiGrid, xc, u_probes) -> np.ndarray:
    """``f(y, u, .)`` at every sample ``y`` and probe ``u``: ``(Y, U, nodes)``."""
    out = np.empty((len(xc), len(u_probes), grid.size))
    for i, y in enumerate(xc):
        for k, u in enumerate(u_probes):
            out[i, k] = sample_slice(f, grid, y, float(u)).values
    return out


def _envelopes(table: np.ndarray, grid: XiGrid) -> np.ndarray:
    """Envelope of every ``(sample, u)`` row of a slice table."""
    rows = [(i, k) for i in range(table.shape[0]) for k in range(table.shape[1])]
    envs = pmap(lambda ik: envelope(SampledSlice(grid, table[ik])).env_values, rows)
    out = np.empty_like(table)
    for (i, k), e in zip(rows, envs):
        out[i, k] = e
    return out


def _min_over_balls(table: np.ndarray, sets) -> np.ndarray:
    return np.stack([table[idx].min(axis=0) for idx in sets])


def moving_essinf(f: Lagrangian, eps: float, x_mesh: Mesh, u_probes, xi_grid: XiGrid,
                  _table: np.ndarray | None = None) -> EssInfField:
    """Minimum of ``f(y, u, xi)`` over sample points ``y`` within ``eps`` of
    each cell barycenter, on every node of ``xi_grid``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    u_probes = np.atleast_1d(np.asarray(u_probes, dtype=float))
    xc, sets = _ball_samples(x_mesh, eps)
    table = _slices(f, xi_grid, xc, u_probes) if _table is None else _table
    vals = _min_over_balls(table, sets)
    # lowest sampled first coordinate per ball: the exact infimum may sit below it
    floor = np.array([float(xc[idx, 0].min()) for idx in sets])
    return EssInfField(f.name, float(eps), x_mesh, u_probes, xi_grid, vals,
                       tuple(tuple(int(i) for i in s) for s in sets), floor)


def verify_lemma32(f: Lagrangian, eps, x_mesh: Mesh, u_probes, xi_grid: XiGrid,
                   tol: float | None = None) -> dict:
    """Compare ``(f_eps^-)**`` with ``((f**)_eps^-)**`` on shared grids.

    ``eps`` may be a single radius or a ladder.
    """
    tol = 2 * (1e-9 if xi_grid.dim == 1 else 1e-7) if tol is None else tol
    u_probes = np.atleast_1d(np.asarray(u_probes, dtype=float))
    xc = x_mesh.barycenters()
    table = _slices(f, xi_grid, xc, u_probes)
    env_table = _envelopes(table, xi_grid)
    per_eps = []
    worst = 0.0
    for e in np.atleast_1d(eps):
        _, sets = _ball_samples(x_mesh, float(e))
        route_a = _envelopes(_min_over_balls(table, sets), xi_grid)
        route_b = _envelopes(_min_over_balls(env_table, sets), xi_grid)
        fin = ~is_sentinel(route_a) & ~is_sentinel(route_b)
        if np.any(is_sentinel(route_a) != is_sentinel(route_b)):
            d = math.inf
        else:
            d = float(np.max(np.abs(route_a[fin] - route_b[fin]), initial=0.0))
        worst = max(worst, d)
        per_eps.append({"eps": float(e), "max_discrepancy": d})
    return {"lagrangian": f.name, "max_discrepancy": worst, "tol": tol, "passed": bool(worst <= tol),
            "per_eps": per_eps, "n_cells": int(x_mesh.n_cells), "n_xi": int(xi_grid.size),
            "u_probes": u_probes.tolist()}


def check_H1(f: Lagrangian, L, eps_ladder=DEFAULT_EPS_LADDER, x_mesh: Mesh | None = None,
             u_probes=None, xi_grid: XiGrid | None = None, threshold: float = math.inf,
             use_envelope: bool = False) -> dict:
    """Estimate ``C_L = max g / (1 + (g_eps^-)**)`` over guarded probes.

    A probe is guarded when ``(g_eps^-)** <= L2 / eps^N``.  With
    ``use_envelope`` the Lagrangian checked is ``g = f**`` (per sample).
    The result is numeric evidence, not a proof of (H1).
    """
    L1, L2 = (float(v) for v in L)
    if x_mesh is None or xi_grid is None:
        raise ValueError("check_H1 needs x_mesh and xi_grid")
    u_probes = np.linspace(-L1, L1, 5) if u_probes is None else np.atleast_1d(np.asarray(u_probes, float))
    if np.any(np.abs(u_probes) > L1 * (1 + 1e-12)):
        raise ValueError(f"u probes must lie in [-{L1}, {L1}]")
    N = xi_grid.dim
    xc = x_mesh.barycenters()
    table = _slices(f, xi_grid, xc, u_probes)
    if use_envelope:
        table = _envelopes(table, xi_grid)
    nodes = xi_grid.nodes()
    rows = []
    C = 0.0
    violations = []
    for eps in eps_ladder:
        _, sets = _ball_samples(x_mesh, float(eps))
        rhs = _envelopes(_min_over_balls(table, sets), xi_grid)
        guard = L2 / eps ** N
        for c in range(len(xc)):
            for k, u in enumerate(u_probes):
                g, e = table[c, k], rhs[c, k]
                ok = ~is_sentinel(e) & ~is_sentinel(g) & (e <= guard)
                ratio = np.where(ok, g / (1.0 + np.where(ok, e, 0.0)), np.nan)
                if np.any(ok):
                    r = float(np.nanmax(ratio))
                    C = max(C, r)
                    if r > threshold:
                        j = int(np.nanargmax(ratio))
                        violations.append({"eps": eps, "x": xc[c].tolist(), "u": float(u),
                                           "xi": nodes[j].tolist(), "ratio": r})
                for j in range(xi_grid.size):
                    rows.append((eps, c, xc[c], float(u), nodes[j], g[j], e[j], ratio[j], bool(ok[j])))
    return {"lagrangian": f.name, "use_envelope": use_envelope, "C_L_estimate": C, "L": [L1, L2],
            "eps_ladder": [float(e) for e in eps_ladder], "threshold": threshold,
            "violations": violations, "label": "numeric evidence", "_rows": rows}


def h1_table_csv(report: dict) -> str:
    buf = io.StringIO()
    buf.write("eps,cell,x,u,xi,g,env_essinf,ratio,guarded\n")
    for eps, c, x, u, xi, g, e, r, ok in report["_rows"]:
        buf.write(",".join([fmt(eps), str(c), ";".join(fmt(v) for v in x), fmt(u),
                            ";".join(fmt(v) for v in xi), fmt(g), fmt(e),
                            "nan" if not np.isfinite(r) else fmt(r), str(ok).lower()]) + "\n")
    return buf.getvalue()


def check_H2(f: Lagrangian, p: float, theta: float, a_samples, u0: float, N: int | None = None,
             x_samples=None, u_probes=None) -> dict:
    """Check ``f(x, u, 0) <= a(x) |u|^(p*/theta')`` at probes with ``|u| > u0``.

    ``a_samples`` gives ``a`` at each x sample (array, or a callable of x).
    """
    N = f.xi_dim if N is None else int(N)
    base = {"p": p, "theta": theta, "N": N}
    if N == 1:
        return {**base, "verdict": "not required", "note": "only needed when N > 1"}
    if p >= N:
        return {**base, "verdict": "vacuous", "holds": True,
                "note": "p >= N: no Sobolev exponent constraint applies"}
    p_star = N * p / (N - p)
    if theta < 1:
        raise ValueError("theta must lie in [1, inf]")
    theta_prime = 1.0 if math.isinf(theta) else (math.inf if theta == 1 else theta / (theta - 1))
    q = p_star / theta_prime
    xs = np.atleast_2d(np.asarray([[0.5]] if x_samples is None else x_samples, float))
    if xs.shape[0] == 1 and xs.shape[1] > 1 and np.ndim(x_samples) == 1:
        xs = xs.T
    a = np.asarray(a_samples(xs) if callable(a_samples) else a_samples, float).ravel()
    if a.size == 1:
        a = np.full(len(xs), float(a[0]))
    us = (np.concatenate([-np.geomspace(u0 * 1.01 + 1e-12, (u0 + 1) * 1e3, 20),
                          np.geomspace(u0 * 1.01 + 1e-12, (u0 + 1) * 1e3, 20)])
          if u_probes is None else np.atleast_1d(np.asarray(u_probes, float)))
    us = us[np.abs(us) > u0]
    zero = np.zeros(N)
    bad = []
    for i, x in enumerate(xs):
        lhs = f(x, us, np.broadcast_to(zero, (len(us), N)))
        rhs = a[i] * np.abs(us) ** q
        for j in np.flatnonzero(lhs > rhs):
            bad.append({"x": x.tolist(), "u": float(us[j]), "f": float(lhs[j]), "bound": float(rhs[j])})
    return {**base, "verdict": "holds" if not bad else "fails", "holds": not bad, "p_star": p_star,
            "theta_prime": theta_prime, "exponent": q, "violations": bad[:50], "n_violations": len(bad)}


def check_aux_inequality(f: Lagrangian, extra, eps: float, x_mesh: Mesh, u_probes, xi_grid: XiGrid,
                         tol: float | None = None) -> dict:
    """Per-probe check of ``(g_eps^-)** >= (f_eps^-)** + extra(xi)`` for
    ``g = f + extra`` with ``extra`` convex and independent of ``(x, u)``."""
    tol = (1e-9 if xi_grid.dim == 1 else 1e-7) if tol is None else tol
    nodes = xi_grid.nodes()
    add = np.asarray(extra(nodes), float)
    g = Lagrangian(f"{f.name} + extra", lambda x, u, xi: f.func(x, u, xi) + extra(xi), xi_dim=f.xi_dim)
    lhs = _envelopes(moving_essinf(g, eps, x_mesh, u_probes, xi_grid).values, xi_grid)
    rhs = _envelopes(moving_essinf(f, eps, x_mesh, u_probes, xi_grid).values, xi_grid) + add
    fin = ~is_sentinel(lhs)
    slack = float(np.min((lhs - rhs)[fin]))
    return {"min_slack": slack, "tol": tol, "passed": bool(slack >= -tol * max(1.0, float(np.max(np.abs(rhs[fin])))))}
