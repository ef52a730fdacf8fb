"""
Detachment sets, condition (K) decision procedures and convexifying
corrections.

A condition (K) verdict is only ever ``"yes"`` after a direct comparison of
the restricted envelope at the candidate radius with the reference envelope
on ``B_K`` at every probe; a ``"no"`` is reported only when that comparison
fails at a candidate.  Everything else is ``"inconclusive"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.interpolate import PPoly
from scipy.spatial import ConvexHull, QhullError

from .convexify import EnvelopeResult, XiPolicy, envelope, restricted_bipolar
from .core import (
    SENTINEL,
    BoxDomain,
    Lagrangian,
    SampledSlice,
    composite,
    is_sentinel,
    make_grid,
    sample_slice,
)

__all__ = [
    "Component",
    "DetachmentReport",
    "ConditionKVerdict",
    "KSearch",
    "ThetaProfile",
    "Phi",
    "Correction",
    "detachment_set",
    "check_boundary_equality",
    "check_condition_K",
    "superlinearity_certificate",
    "construct_phi",
    "hessian_min_eig",
    "hessian_eigs",
    "theta_profile",
    "convexifying_correction",
    "quintic_gamma",
]


# ---------------------------------------------------------------------------
# detachment sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Component:
    nodes: tuple[int, ...]
    diameter: float
    touches_boundary: bool


@dataclass(frozen=True)
class DetachmentReport:
    mask: NDArray[np.bool_]
    components: tuple[Component, ...]
    max_diameter: float
    unbounded: bool
    tol: float

    def to_json(self, grid) -> dict:
        return {
            "tol": self.tol,
            "n_detached": int(self.mask.sum()),
            "max_diameter": self.max_diameter,
            "unbounded": self.unbounded,
            "components": [
                {
                    "nodes": sorted(list(grid.multi_index(i)) for i in c.nodes),
                    "diameter": c.diameter,
                    "touches_boundary": c.touches_boundary,
                }
                for c in self.components
            ],
        }


def _diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    if points.shape[1] == 1:
        return float(np.ptp(points[:, 0]))
    # the farthest pair is always a pair of hull vertices
    if len(points) > 3:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            pass
    d = points[:, None, :] - points[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", d, d))))


def detachment_set(s: SampledSlice, env: EnvelopeResult, tol: float = 1e-9) -> DetachmentReport:
    """Nodes where the envelope lies more than ``tol`` below the slice,
    grouped into face-adjacent components.

    A sentinel node with a finite envelope value is detached (``+inf`` is
    strictly above any finite value).
    """
    if s.grid != env.grid:
        raise ValueError("slice and envelope are on different grids")
    f, e = s.values, env.env_values
    fin_e = ~is_sentinel(e)
    mask = fin_e & (is_sentinel(f) | (f - e > tol))
    labels, n = ndimage.label(mask.reshape(s.grid.counts))
    labels = labels.ravel()
    nodes = s.grid.nodes()
    on_edge = s.grid.on_box_boundary()
    comps = []
    for k in range(1, n + 1):
        ids = np.flatnonzero(labels == k)
        comps.append(Component(tuple(int(i) for i in ids), _diameter(nodes[ids]), bool(on_edge[ids].any())))
    maxd = max((c.diameter for c in comps), default=0.0)
    return DetachmentReport(mask, tuple(comps), maxd, any(c.touches_boundary for c in comps), tol)


def _annulus(grid, K: float) -> np.ndarray:
    r = np.linalg.norm(grid.nodes(), axis=1)
    half = 0.5 * float(np.max(grid.spacing)) * (1 + 1e-9)
    return np.flatnonzero(np.abs(r - K) <= half)


def check_boundary_equality(s: SampledSlice, env: EnvelopeResult, K: float, tol: float = 1e-9,
                            rtol: float = 0.0) -> bool:
    """Whether ``f = f**`` (within ``tol + rtol*|f**|``) at every node of the
    discrete annulus ``| |xi| - K | <= h/2``."""
    ring = _annulus(s.grid, K)
    if ring.size == 0:
        raise ValueError(f"no grid node within half a spacing of |xi| = {K}")
    f, e = s.values[ring], env.env_values[ring]
    if np.any(is_sentinel(f)) or np.any(is_sentinel(e)):
        return False
    return bool(np.all(np.abs(f - e) <= tol + rtol * np.abs(e)))


# ---------------------------------------------------------------------------
# condition (K)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KSearch:
    """Search settings for :func:`check_condition_K`.

    Validation accepts ``|a - b| <= atol + tol * max(|a|, |b|)`` at every
    node of ``B_K``.  The detachment mask uses ``mask_tol`` (default ``tol``)
    as an absolute threshold.  ``ref_radius`` is the half width of the box on which
    the reference envelope is computed (default ``2 * K_max``).
    """

    route: str = "components"
    K_max: float = 50.0
    spacing: float = 0.05
    tol: float = 1e-9
    atol: float = 0.0
    mask_tol: float | None = None
    ref_radius: float | None = None
    n_u: int = 3
    x_probes: tuple = ((0.5,),)

    def ref_half_width(self) -> float:
        return self.ref_radius if self.ref_radius is not None else 2.0 * self.K_max

    def detach_tol(self) -> float:
        return self.mask_tol if self.mask_tol is not None else self.tol


@dataclass
class ConditionKVerdict:
    holds: str
    K_prime: float | None
    route: str
    witness: dict
    probes: list
    max_discrepancy: float | None = None
    failing_probe: dict | None = None
    attempts: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "holds": self.holds,
            "K_prime": self.K_prime,
            "route": self.route,
            "witness": self.witness,
            "probes": self.probes,
            "max_discrepancy": self.max_discrepancy,
            "failing_probe": self.failing_probe,
            "attempts": self.attempts,
            "scope": "verdict holds at the probed (x, u) points only",
        }


def _probes(f: Lagrangian, I, search: KSearch) -> list[tuple[np.ndarray, float]]:
    lo, hi = (float(I[0]), float(I[1])) if I is not None else (0.0, 0.0)
    us = [lo] if (f.state_free or lo == hi) else list(np.linspace(lo, hi, search.n_u))
    xs = [np.zeros(1)] if f.autonomous else [np.atleast_1d(np.asarray(x, float)) for x in search.x_probes]
    return [(x, float(u)) for x in xs for u in us]


def _validate(refs, K: float, Kp: float, search: KSearch):
    """Compare ``(f restricted to B_Kp)**`` with the reference envelope on
    ``B_K`` at every probe.  Returns ``(ok, max_discrepancy, failing index)``."""
    worst, bad = 0.0, None
    for j, (s, e) in enumerate(refs):
        inside = np.linalg.norm(s.grid.nodes(), axis=1) <= K * (1 + 1e-12)
        r = restricted_bipolar(s, Kp)
        a, b = r.env_values[inside], e.env_values[inside]
        if np.any(is_sentinel(a)) or np.any(is_sentinel(b)):
            return False, math.inf, j
        diff = np.abs(a - b)
        worst = max(worst, float(diff.max()))
        if bad is None and np.any(diff > search.atol + search.tol * np.maximum(np.abs(a), np.abs(b))):
            bad = j
    return bad is None, worst, bad


def check_condition_K(f: Lagrangian, I, K: float, search: KSearch | None = None) -> ConditionKVerdict:
    """Decide condition (K) at radius ``K`` over the state interval ``I``.

    ``search.route`` is ``"components"``, ``"boundary"``, ``"superlinear"``
    or ``"all"`` (routes tried in that order until one validates).
    """
    search = search or KSearch()
    if search.K_max < K:
        raise ValueError(f"K_max={search.K_max} is below K={K}")
    routes = ["components", "boundary", "superlinear"] if search.route == "all" else [search.route]
    for r in routes:
        if r not in ("components", "boundary", "superlinear"):
            raise ValueError(f"unknown route {r!r}")

    probes = _probes(f, I, search)
    R = search.ref_half_width()
    policy = XiPolicy(spacing=search.spacing)
    grid = policy.grid_for(R, f.xi_dim)
    h = float(np.max(grid.spacing))
    refs = []
    for x, u in probes:
        s = sample_slice(f, grid, x, u)
        refs.append((s, envelope(s)))
    probe_json = [{"x": x.tolist(), "u": u} for x, u in probes]
    attempts = []

    def limit_ok(Kp):
        return Kp <= search.K_max + 1e-12 and Kp <= R * (1 - 1e-12)

    for route in routes:
        Kp, witness = None, {}
        if route == "components":
            M, unbounded = 0.0, False
            for s, e in refs:
                rep = detachment_set(s, e, search.detach_tol())
                nodes = s.grid.nodes()
                for c in rep.components:
                    # only components meeting B_K constrain K'
                    if np.min(np.linalg.norm(nodes[list(c.nodes)], axis=1)) > K + h:
                        continue
                    M = max(M, c.diameter)
                    unbounded |= c.touches_boundary
            witness = {"component_bound_M": M, "unbounded": unbounded, "spacing": h}
            if not unbounded:
                Kp = K + M + h
        elif route == "boundary":
            radii = np.arange(K + h, search.K_max + 0.5 * h, h)
            for rad in radii:
                if all(check_boundary_equality(s, e, rad, tol=search.atol, rtol=search.tol) for s, e in refs):
                    Kp = float(rad)
                    break
            witness = {"boundary_equality_radius": Kp}
        else:
            M = 0.0
            for s, _ in refs:
                r = restricted_bipolar(s, K + 1)
                inside = np.linalg.norm(s.grid.nodes(), axis=1) <= (K + 1) * (1 + 1e-12)
                M = max(M, float(np.max(r.env_values[inside])))
            cert = superlinearity_certificate([s for s, _ in refs], [M + 1])
            witness = {"M": M, "slope": M + 1, "certificate": cert}
            if cert["certified"]:
                Kp = max(K + 1, cert["radius"][0])
        attempt = {"route": route, "K_prime": Kp, **witness}
        if Kp is None or not limit_ok(Kp):
            attempt["result"] = "no candidate radius within limits"
            attempts.append(attempt)
            continue
        ok, worst, bad = _validate(refs, K, Kp, search)
        attempt["max_discrepancy"] = worst
        attempts.append(attempt)
        if ok:
            return ConditionKVerdict("yes", Kp, route, witness, probe_json, worst, attempts=attempts)
        return ConditionKVerdict("no", Kp, route, witness, probe_json, worst,
                                 failing_probe=probe_json[bad], attempts=attempts)
    return ConditionKVerdict("inconclusive", None, search.route, {}, probe_json, attempts=attempts)


def superlinearity_certificate(slices: Sequence[SampledSlice], slopes) -> dict:
    """Radius ``R(s)`` beyond which ``f >= s|xi| + s`` at every node of every
    slice, for each slope ``s``.

    ``R(s)`` is the norm of the first node past the outermost violation, made
    monotone in ``s``.  A slope whose violations reach the outer shell of
    the box (the last spacing) is not certified.
    """
    radius, failed = [], None
    running = 0.0
    for sl in sorted(float(v) for v in np.atleast_1d(slopes)):
        worst = 0.0
        exhausted = False
        for s in slices:
            nodes = s.grid.nodes()
            r = np.linalg.norm(nodes, axis=1)
            edge = s.grid.box.inner_radius() - float(np.max(s.grid.spacing))
            fin = ~is_sentinel(s.values)
            viol = fin & (s.values < sl * r + sl) & (r <= s.grid.box.inner_radius())
            if np.any(viol):
                rv = float(r[viol].max())
                if rv >= edge:
                    exhausted = True
                    break
                beyond = r[(r > rv) & (r <= s.grid.box.inner_radius())]
                worst = max(worst, float(beyond.min()))
        if exhausted:
            failed = sl
            break
        running = max(running, worst)
        radius.append(running)
    return {"certified": failed is None, "slopes": sorted(float(v) for v in np.atleast_1d(slopes)),
            "radius": radius, "failing_slope": failed}


# ---------------------------------------------------------------------------
# Phi from integrable samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Phi:
    """``Phi(xi) = sum_n (|xi| - M_n)^+`` with explicit thresholds followed
    by ``M_{n0} + k`` for ``k = 1, 2, ...``."""

    thresholds: NDArray[np.float64]

    def __call__(self, xi) -> NDArray[np.float64]:
        xi = np.asarray(xi, dtype=float)
        r = np.abs(xi) if xi.ndim <= 1 else np.linalg.norm(xi, axis=-1)
        r = np.asarray(r, dtype=float)
        out = np.sum(np.maximum(r[..., None] - self.thresholds, 0.0), axis=-1)
        d = r - self.thresholds[-1]
        m = np.maximum(np.ceil(d) - 1, 0.0)
        return out + m * d - m * (m + 1) / 2

    def threshold(self, n: int) -> float:
        k = len(self.thresholds)
        return float(self.thresholds[n]) if n < k else float(self.thresholds[-1] + (n - k + 1))


def construct_phi(samples) -> Phi:
    """Thresholds with ``sum_{|v_i| >= M_n} |v_i| m_i <= 2^-n`` for each ``n``.

    ``samples`` is an iterable of ``(vector value, measure)`` or a pair of
    arrays ``(values, measures)``.
    """
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[1]) == 1:
        vals, meas = samples
    else:
        pairs = list(samples)
        vals = [p[0] for p in pairs]
        meas = [p[1] for p in pairs]
    vals = np.asarray(vals, dtype=float)
    norms = np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals.reshape(len(vals), -1), axis=1)
    meas = np.asarray(meas, dtype=float)
    if np.any(meas < 0):
        raise ValueError("measures must be non-negative")
    order = np.argsort(norms, kind="stable")
    sn, sm = norms[order], meas[order]
    # tail mass of {|v| >= value}, evaluated at the first occurrence of each value
    tail = np.cumsum((sn * sm)[::-1])[::-1]
    values = np.unique(sn[sn > 0])
    tails = tail[np.searchsorted(sn, values, side="left")]
    vmax = float(sn[-1]) if sn.size else 0.0
    thresholds: list[float] = []
    prev = 0.0
    while True:
        n = len(thresholds)
        ok = np.flatnonzero((values > prev) & (tails <= 2.0 ** (-n)))
        if ok.size == 0:
            thresholds.append(max(vmax, prev) + 1.0)
            break
        prev = float(values[ok[0]])
        thresholds.append(prev)
    return Phi(np.array(thresholds))


# ---------------------------------------------------------------------------
# Hessian spectra
# ---------------------------------------------------------------------------

def _as_fn(f, x=None, u=0.0) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(f, Lagrangian):
        x = np.zeros(1) if x is None else np.atleast_1d(np.asarray(x, float))
        return lambda xi: f(x, u, xi)
    return f


def hessian_eigs(f, xi, h: float = 1e-3, x=None, u: float = 0.0) -> NDArray[np.float64]:
    """Eigenvalues (ascending) of the central-difference Hessian at each
    point of ``xi`` (shape ``(..., N)``)."""
    fn = _as_fn(f, x, u)
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = np.atleast_2d(xi)
    N = pts.shape[1]
    E = np.eye(N) * h
    f0 = fn(pts)
    H = np.empty((len(pts), N, N))
    for i in range(N):
        H[:, i, i] = (fn(pts + E[i]) - 2 * f0 + fn(pts - E[i])) / h ** 2
        for j in range(i + 1, N):
            v = (fn(pts + E[i] + E[j]) - fn(pts + E[i] - E[j])
                 - fn(pts - E[i] + E[j]) + fn(pts - E[i] - E[j])) / (4 * h ** 2)
            H[:, i, j] = H[:, j, i] = v
    if not np.all(np.isfinite(H)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(H.reshape(len(pts), -1)), axis=1))[0])
        raise ValueError(f"non-finite second differences at xi={pts[bad].tolist()}")
    w = np.linalg.eigvalsh(H)
    return w[0] if single else w


def hessian_min_eig(f, xi, h: float = 1e-3, x=None, u: float = 0.0):
    """Smallest eigenvalue of the central-difference Hessian."""
    w = hessian_eigs(f, xi, h, x, u)
    return float(w[0]) if w.ndim == 1 else w[:, 0]


@dataclass(frozen=True)
class ThetaProfile:
    radii: NDArray[np.float64]
    theta: NDArray[np.float64]
    growth_fit: float | None
    dim: int = 1

    def __call__(self, r) -> NDArray[np.float64]:
        return np.interp(r, self.radii, self.theta, left=self.theta[0], right=self.theta[-1])


def _sphere(r: float, dim: int, n_angles: int) -> np.ndarray:
    if dim == 1:
        return np.array([[-r], [r]])
    if dim == 2:
        t = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
        return r * np.column_stack([np.cos(t), np.sin(t)])
    raise NotImplementedError("sphere sampling is implemented for N <= 2")


def theta_profile(f, radii, n_angles: int = 64, h: float = 1e-3, x=None, u: float = 0.0,
                  dim: int | None = None) -> ThetaProfile:
    """Largest negative part of the Hessian's smallest eigenvalue on each
    sampled sphere."""
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    dim = dim if dim is not None else (f.xi_dim if isinstance(f, Lagrangian) else 1)
    theta = np.empty(len(radii))
    for k, r in enumerate(radii):
        lam = hessian_min_eig(f, _sphere(r, dim, n_angles), h, x, u)
        theta[k] = max(0.0, float(np.max(-lam)))
    upper = radii >= np.median(radii)
    pos = upper & (theta > 1e-9)
    fit = None
    if pos.sum() >= 2:
        fit = float(np.polyfit(np.log(radii[pos]), np.log(theta[pos]), 1)[0])
    return ThetaProfile(radii, theta, fit, dim)


# ---------------------------------------------------------------------------
# convexifying correction
# ---------------------------------------------------------------------------

def quintic_gamma(p: float):
    """``(gamma, dgamma, d2gamma)`` with ``gamma = a3 r^3 + a4 r^4 + a5 r^5`` on
    ``[0, 1]`` matching value, slope and curvature of ``r^p`` at 1, and
    ``gamma = r^p`` beyond."""
    A = np.array([[1, 1, 1], [3, 4, 5], [6, 12, 20]], dtype=float)
    a3, a4, a5 = np.linalg.solve(A, [1.0, p, p * (p - 1)])

    def g(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 1, a3 * r ** 3 + a4 * r ** 4 + a5 * r ** 5, np.abs(r) ** p)

    def dg(r):
        r = np.asarray(r, dtype=float)
        outer = p * np.maximum(np.abs(r), 1.0) ** (p - 1)
        return np.where(r <= 1, 3 * a3 * r ** 2 + 4 * a4 * r ** 3 + 5 * a5 * r ** 4, outer)

    def d2g(r):
        r = np.asarray(r, dtype=float)
        # the clamp only touches the branch np.where discards; it avoids 0 ** negative
        outer = p * (p - 1) * np.maximum(np.abs(r), 1.0) ** (p - 2)
        return np.where(r <= 1, 6 * a3 * r + 12 * a4 * r ** 2 + 20 * a5 * r ** 3, outer)

    g.coefficients = (a3, a4, a5)
    return g, dg, d2g


def _integrated_gamma(profile: ThetaProfile):
    """``gamma'' = theta`` with ``gamma(0) = gamma'(0) = 0``, exactly for the
    piecewise-linear interpolant of the profile (zero past the last radius)."""
    r = np.concatenate([[0.0], profile.radii, [profile.radii[-1] + 1.0, profile.radii[-1] + 2.0]])
    t = np.concatenate([[profile.theta[0]], profile.theta, [0.0, 0.0]])
    slopes = np.diff(t) / np.diff(r)
    pp = PPoly(np.vstack([slopes, t[:-1]]), r)
    d1 = pp.antiderivative(1)
    d0 = pp.antiderivative(2)
    return (lambda s: d0(np.asarray(s, float))), (lambda s: d1(np.asarray(s, float))), \
        (lambda s: np.maximum(pp(np.asarray(s, float)), 0.0))


@dataclass
class Correction:
    g: Lagrangian
    M: float
    R: float
    p: float
    gamma: Callable | None
    kappa: float
    min_lambda: float
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"M": self.M, "R": self.R, "p": self.p, "kappa": self.kappa,
                "min_lambda": self.min_lambda, "notes": self.notes}


def _radial(name, gam, dim):
    return Lagrangian(name=name, func=lambda x, u, xi: gam(np.linalg.norm(xi, axis=-1)),
                      xi_dim=dim, autonomous=True, state_free=True, smooth=True)


def convexifying_correction(f: Lagrangian, p: float, profile: ThetaProfile, R: float = 2.0,
                            fit_tol: float = 0.25, check_radius: float | None = None,
                            h: float = 1e-3, n_check: int = 601, tol: float = 1e-6,
                            margin: float = 0.1, x=None, u: float = 0.0) -> Correction:
    """Build ``g = f + M g1 (+ g2)`` with ``g1 = gamma(|xi|)`` convex enough at
    large radii to dominate the non-convexity of ``f`` and ``g2`` a convex
    function of linear growth fixing the remaining defect on ``B_R``."""
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    dim = f.xi_dim
    check_radius = check_radius or float(max(profile.radii.max(), R + 1))
    if float(np.max(profile.theta)) <= 1e-12:
        return Correction(f, 0.0, R, p, None, 0.0, _min_lambda(f, dim, check_radius, n_check, h, x, u),
                          ["theta vanishes on the sampled radii; f is returned unchanged"])
    if profile.growth_fit is not None and profile.growth_fit > p - 2 + fit_tol:
        raise ValueError(
            f"theta grows like r^{profile.growth_fit:.3g}, faster than r^(p-2) = r^{p - 2:g}"
        )
    R = max(float(R), 2.0)
    if p == 1:
        tail = profile.radii >= np.quantile(profile.radii, 0.75)
        if np.max(profile.theta[tail]) > 1e-9:
            raise ValueError("theta does not vanish at large radii; its integral looks infinite")
        gam, dgam, d2gam = _integrated_gamma(profile)
    else:
        gam, dgam, d2gam = quintic_gamma(p)

    big = profile.radii >= R
    if np.any(big):
        r = profile.radii[big]
        lam1 = d2gam(r) if dim == 1 else np.minimum(d2gam(r), dgam(r) / r)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(profile.theta[big] > 0, profile.theta[big] / lam1, 0.0)
        M = max(1.0, float(np.max(ratio)))
    else:
        M = 1.0
    g1 = _radial(f"gamma_p{p:g}", gam, dim)
    fM = composite(f, _scaled(g1, M), name=f"{f.name} + M*g1")
    inner = _ball_samples(R, dim, n_check)
    c = -float(np.min(hessian_min_eig(fM, inner, h, x, u)))
    kappa = 0.0
    g = fM
    notes = []
    if c > 0:
        kappa = c * 2 ** 1.5 * R * (1 + margin)
        g2 = _radial("g2", lambda s: kappa * np.sqrt(R ** 2 + s ** 2), dim)
        g = composite(fM, g2, name=f"{f.name} + M*g1 + g2")
        notes.append(f"g2 = {kappa:.6g} sqrt(R^2 + |xi|^2) added; defect on B_R was {c:.6g}")
    lam = _min_lambda(g, dim, check_radius, n_check, h, x, u)
    if lam < -tol:
        raise RuntimeError(f"corrected Lagrangian is not convex at the probes (min eigenvalue {lam:.3g})")
    return Correction(g, M, R, p, gam, kappa, lam, notes)


def _scaled(f: Lagrangian, c: float) -> Lagrangian:
    return Lagrangian(name=f"{c:g}*{f.name}", func=lambda x, u, xi: c * f.func(x, u, xi),
                      xi_dim=f.xi_dim, autonomous=f.autonomous, state_free=f.state_free, smooth=f.smooth)


def _ball_samples(R: float, dim: int, n: int) -> np.ndarray:
    t = np.linspace(-R, R, n if dim == 1 else max(int(math.sqrt(n)) * 2 + 1, 41))
    if dim == 1:
        return t[:, None]
    P = np.stack([m.ravel() for m in np.meshgrid(t, t, indexing="ij")], axis=-1)
    return P[np.linalg.norm(P, axis=1) <= R]


def _min_lambda(g, dim, radius, n, h, x, u) -> float:
    pts = _ball_samples(radius, dim, n)
    if dim > 1:
        t = np.linspace(-radius, radius, max(int(math.sqrt(n)) * 2 + 1, 41))
        pts = np.stack([m.ravel() for m in np.meshgrid(t, t, indexing="ij")], axis=-1)
    return float(np.min(hessian_min_eig(g, pts, h, x, u)))
