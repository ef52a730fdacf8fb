"""Built-in Lagrangians with known envelopes.

Every entry is a :class:`GalleryEntry`; :func:`builtin` looks one up by
name.  Entries marked ``extra`` are small helpers used by tests and the CLI
(convex controls, one-dimensional sections) rather than worked examples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Lagrangian

__all__ = ["GalleryEntry", "builtin", "names", "TAGS"]

TAGS = frozenset({
    "condition_K_holds", "condition_K_fails", "superlinear", "bounded_detachment",
    "H1_candidate", "gap_example", "convex", "non_autonomous", "extra",
})


@dataclass(frozen=True)
class GalleryEntry:
    name: str
    lagrangian: Lagrangian
    analytic_envelope: Callable | None
    tags: frozenset = field(default_factory=frozenset)
    description: str = ""
    omega: tuple[float, float] = (0.0, 1.0)

    def envelope_at(self, x, u, xi) -> np.ndarray:
        if self.analytic_envelope is None:
            raise ValueError(f"{self.name} has no analytic envelope")
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 0:
            xi = xi[None]
        return np.asarray(self.analytic_envelope(np.atleast_1d(np.asarray(x, float)),
                                                 np.asarray(u, float), xi), dtype=float)


def _norm(xi):
    return np.linalg.norm(xi, axis=-1)


def _x0(x):
    return np.asarray(x)[..., 0]


def _rec(left, right):
    return lambda x, u: (left, right)


# each factory returns (lagrangian kwargs, envelope, tags, description)

def _exp_decay(dim: int = 1):
    lag = dict(func=lambda x, u, xi: np.exp(-_norm(xi)), xi_dim=dim, autonomous=True,
               state_free=True, smooth=False, recession=_rec(0.0, 0.0))
    env = lambda x, u, xi: np.zeros(np.shape(xi)[:-1])
    return lag, env, {"condition_K_fails"}, "exp(-|xi|); envelope 0, restricted envelope exp(-K)"


def _power_state(dim: int = 1):
    def func(x, u, xi):
        return (_norm(xi) + 1.0) ** np.abs(u)

    def env(x, u, xi):
        fx = func(x, u, xi)
        return np.where(np.abs(u) >= 1.0, fx, np.ones_like(fx))

    def rec(x, u):
        a = abs(float(u))
        s = 0.0 if a < 1 else (1.0 if a == 1 else math.inf)
        return (s, s)

    lag = dict(func=func, xi_dim=dim, autonomous=True, recession=rec)
    return lag, env, set(), "(|xi|+1)^|u|; envelope f for |u|>=1 and 1 for |u|<1"


def _halfline():
    func = lambda x, u, xi: np.where(xi[..., 0] < 1.0, xi[..., 0] ** 2, 0.0)
    env = lambda x, u, xi: np.where(xi[..., 0] <= 0.0, xi[..., 0] ** 2, 0.0)
    lag = dict(func=func, autonomous=True, state_free=True, recession=_rec(math.inf, 0.0))
    return lag, env, {"condition_K_holds"}, "xi^2 for xi<1, 0 otherwise"


def _spike_cloud(n_max: int = 40, offset: float = 1.0):
    def func(x, u, xi):
        a, b = xi[..., 0], xi[..., 1]
        n = np.rint(a)
        origin = (np.abs(a) <= 1e-9) & (np.abs(b) <= 1e-9)
        spike = (np.abs(b - 1.0) <= 1e-9) & (np.abs(a - n) <= 1e-9) & (n >= 1) & (n <= n_max)
        out = np.full(np.broadcast(a, b).shape, np.inf)
        out = np.where(spike, n ** 2 + offset, out)
        return np.where(origin, 0.0, out)

    lag = dict(func=func, xi_dim=2, kind="tabulated", autonomous=True, state_free=True,
               params={"n_max": n_max, "offset": offset})
    return lag, None, {"superlinear", "condition_K_fails"}, \
        "0 at the origin, n^2+1 at (n,1) for 1<=n<=n_max, +inf elsewhere"


def _sin_product():
    func = lambda x, u, xi: (1 + np.sin(xi[..., 0])) * (1 + np.sin(xi[..., 1]))
    env = lambda x, u, xi: np.zeros(np.shape(xi)[:-1])
    lag = dict(func=func, xi_dim=2, autonomous=True, state_free=True, smooth=True)
    return lag, env, {"bounded_detachment", "condition_K_holds"}, "(1+sin xi1)(1+sin xi2); envelope 0"


def _shifted_wells():
    func = lambda x, u, xi: (np.abs(xi[..., 0]) - 1) ** 2 + xi[..., 1] ** 2
    env = lambda x, u, xi: np.maximum(np.abs(xi[..., 0]) - 1, 0.0) ** 2 + xi[..., 1] ** 2
    lag = dict(func=func, xi_dim=2, autonomous=True, state_free=True)
    return lag, env, {"superlinear", "condition_K_holds"}, "(|xi1|-1)^2 + xi2^2; detaches on {xi1=0}"


def _double_well(coupling: float = 0.0, dim: int = 1):
    def func(x, u, xi):
        return (_norm(xi) ** 2 - 1) ** 2 + coupling * np.asarray(u) ** 2

    def env(x, u, xi):
        return np.maximum(_norm(xi) ** 2 - 1, 0.0) ** 2 + coupling * np.asarray(u) ** 2

    lag = dict(func=func, xi_dim=dim, autonomous=True, state_free=coupling == 0.0, smooth=True,
               params={"coupling": coupling}, recession=_rec(math.inf, math.inf))
    tags = {"superlinear", "condition_K_holds", "bounded_detachment", "H1_candidate"}
    return lag, env, tags, "(|xi|^2-1)^2 + coupling*u^2; wells at |xi|=1"


def _double_well_state():
    lag, env, tags, _ = _double_well(coupling=1.0)
    return lag, env, tags, "(xi^2-1)^2 + u^2"


def _weighted_double_well():
    func = lambda x, u, xi: (1 + _x0(x)) * (xi[..., 0] ** 2 - 1) ** 2
    env = lambda x, u, xi: (1 + _x0(x)) * np.maximum(xi[..., 0] ** 2 - 1, 0.0) ** 2
    lag = dict(func=func, smooth=True, state_free=True, recession=_rec(math.inf, math.inf))
    return lag, env, {"non_autonomous", "H1_candidate", "superlinear"}, "(1+x)(xi^2-1)^2 on (0,1)"


def _switch_double_well():
    func = lambda x, u, xi: (xi[..., 0] ** 2 - 1) ** 2 + _x0(x) * (xi[..., 0] > 0)
    lag = dict(func=func, state_free=True, recession=_rec(math.inf, math.inf))
    return lag, None, {"non_autonomous", "extra"}, "(xi^2-1)^2 + x*[xi>0] on (0,1)"


def _mania():
    func = lambda x, u, xi: (np.asarray(u) ** 3 - _x0(x)) ** 2 * xi[..., 0] ** 6
    lag = dict(func=func, smooth=True)
    return lag, func, {"gap_example", "non_autonomous", "convex"}, \
        "(u^3-x)^2 xi^6 on (0,1) with u(0)=0, u(1)=1"


def _quadratic_state(dim: int = 1):
    func = lambda x, u, xi: _norm(xi) ** 2 + np.asarray(u) ** 2
    lag = dict(func=func, xi_dim=dim, autonomous=True, smooth=True, recession=_rec(math.inf, math.inf))
    return lag, func, {"convex", "superlinear", "extra"}, "|xi|^2 + u^2 (convex control)"


def _quadratic(dim: int = 1):
    func = lambda x, u, xi: _norm(xi) ** 2
    lag = dict(func=func, xi_dim=dim, autonomous=True, state_free=True, smooth=True,
               recession=_rec(math.inf, math.inf))
    return lag, func, {"convex", "superlinear", "extra"}, "|xi|^2"


def _abs(dim: int = 1):
    func = lambda x, u, xi: _norm(xi)
    lag = dict(func=func, xi_dim=dim, autonomous=True, state_free=True, recession=_rec(1.0, 1.0))
    return lag, func, {"convex", "extra"}, "|xi|"


def _zero(dim: int = 1):
    func = lambda x, u, xi: np.zeros(np.broadcast(np.asarray(u), xi[..., 0]).shape)
    lag = dict(func=func, xi_dim=dim, autonomous=True, state_free=True, smooth=True,
               recession=_rec(0.0, 0.0))
    return lag, func, {"convex", "extra"}, "0"


def _radial_quartic(dim: int = 2):
    func = lambda x, u, xi: _norm(xi) ** 4
    lag = dict(func=func, xi_dim=dim, autonomous=True, state_free=True, smooth=True,
               recession=_rec(math.inf, math.inf))
    return lag, func, {"convex", "superlinear", "extra"}, "|xi|^4"


def _cos_quadratic(dim: int = 2):
    func = lambda x, u, xi: np.cos(xi[..., 0]) + _norm(xi) ** 2
    lag = dict(func=func, xi_dim=dim, autonomous=True, state_free=True, smooth=True,
               recession=_rec(math.inf, math.inf))
    return lag, func, {"convex", "superlinear", "extra"}, "cos(xi1) + |xi|^2"


def _sin_linear():
    func = lambda x, u, xi: np.sin(xi[..., 0]) + 2 * np.abs(xi[..., 0])
    lag = dict(func=func, autonomous=True, state_free=True, recession=_rec(2.0, 2.0))
    return lag, None, {"extra"}, "sin(xi) + 2|xi|"


def _one_plus_cos():
    func = lambda x, u, xi: 1 + np.cos(xi[..., 0])
    env = lambda x, u, xi: np.zeros(np.shape(xi)[:-1])
    lag = dict(func=func, autonomous=True, state_free=True, smooth=True, recession=_rec(0.0, 0.0))
    return lag, env, {"bounded_detachment", "extra"}, "1 + cos(xi)"


_FACTORIES: dict[str, Callable] = {
    "exp_decay": _exp_decay,
    "power_state": _power_state,
    "halfline": _halfline,
    "spike_cloud": _spike_cloud,
    "sin_product": _sin_product,
    "shifted_wells": _shifted_wells,
    "double_well": _double_well,
    "double_well_state": _double_well_state,
    "weighted_double_well": _weighted_double_well,
    "switch_double_well": _switch_double_well,
    "mania": _mania,
    "quadratic_state": _quadratic_state,
    "quadratic": _quadratic,
    "abs": _abs,
    "zero": _zero,
    "radial_quartic": _radial_quartic,
    "cos_quadratic": _cos_quadratic,
    "sin_linear": _sin_linear,
    "one_plus_cos": _one_plus_cos,
}


def names(include_extra: bool = True) -> list[str]:
    if include_extra:
        return sorted(_FACTORIES)
    return sorted(n for n in _FACTORIES if "extra" not in builtin(n).tags)


def builtin(name: str, **params) -> GalleryEntry:
    """Look up a gallery entry; keyword arguments go to its factory."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise KeyError(f"unknown gallery entry {name!r}; known entries: {', '.join(sorted(_FACTORIES))}") from None
    lag_kw, env, tags, desc = factory(**params)
    lag_kw.setdefault("params", dict(params))
    lag = Lagrangian(name=name, envelope_known=env is not None, **lag_kw)
    return GalleryEntry(name, lag, env, frozenset(tags), desc)
