"""Command-line front end.

Every run writes ``result.json`` (plus command-specific files), the
replayable ``config.json`` and a ``metadata.json`` holding the only
non-deterministic data (timestamps, versions).
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write, certificates_json, dumps, grid_csv, read_json, read_slice, write_json
from .convexify import XiPolicy, envelope, restricted_bipolar
from .core import BoxDomain, PLField, graded_interval, interpolate, make_grid, rect_mesh, sample_slice, uniform_interval
from .detachment import KSearch, check_condition_K, detachment_set
from .energy import energy, lavrentiev_scan, relaxed_energy
from .gallery import builtin, names
from .laminate import export_sequence, relaxation_sequence, strong_recovery_sequence
from .nonauto import DEFAULT_EPS_LADDER, check_H1, check_H2, h1_table_csv, verify_lemma32

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE, EXIT_VERDICT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would print free text and exit 2; diagnostics must be JSON
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    command: str
    argv: list
    gallery: str | None = None
    params: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    seed: int = 0
    out: str = "."

    def to_json(self) -> dict:
        return asdict(self)


def _diag(level: str, message: str, **extra):
    sys.stderr.write(json.dumps({"level": level, "message": message, **extra}, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _params(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            num = float(v)
            out[k] = int(num) if num.is_integer() and "." not in v and "e" not in v.lower() else num
        except ValueError:
            out[k] = v
    return out


def _entry(args):
    if not args.gallery:
        raise UsageError("a Lagrangian is required: pass --gallery NAME")
    try:
        return builtin(args.gallery, **_params(args.param))
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    except TypeError as exc:
        raise UsageError(f"bad parameters for {args.gallery}: {exc}") from None


def _grid(args, dim: int):
    lo, hi = _floats(args.lo), _floats(args.hi)
    lo = lo * dim if len(lo) == 1 else lo
    hi = hi * dim if len(hi) == 1 else hi
    counts = [int(c) for c in _floats(args.counts)]
    counts = counts * dim if len(counts) == 1 else counts
    if not (len(lo) == len(hi) == len(counts) == dim):
        raise UsageError(f"grid needs {dim} entries for --lo/--hi/--counts")
    return make_grid(BoxDomain(lo, hi), counts)


def _x(args, dim: int = 1):
    return None if args.x is None else np.array(_floats(args.x))


def _slice(args):
    if args.slice:
        return read_slice(args.slice), None
    entry = _entry(args)
    grid = _grid(args, entry.lagrangian.xi_dim)
    s = sample_slice(entry.lagrangian, grid, _x(args), float(args.u_value), with_recession=args.recession)
    return s, entry


_FIELDS = {
    "zero": lambda p: np.zeros(len(p)),
    "x": lambda p: p[:, 0],
    "x2": lambda p: p[:, 0] ** 2,
    "cbrt": lambda p: np.cbrt(p[:, 0]),
}


def _mesh(args):
    if args.dim == 1:
        return uniform_interval(0.0, 1.0, args.cells)
    return rect_mesh([0.0] * args.dim, [1.0] * args.dim, [args.cells + 1] * args.dim)


def _field(args) -> PLField:
    if args.field not in _FIELDS:
        raise UsageError(f"unknown field {args.field!r}; choose from {', '.join(_FIELDS)}")
    return interpolate(_mesh(args), _FIELDS[args.field])


def _policy(args) -> XiPolicy:
    return XiPolicy(spacing=args.spacing, extent=args.extent, use_recession=args.recession)


# ---------------------------------------------------------------------------
# commands; each returns (result dict, verdict ok, extra files)
# ---------------------------------------------------------------------------

def cmd_envelope(args):
    s, _ = _slice(args)
    env = restricted_bipolar(s, args.K) if args.K is not None else envelope(s)
    files = {"envelope.csv": grid_csv(s.grid, env.env_values),
             "certificates.json": dumps(certificates_json(env.certificates))}
    res = {"method": env.method, "degenerate": env.degenerate, "n_facets": int(len(env.facets)),
           "tol": env.tol, "notes": list(env.notes), "min": float(np.min(env.env_values))}
    return res, True, files


def cmd_detach(args):
    s, _ = _slice(args)
    env = envelope(s)
    rep = detachment_set(s, env, args.tol)
    return rep.to_json(s.grid), not rep.unbounded, {}


def cmd_condk(args):
    entry = _entry(args)
    I = tuple(_floats(args.I))
    x_probes = tuple((v,) for v in _floats(args.x_probes))
    search = KSearch(route=args.route, K_max=args.K_max, spacing=args.spacing, tol=args.tol,
                     n_u=args.n_u, x_probes=x_probes)
    v = check_condition_K(entry.lagrangian, I, args.K, search)
    return v.to_json(), v.holds == "yes", {}


def cmd_relax(args):
    entry = _entry(args)
    u = _field(args)
    raw = energy(entry.lagrangian, u)
    rel = relaxed_energy(entry.lagrangian, u, _policy(args))
    ok = rel.total <= raw.total + args.tol * max(1.0, abs(raw.total))
    return {"raw": raw.to_json(), "relaxed": rel.to_json()}, ok, {}


def cmd_sequence(args):
    entry = _entry(args)
    u = _field(args)
    schedule = [int(n) for n in _floats(args.n)]
    fields, rep = relaxation_sequence(entry.lagrangian, u, schedule, _policy(args),
                                      cutoff_delta=args.delta, energy_tol=args.energy_tol)
    export_sequence(Path(args.out) / "sequence", fields, rep)
    return rep.to_json(), rep.weak_star_ok and rep.energy_converged, {}


def cmd_recover(args):
    entry = _entry(args)
    u = _field(args)
    fields, rep = strong_recovery_sequence(entry.lagrangian, u, args.p, _policy(args),
                                           levels=args.levels, energy_tol=args.energy_tol)
    export_sequence(Path(args.out) / "sequence", fields, rep)
    return rep.to_json(), bool(rep.strong_ok) and rep.energy_converged, {}


def cmd_gap(args):
    entry = _entry(args)
    meshes = [graded_interval(0.0, 1.0, int(n), args.grade) for n in _floats(args.cells)]
    phi = _FIELDS.get(args.phi)
    if phi is None:
        raise UsageError(f"unknown boundary field {args.phi!r}; choose from {', '.join(_FIELDS)}")
    rep = lavrentiev_scan(entry.lagrangian, lambda t: float(phi(np.array([[t]]))[0]), meshes,
                          _floats(args.L), starts=args.starts, seed=args.seed, max_iter=args.max_iter)
    return rep.to_json(), rep.gap_lower_bound > 0, {"curves.csv": rep.curves_csv()}


def _nonauto_setup(args):
    entry = _entry(args)
    mesh = uniform_interval(0.0, 1.0, args.cells)
    grid = _grid(args, entry.lagrangian.xi_dim)
    return entry, mesh, grid, _floats(args.u_probes)


def cmd_h1check(args):
    entry, mesh, grid, us = _nonauto_setup(args)
    rep = check_H1(entry.lagrangian, _floats(args.L), _floats(args.eps), mesh, us, grid,
                   threshold=args.threshold, use_envelope=args.use_envelope)
    table = h1_table_csv(rep)
    rep = {k: v for k, v in rep.items() if not k.startswith("_")}
    return rep, not rep["violations"], {"probes.csv": table}


def cmd_h2check(args):
    entry = _entry(args)
    xs = np.array(_floats(args.x_probes))[:, None]
    rep = check_H2(entry.lagrangian, args.p, args.theta, args.a, args.u0, args.N, xs)
    return rep, rep.get("holds", True), {}


def cmd_lemma32(args):
    entry, mesh, grid, us = _nonauto_setup(args)
    rep = verify_lemma32(entry.lagrangian, _floats(args.eps), mesh, us, grid, args.tol)
    return rep, rep["passed"], {}


def cmd_gallery(args):
    lines = []
    for n in names(include_extra=not args.main_only):
        e = builtin(n)
        lines.append(f"{n}\t{','.join(sorted(e.tags))}")
    sys.stdout.write("\n".join(lines) + "\n")
    return None, True, {}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_lagrangian(p):
    p.add_argument("--gallery", help="gallery entry name")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="gallery parameter (repeatable)")


def _add_grid(p, lo="-2", hi="2", counts="81"):
    p.add_argument("--lo", default=lo, help="grid lower corner, scalar or comma list")
    p.add_argument("--hi", default=hi, help="grid upper corner, scalar or comma list")
    p.add_argument("--counts", default=counts, help="nodes per axis, scalar or comma list")


def _add_field(p):
    p.add_argument("--u", dest="field", default="zero", help=f"field: {', '.join(_FIELDS)}")
    p.add_argument("--cells", type=int, default=1, help="cells per axis of the unit-cube mesh")
    p.add_argument("--dim", type=int, default=1, choices=(1, 2))
    p.add_argument("--spacing", type=float, default=0.05, help="xi-grid spacing")
    p.add_argument("--extent", type=float, default=2.0, help="xi-grid half width")
    p.add_argument("--recession", action="store_true", help="close 1-d envelopes with recession rays")
    p.add_argument("--energy-tol", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="relaxkit", description="Relaxation toolkit for scalar integral functionals")
    ap.add_argument("--version", action="version", version=f"relaxkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--out", default=f"relaxkit_{name}", help="output directory")
        p.add_argument("--assert", dest="assert_", action="store_true", help="exit 3 when the verdict fails")
        p.add_argument("--seed", type=int, default=0)
        return p

    for name, fn, text in (("envelope", cmd_envelope, "convex envelope of a slice"),
                           ("detach", cmd_detach, "detachment set of a slice")):
        p = command(name, fn, text)
        _add_lagrangian(p)
        _add_grid(p)
        p.add_argument("--slice", help="slice CSV instead of a gallery entry")
        p.add_argument("--x", help="x point, comma list")
        p.add_argument("--u-value", type=float, default=0.0, help="state value u")
        p.add_argument("--recession", action="store_true")
        p.add_argument("--tol", type=float, default=1e-9)
        if name == "envelope":
            p.add_argument("--K", type=float, help="restrict to the closed ball of radius K first")

    p = command("condk", cmd_condk, "condition (K) verdict")
    _add_lagrangian(p)
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--I", default="-1,1", help="state interval lo,hi")
    p.add_argument("--route", default="components", choices=("components", "boundary", "superlinear", "all"))
    p.add_argument("--K-max", type=float, default=50.0)
    p.add_argument("--spacing", type=float, default=0.05)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--n-u", type=int, default=3)
    p.add_argument("--x-probes", default="0.5")

    for name, fn, text in (("relax", cmd_relax, "raw and relaxed energy of a field"),
                           ("sequence", cmd_sequence, "laminate sequence for a field"),
                           ("recover", cmd_recover, "strong recovery ladder")):
        p = command(name, fn, text)
        _add_lagrangian(p)
        _add_field(p)
        p.add_argument("--tol", type=float, default=1e-9)
        if name == "sequence":
            p.add_argument("--n", default="1,2,4,8", help="laminate indices")
            p.add_argument("--delta", type=float, help="2-d cutoff width")
        if name == "recover":
            p.add_argument("--p", type=float, default=2.0)
            p.add_argument("--levels", type=int, default=4)

    p = command("gap", cmd_gap, "Lavrentiev gap scan on (0,1)")
    _add_lagrangian(p)
    p.add_argument("--cells", default="10,20,40")
    p.add_argument("--grade", type=float, default=3.0)
    p.add_argument("--L", default="2,5,10")
    p.add_argument("--phi", default="cbrt", help=f"boundary data: {', '.join(_FIELDS)}")
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--max-iter", type=int, default=4000)

    for name, fn, text in (("h1check", cmd_h1check, "(H1) numeric evidence"),
                           ("lemma32", cmd_lemma32, "moving ess-inf commutation check")):
        p = command(name, fn, text)
        _add_lagrangian(p)
        _add_grid(p)
        p.add_argument("--cells", type=int, default=20, help="x-mesh cells on (0,1)")
        p.add_argument("--u-probes", default="0,0.5,1")
        p.add_argument("--eps", default=",".join(str(e) for e in DEFAULT_EPS_LADDER))
        if name == "h1check":
            p.add_argument("--L", default="1,10", help="L1,L2")
            p.add_argument("--threshold", type=float, default=math.inf)
            p.add_argument("--use-envelope", action="store_true")
        else:
            p.add_argument("--tol", type=float)

    p = command("h2check", cmd_h2check, "(H2) growth check")
    _add_lagrangian(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--theta", type=float, default=math.inf)
    p.add_argument("--a", type=float, default=1.0, help="constant bound a(x)")
    p.add_argument("--u0", type=float, default=1.0)
    p.add_argument("--N", type=int)
    p.add_argument("--x-probes", default="0.25,0.5,0.75")

    p = command("replay", None, "rerun a saved config.json")
    p.add_argument("config")

    g = sub.add_parser("gallery", help="gallery utilities")
    gsub = g.add_subparsers(dest="gallery_command", required=True)
    gl = gsub.add_parser("list", help="one line per entry with tags")
    gl.add_argument("--main-only", action="store_true", help="hide the auxiliary entries")
    gl.set_defaults(func=cmd_gallery, out=None, assert_=False, seed=0)
    return ap


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _diag("error", str(exc), kind="usage")
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    if args.command == "replay":
        try:
            cfg = read_json(args.config)
        except (OSError, ValueError) as exc:
            _diag("error", f"cannot read config: {exc}")
            return EXIT_USAGE
        replay_argv = list(cfg["argv"])
        if "--out" in replay_argv:
            replay_argv[replay_argv.index("--out") + 1] = args.out
        else:
            replay_argv += ["--out", args.out]
        return run(replay_argv)

    started = time.time()
    try:
        result, ok, files = args.func(args)
    except UsageError as exc:
        _diag("error", str(exc), kind="usage")
        return EXIT_USAGE
    except (ValueError, ArithmeticError, RuntimeError, KeyError, OSError) as exc:
        _diag("error", str(exc), kind=type(exc).__name__)
        return EXIT_COMPUTE

    if args.out is not None and result is not None:
        out = Path(args.out)
        write_json(out / "result.json", result)
        for name, text in files.items():
            atomic_write(out / name, text)
        cfg = RunConfig(args.command, argv, getattr(args, "gallery", None), _params(getattr(args, "param", None)),
                        [a for a in (getattr(args, "slice", None),) if a], args.seed, str(out))
        write_json(out / "config.json", cfg.to_json())
        write_json(out / "metadata.json", {"started": started, "finished": time.time(),
                                           "version": __version__, "python": platform.python_version(),
                                           "numpy": np.__version__})
        summary = {"command": args.command, "ok": bool(ok), "out": str(out)}
        for key in ("holds", "passed", "verdict", "gap_lower_bound", "C_L_estimate", "energy_f"):
            if key in result:
                summary[key] = result[key]
        sys.stdout.write(dumps(summary, indent=None).rstrip("\n") + "\n")

    if args.assert_ and not ok:
        _diag("error", "verdict failed", command=args.command)
        return EXIT_VERDICT
    return EXIT_OK


def main() -> None:
    sys.exit(run())
