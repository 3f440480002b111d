"""Command-line driver: every experiment as a subcommand with JSON/CSV reports.

Exit codes: 0 success, 1 an inequality check found a violation, 2 a
precondition or domain error, 3 non-convergence, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np
import tomli

from .errors import ConvergenceError, DomainError, PreconditionError
from .functional import T_caps, evaluate_T
from .harmonics import spectral_check
from .orbit_distance import dist_to_orbit
from .perturbation import (DEFAULT_S, build_perturbed_sets, expansion_check, harmonic_family,
                           measure_deficit, rotation_family)
from .polarization import converge_to_caps
from .rng import child_seed, generator
from .set_model import SCHEMA, Grid, SphericalSet, random_level_set, random_set, rasterize_cap
from .sphere_core import Cap, Point, classify_triple, north_pole, tilt_rotation

EXIT_OK, EXIT_VIOLATION, EXIT_PRECONDITION, EXIT_NONCONVERGED, EXIT_USAGE = 0, 1, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _float_list(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _add_common(p, triple=True):
    p.add_argument("--config", help="TOML file with defaults; flags override it")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n-phi", type=int, default=None, help="azimuth cells (d=2) or arc cells (d=1)")
    p.add_argument("--n-t", type=int, default=None, help="height rings (d=2)")
    if triple:
        p.add_argument("--e1", type=float, default=0.5)
        p.add_argument("--e2", type=float, default=0.5)
        p.add_argument("--a", type=float, default=0.0)


def build_parser():
    parser = _Parser(prog="sphere-symm", description="Symmetrization experiments on S^1 and S^2.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("triple-info", help="classify (e1, e2, [a, 1]) and report heights, radii, slopes")
    _add_common(p)

    p = sub.add_parser("spectrum", help="eigenvalues of the boundary form against the spectral bound")
    _add_common(p)
    p.add_argument("--n-max", type=int, default=32)

    p = sub.add_parser("verify-inequality", help="T(E1, E2) <= T(caps) + eps_grid on random pairs")
    _add_common(p, triple=False)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--csv", help="per-draw CSV output")

    p = sub.add_parser("polarize", help="polarization flow from random sets toward caps")
    _add_common(p)
    p.add_argument("--schedule", choices=["random", "deterministic"], default="random")
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--target", type=float, default=0.05)
    p.add_argument("--record-t", action="store_true", help="evaluate T at every step")
    p.add_argument("--csv", help="trajectory CSV output")

    p = sub.add_parser("distance", help="orbit distance of a pair of sets")
    _add_common(p)
    p.add_argument("--set1", help="packed set file")
    p.add_argument("--set2", help="packed set file")
    p.add_argument("--tilt", type=float, default=0.0, help="generate caps tilted by this angle when no files are given")

    p = sub.add_parser("expand", help="second-order expansion check on a perturbed cap pair")
    _add_common(p)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--s", type=float, default=0.02)

    p = sub.add_parser("deficit-sweep", help="deficit law T(E*) - T(E(s)) over amplitudes")
    _add_common(p)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--family", choices=["harmonic", "rotation"], default="harmonic")
    p.add_argument("--s-values", type=_float_list, default=list(DEFAULT_S))
    p.add_argument("--csv", help="per-amplitude CSV output")
    return parser


def _resolve(parser, argv):
    """Parse twice: once to find --config, then with TOML values as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    with open(args.config, "rb") as fh:
        cfg = tomli.load(fh)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    flat = {}
    for key, value in cfg.items():
        if isinstance(value, dict):  # tables named after a subcommand
            if key.replace("_", "-") == args.command:
                flat.update(value)
            continue
        flat[key] = value
    defaults = {}
    for key, value in flat.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise PreconditionError(f"config key {key!r} is not an option of {args.command}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("SPHERE_SYMM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _grid(args):
    d = args.d
    if d == 1:
        return Grid.circle(args.n_phi or 4096)
    if d == 2:
        return Grid.sphere(args.n_phi or 256, args.n_t or 256)
    raise PreconditionError(f"set experiments need d in {{1, 2}}, got {d}")


def _config(args):
    cfg = {k: v for k, v in vars(args).items() if k not in ("out", "threads", "config")}
    return json.loads(json.dumps(cfg))


def _emit(args, payload):
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _report(args, kind, body):
    return {"schema": SCHEMA, "kind": kind, "config": _config(args), **body}


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_triple_info(args):
    tr = classify_triple(args.e1, args.e2, args.a, args.d)
    _emit(args, _report(args, "triple", {"triple": tr.to_dict()}))
    return EXIT_OK


def cmd_spectrum(args):
    tr = classify_triple(args.e1, args.e2, args.a, args.d)
    rep = spectral_check(tr, args.n_max)
    _emit(args, _report(args, "spectrum", rep.to_dict()))
    return EXIT_OK


def _draw_pair(g, seed):
    """A random pair of sets with random measures; kinds alternate to cover cap-like and scattered sets."""
    rng = generator(seed)
    e1, e2 = (float(v) for v in rng.uniform(0.05, 0.95, 2))
    a = float(rng.uniform(-0.9, 0.9))
    kind = int(rng.integers(3))
    sets = []
    for j, e in enumerate((e1, e2)):
        s = child_seed(seed, j)
        if kind == 0:
            sets.append(random_set(e, s, g))
        else:
            sets.append(random_level_set(e, s, g, n_bumps=1 if kind == 1 else 4))
    return sets, a, ("scattered", "cap", "lobed")[kind]


def cmd_verify_inequality(args):
    g = _grid(args)
    workers = _threads(args)
    rows = []
    violations = 0
    worst = -math.inf
    for i in range(args.seeds):
        (E1, E2), a, kind = _draw_pair(g, child_seed(args.seed, i))
        tr = classify_triple(E1.measure, E2.measure, a, g.d, with_slopes=False)
        T = evaluate_T(E1, E2, a, workers=workers)
        Tc = T_caps(tr)
        excess = T - Tc
        worst = max(worst, excess)
        ok = excess <= g.eps_grid
        violations += not ok
        rows.append((i, kind, E1.measure, E2.measure, a, T, Tc, excess, int(ok)))
    if args.csv:
        _write_csv(args.csv, ["draw", "kind", "e1", "e2", "a", "T", "T_caps", "excess", "ok"], rows)
    _emit(args, _report(args, "verify-inequality", {
        "draws": args.seeds, "eps_grid": g.eps_grid, "violations": violations, "max_excess": worst,
    }))
    return EXIT_OK if violations == 0 else EXIT_VIOLATION


def cmd_polarize(args):
    g = _grid(args)
    E1 = random_set(args.e1, child_seed(args.seed, 1), g)
    E2 = random_set(args.e2, child_seed(args.seed, 2), g)
    traj = converge_to_caps(E1, E2, schedule=args.schedule, seed=child_seed(args.seed, 3),
                            max_steps=args.max_steps, target=args.target, a=args.a, record_T=args.record_t)
    if args.csv:
        with open(args.csv, "w") as fh:
            traj.to_csv(fh)
    last = traj.steps[-1]
    _emit(args, _report(args, "polarize", {
        "converged": traj.converged, "steps": last.step,
        "final": {"dist1": last.dist1, "dist2": last.dist2},
    }))
    return EXIT_OK if traj.converged else EXIT_NONCONVERGED


def cmd_distance(args):
    tr = classify_triple(args.e1, args.e2, args.a, args.d, with_slopes=False)
    if args.set1 or args.set2:
        if not (args.set1 and args.set2):
            raise PreconditionError("give both --set1 and --set2")
        E1, E2 = SphericalSet.load(args.set1), SphericalSet.load(args.set2)
        if E1.d != tr.d:
            raise PreconditionError("set files do not match --d")
    else:
        g = _grid(args)
        angles = np.zeros(g.d)
        angles[0] = args.tilt
        p = Point.normalized(tilt_rotation(angles) @ north_pole(g.d))
        E1 = rasterize_cap(Cap(p, tr.h1), g)
        E2 = rasterize_cap(Cap(p, tr.h2), g)
    res = dist_to_orbit(E1, E2, tr)
    _emit(args, _report(args, "distance", {"distance": res.to_dict(), "triple": tr.to_dict()}))
    return EXIT_OK


def cmd_expand(args):
    tr = classify_triple(args.e1, args.e2, args.a, args.d)
    g = _grid(args)
    fam = harmonic_family(tr, g, args.degree)
    E1, E2 = build_perturbed_sets(fam, args.s)
    out = expansion_check(E1, E2, tr)
    _emit(args, _report(args, "expand", {"triple": tr.to_dict(), "expansion": out}))
    return EXIT_OK


def cmd_deficit_sweep(args):
    tr = classify_triple(args.e1, args.e2, args.a, args.d)
    g = _grid(args)
    s_values = tuple(args.s_values)
    if args.family == "rotation":
        fam = rotation_family(tr, g, s_values)
    else:
        fam = harmonic_family(tr, g, args.degree, s_values=s_values)
    rep = measure_deficit(fam, workers=_threads(args))
    if args.csv:
        _write_csv(args.csv, ["s", "T", "deficit"], zip(rep.s_values, rep.T_values, rep.deficits))
    body = rep.to_dict()
    body.pop("schema", None)
    body.pop("kind", None)
    _emit(args, _report(args, "deficit", body))
    return EXIT_OK


COMMANDS = {
    "triple-info": cmd_triple_info,
    "spectrum": cmd_spectrum,
    "verify-inequality": cmd_verify_inequality,
    "polarize": cmd_polarize,
    "distance": cmd_distance,
    "expand": cmd_expand,
    "deficit-sweep": cmd_deficit_sweep,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = _resolve(parser, argv)
        return COMMANDS[args.command](args)
    except UsageError:
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"sphere-symm: no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (PreconditionError, DomainError, OSError, tomli.TOMLDecodeError) as exc:
        print(f"sphere-symm: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
