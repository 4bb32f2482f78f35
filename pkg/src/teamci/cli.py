"""Command line interface: ``teamci {validate,solve,reduce,diagnose,compare,replay}``.

Exit codes: 0 success, 1 usage, 2 validation, 3 cap refusal, 4 IO.
Every command that writes files also writes ``<prefix>.manifest.json``; the
``replay`` command reruns it and checks the CSV digests.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .diagnostics import (
    DEFAULT_RADII,
    NonConvergentSequence,
    check_wstar_convergence,
    escaping_mass_demo,
    geometric_weights,
    grid_outside_mass,
    ic_class_check,
    action_ball_masks,
    interpolation_path,
    lsc_probe,
    probe_sequences,
    random_action,
    sublevel_tightness,
    weighted_cost,
    _summarize,
)
from .fileio import (
    ProblemFileError,
    ProblemValidationError,
    RunManifest,
    dumps,
    parse_problem,
    sha256_file,
    write_csv,
    write_mtable,
)
from .measures import default_bank
from .model import DEFAULT_ENUM_CAP, CapExceeded, TeamProblem, validate
from .reduction import ZeroMassAtom, grid_from_option, reduce
from .solvers import DEFAULT_BRUTE_CAP, SolveResult, brute_force, person_by_person, solve_common_information

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_CAP, EXIT_IO = 0, 1, 2, 3, 4
DIAGNOSTICS = ("wstar", "escaping-mass", "tightness", "ic", "sublevel", "lsc")


class UsageError(Exception):
    pass


class ReplayMismatch(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _radii(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad radius list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty radius list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="teamci", description="Static team problems with common information.")
    p.add_argument("--version", action="version", version=f"teamci {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def outputs(sp):
        sp.add_argument("--out", default=".", help="output directory (default: current directory)")
        sp.add_argument("--prefix", default=None, help="output file stem (default: derived from the command)")

    v = sub.add_parser("validate", help="check a problem file")
    v.add_argument("file")

    s = sub.add_parser("solve", help="solve a problem")
    s.add_argument("file")
    s.add_argument("--method", choices=("brute", "ci", "pbp"), required=True)
    s.add_argument("--grid", default="deterministic", help="deterministic | randomized:R | affine:a,b,...")
    s.add_argument("--seed", type=int, default=0, help="recorded in the manifest; the solvers are deterministic")
    s.add_argument("--cap", type=int, default=None, help="enumeration cap")
    s.add_argument("--max-iter", type=int, default=100, help="pbp: maximum number of cycles")
    s.add_argument("--tol", type=float, default=1e-12, help="pbp: stop when a cycle improves by less")
    outputs(s)

    r = sub.add_parser("reduce", help="write the coordinator's M table")
    r.add_argument("file")
    r.add_argument("--grid", default="deterministic", help="deterministic | randomized:R | affine:a,b,...")
    r.add_argument("--cap", type=int, default=DEFAULT_ENUM_CAP, help="grid enumeration cap")
    outputs(r)

    d = sub.add_parser("diagnose", help="numerical checks; usage: diagnose KIND [FILE]")
    d.add_argument("first", help=f"diagnostic kind ({', '.join(DIAGNOSTICS)}) or problem file")
    d.add_argument("second", nargs="?", help="the other of KIND and FILE; escaping-mass takes no file")
    d.add_argument("--grid", default="deterministic", help="prescription grid: deterministic | randomized:R | affine:a,b,...")
    d.add_argument("--cap", type=int, default=DEFAULT_ENUM_CAP, help="grid enumeration cap")
    d.add_argument("--x0", default=None, help="common atom label (default: first positive-mass atom)")
    d.add_argument("--r", type=float, default=None, help="sub-level threshold (default: 2 x row minimum)")
    d.add_argument("--level", type=float, default=None, help="IC level M (default: the sub-level threshold)")
    d.add_argument("--radii", type=_radii, default=list(DEFAULT_RADII), help="ball radii, comma separated (default 1,2,4,8)")
    d.add_argument("--eps", type=float, default=1e-9, help="outside-mass tolerance for tightness")
    d.add_argument("--tol", type=float, default=1e-9, help="w* tail tolerance (wstar) or liminf-gap tolerance (lsc)")
    d.add_argument("--n-max", type=int, default=30, help="escaping-mass grid length")
    d.add_argument("--steps", type=int, default=64, help="sequence length for wstar and lsc")
    d.add_argument("--sequences", type=int, default=10, help="lsc: number of probe sequences, half interpolation, half lattice")
    d.add_argument("--agent", type=int, default=1, help="wstar: agent number, starting at 1")
    d.add_argument("--seed", type=int, default=0, help="seed for the random probe sequences")
    outputs(d)

    c = sub.add_parser("compare", help="brute force against the common-information solver")
    c.add_argument("file")
    c.add_argument("--grid", default="deterministic", help="grid for the common-information solver")
    c.add_argument("--cap", type=int, default=None, help="enumeration cap for both solvers")
    outputs(c)

    rp = sub.add_parser("replay", help="rerun a manifest and compare CSV digests")
    rp.add_argument("manifest")
    rp.add_argument("--out", default=None, help="directory for the rerun (default: the manifest's)")
    return p


# canonical option order per command; the manifest records every one of them
_OPTIONS = {
    "solve": ("method", "grid", "seed", "cap", "max_iter", "tol"),
    "reduce": ("grid", "cap"),
    "compare": ("grid", "cap"),
    "diagnose": ("grid", "cap", "x0", "r", "level", "radii", "eps", "tol", "n_max", "steps", "sequences", "agent", "seed"),
}


def _canonical_argv(command: str, args, file: Optional[str], kind: Optional[str]) -> list[str]:
    argv = [command]
    if command == "diagnose":
        argv.append(kind)
    if file is not None:
        argv.append(str(Path(file).resolve()))
    for name in _OPTIONS[command]:
        val = getattr(args, name)
        if val is None:
            continue
        if isinstance(val, list):
            val = ",".join(repr(float(v)) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        argv += ["--" + name.replace("_", "-"), str(val)]
    return argv


def _options(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("first", "second", "out", "prefix", "file")}


def _print_summary(summary: dict) -> None:
    for k, v in summary.items():
        if isinstance(v, (dict, list)):
            v = json.dumps(v)
        elif isinstance(v, float):
            v = f"{v:.17g}"
        print(f"{k}: {v}")


class _Run:
    """Collects output files of one command and writes the manifest."""

    def __init__(self, args, command: str, stem: str, file: Optional[str], kind: Optional[str] = None):
        self.dir = Path(args.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.stem = args.prefix or stem
        self.argv = _canonical_argv(command, args, file, kind)
        self.file = file
        self.options = _options(args)
        self.outputs: dict = {}
        self.start = time.perf_counter()

    def path(self, suffix: str) -> Path:
        return self.dir / f"{self.stem}{suffix}"

    def csv(self, name: str, header, rows) -> None:
        path = self.path(f".{name}.csv" if name else ".csv")
        write_csv(path, header, rows)
        self.outputs[name or "result"] = {"path": path.name}

    def finish(self, summary: dict) -> None:
        elapsed = time.perf_counter() - self.start
        for entry in self.outputs.values():
            entry["sha256"] = sha256_file(self.dir / entry["path"])
        summary = dict(summary, wall_time=elapsed)
        self.path(".summary.json").write_text(dumps(summary), encoding="utf-8")
        manifest = RunManifest(
            self.argv,
            str(Path(self.file).resolve()) if self.file else None,
            sha256_file(self.file) if self.file else None,
            self.options,
            self.outputs,
            {"wall_time": elapsed},
            __version__,
        )
        manifest.write(self.path(".manifest.json"))
        _print_summary(summary)
        print(f"manifest: {self.path('.manifest.json')}")


# -- commands --------------------------------------------------------------------


def cmd_validate(args) -> int:
    problem = parse_problem(args.file, check=False)
    report = validate(problem)
    print(report)
    return EXIT_OK if report.ok else EXIT_VALIDATION


def _policy_rows(problem: TeamProblem, result: SolveResult):
    for i, (t, k) in enumerate(zip(result.profile.tensors(problem), result.profile.kernels)):
        for a, x0 in enumerate(problem.X0.atoms):
            for b, y in enumerate(problem.Y[i].atoms):
                for c, u in enumerate(problem.U[i].atoms):
                    if t[a, b, c] != 0.0:
                        yield [i + 1, x0, y, u, float(t[a, b, c])]


def cmd_solve(args) -> int:
    problem = parse_problem(args.file)
    run = _Run(args, "solve", f"solve-{args.method}", args.file)
    if args.method == "brute":
        res = brute_force(problem, cap=args.cap or DEFAULT_BRUTE_CAP)
    elif args.method == "ci":
        res = solve_common_information(problem, args.grid, cap=args.cap or DEFAULT_ENUM_CAP)
    else:
        res = person_by_person(problem, max_iter=args.max_iter, tol=args.tol, cap=args.cap or DEFAULT_ENUM_CAP)
    grid = args.grid if args.method == "ci" else ""
    run.csv("", ["problem", "method", "grid", "value", "deterministic"],
            [[problem.name, res.method, grid, float(res.value), str(res.profile.deterministic).lower()]])
    run.csv("policy", ["agent", "x0", "y", "u", "probability"], _policy_rows(problem, res))
    if res.method == "pbp":
        run.csv("trace", ["step", "cycle", "agent", "value"],
                ([t["step"], t["cycle"], "" if t["agent"] == "" else t["agent"] + 1, float(t["value"])] for t in res.trace))
    if res.method == "ci":
        cp = res.centralized
        rows = []
        for r, k in enumerate(cp.rows):
            g = res.prescription.assignment[k]
            rows.append([problem.X0.atoms[k], g, cp.grid.descriptor(g), float(cp.m_table[r, g])])
        run.csv("prescription", ["x0", "grid_index", "descriptor", "M"], rows)
    run.finish({"problem": problem.name, "method": res.method, "grid": grid, "value": res.value, "counts": res.counts})
    return EXIT_OK


def cmd_reduce(args) -> int:
    problem = parse_problem(args.file)
    run = _Run(args, "reduce", "reduce", args.file)
    grid = grid_from_option(problem, args.grid, args.cap)
    cp = reduce(problem, grid)
    path = run.path(".csv")
    write_mtable(cp, path)
    run.outputs["result"] = {"path": path.name}
    run.finish({"problem": problem.name, "grid": args.grid, "grid_size": len(grid), "rows": cp.row_labels()})
    return EXIT_OK


def cmd_compare(args) -> int:
    problem = parse_problem(args.file)
    run = _Run(args, "compare", "compare", args.file)
    b = brute_force(problem, cap=args.cap or DEFAULT_BRUTE_CAP)
    c = solve_common_information(problem, args.grid, cap=args.cap or DEFAULT_ENUM_CAP)
    diff = c.value - b.value
    run.csv("", ["problem", "grid", "brute", "ci", "difference"], [[problem.name, args.grid, b.value, c.value, diff]])
    run.finish({"problem": problem.name, "brute": b.value, "ci": c.value, "difference": diff})
    return EXIT_OK


def _x0_index(problem: TeamProblem, label: Optional[str]) -> int:
    if label is None:
        return problem.active_common_atoms[0]
    try:
        return problem.X0.index(label)
    except (KeyError, ValueError, IndexError):
        raise UsageError(f"unknown common atom {label!r}; atoms are {', '.join(problem.X0.atoms)}") from None


def _sublevel_setup(problem: TeamProblem, args):
    k = _x0_index(problem, args.x0)
    cp = reduce(problem, grid_from_option(problem, args.grid, args.cap))
    if k not in cp.rows:
        raise ZeroMassAtom(f"common atom {problem.X0.atoms[k]!r} has zero probability")
    row = cp.m_table[cp.rows.index(k)]
    r = args.r if args.r is not None else 2.0 * float(row.min())
    return k, cp, r


def _diag_wstar(problem, args, run) -> dict:
    i = args.agent - 1
    if not 0 <= i < problem.n_agents:
        raise UsageError(f"--agent must be in 1..{problem.n_agents}")
    rng = np.random.default_rng(args.seed)
    limit, other = random_action(problem, rng), random_action(problem, rng)
    seq = interpolation_path(limit, other, geometric_weights(args.steps))
    bank = default_bank(problem.Y[i], problem.U[i])
    rep = check_wstar_convergence([a.kernels[i] for a in seq], limit.kernels[i], bank, problem.channels[i].reference, args.tol)
    run.csv("", ["function", "n", "pairing", "limit", "deviation"],
            ([name, n + 1, float(rep.values[n, f]), float(rep.limits[f]), float(abs(rep.values[n, f] - rep.limits[f]))]
             for f, name in enumerate(rep.names) for n in range(rep.values.shape[0])))
    return {"agent": args.agent, "converged": rep.converged, "scope": rep.scope, "n0": rep.n0,
            "max_tail_deviation": float(rep.tail_deviation.max())}


def _diag_escaping(problem, args, run) -> dict:
    rep = escaping_mass_demo(args.n_max)
    run.csv("", ["n", "row_mass", *rep.names, "underflow"],
            ([int(n), float(rep.row_mass[j].min()),
              *map(float, rep.pairings[j]), ";".join(nm for nm, u in zip(rep.names, rep.underflow[j]) if u)]
             for j, n in enumerate(rep.steps)))
    return {"n_max": args.n_max, "limit_kind": rep.limit_kind, "limit_row_mass": rep.limit_row_mass.tolist(),
            "limit_is_probability": rep.limit_is_probability,
            "last": dict(zip(rep.names, map(float, rep.pairings[-1])))}


def _diag_tightness(problem, args, run) -> dict:
    grid = grid_from_option(problem, args.grid, args.cap)
    members = np.arange(len(grid))
    outside = grid_outside_mass(grid, members, args.radii)
    rep = _summarize(outside, args.radii, args.eps)
    run.csv("", ["grid_index", *(f"outside_R{r:g}" for r in args.radii)],
            ([int(g), *map(float, outside[j])] for j, g in enumerate(members)))
    return {"family": "all grid prescriptions", "members": len(members), "tight": rep.tight,
            "minimal_radius": rep.minimal_radius, "sup_outside": rep.sup_outside.tolist()}


def _diag_ic(problem, args, run) -> dict:
    k, cp, r = _sublevel_setup(problem, args)
    level = args.level if args.level is not None else r
    phi = weighted_cost(problem, k)
    ic = ic_class_check(phi, np.ones(phi.shape[0], dtype=bool), level, action_ball_masks([], problem.U, args.radii))
    run.csv("", ["radius", "min_outside", "meets_level"],
            ([float(R), m, str(m >= level).lower()] for R, m in zip(args.radii, ic.minima)))
    return {"x0": problem.X0.atoms[k], "factorization": "Y,U,X", "level": level, "in_class": bool(ic),
            "radius": None if ic.index is None else args.radii[ic.index]}


def _diag_sublevel(problem, args, run) -> dict:
    k, cp, r = _sublevel_setup(problem, args)
    rep = sublevel_tightness(problem, cp, k, r, args.radii, args.eps, ic_level=args.level)
    row = cp.m_table[cp.rows.index(k)]
    outside = rep.tightness.outside if rep.tightness is not None else np.zeros((0, len(args.radii)))
    run.csv("", ["grid_index", "M", *(f"outside_R{x:g}" for x in args.radii)],
            ([int(g), float(row[g]), *map(float, outside[j])] for j, g in enumerate(rep.members)))
    return {
        "x0": rep.x0, "r": r, "members": len(rep.members), "verdict": rep.verdict,
        "minimal_radius": None if rep.tightness is None else rep.tightness.minimal_radius,
        "compact_actions": rep.compact_actions, "ic_in_class": bool(rep.ic),
        "ic_radius": None if rep.ic.index is None else args.radii[rep.ic.index],
        "channel_floor": rep.channel_floor, "hypotheses_hold": rep.hypotheses_hold,
    }


def _diag_lsc(problem, args, run) -> dict:
    k = _x0_index(problem, args.x0)
    rng = np.random.default_rng(args.seed)
    n_int = (args.sequences + 1) // 2
    seqs = probe_sequences(problem, rng, n_int, args.sequences - n_int, args.steps)
    rep = lsc_probe(problem, k, [(s, lim) for _, s, lim in seqs], tol=args.tol)
    rows = []
    for j, ((kind, _, _), res) in enumerate(zip(seqs, rep.results)):
        for n, m in enumerate(res.m_values):
            rows.append([j + 1, kind, n + 1, float(m), float(res.m_limit), float(m - res.m_limit)])
    run.csv("", ["sequence", "kind", "n", "M", "M_limit", "difference"], rows)
    return {
        "x0": rep.x0, "passed": rep.passed,
        "min_gap": min(r.gap for r in rep.results),
        "max_final_deviation": max(r.final_deviation for r in rep.results),
        "continuity": all(r.continuity_pass for r in rep.results),
    }


_DIAG = {
    "wstar": _diag_wstar,
    "escaping-mass": _diag_escaping,
    "tightness": _diag_tightness,
    "ic": _diag_ic,
    "sublevel": _diag_sublevel,
    "lsc": _diag_lsc,
}


def cmd_diagnose(args) -> int:
    a, b = args.first, args.second
    if a in DIAGNOSTICS:
        kind, file = a, b
    elif b in DIAGNOSTICS:
        kind, file = b, a
    else:
        raise UsageError(f"diagnose needs one of {', '.join(DIAGNOSTICS)}")
    if file is None and kind != "escaping-mass":
        raise UsageError(f"diagnose {kind} needs a problem file")
    problem = parse_problem(file) if file is not None else None
    run = _Run(args, "diagnose", f"diagnose-{kind}", file, kind)
    summary = {"diagnostic": kind, **_DIAG[kind](problem, args, run)}
    run.finish(summary)
    return EXIT_OK


def cmd_replay(args) -> int:
    manifest = RunManifest.read(args.manifest)
    src = Path(args.manifest).resolve().parent
    out = Path(args.out) if args.out else src
    if manifest.input_path is not None and sha256_file(manifest.input_path) != manifest.input_sha256:
        raise ReplayMismatch(f"input {manifest.input_path} changed since the recorded run")
    stem = Path(args.manifest).name[: -len(".manifest.json")]
    code = main([*manifest.command, "--out", str(out), "--prefix", stem])
    if code != EXIT_OK:
        return code
    mismatched = []
    for name, entry in manifest.outputs.items():
        got = sha256_file(out / entry["path"])
        status = "identical" if got == entry["sha256"] else "DIFFERENT"
        print(f"replay {name}: {status}")
        if got != entry["sha256"]:
            mismatched.append(name)
    if mismatched:
        raise ReplayMismatch(f"outputs differ from the manifest: {', '.join(mismatched)}")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "reduce": cmd_reduce,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
    "replay": cmd_replay,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ProblemFileError, ProblemValidationError, ZeroMassAtom, NonConvergentSequence, ReplayMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CapExceeded as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CAP
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
