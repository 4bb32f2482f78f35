"""Problem files, result files and run manifests.

Problem files are JSON documents with ``format_version`` 1::

    {
      "format_version": 1,
      "name": "toy1",
      "spaces": {
        "X":  {"atoms": ["0", "1"]},
        "X0": {"grid": {"start": -2, "stop": 2, "num": 5}, "compact": false},
        "Y":  [ ...one space per agent... ],
        "U":  [ ...one space per agent... ]
      },
      "joint_law": [[P(x, x0) for x0 in X0] for x in X],
      "channels": [
        {"family": "binary-symmetric", "p": 0.1},
        {"reference": [...], "density": [[q(y, x) for x in X] for y in Y]}
      ],
      "cost": {"family": "quadratic", "team": 1.0, "effort": [0.1, 0.1]},
      "metadata": {"seed": 0}
    }

A space is either ``atoms`` (with optional ``coords``) or a ``grid``.  Unknown
keys anywhere are rejected.  Numbers are written with 17 significant digits,
so every double survives a write/read cycle.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .measures import FiniteSpace, Measure, product_space
from .model import CostSpec, ObservationChannel, TeamProblem, validate

FORMAT_VERSION = 1
MAX_TABLE_ENTRIES = 50_000_000

_TOP_KEYS = {"format_version", "name", "spaces", "joint_law", "channels", "cost", "metadata"}
_SPACE_KEYS = {"atoms", "coords", "grid", "compact"}
_GRID_KEYS = {"start", "stop", "num"}
_CHANNEL_KEYS = {
    "binary-symmetric": {"family", "p", "reference"},
    "additive-noise": {"family", "sigma", "reference"},
    "table": {"family", "reference", "density"},
}
_COST_KEYS = {
    "table": {"family", "values"},
    "quadratic": {"family", "team", "individual", "effort"},
    "mismatch": {"family", "state", "coupling"},
}
_METADATA_KEYS = {"description", "seed", "enum_cap", "brute_cap", "tolerance", "source"}


class ProblemFileError(ValueError):
    """Malformed or schema-violating problem file; ``location`` is a JSON path."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class ProblemValidationError(ValueError):
    """The file parsed but the problem it describes fails validation."""

    def __init__(self, report):
        super().__init__(str(report))
        self.report = report


def fmt(x: float) -> str:
    """17 significant digits, the CSV number format."""
    return f"{float(x):.17g}"


# -- reading --------------------------------------------------------------------


def _keys(obj: Any, allowed: set, where: str, required: Iterable[str] = ()) -> dict:
    if not isinstance(obj, dict):
        raise ProblemFileError(where, f"expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ProblemFileError(where, f"unknown field(s) {', '.join(map(repr, extra))}")
    for k in required:
        if k not in obj:
            raise ProblemFileError(where, f"missing field {k!r}")
    return obj


def _array(value: Any, where: str, shape: Optional[tuple] = None) -> np.ndarray:
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(where, f"not a numeric table ({exc})") from None
    if shape is not None:
        if a.size != math.prod(shape):
            raise ProblemFileError(where, f"expected {math.prod(shape)} entries (shape {shape}), got {a.size}")
        a = a.reshape(shape)
    return a


def _measure(space: FiniteSpace, weights: np.ndarray) -> Measure:
    """A probability measure when the weights allow it; otherwise a signed one,
    left for ``validate`` to report."""
    try:
        return Measure(space, weights)
    except ValueError:
        return Measure(space, weights, kind="signed")


def _space(obj: Any, label: str, where: str) -> FiniteSpace:
    _keys(obj, _SPACE_KEYS, where)
    compact = obj.get("compact")
    if compact is not None and not isinstance(compact, bool):
        raise ProblemFileError(f"{where}.compact", "expected true or false")
    if ("grid" in obj) == ("atoms" in obj):
        raise ProblemFileError(where, "give exactly one of 'atoms' or 'grid'")
    try:
        if "grid" in obj:
            if "coords" in obj:
                raise ProblemFileError(where, "'coords' is implied by 'grid'")
            g = _keys(obj["grid"], _GRID_KEYS, f"{where}.grid", _GRID_KEYS)
            num = g["num"]
            if not isinstance(num, int) or num < 1:
                raise ProblemFileError(f"{where}.grid.num", "expected a positive integer")
            return FiniteSpace.grid(label, float(g["start"]), float(g["stop"]), num, bool(compact))
        atoms = obj["atoms"]
        if not isinstance(atoms, list):
            raise ProblemFileError(f"{where}.atoms", "expected a list")
        coords = _array(obj["coords"], f"{where}.coords") if "coords" in obj else None
        default_compact = coords is None
        return FiniteSpace(label, tuple(str(a) for a in atoms), coords, default_compact if compact is None else compact)
    except ProblemFileError:
        raise
    except ValueError as exc:
        raise ProblemFileError(where, str(exc)) from None


def _channel(obj: Any, agent: int, X: FiniteSpace, Y: FiniteSpace, where: str) -> ObservationChannel:
    if not isinstance(obj, dict):
        raise ProblemFileError(where, "expected an object")
    family = obj.get("family", "table")
    if family not in _CHANNEL_KEYS:
        raise ProblemFileError(f"{where}.family", f"unknown channel family {family!r}")
    _keys(obj, _CHANNEL_KEYS[family], where, ("density",) if family == "table" else ())
    ref = None
    if "reference" in obj:
        ref = _measure(Y, _array(obj["reference"], f"{where}.reference", (len(Y),)))
    try:
        if family == "table":
            density = _array(obj["density"], f"{where}.density", (len(Y), len(X)))
            return ObservationChannel(agent, Measure.uniform(Y) if ref is None else ref, density)
        params = {k: v for k, v in obj.items() if k not in ("family", "reference")}
        if family == "binary-symmetric" and "p" not in params:
            raise ProblemFileError(where, "missing field 'p'")
        if family == "additive-noise" and "sigma" not in params:
            raise ProblemFileError(where, "missing field 'sigma'")
        return ObservationChannel.build(agent, family, params, X, Y, reference=ref)
    except ProblemFileError:
        raise
    except (ValueError, TypeError) as exc:
        raise ProblemFileError(where, str(exc)) from None


def _cost(obj: Any, X, X0, Ys, Us) -> CostSpec:
    where = "cost"
    if not isinstance(obj, dict):
        raise ProblemFileError(where, "expected an object")
    family = obj.get("family", "table")
    if family not in _COST_KEYS:
        raise ProblemFileError(f"{where}.family", f"unknown cost family {family!r}")
    _keys(obj, _COST_KEYS[family], where, ("values",) if family == "table" else ())
    shape = (len(X), len(X0), *map(len, Ys), *map(len, Us))
    if math.prod(shape) > MAX_TABLE_ENTRIES:
        raise ProblemFileError(where, f"cost table would have {math.prod(shape)} entries (cap {MAX_TABLE_ENTRIES})")
    params = {k: v for k, v in obj.items() if k != "family"}
    if family == "table":
        params["values"] = _array(obj["values"], f"{where}.values", shape)
    try:
        return CostSpec.build(family, params, X, X0, Ys, Us)
    except (ValueError, TypeError) as exc:
        raise ProblemFileError(where, str(exc)) from None


def problem_from_dict(doc: Any, check: bool = True) -> TeamProblem:
    """Build a TeamProblem from a decoded problem document.

    With ``check`` the result must pass ``validate``; a failure raises
    ProblemValidationError naming the offending channel and state.
    """
    _keys(doc, _TOP_KEYS, "", ("format_version", "spaces", "joint_law", "channels", "cost"))
    if doc["format_version"] != FORMAT_VERSION:
        raise ProblemFileError("format_version", f"unsupported version {doc['format_version']!r} (expected {FORMAT_VERSION})")
    sp = _keys(doc["spaces"], {"X", "X0", "Y", "U"}, "spaces", ("X", "X0", "Y", "U"))
    X = _space(sp["X"], "X", "spaces.X")
    X0 = _space(sp["X0"], "X0", "spaces.X0")
    for key in ("Y", "U"):
        if not isinstance(sp[key], list) or not sp[key]:
            raise ProblemFileError(f"spaces.{key}", "expected a nonempty list with one space per agent")
    if len(sp["Y"]) != len(sp["U"]):
        raise ProblemFileError("spaces", f"{len(sp['Y'])} observation spaces but {len(sp['U'])} action spaces")
    n = len(sp["U"])
    Ys = [_space(s, f"Y{i + 1}", f"spaces.Y[{i}]") for i, s in enumerate(sp["Y"])]
    Us = [_space(s, f"U{i + 1}", f"spaces.U[{i}]") for i, s in enumerate(sp["U"])]
    joint = _array(doc["joint_law"], "joint_law", (len(X), len(X0)))
    chans = doc["channels"]
    if not isinstance(chans, list):
        raise ProblemFileError("channels", "expected a list with one channel block per agent")
    if len(chans) < n:
        raise ProblemFileError("channels", f"missing channel block for agent {len(chans) + 1} (of {n})")
    if len(chans) > n:
        raise ProblemFileError("channels", f"{len(chans)} channel blocks for {n} agents")
    channels = [_channel(c, i, X, Ys[i], f"channels[{i}]") for i, c in enumerate(chans)]
    cost = _cost(doc["cost"], X, X0, Ys, Us)
    meta = doc.get("metadata", {})
    _keys(meta, _METADATA_KEYS, "metadata")
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise ProblemFileError("name", "expected a string")
    law = _measure(product_space([X, X0]), joint.ravel())
    problem = TeamProblem(X, X0, Ys, Us, law, channels, cost, name=name, metadata=dict(meta))
    if check:
        report = validate(problem)
        if not report.ok:
            raise ProblemValidationError(report)
    return problem


def read_json(path) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"line {exc.lineno} column {exc.colno}", f"malformed JSON: {exc.msg}") from None


def parse_problem(path, check: bool = True) -> TeamProblem:
    """Read, schema-check and (with ``check``) validate a problem file."""
    return problem_from_dict(read_json(path), check=check)


# -- writing --------------------------------------------------------------------


def _space_dict(space: FiniteSpace) -> dict:
    out: dict = {"atoms": list(space.atoms)}
    if space.coords is not None:
        c = space.coords
        out["coords"] = c[:, 0].tolist() if c.shape[1] == 1 else c.tolist()
    out["compact"] = bool(space.compact)
    return out


def problem_to_dict(problem: TeamProblem) -> dict:
    """Inverse of ``problem_from_dict`` on the problem content."""
    chans = []
    for ch in problem.channels:
        ref = ch.reference.weights.tolist()
        if ch.family:
            block = dict(ch.family)
            block["reference"] = ref
        else:
            block = {"family": "table", "reference": ref, "density": ch.density.tolist()}
        chans.append(block)
    cost = problem.cost
    if cost.family == "table":
        cost_block = {"family": "table", "values": cost.table.tolist()}
    else:
        cost_block = {"family": cost.family, **cost.params}
    doc = {
        "format_version": FORMAT_VERSION,
        "name": problem.name,
        "spaces": {
            "X": _space_dict(problem.X),
            "X0": _space_dict(problem.X0),
            "Y": [_space_dict(s) for s in problem.Y],
            "U": [_space_dict(s) for s in problem.U],
        },
        "joint_law": problem.joint.tolist(),
        "channels": chans,
        "cost": cost_block,
    }
    if problem.metadata:
        doc["metadata"] = dict(problem.metadata)
    return doc


def dumps(doc: Any) -> str:
    # json writes floats with repr(), which is the shortest exact round-trip form
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_problem(problem: TeamProblem, path) -> None:
    Path(path).write_text(dumps(problem_to_dict(problem)), encoding="utf-8")


def same_problem(a: TeamProblem, b: TeamProblem) -> bool:
    """Content equality: spaces, law, channels and cost tables (names ignored)."""
    if (a.X, a.X0, a.Y, a.U) != (b.X, b.X0, b.Y, b.U):
        return False
    if any(s.compact != t.compact for s, t in zip((a.X, a.X0, *a.Y, *a.U), (b.X, b.X0, *b.Y, *b.U))):
        return False
    if not np.array_equal(a.joint, b.joint) or not np.array_equal(a.cost.table, b.cost.table):
        return False
    return all(
        np.array_equal(c.density, d.density) and np.array_equal(c.reference.weights, d.reference.weights)
        for c, d in zip(a.channels, b.channels)
    )


# -- CSV ----------------------------------------------------------------------------


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV with LF line endings; floats get 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def write_mtable(cp, path) -> None:
    """Rows are X0 labels, columns grid indices; the header carries grid descriptors."""
    header = ["x0"] + cp.grid.descriptors()
    write_csv(path, header, ([label, *map(float, row)] for label, row in zip(cp.row_labels(), cp.m_table)))


@dataclass
class MTable:
    labels: list[str]
    descriptors: list[str]
    values: np.ndarray


def read_mtable(path) -> MTable:
    header, rows = read_csv(path)
    if not header or header[0] != "x0":
        raise ValueError(f"{path}: not an M-table (first column must be 'x0')")
    values = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), len(header) - 1)
    return MTable([r[0] for r in rows], header[1:], values)


# -- manifests ----------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to rerun a CLI command and get the same CSV bytes."""

    command: list[str]
    input_path: Optional[str]
    input_sha256: Optional[str]
    options: dict
    outputs: dict  # name -> {"path": ..., "sha256": ...}
    timing: dict
    version: str

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "version": self.version,
            "command": self.command,
            "input": {"path": self.input_path, "sha256": self.input_sha256},
            "options": self.options,
            "outputs": self.outputs,
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunManifest":
        _keys(doc, {"format_version", "version", "command", "input", "options", "outputs", "timing"}, "manifest",
              ("format_version", "command", "input", "options", "outputs"))
        if doc["format_version"] != FORMAT_VERSION:
            raise ProblemFileError("manifest.format_version", f"unsupported version {doc['format_version']!r}")
        inp = _keys(doc["input"], {"path", "sha256"}, "manifest.input")
        return cls(
            list(doc["command"]), inp.get("path"), inp.get("sha256"), dict(doc["options"]),
            dict(doc["outputs"]), dict(doc.get("timing", {})), str(doc.get("version", "")),
        )

    def write(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls.from_dict(read_json(path))
