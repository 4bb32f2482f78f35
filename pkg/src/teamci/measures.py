"""Finite-support measures, stochastic kernels and the kernel/test-function pairing.

Everything here lives on :class:`FiniteSpace` grids.  A kernel's rows are
measures on the target space; "almost everywhere" statements are enforced at
the atoms that carry positive reference mass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NORMALIZATION_TOL = 1e-9

PROBABILITY = "probability"
SUB_PROBABILITY = "sub-probability"
SIGNED = "signed"
KINDS = (PROBABILITY, SUB_PROBABILITY, SIGNED)


class SpaceMismatch(ValueError):
    """Two objects that must live on the same grid do not."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """An ordered set of labelled atoms, optionally carrying coordinates.

    ``compact`` marks grids standing in for a compact space; a grid without the
    flag is read as a truncation of a non-compact one.
    """

    label: str
    atoms: tuple[str, ...]
    coords: Optional[np.ndarray] = None
    compact: bool = False
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple(str(a) for a in self.atoms)
        if not atoms:
            raise ValueError(f"space {self.label!r} has no atoms")
        if len(set(atoms)) != len(atoms):
            raise ValueError(f"space {self.label!r} has duplicate atom labels")
        object.__setattr__(self, "atoms", atoms)
        if self.coords is not None:
            c = np.array(self.coords, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.ndim != 2 or c.shape[0] != len(atoms):
                raise ValueError(
                    f"space {self.label!r}: need one coordinate vector per atom, "
                    f"got shape {c.shape}"
                )
            if not np.all(np.isfinite(c)):
                raise ValueError(f"space {self.label!r}: non-finite coordinates")
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)
        object.__setattr__(self, "_index", {a: k for k, a in enumerate(atoms)})

    @classmethod
    def grid(cls, label: str, start: float, stop: float, num: int, compact: bool = False):
        """Evenly spaced 1-d grid; atom labels are the printed coordinates."""
        pts = np.linspace(start, stop, num)
        return cls(label, tuple(f"{p:g}" for p in pts), pts, compact)

    @classmethod
    def from_labels(cls, label: str, atoms: Sequence, compact: bool = True):
        return cls(label, tuple(str(a) for a in atoms), None, compact)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def dim(self) -> int:
        return 0 if self.coords is None else self.coords.shape[1]

    def index(self, atom) -> int:
        if isinstance(atom, (int, np.integer)):
            if not 0 <= atom < len(self.atoms):
                raise IndexError(f"atom index {atom} out of range for {self.label!r}")
            return int(atom)
        try:
            return self._index[str(atom)]
        except KeyError:
            raise KeyError(f"no atom {atom!r} in space {self.label!r}") from None

    def __eq__(self, other):
        if not isinstance(other, FiniteSpace):
            return NotImplemented
        if self is other:
            return True
        if self.atoms != other.atoms or self.compact != other.compact:
            return False
        if (self.coords is None) != (other.coords is None):
            return False
        return self.coords is None or np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash((self.label, self.atoms))


def product_space(spaces: Sequence[FiniteSpace], label: Optional[str] = None) -> FiniteSpace:
    """Cartesian product in row-major order (last factor varies fastest)."""
    if not spaces:
        raise ValueError("product of zero spaces")
    if len(spaces) == 1:
        return spaces[0]
    atoms = tuple("(" + ",".join(t) + ")" for t in itertools.product(*(s.atoms for s in spaces)))
    coords = None
    if all(s.coords is not None for s in spaces):
        coords = np.array(
            [np.concatenate(t) for t in itertools.product(*(s.coords for s in spaces))]
        )
    name = label or "x".join(s.label for s in spaces)
    return FiniteSpace(name, atoms, coords, all(s.compact for s in spaces))


def _check_kind(weights: np.ndarray, kind: str, what: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown measure kind {kind!r}")
    if not np.all(np.isfinite(weights)):
        raise ValueError(f"{what}: non-finite weights")
    if kind == SIGNED:
        return
    if np.any(weights < 0):
        raise ValueError(f"{what}: negative weight in a {kind} measure")
    total = float(weights.sum())
    if kind == PROBABILITY and abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"{what}: probability weights sum to {total!r}")
    if kind == SUB_PROBABILITY and total > 1.0 + NORMALIZATION_TOL:
        raise ValueError(f"{what}: sub-probability weights sum to {total!r}")


@dataclass(frozen=True, eq=False)
class Measure:
    space: FiniteSpace
    weights: np.ndarray
    kind: str = PROBABILITY

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.shape != (len(self.space),):
            raise ValueError(
                f"measure on {self.space.label!r} needs {len(self.space)} weights, got {w.shape}"
            )
        _check_kind(w, self.kind, f"measure on {self.space.label!r}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def point_mass(cls, space: FiniteSpace, atom) -> "Measure":
        w = np.zeros(len(space))
        w[space.index(atom)] = 1.0
        return cls(space, w)

    @classmethod
    def uniform(cls, space: FiniteSpace) -> "Measure":
        return cls(space, np.full(len(space), 1.0 / len(space)))

    @classmethod
    def zero(cls, space: FiniteSpace) -> "Measure":
        return cls(space, np.zeros(len(space)), SUB_PROBABILITY)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __getitem__(self, atom) -> float:
        return float(self.weights[self.space.index(atom)])

    def __eq__(self, other):
        if not isinstance(other, Measure):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.weights, other.weights)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Kernel:
    """A stochastic (or sub-stochastic, or signed) kernel between finite spaces.

    ``rows[s]`` is the measure attached to source atom ``s``.  When a
    ``reference`` measure on the source is given, rows at atoms of zero
    reference mass are exempt from the kind check.
    """

    source: FiniteSpace
    target: FiniteSpace
    rows: np.ndarray
    kind: str = PROBABILITY
    reference: Optional[Measure] = None

    def __post_init__(self):
        r = _frozen(self.rows)
        if r.shape != (len(self.source), len(self.target)):
            raise ValueError(
                f"kernel {self.source.label!r}->{self.target.label!r} needs rows of shape "
                f"{(len(self.source), len(self.target))}, got {r.shape}"
            )
        if self.reference is not None and self.reference.space != self.source:
            raise SpaceMismatch("kernel reference measure is not on the source space")
        active = (
            range(len(self.source))
            if self.reference is None
            else np.flatnonzero(self.reference.weights > 0)
        )
        for s in active:
            _check_kind(r[s], self.kind, f"kernel row at {self.source.atoms[s]!r}")
        object.__setattr__(self, "rows", r)

    @classmethod
    def deterministic(cls, source: FiniteSpace, target: FiniteSpace, actions: Sequence[int], **kw):
        rows = np.zeros((len(source), len(target)))
        rows[np.arange(len(source)), np.asarray(actions, dtype=int)] = 1.0
        return cls(source, target, rows, **kw)

    def row(self, atom) -> Measure:
        s = self.source.index(atom)
        kind = self.kind
        if kind == PROBABILITY and abs(self.rows[s].sum() - 1.0) > NORMALIZATION_TOL:
            # an exempt (zero reference mass) row
            kind = SIGNED
        return Measure(self.target, self.rows[s], kind)

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.rows == 0.0) | (self.rows == 1.0)) and np.all(self.rows.sum(1) == 1.0))

    def __eq__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        return (
            self.source == other.source
            and self.target == other.target
            and np.array_equal(self.rows, other.rows)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CaratheodoryTestFunction:
    """A table ``values[y, u]``: one bounded function of the action per base atom."""

    base: FiniteSpace
    action: FiniteSpace
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (len(self.base), len(self.action)):
            raise ValueError(
                f"test function needs a {(len(self.base), len(self.action))} table, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("test function has non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, base: FiniteSpace, action: FiniteSpace, fn, name: str = ""):
        """Tabulate ``fn(y_coord, u_coord)`` (1-d coordinates) on the grids."""
        if base.coords is None or action.coords is None:
            raise ValueError("from_callable needs coordinates on both spaces")
        y = base.coords[:, 0][:, None]
        u = action.coords[:, 0][None, :]
        return cls(base, action, np.broadcast_to(fn(y, u), (len(base), len(action))), name)

    def __add__(self, other):
        _same(self.base, other.base, "test-function base")
        _same(self.action, other.action, "test-function action")
        return CaratheodoryTestFunction(self.base, self.action, self.values + other.values)

    def __mul__(self, a: float):
        return CaratheodoryTestFunction(self.base, self.action, a * self.values, self.name)

    __rmul__ = __mul__


def _same(a: FiniteSpace, b: FiniteSpace, what: str) -> None:
    if a != b:
        raise SpaceMismatch(f"{what}: {a.label!r} vs {b.label!r}")


def tv_distance(a: Measure, b: Measure) -> float:
    """Total variation distance with the factor-2 convention: sum of |a - b|."""
    _same(a.space, b.space, "tv_distance")
    return float(np.abs(a.weights - b.weights).sum())


def product_measure(parts: Sequence[Measure]) -> Measure:
    if not parts:
        raise ValueError("product_measure needs at least one factor")
    for p in parts:
        if p.kind == SIGNED:
            raise ValueError("product_measure accepts probability or sub-probability factors")
    w = parts[0].weights
    for p in parts[1:]:
        w = np.multiply.outer(w, p.weights).ravel()
    kind = PROBABILITY if all(p.kind == PROBABILITY for p in parts) else SUB_PROBABILITY
    return Measure(product_space([p.space for p in parts]), w, kind)


def pairing(gamma: Kernel, f: CaratheodoryTestFunction, mu: Measure) -> float:
    """<<gamma, f>> = sum_y mu(y) sum_u f(y)(u) gamma(y)(u)."""
    _same(gamma.source, f.base, "pairing: kernel source vs test-function base")
    _same(f.base, mu.space, "pairing: test-function base vs reference measure")
    _same(gamma.target, f.action, "pairing: kernel target vs test-function action")
    if mu.kind != PROBABILITY:
        raise ValueError("pairing needs a probability reference measure")
    return float(mu.weights @ np.einsum("yu,yu->y", f.values, gamma.rows))


def f_norm1(f: CaratheodoryTestFunction, mu: Measure) -> float:
    _same(f.base, mu.space, "f_norm1")
    return float(mu.weights @ np.abs(f.values).max(axis=1))


def kernel_inf_norm(gamma: Kernel, reference: Optional[Measure] = None) -> float:
    """ess sup of the row TV norms, taken over atoms of positive reference mass."""
    ref = reference if reference is not None else gamma.reference
    if ref is None:
        raise ValueError("kernel_inf_norm needs a reference measure on the source")
    _same(gamma.source, ref.space, "kernel_inf_norm")
    active = ref.weights > 0
    if not np.any(active):
        return 0.0
    return float(np.abs(gamma.rows[active]).sum(axis=1).max())


def wstar_distance(
    g1: Kernel, g2: Kernel, bank: Sequence[CaratheodoryTestFunction], mu: Measure
) -> float:
    """Bounded weighted series sum_k 2^-k |d_k| / (1 + |d_k|) over the bank (k from 1)."""
    if not bank:
        raise ValueError("wstar_distance needs a nonempty test-function bank")
    total = 0.0
    for k, f in enumerate(bank, start=1):
        d = abs(pairing(g1, f, mu) - pairing(g2, f, mu))
        total += 2.0 ** (-k) * d / (1.0 + d)
    return total


def default_bank(base: FiniteSpace, action: FiniteSpace) -> list[CaratheodoryTestFunction]:
    """Products of a base-atom indicator with a hat bump on the action grid.

    On 1-d coordinate grids the hat has half-width equal to the smallest atom
    spacing, so it is continuous and equals the indicator at the atoms; without
    coordinates plain indicators are used.  The bank separates kernels on
    the grid.
    """
    n_u = len(action)
    if action.coords is not None and action.dim == 1 and n_u > 1:
        u = action.coords[:, 0]
        width = float(np.min(np.diff(np.sort(u))))
        bumps = np.maximum(0.0, 1.0 - np.abs(u[None, :] - u[:, None]) / width)
    else:
        bumps = np.eye(n_u)
    bank = []
    for a in range(len(base)):
        for b in range(n_u):
            vals = np.zeros((len(base), n_u))
            vals[a] = bumps[b]
            bank.append(
                CaratheodoryTestFunction(base, action, vals, f"1[{base.atoms[a]}]*bump[{action.atoms[b]}]")
            )
    return bank
