"""Numerical witnesses for the policy topology and the existence argument.

All verdicts here are relative to what was tested: a finite bank of test
functions, a finite compact-set schedule, a finite sequence.  None of them
certify a topological statement on their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .measures import (
    PROBABILITY,
    SUB_PROBABILITY,
    CaratheodoryTestFunction,
    FiniteSpace,
    Kernel,
    Measure,
    SpaceMismatch,
    default_bank,
    pairing,
    product_space,
)
from .model import TeamProblem
from .reduction import CentralizedProblem, PrescriptionAction, ZeroMassAtom, conditional_weights

UNDERFLOW_FLOOR = 1e-300
DEFAULT_RADII = (1.0, 2.0, 4.0, 8.0)


# -- w*-convergence ---------------------------------------------------------


@dataclass
class ConvergenceReport:
    names: list[str]
    values: np.ndarray  # [n, k] pairing of seq[n] with bank[k]
    limits: np.ndarray  # [k]
    tail_deviation: np.ndarray  # [k] max |values[n, k] - limits[k]| over n >= n0
    n0: int
    tol: float
    converged_per_function: np.ndarray
    scope: str = "bank-relative"

    @property
    def converged(self) -> bool:
        return bool(np.all(self.converged_per_function))

    def rows(self) -> list[dict]:
        return [
            {
                "function": name,
                "limit": float(self.limits[k]),
                "tail_deviation": float(self.tail_deviation[k]),
                "converged": bool(self.converged_per_function[k]),
            }
            for k, name in enumerate(self.names)
        ]


def check_wstar_convergence(
    seq: Sequence[Kernel],
    limit: Kernel,
    bank: Sequence[CaratheodoryTestFunction],
    mu: Measure,
    tol: float = 1e-9,
    n0: Optional[int] = None,
) -> ConvergenceReport:
    """Compare pairings of ``seq[n]`` with those of ``limit`` over the tail n >= n0."""
    if not bank:
        raise ValueError("check_wstar_convergence needs a nonempty bank")
    if not seq:
        raise ValueError("empty sequence")
    for g in (*seq, limit):
        if g.source != mu.space:
            raise SpaceMismatch("sequence kernel source differs from the reference space")
    n0 = len(seq) // 2 if n0 is None else n0
    if not 0 <= n0 < len(seq):
        raise ValueError(f"n0={n0} outside the sequence of length {len(seq)}")
    values = np.array([[pairing(g, f, mu) for f in bank] for g in seq])
    limits = np.array([pairing(limit, f, mu) for f in bank])
    dev = np.abs(values[n0:] - limits[None, :]).max(axis=0)
    return ConvergenceReport(
        [f.name or f"f{k + 1}" for k, f in enumerate(bank)], values, limits, dev, n0, tol, dev <= tol
    )


# -- escaping mass ----------------------------------------------------------


def _gaussian(y, u):
    return np.exp(-(u**2)) + 0.0 * y


def _hat(y, u):
    return np.maximum(0.0, 1.0 - np.abs(u - 2.0) / 2.5) + 0.0 * y


ESCAPING_BANK: dict[str, Callable] = {"gaussian": _gaussian, "hat": _hat}


@dataclass
class EscapingMassReport:
    names: list[str]
    steps: np.ndarray  # n = 1..n_max
    raw: np.ndarray  # [n, k] unclamped pairings
    pairings: np.ndarray  # [n, k] with values below the floor reported as 0
    underflow: np.ndarray  # [n, k] bool
    row_mass: np.ndarray  # [n, base atom] total mass of each gamma_n row
    limit_row_mass: np.ndarray
    limit_kind: str
    limit_is_probability: bool


def escaping_mass_demo(
    n_max: int = 30,
    bank: Optional[Mapping[str, Callable]] = None,
    base_size: int = 1,
    tail_start: Optional[int] = None,
    vanish_threshold: float = 1e-6,
    floor: float = UNDERFLOW_FLOOR,
) -> EscapingMassReport:
    """Point masses running off to infinity: gamma_n(x) = delta_n on U = {1, ..., n_max}.

    Each gamma_n is a stochastic kernel, yet its pairings with every bank member
    that vanishes at infinity go to 0, the pairing of the zero kernel.  Bank
    members are functions f(y, u) of 1-d coordinates; one that does not vanish
    on the tail u >= tail_start is rejected.
    """
    if n_max < 1:
        raise ValueError("n_max must be positive")
    bank = dict(ESCAPING_BANK if bank is None else bank)
    if not bank:
        raise ValueError("empty bank")
    base = FiniteSpace.grid("X", 0.0, float(base_size - 1), base_size) if base_size > 1 else FiniteSpace("X", ("0",), np.zeros(1))
    U = FiniteSpace("U", tuple(str(n) for n in range(1, n_max + 1)), np.arange(1, n_max + 1, dtype=float))
    mu = Measure.uniform(base)
    tail_start = n_max // 2 + 1 if tail_start is None else tail_start
    tail = U.coords[:, 0] >= tail_start
    fs = []
    for name, fn in bank.items():
        f = CaratheodoryTestFunction.from_callable(base, U, fn, name)
        if np.any(tail):
            tmax = float(np.abs(f.values[:, tail]).max())
            if tmax > vanish_threshold:
                raise ValueError(
                    f"bank member {name!r} does not vanish at infinity: max |f| = {tmax:.3g} "
                    f"on coordinates >= {tail_start} (threshold {vanish_threshold:g})"
                )
        fs.append(f)
    raw = np.empty((n_max, len(fs)))
    mass = np.empty((n_max, base_size))
    for n in range(1, n_max + 1):
        g = Kernel.deterministic(base, U, [n - 1] * base_size)
        mass[n - 1] = g.rows.sum(axis=1)
        raw[n - 1] = [pairing(g, f, mu) for f in fs]
    under = np.abs(raw) < floor
    limit = Kernel(base, U, np.zeros((base_size, n_max)), SUB_PROBABILITY)
    limit_mass = limit.rows.sum(axis=1)
    return EscapingMassReport(
        list(bank),
        np.arange(1, n_max + 1),
        raw,
        np.where(under, 0.0, raw),
        under,
        mass,
        limit_mass,
        limit.kind,
        bool(np.all(np.abs(limit_mass - 1.0) <= 1e-9)),
    )


# -- tightness ----------------------------------------------------------------


@dataclass
class TightnessReport:
    radii: list
    outside: np.ndarray  # [member, schedule element]
    eps: float
    minimal_index: Optional[int]
    note: str = ""

    @property
    def tight(self) -> bool:
        return self.minimal_index is not None

    @property
    def minimal_radius(self):
        return None if self.minimal_index is None else self.radii[self.minimal_index]

    @property
    def sup_outside(self) -> np.ndarray:
        if self.outside.size == 0:
            return np.zeros(len(self.radii))
        return self.outside.max(axis=0)


def _masks(schedule, n_atoms: int) -> list[np.ndarray]:
    out = []
    for s in schedule:
        s = np.asarray(s)
        if s.dtype == bool:
            if s.shape != (n_atoms,):
                raise ValueError("schedule mask has the wrong length")
            out.append(s)
        else:
            m = np.zeros(n_atoms, dtype=bool)
            m[s.astype(int)] = True
            out.append(m)
    return out


def _check_nested(masks: Sequence[np.ndarray]) -> None:
    for k in range(1, len(masks)):
        if np.any(masks[k - 1] & ~masks[k]):
            raise ValueError(f"schedule is not nested: set {k - 1} is not contained in set {k}")


def _summarize(outside: np.ndarray, radii, eps: float, note: str = "") -> TightnessReport:
    sup = outside.max(axis=0) if outside.size else np.zeros(len(radii))
    ok = np.flatnonzero(sup <= eps)
    return TightnessReport(list(radii), outside, eps, int(ok[0]) if len(ok) else None, note)


def tightness_check(
    family: Sequence[Measure],
    schedule: Sequence,
    eps: float = 1e-9,
    radii: Optional[Sequence] = None,
) -> TightnessReport:
    """Mass each member leaves outside each set of a nested schedule.

    ``schedule`` entries are boolean masks or index collections over the atoms
    of the members' common space.  The verdict is the first set outside of
    which every member has at most ``eps`` mass.
    """
    if not family:
        raise ValueError("tightness_check needs a nonempty family")
    if not schedule:
        raise ValueError("empty schedule")
    space = family[0].space
    for m in family:
        if m.space != space:
            raise SpaceMismatch("family members live on different spaces")
    masks = _masks(schedule, len(space))
    _check_nested(masks)
    w = np.array([m.weights for m in family])
    inside = w @ np.array(masks, dtype=float).T
    outside = w.sum(axis=1, keepdims=True) - inside
    outside = np.maximum(outside, 0.0)
    return _summarize(outside, radii if radii is not None else list(range(len(masks))), eps)


def action_ball_masks(Ys: Sequence[FiniteSpace], Us: Sequence[FiniteSpace], radii: Sequence[float]) -> list[np.ndarray]:
    """Sets {(y, u): |u_i|_inf <= R for each non-compact U_i} over Y_1..Y_N x U_1..U_N.

    Observation coordinates are left unrestricted: the Y-marginal of every
    measure examined here is fixed.  Compact-flagged action grids are kept
    whole.
    """
    out = []
    for R in radii:
        factors = [np.ones(len(Y), dtype=bool) for Y in Ys]
        for U in Us:
            if U.compact or U.coords is None:
                factors.append(np.ones(len(U), dtype=bool))
            else:
                factors.append(np.abs(U.coords).max(axis=1) <= R)
        m = factors[0]
        for f in factors[1:]:
            m = np.logical_and.outer(m, f).ravel()
        out.append(m)
    return out


def joint_measure(action: PrescriptionAction, references: Sequence[Measure]) -> Measure:
    """prod_i lambda_i(y_i)(du_i) mu_i(dy_i) on Y_1..Y_N x U_1..U_N."""
    n = len(action.kernels)
    ops: list = []
    for i, (k, ref) in enumerate(zip(action.kernels, references)):
        ops += [ref.weights[:, None] * k.rows, [i, n + i]]
    w = np.einsum(*ops, list(range(2 * n)))
    space = product_space([k.source for k in action.kernels] + [k.target for k in action.kernels])
    return Measure(space, w.ravel())


# -- IC class -----------------------------------------------------------------


@dataclass
class ICCheck:
    index: Optional[int]
    subset: Optional[np.ndarray]
    minima: list[float]
    M: float

    def __bool__(self):
        return self.index is not None


def ic_class_check(phi: np.ndarray, K, M: float, schedule: Sequence) -> ICCheck:
    """First scheduled L with min over K x L^c x E3 of phi >= M.

    ``phi`` is indexed [e1, e2, e3]; ``K`` is a mask or index set over E1 and
    the schedule entries are masks or index sets over E2.  The minimum over an
    empty set is +inf.
    """
    if not len(schedule):
        raise ValueError("ic_class_check needs a nonempty schedule")
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 3:
        raise ValueError("phi must be indexed [e1, e2, e3]")
    (k_mask,) = _masks([K], phi.shape[0])
    if not np.any(k_mask):
        raise ValueError("K must be nonempty")
    masks = _masks(schedule, phi.shape[1])
    sub = phi[k_mask]
    minima = []
    found = None
    for j, L in enumerate(masks):
        outside = sub[:, ~L, :]
        v = float(outside.min()) if outside.size else math.inf
        minima.append(v)
        if found is None and v >= M:
            found = j
    return ICCheck(found, None if found is None else masks[found], minima, float(M))


# -- sub-level sets of M(x0, .) ----------------------------------------------


@dataclass
class SublevelReport:
    x0: str
    r: float
    members: np.ndarray  # grid indices with M(x0, .) <= r
    tightness: Optional[TightnessReport]
    compact_actions: bool
    ic: Optional[ICCheck]
    channel_floor: float
    verdict: str

    @property
    def empty(self) -> bool:
        return len(self.members) == 0

    @property
    def floor_holds(self) -> bool:
        return self.channel_floor > 0

    @property
    def hypotheses_hold(self) -> bool:
        return self.compact_actions or (bool(self.ic) and self.floor_holds)


def weighted_cost(problem: TeamProblem, x0: int) -> np.ndarray:
    """c(x, x0, y, u) prod_i q_i(y_i, x), indexed [y, u, x] with y and u flattened."""
    n = problem.n_agents
    ops: list = [problem.cost.table[:, x0], list(range(2 * n + 1))]
    for i, ch in enumerate(problem.channels):
        ops += [ch.density, [1 + i, 0]]
    t = np.einsum(*ops, list(range(1, 2 * n + 1)) + [0])
    ny = math.prod(len(y) for y in problem.Y)
    nu = math.prod(len(u) for u in problem.U)
    return t.reshape(ny, nu, len(problem.X))


def channel_floor(problem: TeamProblem, K=None) -> float:
    """inf over (y, x) in K x X of prod_i q_i(y_i, x)."""
    q = problem.channels[0].density
    for ch in problem.channels[1:]:
        q = (q[:, None, :] * ch.density[None, :, :]).reshape(-1, len(problem.X))
    if K is None:
        return float(q.min())
    (mask,) = _masks([K], q.shape[0])
    return float(q[mask].min())


def sublevel_tightness(
    problem: TeamProblem,
    cp: CentralizedProblem,
    x0,
    r: float,
    radii: Sequence[float] = DEFAULT_RADII,
    eps: float = 1e-9,
    ic_level: Optional[float] = None,
    K=None,
) -> SublevelReport:
    """Tightness of {prod lambda_i (x) mu_i : M(x0, lambda) <= r} over the grid.

    Also reports the two routes to tightness: compact action grids, or a cost
    in the IC class (checked on c * prod q_i at level ``ic_level``, default r)
    together with a positive channel floor.
    """
    k = problem.X0.index(x0)
    if k not in cp.rows:
        raise ZeroMassAtom(f"common atom {problem.X0.atoms[k]!r} has zero probability")
    row = cp.m_table[cp.rows.index(k)]
    members = np.flatnonzero(row <= r)
    compact = all(U.compact for U in problem.U)
    phi = weighted_cost(problem, k)
    ny = phi.shape[0]
    u_masks = action_ball_masks([], problem.U, radii)
    ic = ic_class_check(phi, np.ones(ny, dtype=bool) if K is None else K, r if ic_level is None else ic_level, u_masks)
    floor = channel_floor(problem, K)

    if len(members) == 0:
        return SublevelReport(problem.X0.atoms[k], r, members, None, compact, ic, floor, "empty (trivially compact)")
    rep = _summarize(grid_outside_mass(cp.grid, members, radii), radii, eps)
    verdict = f"tight at R={rep.minimal_radius:g}" if rep.tight else "not tight on the schedule"
    return SublevelReport(problem.X0.atoms[k], r, members, rep, compact, ic, floor, verdict)


def grid_outside_mass(grid, members: Sequence[int], radii: Sequence[float]) -> np.ndarray:
    """Mass of prod_i lambda_i (x) mu_i outside each action ball, per grid member.

    The balls are products of per-agent sets and the measures are products, so
    the inside mass is the product of per-agent inside masses.  This equals
    ``tightness_check`` on the explicit joint measures without forming them.
    """
    inside = []
    for i, (stack, ref) in enumerate(zip(grid.stacks, grid.references)):
        balls = np.array(action_ball_masks([], [grid.U[i]], radii), dtype=float)  # [R, u]
        inside.append(np.einsum("y,gyu,ru->gr", ref.weights, stack, balls))
    idx = np.unravel_index(np.asarray(members, dtype=int), grid.shape)
    prod = np.ones((len(members), len(radii)))
    for i, j in enumerate(idx):
        prod = prod * inside[i][j]
    return np.maximum(1.0 - prod, 0.0)


# -- lower semicontinuity probe ------------------------------------------------


class NonConvergentSequence(ValueError):
    def __init__(self, message: str, report: ConvergenceReport):
        super().__init__(message)
        self.report = report


@dataclass
class LscResult:
    m_values: np.ndarray
    m_limit: float
    liminf: float
    gap: float  # liminf_n M(x0, lambda^n) - M(x0, lambda); >= -tol means lsc holds
    final_deviation: float
    convergence: list[ConvergenceReport]
    lsc_pass: bool
    continuity_pass: bool


@dataclass
class LscReport:
    x0: str
    results: list[LscResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.lsc_pass for r in self.results)


def _m_value(weights: np.ndarray, action: PrescriptionAction) -> float:
    n = len(action.kernels)
    ops: list = [weights, list(range(2 * n))]
    for i, k in enumerate(action.kernels):
        ops += [k.rows, [i, n + i]]
    return float(np.einsum(*ops, [], optimize="greedy"))


def lsc_probe(
    problem: TeamProblem,
    x0,
    sequences: Sequence[tuple[Sequence[PrescriptionAction], PrescriptionAction]],
    banks: Optional[Sequence[Sequence[CaratheodoryTestFunction]]] = None,
    tol: float = 1e-9,
    continuity_tol: float = 1e-6,
    wstar_tol: float = 1e-9,
    n0: Optional[int] = None,
) -> LscReport:
    """Probe liminf M(x0, lambda^n) >= M(x0, lambda) along w*-convergent sequences.

    Each sequence is first checked for w*-convergence to its limit, agent by
    agent, against ``banks`` (default: indicator-bump banks).  The liminf is
    estimated by the minimum over the tail n >= n0 (default: last quarter).
    """
    k = problem.X0.index(x0)
    if k in problem.null_common_atoms:
        raise ZeroMassAtom(f"common atom {problem.X0.atoms[k]!r} has zero probability")
    if banks is None:
        banks = [default_bank(problem.Y[i], problem.U[i]) for i in range(problem.n_agents)]
    refs = [ch.reference for ch in problem.channels]
    weights = conditional_weights(problem, k)
    report = LscReport(problem.X0.atoms[k])
    for seq, limit in sequences:
        start = len(seq) - max(1, len(seq) // 4) if n0 is None else n0
        conv = []
        for i in range(problem.n_agents):
            c = check_wstar_convergence(
                [a.kernels[i] for a in seq], limit.kernels[i], banks[i], refs[i], wstar_tol, start
            )
            if not c.converged:
                raise NonConvergentSequence(f"sequence does not converge for agent {i} on the bank", c)
            conv.append(c)
        vals = np.array([_m_value(weights, a) for a in seq])
        m_lim = _m_value(weights, limit)
        liminf = float(vals[start:].min())
        gap = liminf - m_lim
        final = float(abs(vals[-1] - m_lim))
        report.results.append(
            LscResult(vals, m_lim, liminf, gap, final, conv, gap >= -tol, final <= continuity_tol)
        )
    return report


def interpolation_path(
    limit: PrescriptionAction, other: PrescriptionAction, weights: Sequence[float]
) -> list[PrescriptionAction]:
    """lambda^n = (1 - t_n) limit + t_n other."""
    return [limit.mix(other, float(t)) for t in weights]


def geometric_weights(n_steps: int) -> np.ndarray:
    """t_n = 2^-n for n = 1..n_steps."""
    return 2.0 ** -np.arange(1, n_steps + 1, dtype=float)


def harmonic_weights(n_steps: int) -> np.ndarray:
    """t_n = 1/n for n = 1..n_steps."""
    return 1.0 / np.arange(1, n_steps + 1, dtype=float)


def random_action(problem: TeamProblem, rng: np.random.Generator, randomized: bool = True) -> PrescriptionAction:
    """A random prescription: Dirichlet rows, or uniformly drawn deterministic rows."""
    tensors = []
    for Y, U in zip(problem.Y, problem.U):
        if randomized:
            tensors.append(rng.dirichlet(np.ones(len(U)), size=len(Y)))
        else:
            tensors.append(np.eye(len(U))[rng.integers(len(U), size=len(Y))])
    return PrescriptionAction.from_tensors(problem, tensors)


def lattice_action(problem: TeamProblem, rng: np.random.Generator, r: int) -> PrescriptionAction:
    """Random point of the randomized lattice {k / r}: rows are multinomial counts over r."""
    tensors = [
        rng.multinomial(r, np.ones(len(U)) / len(U), size=len(Y)) / r
        for Y, U in zip(problem.Y, problem.U)
    ]
    return PrescriptionAction.from_tensors(problem, tensors)


def probe_sequences(
    problem: TeamProblem,
    rng: np.random.Generator,
    n_interpolation: int = 5,
    n_lattice: int = 5,
    n_steps: int = 64,
    lattice_r: int = 8,
) -> list[tuple[str, list[PrescriptionAction], PrescriptionAction]]:
    """Sequences with known w*-limits for ``lsc_probe``.

    Interpolation paths run from a random randomized prescription towards a
    random randomized limit; lattice paths run from a lattice point towards a
    deterministic corner.  Both use t_n = 2^-n.
    """
    t = geometric_weights(n_steps)
    out = []
    for _ in range(n_interpolation):
        limit, other = random_action(problem, rng), random_action(problem, rng)
        out.append(("interpolation", interpolation_path(limit, other, t), limit))
    for _ in range(n_lattice):
        corner = random_action(problem, rng, randomized=False)
        point = lattice_action(problem, rng, lattice_r)
        out.append(("lattice", interpolation_path(corner, point, t), corner))
    return out
