"""Static team problems with a common observation, on finite grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Sequence

import numpy as np

from .measures import (
    NORMALIZATION_TOL,
    FiniteSpace,
    Kernel,
    Measure,
    SpaceMismatch,
    product_measure,
    product_space,
)

DEFAULT_ENUM_CAP = 10**7


class CapExceeded(RuntimeError):
    """An enumeration would exceed its configured cap."""

    def __init__(self, what: str, count: int, cap: int):
        super().__init__(f"{what}: {count} candidates exceeds the enumeration cap {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True, eq=False)
class ObservationChannel:
    """W_i(dy|x) = q_i(y, x) mu_i(dy); ``density[y, x]`` holds q_i."""

    agent: int
    reference: Measure
    density: np.ndarray
    family: Optional[dict] = None

    def __post_init__(self):
        d = np.array(self.density, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @property
    def transition(self) -> np.ndarray:
        """W_i[y, x]."""
        return self.density * self.reference.weights[:, None]

    @classmethod
    def build(
        cls,
        agent: int,
        family: str,
        params: dict,
        X: FiniteSpace,
        Y: FiniteSpace,
        reference: Optional[Measure] = None,
    ) -> "ObservationChannel":
        """Channel from a named family; the reference defaults to uniform on Y.

        ``binary-symmetric``: y keeps the index of x with probability 1 - p and
        moves to each other atom with probability p / (|Y| - 1).
        ``additive-noise``: y = x + N(0, sigma^2), discretised onto the Y grid by
        normalising the Gaussian weights at the atoms.
        """
        ref = reference if reference is not None else Measure.uniform(Y)
        if family == "binary-symmetric":
            p = float(params["p"])
            if len(Y) != len(X):
                raise ValueError("binary-symmetric channel needs |Y| == |X|")
            n = len(Y)
            W = np.full((n, n), p / (n - 1) if n > 1 else 0.0)
            np.fill_diagonal(W, 1.0 - p if n > 1 else 1.0)
            spec = {"family": family, "p": p}
        elif family == "additive-noise":
            sigma = float(params["sigma"])
            x = _coord1(X)
            y = _coord1(Y)
            W = np.exp(-((y[:, None] - x[None, :]) ** 2) / (2 * sigma**2))
            W /= W.sum(axis=0, keepdims=True)
            spec = {"family": family, "sigma": sigma}
        else:
            raise ValueError(f"unknown channel family {family!r}")
        if np.any(ref.weights <= 0):
            raise ValueError("a channel family needs a reference measure with full support")
        return cls(agent, ref, W / ref.weights[:, None], spec)


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Dense cost table c[x, x0, y_1..y_N, u_1..u_N].

    ``family``/``params`` record where the table came from so it can be
    written back out in the same form.
    """

    table: np.ndarray
    family: str = "table"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def build(cls, family: str, params: dict, X, X0, Ys, Us) -> "CostSpec":
        shape = (len(X), len(X0), *map(len, Ys), *map(len, Us))
        n = len(Us)
        if family == "table":
            return cls(np.asarray(params["values"], dtype=float).reshape(shape), "table", {})
        if family == "quadratic":
            x = _coord1(X)
            us = [_coord1(U) for U in Us]
            team = float(params.get("team", 0.0))
            indiv = _per_agent(params.get("individual", 0.0), n, "individual")
            effort = _per_agent(params.get("effort", 0.0), n, "effort")
            xs = x.reshape((-1,) + (1,) * (n + 1 + n))
            u_axes = [u.reshape((1,) * (2 + n + i) + (-1,) + (1,) * (n - 1 - i)) for i, u in enumerate(us)]
            total = team * (sum(u_axes) - xs) ** 2
            for i, u in enumerate(u_axes):
                total = total + indiv[i] * (u - xs) ** 2 + effort[i] * u**2
            table = np.broadcast_to(total, shape)
            return cls(table, family, {"team": team, "individual": indiv, "effort": effort})
        if family == "mismatch":
            state = _per_agent(params.get("state", 1.0), n, "state")
            coupling = float(params.get("coupling", 0.0))
            xl = np.array(X.atoms, dtype=object)
            ul = [np.array(U.atoms, dtype=object) for U in Us]
            total = np.zeros(shape)
            for idx in np.ndindex(*shape):
                ui = [ul[i][idx[2 + n + i]] for i in range(n)]
                v = sum(state[i] * (ui[i] != xl[idx[0]]) for i in range(n))
                v += coupling * sum(ui[i] != ui[j] for i in range(n) for j in range(i + 1, n))
                total[idx] = v
            return cls(total, family, {"state": state, "coupling": coupling})
        raise ValueError(f"unknown cost family {family!r}")


def _coord1(space: FiniteSpace) -> np.ndarray:
    if space.coords is None or space.dim != 1:
        raise ValueError(f"space {space.label!r} needs 1-d coordinates for a parametric cost")
    return space.coords[:, 0]


def _per_agent(v, n: int, name: str) -> list[float]:
    if np.isscalar(v):
        return [float(v)] * n
    v = [float(a) for a in v]
    if len(v) != n:
        raise ValueError(f"cost parameter {name!r} needs {n} entries, got {len(v)}")
    return v


@dataclass(frozen=True, eq=False)
class TeamProblem:
    X: FiniteSpace
    X0: FiniteSpace
    Y: tuple[FiniteSpace, ...]
    U: tuple[FiniteSpace, ...]
    joint_law: Measure
    channels: tuple[ObservationChannel, ...]
    cost: CostSpec
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "Y", tuple(self.Y))
        object.__setattr__(self, "U", tuple(self.U))
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.Y) != len(self.U):
            raise ValueError("need one observation space and one action space per agent")
        if self.joint_law.space != product_space([self.X, self.X0]):
            raise SpaceMismatch("joint law must live on X x X0")

    @property
    def n_agents(self) -> int:
        return len(self.U)

    @cached_property
    def joint(self) -> np.ndarray:
        """P[x, x0]."""
        return self.joint_law.weights.reshape(len(self.X), len(self.X0))

    @cached_property
    def state_marginal(self) -> Measure:
        return Measure(self.X, self.joint.sum(axis=1))

    @cached_property
    def common_marginal(self) -> Measure:
        return Measure(self.X0, self.joint.sum(axis=0))

    @cached_property
    def null_common_atoms(self) -> tuple[int, ...]:
        """Indices of common-observation atoms with zero probability."""
        return tuple(int(k) for k in np.flatnonzero(self.common_marginal.weights <= 0))

    @cached_property
    def active_common_atoms(self) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.common_marginal.weights > 0))

    def policy_source(self, i: int) -> FiniteSpace:
        return product_space([self.X0, self.Y[i]])

    def policy_reference(self, i: int) -> Measure:
        return product_measure([self.common_marginal, self.channels[i].reference])

    @property
    def atom_count(self) -> int:
        return len(self.X) + len(self.X0) + sum(map(len, self.Y)) + sum(map(len, self.U))


@dataclass(frozen=True, eq=False)
class PolicyProfile:
    """One kernel per agent from X0 x Y_i to U_i."""

    kernels: tuple[Kernel, ...]

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))

    @property
    def deterministic(self) -> bool:
        return all(k.is_deterministic for k in self.kernels)

    def tensors(self, problem: TeamProblem) -> list[np.ndarray]:
        """Per-agent arrays G_i[x0, y_i, u_i]."""
        if len(self.kernels) != problem.n_agents:
            raise SpaceMismatch(
                f"profile has {len(self.kernels)} kernels for {problem.n_agents} agents"
            )
        out = []
        for i, k in enumerate(self.kernels):
            if k.source != problem.policy_source(i) or k.target != problem.U[i]:
                raise SpaceMismatch(f"agent {i} kernel does not match X0 x Y_{i} -> U_{i}")
            out.append(k.rows.reshape(len(problem.X0), len(problem.Y[i]), len(problem.U[i])))
        return out

    @classmethod
    def from_tensors(cls, problem: TeamProblem, tensors: Sequence[np.ndarray]) -> "PolicyProfile":
        kernels = []
        for i, g in enumerate(tensors):
            g = np.asarray(g, dtype=float)
            kernels.append(
                Kernel(
                    problem.policy_source(i),
                    problem.U[i],
                    g.reshape(-1, len(problem.U[i])),
                    reference=problem.policy_reference(i),
                )
            )
        return cls(tuple(kernels))

    @classmethod
    def from_tables(cls, problem: TeamProblem, tables: Sequence) -> "PolicyProfile":
        """Deterministic profile from action-index tables ``tables[i][x0, y_i]``."""
        tensors = []
        for i, t in enumerate(tables):
            t = np.asarray(t, dtype=int).reshape(len(problem.X0), len(problem.Y[i]))
            tensors.append(np.eye(len(problem.U[i]))[t])
        return cls.from_tensors(problem, tensors)

    def action_tables(self) -> list[np.ndarray]:
        """Flat (x0, y_i) -> action index tables; only meaningful for deterministic profiles."""
        return [k.rows.argmax(axis=1) for k in self.kernels]


@dataclass
class Violation:
    code: str
    where: str
    detail: str

    def __str__(self):
        return f"[{self.code}] {self.where}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "OK: no violations"
        return "\n".join(str(v) for v in self.violations)


def validate(problem: TeamProblem) -> ValidationReport:
    """Check shapes, the channel normalization and cost nonnegativity."""
    rep = ValidationReport()
    add = lambda code, where, detail: rep.violations.append(Violation(code, where, detail))
    n = problem.n_agents
    law = problem.joint_law.weights
    if not np.all(np.isfinite(law)):
        add("finite", "joint_law", "non-finite weights")
    else:
        if np.any(law < 0):
            add("nonnegativity", "joint_law", f"{int(np.sum(law < 0))} negative weights")
        if abs(float(law.sum()) - 1.0) > NORMALIZATION_TOL:
            add("normalization", "joint_law", f"weights sum to {float(law.sum())!r}")
    if len(problem.channels) != n:
        add("shape", "channels", f"{len(problem.channels)} channels for {n} agents")
    for k, ch in enumerate(problem.channels):
        i = ch.agent
        where = f"channel[{k}] (agent {i})"
        if i != k:
            add("shape", where, f"channel at position {k} is labelled agent {i}")
            continue
        if i >= n:
            continue
        if ch.reference.space != problem.Y[i]:
            add("shape", where, "reference measure is not on Y_i")
        rw = ch.reference.weights
        if np.any(rw < 0) or abs(float(rw.sum()) - 1.0) > NORMALIZATION_TOL:
            add("normalization", where, f"reference measure is not a probability measure (mass {float(rw.sum())!r})")
        expect = (len(problem.Y[i]), len(problem.X))
        if ch.density.shape != expect:
            add("shape", where, f"density has shape {ch.density.shape}, expected {expect}")
            continue
        d = ch.density
        if not np.all(np.isfinite(d)):
            add("finite", where, "density has non-finite entries")
            continue
        for y, x in zip(*np.nonzero(d < 0)):
            add("nonnegativity", where, f"q({problem.Y[i].atoms[y]}, {problem.X.atoms[x]}) = {d[y, x]!r} < 0")
        mass = ch.reference.weights @ d
        for x in np.flatnonzero(np.abs(mass - 1.0) > NORMALIZATION_TOL):
            add(
                "normalization",
                f"{where}, x={problem.X.atoms[x]}",
                f"agent {i} state {problem.X.atoms[x]!r}: sum_y q mu = {mass[x]!r}",
            )
    shape = (len(problem.X), len(problem.X0), *map(len, problem.Y), *map(len, problem.U))
    c = problem.cost.table
    if c.shape != shape:
        add("shape", "cost", f"table has shape {c.shape}, expected {shape}")
    else:
        if not np.all(np.isfinite(c)):
            add("finite", "cost", "table has non-finite entries")
        neg = np.argwhere(c < 0)
        if len(neg):
            add("nonnegativity", "cost", f"{len(neg)} negative entries, first at index {tuple(int(a) for a in neg[0])}")
    return rep


def tilde_c(problem: TeamProblem, x, x0, y: Sequence, nus: Sequence[Measure]) -> float:
    """Cost averaged over independent per-agent action laws nus[i] on U_i."""
    n = problem.n_agents
    if len(y) != n or len(nus) != n:
        raise ValueError(f"need {n} observations and {n} action measures")
    for i, nu in enumerate(nus):
        if nu.space != problem.U[i]:
            raise SpaceMismatch(f"action measure {i} is not on U_{i}")
    idx = (
        problem.X.index(x),
        problem.X0.index(x0),
        *(problem.Y[i].index(y[i]) for i in range(n)),
    )
    block = problem.cost.table[idx]
    for nu in nus:
        block = np.tensordot(nu.weights, block, axes=(0, 0))
    return float(block)


def expected_cost(problem: TeamProblem, gamma: PolicyProfile) -> float:
    """J = sum P(x,x0) prod_i q_i mu_i(y_i) c(x,x0,y,u) prod_i gamma_i(x0,y_i)(u_i)."""
    tensors = gamma.tensors(problem)
    n = problem.n_agents
    ops: list = [problem.cost.table, list(range(2 + 2 * n)), problem.joint, [0, 1]]
    for i, ch in enumerate(problem.channels):
        ops += [ch.transition, [2 + i, 0], tensors[i], [1, 2 + i, 2 + n + i]]
    return float(np.einsum(*ops, [], optimize="greedy"))


def conditional_matrix(problem: TeamProblem) -> np.ndarray:
    """P(x | x0) as an array [x0, x]; zero-mass rows are uniform placeholders."""
    mu0 = problem.common_marginal.weights
    out = np.full((len(problem.X0), len(problem.X)), 1.0 / len(problem.X))
    for k in problem.active_common_atoms:
        out[k] = problem.joint[:, k] / mu0[k]
    return out


def conditional_state_law(problem: TeamProblem, x0) -> Measure:
    """Bayes posterior of the state given the common observation.

    For x0 with zero probability the uniform measure is returned; such atoms
    are listed in ``problem.null_common_atoms``.
    """
    k = problem.X0.index(x0)
    return Measure(problem.X, conditional_matrix(problem)[k])


def count_deterministic(n_cells: int, n_actions: int) -> int:
    return n_actions**n_cells


def deterministic_tables(n_cells: int, n_actions: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Action tables number ``start..stop-1`` in lexicographic order.

    Table ``p`` is the base-``n_actions`` expansion of ``p`` with the first cell
    most significant, so table 0 sends every cell to action 0.
    """
    total = count_deterministic(n_cells, n_actions)
    stop = total if stop is None else min(stop, total)
    p = np.arange(start, stop, dtype=np.int64)
    out = np.empty((len(p), n_cells), dtype=np.int64)
    for k in range(n_cells - 1, -1, -1):
        out[:, k] = p % n_actions
        p = p // n_actions
    return out


def enumerate_deterministic_policies(
    problem: TeamProblem, i: int, cap: int = DEFAULT_ENUM_CAP
) -> Iterator[Kernel]:
    """Every deterministic (x0, y_i) -> u_i map for agent ``i``, lexicographically."""
    cells = len(problem.X0) * len(problem.Y[i])
    n_u = len(problem.U[i])
    count = count_deterministic(cells, n_u)
    if count > cap:
        raise CapExceeded(f"deterministic policies of agent {i}", count, cap)
    source = problem.policy_source(i)
    ref = problem.policy_reference(i)
    return (
        Kernel.deterministic(source, problem.U[i], t, reference=ref)
        for t in deterministic_tables(cells, n_u)
    )
