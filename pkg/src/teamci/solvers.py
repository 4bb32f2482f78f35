"""Solution methods for the static team problem.

``brute_force`` is the independent oracle: it scores every deterministic
profile without using the common-information decomposition.
``solve_common_information`` goes through the coordinator problem.
``person_by_person`` is the usual cyclic best-response baseline.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .model import (
    DEFAULT_ENUM_CAP,
    CapExceeded,
    PolicyProfile,
    TeamProblem,
    count_deterministic,
    deterministic_tables,
    expected_cost,
)
from .reduction import (
    CentralizedProblem,
    LambdaGrid,
    Prescription,
    grid_from_option,
    lift,
    reduce,
    solve_centralized,
)

# Joint profile count the exhaustive search will accept by default.
DEFAULT_BRUTE_CAP = 10**9
_BLOCK = 1 << 21
_TIE_RTOL = 1e-13


@dataclass
class SolveResult:
    method: str
    value: float
    profile: PolicyProfile
    prescription: Optional[Prescription] = None
    wall_time: float = 0.0
    counts: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    centralized: Optional[CentralizedProblem] = None
    grid: str = ""


def _cell_weights(problem: TeamProblem) -> np.ndarray:
    """T[x0, y_1..y_N, u_1..u_N] = sum_x P(x, x0) c prod_i W_i(y_i | x)."""
    n = problem.n_agents
    ops: list = [problem.cost.table, list(range(2 + 2 * n)), problem.joint, [0, 1]]
    for i, ch in enumerate(problem.channels):
        ops += [ch.transition, [2 + i, 0]]
    return np.einsum(*ops, list(range(1, 2 + 2 * n)), optimize="greedy")


def _onehot(tables: np.ndarray, n_actions: int) -> np.ndarray:
    n, k = tables.shape
    out = np.zeros((n, k * n_actions))
    out[np.arange(n)[:, None], np.arange(k)[None, :] * n_actions + tables] = 1.0
    return out


class _Best:
    """Running minimum keyed by (value, lexicographic profile index)."""

    def __init__(self):
        self.value = math.inf
        self.index: Optional[tuple] = None

    def offer(self, value: float, index: tuple) -> None:
        tie = _TIE_RTOL * max(1.0, abs(value))
        if self.index is None or value < self.value - tie:
            self.value, self.index = value, index
        elif value <= self.value + tie:
            if index < self.index:
                self.index = index
            self.value = min(self.value, value)


def _scan_pair(t2: np.ndarray, n_x0: int, sizes, counts, best: _Best, outer: tuple) -> None:
    """Exhaust agents 0 and 1 against a two-agent weight tensor [x0, y0, y1, u0, u1]."""
    (y0, y1), (u0, u1) = sizes
    k0, k1 = n_x0 * y0, n_x0 * y1
    # B[(x0, y0), u0, (x0', y1), u1], block diagonal in x0
    b = np.zeros((n_x0, y0, u0, n_x0, y1, u1))
    for x0 in range(n_x0):
        b[x0, :, :, x0] = t2[x0].transpose(0, 2, 1, 3)
    b = b.reshape(k0, u0, k1 * u1)
    p0, p1 = counts
    step1 = max(1, min(p1, _BLOCK // 64))
    step0 = max(1, min(_BLOCK // step1, _BLOCK // (k0 * k1 * u1)))
    for s1 in range(0, p1, step1):
        onehot1 = _onehot(deterministic_tables(k1, u1, s1, s1 + step1), u1)
        for s0 in range(0, p0, step0):
            tab0 = deterministic_tables(k0, u0, s0, s0 + step0)
            partial = b[np.arange(k0)[None, :], tab0].sum(axis=1)
            vals = partial @ onehot1.T
            cmin = float(vals.min())
            tie = _TIE_RTOL * max(1.0, abs(cmin))
            first = int(np.flatnonzero(vals.ravel() <= cmin + tie)[0])
            a, c = divmod(first, vals.shape[1])
            best.offer(cmin, (s0 + a, s1 + c) + outer)


def brute_force(problem: TeamProblem, cap: int = DEFAULT_BRUTE_CAP) -> SolveResult:
    """Minimum of J over every deterministic profile, by exhaustive scoring."""
    start = time.perf_counter()
    n = problem.n_agents
    n_x0 = len(problem.X0)
    cells = [n_x0 * len(y) for y in problem.Y]
    n_u = [len(u) for u in problem.U]
    counts = [count_deterministic(k, a) for k, a in zip(cells, n_u)]
    total = math.prod(counts)
    if total > cap:
        raise CapExceeded("deterministic team profiles", total, cap)

    t = _cell_weights(problem)
    if n == 1:
        # pad with a dummy second agent with one observation and one action
        t = t[:, :, None, :, None]
        sizes = ((len(problem.Y[0]), 1), (n_u[0], 1))
        pair_counts = (counts[0], 1)
    else:
        sizes = ((len(problem.Y[0]), len(problem.Y[1])), (n_u[0], n_u[1]))
        pair_counts = (counts[0], counts[1])

    best = _Best()
    outer_agents = list(range(2, n))
    for outer in itertools.product(*(range(counts[j]) for j in outer_agents)):
        t2 = t
        # contract the outer agents' fixed policies, last agent first
        for j, p in reversed(list(zip(outer_agents, outer))):
            g = np.eye(n_u[j])[deterministic_tables(cells[j], n_u[j], p, p + 1)[0]]
            g = g.reshape(n_x0, len(problem.Y[j]), n_u[j])
            ndim = t2.ndim
            m = (ndim - 1) // 2  # agents still present
            y_ax, u_ax = 1 + j, 1 + m + j
            idx_in = list(range(ndim))
            idx_out = [a for a in idx_in if a not in (y_ax, u_ax)]
            t2 = np.einsum(t2, idx_in, g, [0, y_ax, u_ax], idx_out)
        _scan_pair(t2, n_x0, sizes, pair_counts, best, tuple(outer))

    idx = best.index[:n]
    tables = [deterministic_tables(cells[i], n_u[i], p, p + 1)[0] for i, p in enumerate(idx)]
    profile = PolicyProfile.from_tables(problem, tables)
    value = expected_cost(problem, profile)
    return SolveResult(
        "brute",
        value,
        profile,
        wall_time=time.perf_counter() - start,
        counts={"profiles": total, "per_agent": counts},
    )


def solve_common_information(
    problem: TeamProblem,
    grid: Union[str, LambdaGrid] = "deterministic",
    cap: int = DEFAULT_ENUM_CAP,
) -> SolveResult:
    """Build the prescription grid, reduce, minimise per x0, and lift back."""
    start = time.perf_counter()
    if isinstance(grid, str):
        option = grid
        grid = grid_from_option(problem, grid, cap)
    else:
        option = grid.mode
    cp = reduce(problem, grid)
    prescription, value = solve_centralized(cp)
    profile = lift(cp, prescription)
    return SolveResult(
        "ci",
        value,
        profile,
        prescription=prescription,
        wall_time=time.perf_counter() - start,
        counts={"grid_size": len(grid), "rows": len(cp.rows)},
        centralized=cp,
        grid=option,
    )


def _response_weights(problem: TeamProblem, tensors, i: int) -> np.ndarray:
    """Linear coefficients C[x0, y_i, u_i] of J in agent i's kernel."""
    n = problem.n_agents
    ops: list = [problem.cost.table, list(range(2 + 2 * n)), problem.joint, [0, 1]]
    for j, ch in enumerate(problem.channels):
        ops += [ch.transition, [2 + j, 0]]
        if j != i:
            ops += [tensors[j], [1, 2 + j, 2 + n + j]]
    return np.einsum(*ops, [1, 2 + i, 2 + n + i], optimize="greedy")


def person_by_person(
    problem: TeamProblem,
    initial: Optional[PolicyProfile] = None,
    max_iter: int = 100,
    tol: float = 1e-12,
    cap: int = DEFAULT_ENUM_CAP,
) -> SolveResult:
    """Cyclic exact best responses over deterministic policies, agents in index order.

    An agent's policy is replaced only when the best response beats the
    current value by more than a relative 1e-13, so the trace is monotone.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    start = time.perf_counter()
    n = problem.n_agents
    n_x0 = len(problem.X0)
    if initial is None:
        initial = PolicyProfile.from_tables(
            problem, [np.zeros(n_x0 * len(y), dtype=int) for y in problem.Y]
        )
    for i in range(n):
        cnt = count_deterministic(n_x0 * len(problem.Y[i]), len(problem.U[i]))
        if cnt > cap:
            raise CapExceeded(f"best responses of agent {i}", cnt, cap)
    tensors = [g.copy() for g in initial.tensors(problem)]
    value = expected_cost(problem, initial)
    trace = [{"step": 0, "cycle": 0, "agent": "", "value": value}]
    evaluated = 0
    step = 0
    cycles = 0
    for cycle in range(1, max_iter + 1):
        cycles = cycle
        before = value
        for i in range(n):
            cells = n_x0 * len(problem.Y[i])
            n_u = len(problem.U[i])
            coef = _response_weights(problem, tensors, i).reshape(cells, n_u)
            cnt = count_deterministic(cells, n_u)
            best_val, best_tab = math.inf, None
            for s in range(0, cnt, _BLOCK // max(1, cells)):
                tabs = deterministic_tables(cells, n_u, s, s + _BLOCK // max(1, cells))
                vals = coef[np.arange(cells)[None, :], tabs].sum(axis=1)
                k = int(np.argmin(vals))
                if vals[k] < best_val:
                    best_val, best_tab = float(vals[k]), tabs[k]
            evaluated += cnt
            step += 1
            if best_val < value - _TIE_RTOL * max(1.0, abs(value)):
                tensors[i] = np.eye(n_u)[best_tab].reshape(tensors[i].shape)
                value = expected_cost(problem, PolicyProfile.from_tensors(problem, tensors))
            trace.append({"step": step, "cycle": cycle, "agent": i, "value": value})
        if before - value < tol:
            break
    profile = PolicyProfile.from_tensors(problem, tensors)
    return SolveResult(
        "pbp",
        value,
        profile,
        wall_time=time.perf_counter() - start,
        counts={"cycles": cycles, "responses_evaluated": evaluated},
        trace=trace,
    )
