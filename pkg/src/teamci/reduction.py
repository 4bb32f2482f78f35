"""Reduction of the team problem to a coordinator problem over prescriptions.

The coordinator sees only the common observation x0 and picks a prescription
lambda = (lambda_1, ..., lambda_N), one kernel Y_i -> U_i per agent.  Its
conditional cost is M(x0, lambda) = E[L(x, x0, lambda) | x0].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .measures import FiniteSpace, Kernel, SpaceMismatch
from .model import (
    DEFAULT_ENUM_CAP,
    CapExceeded,
    PolicyProfile,
    TeamProblem,
    conditional_matrix,
    deterministic_tables,
)


class ZeroMassAtom(ValueError):
    """A common-observation atom with zero probability was asked for."""


@dataclass(frozen=True, eq=False)
class PrescriptionAction:
    """One coordinator action: a kernel Y_i -> U_i for each agent."""

    kernels: tuple[Kernel, ...]

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))

    @property
    def tensors(self) -> list[np.ndarray]:
        return [k.rows for k in self.kernels]

    @classmethod
    def from_tensors(cls, problem: TeamProblem, tensors: Sequence[np.ndarray]) -> "PrescriptionAction":
        if len(tensors) != problem.n_agents:
            raise SpaceMismatch(f"need {problem.n_agents} per-agent kernels, got {len(tensors)}")
        return cls(
            tuple(
                Kernel(problem.Y[i], problem.U[i], t, reference=problem.channels[i].reference)
                for i, t in enumerate(tensors)
            )
        )

    def mix(self, other: "PrescriptionAction", t: float) -> "PrescriptionAction":
        """Agent-wise convex combination (1 - t) * self + t * other."""
        return PrescriptionAction(
            tuple(
                Kernel(a.source, a.target, (1.0 - t) * a.rows + t * b.rows, reference=a.reference)
                for a, b in zip(self.kernels, other.kernels)
            )
        )

    def check(self, problem: TeamProblem) -> None:
        if len(self.kernels) != problem.n_agents:
            raise SpaceMismatch(f"prescription has {len(self.kernels)} kernels for {problem.n_agents} agents")
        for i, k in enumerate(self.kernels):
            if k.source != problem.Y[i] or k.target != problem.U[i]:
                raise SpaceMismatch(f"prescription kernel {i} is not Y_{i} -> U_{i}")


def _row_text(row: np.ndarray, space: FiniteSpace) -> str:
    nz = np.flatnonzero(row)
    if len(nz) == 1 and row[nz[0]] == 1.0:
        return space.atoms[nz[0]]
    return ";".join(f"{w:.17g}" for w in row)


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    """A finite product grid of prescription actions.

    ``stacks[i]`` has shape (G_i, |Y_i|, |U_i|); element ``k`` of the grid is the
    tuple picked by ``np.unravel_index(k, shape)``, so agent 0 varies slowest.
    """

    Y: tuple[FiniteSpace, ...]
    U: tuple[FiniteSpace, ...]
    stacks: tuple[np.ndarray, ...]
    references: tuple
    mode: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(s.shape[0] for s in self.stacks)

    def __len__(self) -> int:
        return math.prod(self.shape)

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def __getitem__(self, k: int) -> PrescriptionAction:
        if not -len(self) <= k < len(self):
            raise IndexError(k)
        idx = np.unravel_index(k % len(self), self.shape)
        return PrescriptionAction(
            tuple(
                Kernel(self.Y[i], self.U[i], self.stacks[i][j], reference=self.references[i])
                for i, j in enumerate(idx)
            )
        )

    def descriptor(self, k: int) -> str:
        idx = np.unravel_index(k, self.shape)
        parts = []
        for i, j in enumerate(idx):
            rows = "/".join(_row_text(r, self.U[i]) for r in self.stacks[i][j])
            parts.append(f"A{i + 1}:{rows}")
        return "|".join(parts)

    def descriptors(self) -> list[str]:
        return [self.descriptor(k) for k in range(len(self))]

    def locate(self, action: PrescriptionAction) -> Optional[int]:
        """Grid index of ``action`` (exact match on every row), or None."""
        idx = []
        for i, t in enumerate(action.tensors):
            hits = np.flatnonzero(np.all(self.stacks[i] == t[None], axis=(1, 2)))
            if not len(hits):
                return None
            idx.append(int(hits[0]))
        return int(np.ravel_multi_index(idx, self.shape))


def _simplex_lattice(n_parts: int, r: int) -> np.ndarray:
    """All points of {k/r} in the simplex, corners first in action order."""
    pts = [c for c in itertools.product(range(r, -1, -1), repeat=n_parts) if sum(c) == r]
    return np.array(pts, dtype=float) / r


def _kernels_from_rows(rows: np.ndarray, n_y: int) -> np.ndarray:
    choice = deterministic_tables(n_y, len(rows))
    return rows[choice]


def build_lambda_grid(
    problem: TeamProblem,
    mode: str = "deterministic",
    r: Optional[int] = None,
    *,
    slopes: Optional[Sequence[float]] = None,
    cap: int = DEFAULT_ENUM_CAP,
) -> LambdaGrid:
    """Finite stand-in for the prescription space.

    ``deterministic``: every tuple of deterministic kernels Y_i -> U_i.
    ``randomized``: kernels whose rows lie on the simplex lattice of resolution r.
    ``affine``: deterministic kernels y -> nearest action to a*y + b, for a in
    ``slopes`` and b over the action grid (1-d coordinates needed).
    """
    counts = []
    row_sets = []
    for i in range(problem.n_agents):
        n_y, n_u = len(problem.Y[i]), len(problem.U[i])
        if mode == "deterministic":
            rows = np.eye(n_u)
            counts.append(n_u**n_y)
        elif mode == "randomized":
            if r is None or r < 1:
                raise ValueError("randomized grid needs a resolution r >= 1")
            rows = _simplex_lattice(n_u, int(r))
            counts.append(len(rows) ** n_y)
        elif mode == "affine":
            rows = None
            counts.append(len(slopes or ()) * n_u)
        else:
            raise ValueError(f"unknown grid mode {mode!r}")
        row_sets.append(rows)
    total = math.prod(counts)
    if total > cap:
        raise CapExceeded(f"{mode} prescription grid", total, cap)
    if mode == "affine" and not slopes:
        raise ValueError("affine grid needs at least one slope")

    stacks = []
    for i in range(problem.n_agents):
        if mode == "affine":
            stacks.append(_affine_stack(problem.Y[i], problem.U[i], slopes))
        else:
            stacks.append(_kernels_from_rows(row_sets[i], len(problem.Y[i])))
    params = {"r": int(r)} if mode == "randomized" else {}
    if mode == "affine":
        params = {"slopes": [float(a) for a in slopes]}
    return LambdaGrid(
        problem.Y,
        problem.U,
        tuple(stacks),
        tuple(ch.reference for ch in problem.channels),
        mode,
        params,
    )


def _affine_stack(Y: FiniteSpace, U: FiniteSpace, slopes) -> np.ndarray:
    if Y.coords is None or U.coords is None or Y.dim != 1 or U.dim != 1:
        raise ValueError("affine grid needs 1-d coordinates on Y_i and U_i")
    y = Y.coords[:, 0]
    u = U.coords[:, 0]
    seen = {}
    for a in slopes:
        for b in u:
            nearest = np.argmin(np.abs(u[None, :] - (a * y + b)[:, None]), axis=1)
            seen.setdefault(tuple(int(j) for j in nearest), None)
    eye = np.eye(len(u))
    return np.array([eye[list(a)] for a in seen])


def grid_from_option(problem: TeamProblem, option: str, cap: int = DEFAULT_ENUM_CAP) -> LambdaGrid:
    """Parse ``deterministic``, ``randomized:R`` or ``affine:a1,a2,...``."""
    head, _, tail = option.partition(":")
    if head == "deterministic" and not tail:
        return build_lambda_grid(problem, "deterministic", cap=cap)
    if head == "randomized" and tail:
        return build_lambda_grid(problem, "randomized", int(tail), cap=cap)
    if head == "affine" and tail:
        return build_lambda_grid(problem, "affine", slopes=[float(a) for a in tail.split(",")], cap=cap)
    raise ValueError(f"bad grid option {option!r}; expected deterministic, randomized:R or affine:a,b,...")


def _l_weights(problem: TeamProblem, x: int, x0: int) -> np.ndarray:
    """c(x, x0, y, u) * prod_i W_i(y_i | x), axes (y_1..y_N, u_1..u_N)."""
    n = problem.n_agents
    ops: list = [problem.cost.table[x, x0], list(range(2 * n))]
    for i, ch in enumerate(problem.channels):
        ops += [ch.transition[:, x], [i]]
    return np.einsum(*ops, list(range(2 * n)))


def _contract_action(weights: np.ndarray, tensors: Sequence[np.ndarray]) -> float:
    n = len(tensors)
    ops: list = [weights, list(range(2 * n))]
    for i, t in enumerate(tensors):
        ops += [t, [i, n + i]]
    return float(np.einsum(*ops, [], optimize="greedy"))


def evaluate_L(problem: TeamProblem, x, x0, lam: PrescriptionAction) -> float:
    """Coordinator cost L(x, x0, lambda): the averaged cost given state and prescription."""
    lam.check(problem)
    return _contract_action(_l_weights(problem, problem.X.index(x), problem.X0.index(x0)), lam.tensors)


def evaluate_M(problem: TeamProblem, x0, lam: PrescriptionAction) -> float:
    """M(x0, lambda) = sum_x P(x | x0) L(x, x0, lambda)."""
    k = problem.X0.index(x0)
    if k in problem.null_common_atoms:
        raise ZeroMassAtom(f"common atom {problem.X0.atoms[k]!r} has zero probability")
    post = conditional_matrix(problem)[k]
    return float(sum(post[x] * evaluate_L(problem, x, k, lam) for x in range(len(problem.X)) if post[x] > 0))


def conditional_weights(problem: TeamProblem, x0: int) -> np.ndarray:
    """sum_x P(x | x0) c(x, x0, y, u) prod_i W_i(y_i | x), axes (y.., u..)."""
    n = problem.n_agents
    post = conditional_matrix(problem)[x0]
    ops: list = [problem.cost.table[:, x0], list(range(2 * n + 1)), post, [0]]
    for i, ch in enumerate(problem.channels):
        ops += [ch.transition, [1 + i, 0]]
    return np.einsum(*ops, list(range(1, 2 * n + 1)), optimize="greedy")


def m_row(problem: TeamProblem, x0: int, grid: LambdaGrid) -> np.ndarray:
    """M(x0, .) over the whole grid, flattened in grid order."""
    n = problem.n_agents
    v = conditional_weights(problem, x0)
    # interleave to (y_1, u_1, y_2, u_2, ...)
    t = np.transpose(v, [a for i in range(n) for a in (i, n + i)])
    for i, stack in enumerate(grid.stacks):
        t = np.tensordot(t, stack, axes=([i, i + 1], [1, 2]))
        t = np.moveaxis(t, -1, i)
    return t.reshape(-1)


@dataclass(frozen=True, eq=False)
class CentralizedProblem:
    """Dense table of M(x0, lambda) over positive-mass x0 atoms and a prescription grid."""

    problem: TeamProblem
    grid: LambdaGrid
    rows: tuple[int, ...]
    m_table: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def common_space(self) -> FiniteSpace:
        return self.problem.X0

    def row_labels(self) -> list[str]:
        return [self.problem.X0.atoms[k] for k in self.rows]


def reduce(problem: TeamProblem, grid: LambdaGrid) -> CentralizedProblem:
    if len(grid) == 0:
        raise ValueError("empty prescription grid")
    rows = problem.active_common_atoms
    table = np.empty((len(rows), len(grid)))
    for r, k in enumerate(rows):
        table[r] = m_row(problem, k, grid)
    table.setflags(write=False)
    prov = {"problem": problem.name, "grid_mode": grid.mode, "grid_params": dict(grid.params), "grid_size": len(grid)}
    return CentralizedProblem(problem, grid, rows, table, prov)


@dataclass(frozen=True)
class Prescription:
    """Grid index per X0 atom; ``None`` only at zero-probability atoms."""

    assignment: tuple[Optional[int], ...]

    @classmethod
    def constant(cls, cp: CentralizedProblem, k: int) -> "Prescription":
        return cls(tuple(k for _ in cp.common_space.atoms))


def solve_centralized(cp: CentralizedProblem) -> tuple[Prescription, float]:
    """Pointwise minimisation of M(x0, .) with lowest-index tie-breaking."""
    if cp.m_table.shape[1] == 0:
        raise ValueError("empty prescription grid")
    best = np.argmin(cp.m_table, axis=1)
    assignment: list[Optional[int]] = [None] * len(cp.common_space)
    for r, k in enumerate(cp.rows):
        assignment[k] = int(best[r])
    mu0 = cp.problem.common_marginal.weights
    value = float(sum(mu0[k] * cp.m_table[r, best[r]] for r, k in enumerate(cp.rows)))
    return Prescription(tuple(assignment)), value


def centralized_value(cp: CentralizedProblem, prescription: Prescription) -> float:
    mu0 = cp.problem.common_marginal.weights
    return float(sum(mu0[k] * cp.m_table[r, prescription.assignment[k]] for r, k in enumerate(cp.rows)))


def lift(cp: CentralizedProblem, prescription: Prescription) -> PolicyProfile:
    """gamma_i(x0, y_i) = lambda_i(x0)(y_i) for the grid element assigned at x0."""
    problem = cp.problem
    if len(prescription.assignment) != len(problem.X0):
        raise ValueError("prescription must list one entry per common atom")
    idx = []
    for k, a in enumerate(prescription.assignment):
        if a is None:
            if k not in problem.null_common_atoms:
                raise ValueError(f"no prescription assigned at common atom {problem.X0.atoms[k]!r}")
            a = 0  # any grid element; zero-probability atom
        idx.append(np.unravel_index(a, cp.grid.shape))
    tensors = [
        np.stack([cp.grid.stacks[i][ix[i]] for ix in idx]) for i in range(problem.n_agents)
    ]
    return PolicyProfile.from_tensors(problem, tensors)


def prescription_actions(problem: TeamProblem, gamma: PolicyProfile) -> list[PrescriptionAction]:
    """lambda_gamma(x0): the per-agent sections gamma_i(x0, .) at each x0."""
    tensors = gamma.tensors(problem)
    return [
        PrescriptionAction.from_tensors(problem, [t[k] for t in tensors]) for k in range(len(problem.X0))
    ]
