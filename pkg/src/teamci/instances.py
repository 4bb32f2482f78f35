"""Ready-made problems: the binary coordination toy, the quantised quadratic toy,
and a random instance generator."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .measures import FiniteSpace, Measure, product_space
from .model import CostSpec, ObservationChannel, TeamProblem


def toy1() -> TeamProblem:
    """Two agents, binary everything.

    The state is a fair bit, the common observation copies it with probability
    0.8, each agent sees it through a BSC(0.1), and the cost counts mismatches
    u_1 != x, u_2 != x and u_1 != u_2.
    """
    X = FiniteSpace.from_labels("X", ["0", "1"])
    X0 = FiniteSpace.from_labels("X0", ["0", "1"])
    Ys = [FiniteSpace.from_labels(f"Y{i + 1}", ["0", "1"]) for i in range(2)]
    Us = [FiniteSpace.from_labels(f"U{i + 1}", ["0", "1"]) for i in range(2)]
    joint = Measure(product_space([X, X0]), [0.4, 0.1, 0.1, 0.4])
    channels = [ObservationChannel.build(i, "binary-symmetric", {"p": 0.1}, X, Ys[i]) for i in range(2)]
    cost = CostSpec.build("mismatch", {"state": [1.0, 1.0], "coupling": 1.0}, X, X0, Ys, Us)
    return TeamProblem(X, X0, Ys, Us, joint, channels, cost, name="toy1")


def toy_g(
    n_state: int = 5,
    n_obs: int = 5,
    n_action: int = 41,
    action_range: float = 10.0,
    compact_actions: bool = False,
    sigmas: Sequence[float] = (2.0, 3.0),
) -> TeamProblem:
    """Quantised quadratic team: c = (u_1 + u_2 - x)^2 + 0.1 (u_1^2 + u_2^2).

    x sits on a grid over [-2, 2] with discretised N(0, 1) weights; the common
    observation is x plus unit Gaussian noise and agent i sees x plus noise of
    scale ``sigmas[i]``, all discretised onto [-2, 2] grids.
    """
    X = FiniteSpace.grid("X", -2.0, 2.0, n_state)
    X0 = FiniteSpace.grid("X0", -2.0, 2.0, n_state)
    Ys = [FiniteSpace.grid(f"Y{i + 1}", -2.0, 2.0, n_obs) for i in range(2)]
    Us = [
        FiniteSpace.grid(f"U{i + 1}", -action_range, action_range, n_action, compact=compact_actions)
        for i in range(2)
    ]
    x = X.coords[:, 0]
    prior = np.exp(-(x**2) / 2)
    prior /= prior.sum()
    common = ObservationChannel.build(0, "additive-noise", {"sigma": 1.0}, X, X0).transition
    joint = Measure(product_space([X, X0]), (prior[:, None] * common.T).ravel())
    channels = [
        ObservationChannel.build(i, "additive-noise", {"sigma": s}, X, Ys[i]) for i, s in enumerate(sigmas)
    ]
    cost = CostSpec.build("quadratic", {"team": 1.0, "effort": [0.1, 0.1]}, X, X0, Ys, Us)
    return TeamProblem(X, X0, Ys, Us, joint, channels, cost, name="toy_g")


def random_instance(
    rng: np.random.Generator,
    n_agents: int = 2,
    sizes: Sequence[int] = (1, 2, 3),
    obs_sizes: Sequence[int] | None = None,
    action_sizes: Sequence[int] | None = None,
) -> TeamProblem:
    """Random law, channels and [0, 1] cost table; every space size drawn from ``sizes``."""
    pick = lambda choices: int(rng.choice(choices))
    X = FiniteSpace.from_labels("X", range(pick(sizes)))
    X0 = FiniteSpace.from_labels("X0", range(pick(sizes)))
    Ys = [FiniteSpace.from_labels(f"Y{i + 1}", range(pick(obs_sizes or sizes))) for i in range(n_agents)]
    Us = [FiniteSpace.from_labels(f"U{i + 1}", range(pick(action_sizes or sizes))) for i in range(n_agents)]
    joint = Measure(product_space([X, X0]), rng.dirichlet(np.ones(len(X) * len(X0))))
    channels = []
    for i, Y in enumerate(Ys):
        ref = Measure(Y, rng.dirichlet(np.ones(len(Y))))
        W = rng.dirichlet(np.ones(len(Y)), size=len(X)).T  # W[y, x]
        channels.append(ObservationChannel(i, ref, W / ref.weights[:, None]))
    shape = (len(X), len(X0), *map(len, Ys), *map(len, Us))
    cost = CostSpec(rng.uniform(0.0, 1.0, size=shape))
    return TeamProblem(X, X0, Ys, Us, joint, channels, cost, name="random")
