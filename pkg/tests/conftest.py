"""Shared fixtures and independent oracles.

The oracles below loop over every atom tuple with plain Python and touch only
the raw tables of a problem (joint law, channel transitions, cost).  They do
not share code with the library's einsum-based evaluators.
"""

import itertools

import numpy as np
import pytest
from hypothesis import settings

from teamci.instances import random_instance, toy1

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def naive_J(problem, tensors):
    """E[c] by the five-fold sum over (x, x0, y, u); tensors[i][x0, y_i, u_i]."""
    n = problem.n_agents
    W = [ch.density * ch.reference.weights[:, None] for ch in problem.channels]
    total = 0.0
    for x, x0 in itertools.product(range(len(problem.X)), range(len(problem.X0))):
        p = problem.joint_law.weights[x * len(problem.X0) + x0]
        if p == 0:
            continue
        for ys in itertools.product(*(range(len(Y)) for Y in problem.Y)):
            py = p
            for i in range(n):
                py *= W[i][ys[i], x]
            for us in itertools.product(*(range(len(U)) for U in problem.U)):
                w = py
                for i in range(n):
                    w *= tensors[i][x0, ys[i], us[i]]
                total += w * problem.cost.table[(x, x0, *ys, *us)]
    return total


def naive_L(problem, x, x0, lam):
    """sum over (y, u) of prod q_i mu_i(y_i) lambda_i(y_i)(u_i) c; lam[i][y_i, u_i]."""
    n = problem.n_agents
    total = 0.0
    for ys in itertools.product(*(range(len(Y)) for Y in problem.Y)):
        py = 1.0
        for i, ch in enumerate(problem.channels):
            py *= ch.density[ys[i], x] * ch.reference.weights[ys[i]]
        for us in itertools.product(*(range(len(U)) for U in problem.U)):
            w = py
            for i in range(n):
                w *= lam[i][ys[i], us[i]]
            total += w * problem.cost.table[(x, x0, *ys, *us)]
    return total


def naive_M(problem, x0, lam):
    col = [problem.joint_law.weights[x * len(problem.X0) + x0] for x in range(len(problem.X))]
    mass = sum(col)
    return sum(c / mass * naive_L(problem, x, x0, lam) for x, c in enumerate(col))


def random_tensors(problem, rng, deterministic=False):
    out = []
    for Y, U in zip(problem.Y, problem.U):
        shape = (len(problem.X0), len(Y))
        if deterministic:
            out.append(np.eye(len(U))[rng.integers(len(U), size=shape)])
        else:
            out.append(rng.dirichlet(np.ones(len(U)), size=shape))
    return out


def small_instance(seed, **kw):
    return random_instance(np.random.default_rng(seed), **kw)


@pytest.fixture
def toy():
    return toy1()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
