import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import naive_J, small_instance
from teamci.instances import toy1
from teamci.measures import FiniteSpace, Measure, product_space
from teamci.model import CapExceeded, CostSpec, ObservationChannel, PolicyProfile, TeamProblem, expected_cost
from teamci.solvers import brute_force, person_by_person, solve_common_information


def enumerate_min(problem):
    """Independent oracle: loop over every deterministic profile and score it with naive_J."""
    n_x0 = len(problem.X0)
    per_agent = []
    for Y, U in zip(problem.Y, problem.U):
        cells = n_x0 * len(Y)
        per_agent.append([np.eye(len(U))[list(t)].reshape(n_x0, len(Y), len(U))
                          for t in itertools.product(range(len(U)), repeat=cells)])
    return min(naive_J(problem, list(ts)) for ts in itertools.product(*per_agent))


def permuted(problem, order):
    n = problem.n_agents
    chans = [ObservationChannel(k, problem.channels[i].reference, problem.channels[i].density)
             for k, i in enumerate(order)]
    axes = [0, 1, *(2 + i for i in order), *(2 + n + i for i in order)]
    return TeamProblem(problem.X, problem.X0, [problem.Y[i] for i in order], [problem.U[i] for i in order],
                       problem.joint_law, chans, CostSpec(np.transpose(problem.cost.table, axes)))


def with_silent_common_atom(problem, rng):
    X0 = FiniteSpace.from_labels("X0", [*problem.X0.atoms, "ghost"])
    law = np.zeros((len(problem.X), len(X0)))
    law[:, :-1] = problem.joint
    table = problem.cost.table
    extra = rng.uniform(-5, 5, size=(table.shape[0], 1, *table.shape[2:])) ** 2
    return TeamProblem(problem.X, X0, problem.Y, problem.U, Measure(product_space([problem.X, X0]), law.ravel()),
                       problem.channels, CostSpec(np.concatenate([table, extra], axis=1)))


def zero_cost(problem):
    return TeamProblem(problem.X, problem.X0, problem.Y, problem.U, problem.joint_law, problem.channels,
                       CostSpec(np.zeros_like(problem.cost.table)))


# -- brute force ---------------------------------------------------------------------


def test_brute_zero_cost_returns_first_profile():
    res = brute_force(zero_cost(toy1()))
    assert res.value == 0.0
    for t in res.profile.tensors(toy1()):
        assert np.all(t[..., 0] == 1)


def test_brute_single_atoms():
    one = FiniteSpace.from_labels("S", ["s"])
    U = FiniteSpace.from_labels("U", ["a", "b", "c"])
    p = TeamProblem(one, one, [one], [U], Measure(product_space([one, one]), [1.0]),
                    [ObservationChannel(0, Measure.uniform(one), [[1.0]])],
                    CostSpec(np.array([3.0, 1.0, 2.0]).reshape(1, 1, 1, 3)))
    res = brute_force(p)
    assert res.value == 1.0 and res.counts["profiles"] == 3
    assert res.profile.tensors(p)[0][0, 0, 1] == 1


def test_brute_toy1():
    p = toy1()
    res = brute_force(p)
    assert res.counts["profiles"] == 256
    assert res.value == pytest.approx(0.38, abs=1e-12)
    assert res.value == pytest.approx(enumerate_min(p), abs=1e-12)


@pytest.mark.parametrize("n_agents", [1, 3])
@pytest.mark.parametrize("seed", range(3))
def test_brute_matches_naive_enumeration(n_agents, seed):
    p = small_instance(seed, n_agents=n_agents, sizes=(1, 2))
    assert brute_force(p).value == pytest.approx(enumerate_min(p), abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_brute_value_reproduces_on_reevaluation(seed):
    p = small_instance(seed, sizes=(1, 2))
    res = brute_force(p)
    assert expected_cost(p, res.profile) == res.value
    assert naive_J(p, res.profile.tensors(p)) == pytest.approx(res.value, abs=1e-12)


def test_brute_cap():
    with pytest.raises(CapExceeded, match="256"):
        brute_force(toy1(), cap=255)


# -- common information ------------------------------------------------------------------


def test_ci_toy1_agrees_with_brute():
    p = toy1()
    res = solve_common_information(p)
    assert res.value == pytest.approx(0.38, abs=1e-12)
    assert expected_cost(p, res.profile) == pytest.approx(res.value, abs=1e-12)
    assert res.counts == {"grid_size": 16, "rows": 2}


@given(st.integers(0, 2**32 - 1))
def test_ci_equals_brute_on_random_instances(seed):
    p = small_instance(seed, sizes=(1, 2, 3))
    assert solve_common_information(p).value == pytest.approx(brute_force(p).value, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.permutations([0, 1, 2]))
def test_optimum_invariant_under_agent_relabelling(seed, order):
    p = small_instance(seed, n_agents=3, sizes=(1, 2))
    q = permuted(p, order)
    assert brute_force(q).value == pytest.approx(brute_force(p).value, abs=1e-12)
    assert solve_common_information(q).value == pytest.approx(solve_common_information(p).value, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_optimum_ignores_zero_mass_common_atom(seed):
    p = small_instance(seed, sizes=(1, 2))
    q = with_silent_common_atom(p, np.random.default_rng(seed))
    assert solve_common_information(q).value == pytest.approx(solve_common_information(p).value, abs=1e-12)
    assert brute_force(q).value == pytest.approx(brute_force(p).value, abs=1e-12)


# -- person by person ----------------------------------------------------------------------


def test_pbp_toy1_stuck_at_first_profile():
    res = person_by_person(toy1())
    assert res.value == pytest.approx(1.0, abs=1e-12)
    assert res.value > brute_force(toy1()).value + 0.5
    assert res.counts["cycles"] == 1


def test_pbp_from_optimum_is_fixed_point():
    p = toy1()
    opt = brute_force(p)
    res = person_by_person(p, initial=opt.profile)
    assert res.value == opt.value
    assert all(row["value"] == opt.value for row in res.trace)


@pytest.mark.parametrize("seed", range(5))
def test_pbp_single_agent_is_exact(seed):
    p = small_instance(seed, n_agents=1)
    assert person_by_person(p).value == pytest.approx(brute_force(p).value, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_pbp_trace_monotone_and_bounded_by_optimum(seed):
    p = small_instance(seed, n_agents=3, sizes=(1, 2))
    res = person_by_person(p)
    vals = [row["value"] for row in res.trace]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert res.value >= brute_force(p).value - 1e-12
    assert expected_cost(p, res.profile) == res.value


def test_pbp_invalid_arguments():
    with pytest.raises(ValueError):
        person_by_person(toy1(), max_iter=0)
    with pytest.raises(ValueError):
        person_by_person(toy1(), tol=0.0)
    with pytest.raises(CapExceeded):
        person_by_person(toy1(), cap=15)
