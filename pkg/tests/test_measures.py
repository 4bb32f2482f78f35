import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teamci.measures import (
    CaratheodoryTestFunction,
    FiniteSpace,
    Kernel,
    Measure,
    SpaceMismatch,
    default_bank,
    f_norm1,
    kernel_inf_norm,
    pairing,
    product_measure,
    product_space,
    tv_distance,
    wstar_distance,
)

P2 = FiniteSpace.from_labels("P", ["p0", "p1"])
Q2 = FiniteSpace.from_labels("Q", ["q0", "q1"])


def _simplex(rng, n, size=None):
    return rng.dirichlet(np.ones(n), size=size)


# -- spaces and measures -------------------------------------------------------


def test_space_rejects_empty_and_duplicates():
    with pytest.raises(ValueError):
        FiniteSpace.from_labels("E", [])
    with pytest.raises(ValueError, match="duplicate"):
        FiniteSpace.from_labels("D", ["a", "a"])


def test_space_coordinates_share_one_dimension():
    with pytest.raises(ValueError):
        FiniteSpace("C", ("a", "b"), np.zeros((3, 1)))
    s = FiniteSpace("C", ("a", "b"), [[0.0, 1.0], [2.0, 3.0]])
    assert s.dim == 2


def test_grid_labels_and_index():
    g = FiniteSpace.grid("G", -1.0, 1.0, 5)
    assert g.atoms == ("-1", "-0.5", "0", "0.5", "1")
    assert g.index("0.5") == 3
    assert not g.compact


@pytest.mark.parametrize(
    "weights, kind, ok",
    [
        ([0.5, 0.5], "probability", True),
        ([0.5, 0.5 + 5e-10], "probability", True),
        ([0.5, 0.6], "probability", False),
        ([-0.1, 1.1], "probability", False),
        ([0.2, 0.3], "sub-probability", True),
        ([0.6, 0.6], "sub-probability", False),
        ([-3.0, 7.5], "signed", True),
        ([np.inf, 0.0], "signed", False),
    ],
)
def test_measure_kind_invariants(weights, kind, ok):
    if ok:
        Measure(P2, weights, kind)
    else:
        with pytest.raises(ValueError):
            Measure(P2, weights, kind)


# -- tv ----------------------------------------------------------------------------


def test_tv_examples():
    u = Measure.uniform(P2)
    d0, d1 = Measure.point_mass(P2, "p0"), Measure.point_mass(P2, "p1")
    assert tv_distance(u, u) == 0.0
    assert tv_distance(d0, d1) == 2.0
    assert tv_distance(u, d0) == pytest.approx(1.0, abs=1e-15)


def test_tv_equals_twice_max_subset_difference(rng):
    import itertools

    S = FiniteSpace.from_labels("S", range(5))
    a, b = Measure(S, _simplex(rng, 5)), Measure(S, _simplex(rng, 5))
    best = max(
        abs(sum(a.weights[list(D)]) - sum(b.weights[list(D)]))
        for r in range(6)
        for D in itertools.combinations(range(5), r)
    )
    assert tv_distance(a, b) == pytest.approx(2 * best, abs=1e-12)


def test_tv_space_mismatch():
    with pytest.raises(SpaceMismatch):
        tv_distance(Measure.uniform(P2), Measure.uniform(Q2))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_tv_is_a_metric(seed, n):
    rng = np.random.default_rng(seed)
    S = FiniteSpace.from_labels("S", range(n))
    a, b, c = (Measure(S, _simplex(rng, n)) for _ in range(3))
    assert tv_distance(a, b) == tv_distance(b, a)
    assert tv_distance(a, a) == 0.0
    assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-12


# -- product -------------------------------------------------------------------------


def test_product_measure_examples():
    d = Measure.point_mass(P2, "p0")
    one = product_measure([d])
    assert np.array_equal(one.weights, d.weights)
    pq = product_measure([d, Measure.point_mass(Q2, "q1")])
    assert pq.space.atoms == ("(p0,q0)", "(p0,q1)", "(p1,q0)", "(p1,q1)")
    assert np.array_equal(pq.weights, [0, 1, 0, 0])
    uu = product_measure([Measure.uniform(P2), Measure.uniform(Q2)])
    assert np.array_equal(uu.weights, [0.25] * 4)
    assert uu.kind == "probability"


def test_product_measure_kinds_and_errors():
    sub = Measure(P2, [0.2, 0.3], "sub-probability")
    assert product_measure([sub, Measure.uniform(Q2)]).kind == "sub-probability"
    with pytest.raises(ValueError):
        product_measure([])
    with pytest.raises(ValueError):
        product_measure([Measure(P2, [1.0, -1.0], "signed")])


# -- pairing and norms ------------------------------------------------------------


@pytest.fixture
def grids():
    Y = FiniteSpace.from_labels("Y", range(3))
    U = FiniteSpace.grid("U", -1.0, 1.0, 4)
    return Y, U


def test_pairing_examples(grids, rng):
    Y, U = grids
    mu = Measure(Y, _simplex(rng, 3))
    g = Kernel(Y, U, _simplex(rng, 4, size=3))
    ones = CaratheodoryTestFunction(Y, U, np.ones((3, 4)))
    zero = CaratheodoryTestFunction(Y, U, np.zeros((3, 4)))
    assert pairing(g, ones, mu) == pytest.approx(1.0, abs=1e-15)
    assert pairing(g, zero, mu) == 0.0


def test_pairing_deterministic_matches_double_sum(grids, rng):
    Y, U = grids
    mu = Measure(Y, _simplex(rng, 3))
    acts = [2, 0, 3]
    g = Kernel.deterministic(Y, U, acts)
    f = CaratheodoryTestFunction(Y, U, rng.normal(size=(3, 4)))
    oracle = 0.0
    for y in range(3):
        for u in range(4):
            oracle += mu.weights[y] * f.values[y, u] * (1.0 if acts[y] == u else 0.0)
    assert pairing(g, f, mu) == pytest.approx(oracle, abs=1e-15)
    assert pairing(g, f, mu) == pytest.approx(sum(mu.weights[y] * f.values[y, acts[y]] for y in range(3)))


def test_pairing_rejects_mismatch(grids):
    Y, U = grids
    g = Kernel(Y, U, np.full((3, 4), 0.25))
    f = CaratheodoryTestFunction(P2, U, np.ones((2, 4)))
    with pytest.raises(SpaceMismatch):
        pairing(g, f, Measure.uniform(Y))
    with pytest.raises(ValueError):
        pairing(g, CaratheodoryTestFunction(Y, U, np.ones((3, 4))), Measure(Y, [0.1, 0.1, 0.1], "sub-probability"))


def test_f_norm1_examples(grids):
    Y, U = grids
    mu = Measure.uniform(Y)
    assert f_norm1(CaratheodoryTestFunction(Y, U, np.zeros((3, 4))), mu) == 0.0
    assert f_norm1(CaratheodoryTestFunction(Y, U, np.full((3, 4), -2.5)), mu) == pytest.approx(2.5)
    ind = np.zeros((3, 4))
    ind[1] = 1.0
    assert f_norm1(CaratheodoryTestFunction(Y, U, ind), mu) == pytest.approx(1 / 3)


def test_kernel_inf_norm_examples(grids, rng):
    Y, U = grids
    mu = Measure.uniform(Y)
    assert kernel_inf_norm(Kernel(Y, U, _simplex(rng, 4, size=3)), mu) == pytest.approx(1.0)
    assert kernel_inf_norm(Kernel(Y, U, np.zeros((3, 4)), "sub-probability"), mu) == 0.0
    signed = Kernel(P2, Q2, [[0.5, -0.5], [0.25, -0.25]], "signed")
    assert kernel_inf_norm(signed, Measure.uniform(P2)) == 1.0


def test_kernel_inf_norm_ignores_zero_mass_atoms():
    rows = np.array([[1.0, 0.0], [7.0, -7.0]])
    k = Kernel(P2, Q2, rows, "signed")
    assert kernel_inf_norm(k, Measure(P2, [1.0, 0.0])) == 1.0
    with pytest.raises(ValueError):
        kernel_inf_norm(k)


@given(st.integers(0, 2**32 - 1))
def test_pairing_bilinear_and_bounded(seed):
    rng = np.random.default_rng(seed)
    Y = FiniteSpace.from_labels("Y", range(int(rng.integers(1, 5))))
    U = FiniteSpace.from_labels("U", range(int(rng.integers(1, 5))))
    mu = Measure(Y, _simplex(rng, len(Y)))
    g = Kernel(Y, U, _simplex(rng, len(U), size=len(Y)))
    f = CaratheodoryTestFunction(Y, U, rng.normal(size=(len(Y), len(U))))
    h = CaratheodoryTestFunction(Y, U, rng.normal(size=(len(Y), len(U))))
    a, b = rng.normal(size=2)
    lhs = pairing(g, a * f + b * h, mu)
    assert lhs == pytest.approx(a * pairing(g, f, mu) + b * pairing(g, h, mu), abs=1e-12)
    assert abs(pairing(g, f, mu)) <= f_norm1(f, mu) * kernel_inf_norm(g, mu) + 1e-12
    # the bound also holds for signed kernels
    s = Kernel(Y, U, rng.normal(size=(len(Y), len(U))), "signed")
    assert abs(pairing(s, f, mu)) <= f_norm1(f, mu) * kernel_inf_norm(s, mu) + 1e-12


# -- w* distance ------------------------------------------------------------------------


def test_wstar_distance_examples(grids, rng):
    Y, U = grids
    mu = Measure(Y, _simplex(rng, 3))
    bank = default_bank(Y, U)
    g1 = Kernel(Y, U, _simplex(rng, 4, size=3))
    g2 = Kernel(Y, U, _simplex(rng, 4, size=3))
    assert wstar_distance(g1, g1, bank, mu) == 0.0
    assert wstar_distance(g1, g2, bank, mu) == wstar_distance(g2, g1, bank, mu)
    f = bank[5]
    d = abs(pairing(g1, f, mu) - pairing(g2, f, mu))
    assert wstar_distance(g1, g2, [f], mu) == pytest.approx(d / (2 * (1 + d)), abs=1e-16)
    with pytest.raises(ValueError):
        wstar_distance(g1, g2, [], mu)


def test_wstar_distance_ignores_zero_mass_rows(grids):
    Y, U = grids
    mu = Measure(Y, [0.5, 0.5, 0.0])
    a = Kernel.deterministic(Y, U, [0, 1, 2])
    b = Kernel.deterministic(Y, U, [0, 1, 3])
    assert wstar_distance(a, b, default_bank(Y, U), mu) == 0.0


def test_default_bank_separates_grid_kernels(grids, rng):
    Y, U = grids
    mu = Measure.uniform(Y)
    bank = default_bank(Y, U)
    assert len(bank) == 12
    a = Kernel(Y, U, _simplex(rng, 4, size=3))
    rows = a.rows.copy()
    rows[1] = rows[1][::-1]
    assert wstar_distance(a, Kernel(Y, U, rows), bank, mu) > 0


@given(st.integers(0, 2**32 - 1))
def test_wstar_distance_vanishes_iff_pairings_converge(seed):
    rng = np.random.default_rng(seed)
    Y = FiniteSpace.from_labels("Y", range(2))
    U = FiniteSpace.grid("U", 0.0, 1.0, 3)
    mu = Measure(Y, _simplex(rng, 2))
    bank = default_bank(Y, U)
    limit = Kernel(Y, U, _simplex(rng, 3, size=2))
    other = Kernel(Y, U, _simplex(rng, 3, size=2))
    # converging: t_n -> 0; oscillating: t_n alternates between 0 and 1
    conv = [Kernel(Y, U, (1 - 2.0**-n) * limit.rows + 2.0**-n * other.rows) for n in range(1, 60)]
    osc = [limit if n % 2 else other for n in range(1, 60)]
    d_conv = [wstar_distance(g, limit, bank, mu) for g in conv]
    d_osc = [wstar_distance(g, limit, bank, mu) for g in osc]
    gaps = [max(abs(pairing(g, f, mu) - pairing(limit, f, mu)) for f in bank) for g in osc]
    assert d_conv[-1] < 1e-15
    assert all(x >= y - 1e-15 for x, y in zip(d_conv, d_conv[1:]))
    if max(gaps) > 1e-9:
        assert max(d_osc[-10:]) > 0
