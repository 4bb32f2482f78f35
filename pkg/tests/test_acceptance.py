"""Acceptance criteria A1-A8, each printed as one PASS/FAIL line."""

import time

import numpy as np
import pytest

from teamci import fixture_path
from teamci.cli import main
from teamci.diagnostics import (
    escaping_mass_demo,
    lsc_probe,
    probe_sequences,
    sublevel_tightness,
)
from teamci.fileio import parse_problem, sha256_file
from teamci.instances import random_instance, toy_g
from teamci.model import expected_cost
from teamci.reduction import build_lambda_grid, grid_from_option, lift, reduce, solve_centralized
from teamci.solvers import brute_force, person_by_person, solve_common_information

pytestmark = pytest.mark.acceptance

TOL = 1e-12
AFFINE = "affine:-1,-0.5,0,0.5,1"


def report(capsys, tag, ok, detail):
    with capsys.disabled():
        print(f"\n{tag} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{tag}: {detail}"


@pytest.fixture(scope="module")
def a1_instances():
    rng = np.random.default_rng(2024)
    return [random_instance(rng, n_agents=2, sizes=(1, 2, 3)) for _ in range(200)]


@pytest.fixture(scope="module")
def a1_results(a1_instances):
    start = time.perf_counter()
    out = [(brute_force(p), solve_common_information(p)) for p in a1_instances]
    return out, time.perf_counter() - start


def test_A1_reduction_equivalence(capsys, a1_results):
    results, elapsed = a1_results
    worst = max(abs(b.value - c.value) for b, c in results)
    ok = worst <= TOL and elapsed < 60
    report(capsys, "A1", ok, f"200 instances, max |brute - ci| = {worst:.3g} (tol 1e-12), {elapsed:.2f} s")


def test_A2_lift_consistency(capsys, a1_instances, a1_results):
    results, _ = a1_results
    worst = 0.0
    for p, (_, c) in zip(a1_instances, results):
        lifted = lift(c.centralized, c.prescription)
        worst = max(worst, abs(expected_cost(p, lifted) - c.value))
    report(capsys, "A2", worst <= TOL, f"200 instances, max |J(lift) - coordinator value| = {worst:.3g}")


def test_A3_deterministic_sufficiency(capsys):
    rng = np.random.default_rng(2025)
    start = time.perf_counter()
    below, increase, corner = 0.0, 0.0, 0.0
    for _ in range(50):
        p = random_instance(rng, n_agents=2, sizes=(1, 2, 3), obs_sizes=(1, 2), action_sizes=(2, 3))
        det = solve_centralized(reduce(p, build_lambda_grid(p, "deterministic")))[1]
        vals = [solve_centralized(reduce(p, build_lambda_grid(p, "randomized", r)))[1] for r in (1, 2, 4, 8)]
        below = max(below, max(det - v for v in vals))
        increase = max(increase, max(b - a for a, b in zip(vals, vals[1:])))
        corner = max(corner, max(abs(v - det) for v in vals))
    elapsed = time.perf_counter() - start
    ok = below <= TOL and increase <= TOL and corner <= TOL and elapsed < 300
    report(
        capsys, "A3", ok,
        f"50 instances, r in (1,2,4,8): max drop below deterministic {below:.3g}, "
        f"max increase in r {increase:.3g}, max |lattice - deterministic| {corner:.3g}, {elapsed:.1f} s",
    )


def test_A4_escaping_mass(capsys):
    rep = escaping_mass_demo(30)
    k = rep.names.index("gaussian")
    n = rep.steps.astype(float)
    expected = np.exp(-(n**2))
    live = expected >= 1e-300
    rel = float(np.max(np.abs(rep.pairings[live, k] - expected[live]) / expected[live]))
    clamped = bool(np.all(rep.pairings[~live, k] == 0.0) and np.all(rep.underflow[~live, k]))
    last = rep.pairings[-1, k] == 0.0 and rep.underflow[-1, k]
    mass_ok = bool(np.all(np.abs(rep.row_mass - 1.0) <= 1e-12))
    limit_ok = bool(np.all(rep.limit_row_mass == 0.0)) and not rep.limit_is_probability
    ok = rel <= 1e-15 and clamped and last and mass_ok and limit_ok
    report(
        capsys, "A4", ok,
        f"max relative error {rel:.3g} on n <= {int(n[live][-1])}, n = 30 reported as underflow-to-0: {bool(last)}, "
        f"row masses 1: {mass_ok}, limit row mass 0: {limit_ok}",
    )


def test_A5_lsc_probe(capsys):
    rng = np.random.default_rng(2026)
    start = time.perf_counter()
    worst_gap, worst_final, count = np.inf, 0.0, 0
    for _ in range(20):
        p = random_instance(rng, n_agents=2, sizes=(1, 2, 3))
        seqs = [(s, lim) for _, s, lim in probe_sequences(p, rng, 5, 5, n_steps=64)]
        for k in p.active_common_atoms:
            for res in lsc_probe(p, p.X0.atoms[k], seqs).results:
                worst_gap = min(worst_gap, res.gap)
                worst_final = max(worst_final, res.final_deviation)
                count += 1
    elapsed = time.perf_counter() - start
    ok = worst_gap >= -1e-9 and worst_final <= 1e-6 and elapsed < 120
    report(
        capsys, "A5", ok,
        f"20 instances x 10 sequences ({count} probes over common atoms): min liminf gap {worst_gap:.3g}, "
        f"max |M(lambda^64) - M(lambda)| {worst_final:.3g}, {elapsed:.1f} s",
    )


def test_A6_tightness(capsys):
    start = time.perf_counter()
    p = toy_g()
    cp = reduce(p, grid_from_option(p, AFFINE))
    radii, verdicts = [], []
    for k in cp.rows:
        r = 2 * cp.m_table[cp.rows.index(k)].min()
        rep = sublevel_tightness(p, cp, p.X0.atoms[k], r)
        verdicts.append(rep)
        radii.append(rep.tightness.minimal_radius if rep.tightness.tight else None)
    tight = all(R is not None and R < 10 for R in radii)
    ic = all(bool(v.ic) for v in verdicts)
    floor = verdicts[0].channel_floor
    q = toy_g(compact_actions=True)
    cq = reduce(q, grid_from_option(q, AFFINE))
    compact = [
        sublevel_tightness(q, cq, q.X0.atoms[k], 2 * cq.m_table[cq.rows.index(k)].min()).tightness.minimal_index
        for k in cq.rows
    ]
    elapsed = time.perf_counter() - start
    ok = tight and ic and floor > 0 and all(i == 0 for i in compact) and elapsed < 120
    report(
        capsys, "A6", ok,
        f"Toy-G r = 2 min per x0: tight at R = {radii}, IC class met: {ic}, channel floor {floor:.4g}, "
        f"compact actions tight at first element: {all(i == 0 for i in compact)}, {elapsed:.1f} s",
    )


def test_A7_person_by_person(capsys, a1_instances, a1_results):
    results, _ = a1_results
    monotone, above, strict = True, True, 0
    for p, (b, _) in zip(a1_instances, results):
        res = person_by_person(p)
        vals = [t["value"] for t in res.trace]
        monotone &= all(y <= x for x, y in zip(vals, vals[1:]))
        above &= res.value >= b.value - TOL
        strict += res.value > b.value + 1e-9
    gaps = {}
    for name in ("toy1", "pbp_gap"):
        fixture = parse_problem(fixture_path(name))
        gaps[name] = person_by_person(fixture).value - brute_force(fixture).value
    ok = monotone and above and all(g > 1e-9 for g in gaps.values())
    shown = ", ".join(f"{k} {v:.3g}" for k, v in gaps.items())
    report(
        capsys, "A7", ok,
        f"200 instances: traces monotone {monotone}, final >= brute {above}, strict gaps {strict}; "
        f"shipped fixtures pbp - brute: {shown}",
    )


REPLAY_RUNS = [
    ["solve", "toy1", "--method", "brute"],
    ["solve", "toy1", "--method", "ci", "--grid", "randomized:2"],
    ["solve", "toy1", "--method", "pbp"],
    ["reduce", "toy1"],
    ["compare", "toy1"],
    ["diagnose", "wstar", "toy1"],
    ["diagnose", "escaping-mass"],
    ["diagnose", "tightness", "toy_g", "--grid", AFFINE],
    ["diagnose", "ic", "toy_g", "--grid", AFFINE],
    ["diagnose", "sublevel", "toy_g", "--grid", AFFINE],
    ["diagnose", "lsc", "toy1", "--seed", "7"],
]


def test_A8_reproducibility(capsys, tmp_path):
    checked, bad = 0, []
    for j, argv in enumerate(REPLAY_RUNS):
        argv = [str(fixture_path(a)) if a in ("toy1", "toy_g") else a for a in argv]
        first, second = tmp_path / f"run{j}", tmp_path / f"replay{j}"
        assert main([*argv, "--out", str(first)]) == 0, argv
        manifest = next(first.glob("*.manifest.json"))
        code = main(["replay", str(manifest), "--out", str(second)])
        for csv in sorted(first.glob("*.csv")):
            checked += 1
            if code != 0 or sha256_file(csv) != sha256_file(second / csv.name):
                bad.append(f"{argv[0]}:{csv.name}")
    capsys.readouterr()
    report(capsys, "A8", not bad and checked > 0,
           f"{len(REPLAY_RUNS)} CLI runs replayed from manifests, {checked} CSV files, mismatches: {bad or 'none'}")
