import itertools
from fractions import Fraction
from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from caclab.errors import InvalidParameterError, NumericalError, ResourceLimitError
from caclab.markov import (
    BlockingReport,
    analyze,
    blocking_from_recurrence,
    build_ctmc,
    ctmc_blocking,
    ctmc_steady_state,
    erlang_b,
    solve_recurrence,
)
from caclab.policies import AdmitIfFits, FuzzyPolicy, RejectAll, ThresholdPolicy
from caclab.traffic import ClassId, SystemConfig, ThresholdSet, TrafficClass, canonical_classes


def single_class(n, a):
    return SystemConfig(n, (TrafficClass(ClassId.TYPE1, a, 1.0),))


def recurrence_oracle(a, n):
    """Exact rational forward recurrence."""
    a = Fraction(a)
    p = [Fraction(1)]
    for k in range(1, n + 1):
        p.append(a / 3 * sum(p[max(k - 3, 0):k]))
    return p


# -- recurrence --------------------------------------------------------------------


def test_recurrence_zero_load():
    sol = solve_recurrence(0.0, 7)
    assert sol.probabilities[0] == 1.0 and not sol.probabilities[1:].any()
    rep = blocking_from_recurrence(sol, 7)
    assert rep.per_class() == {c: 0.0 for c in ClassId} and rep.aggregate_blocking == 0.0


def test_recurrence_hand_values():
    sol = solve_recurrence(0.6, 5)
    expect = [1, 0.2, 0.24, 0.288, 0.1456, 0.13472]
    assert np.max(np.abs(sol.unnormalized - expect)) < 1e-12
    exact = recurrence_oracle(Fraction(3, 5), 5)
    assert [float(x) for x in exact] == pytest.approx(expect, abs=1e-15)
    rep = blocking_from_recurrence(sol, 5)
    p = sol.probabilities
    assert rep.type1_blocking == p[5]
    assert rep.aggregate_blocking == pytest.approx(0.2 * (p[5] + p[4] + p[3]), rel=1e-15)


@given(st.integers(0, 50).map(lambda k: Fraction(k, 10)), st.integers(3, 120))
def test_recurrence_matches_rational_oracle(a, n):
    sol = solve_recurrence(float(a), n)
    exact = recurrence_oracle(a, n)
    total = sum(exact)
    ref = np.array([float(x / total) for x in exact])
    assert np.allclose(sol.probabilities, ref, rtol=1e-9, atol=1e-300)
    assert abs(sol.probabilities.sum() - 1.0) < 1e-12


def test_recurrence_normalized():
    assert abs(solve_recurrence(0.9, 20).probabilities.sum() - 1) < 1e-12


def test_recurrence_rejects_small_n():
    with pytest.raises(InvalidParameterError):
        solve_recurrence(0.5, 2)
    with pytest.raises(InvalidParameterError):
        blocking_from_recurrence(solve_recurrence(0.5, 5), 6)


def test_recurrence_rescales_instead_of_overflowing():
    sol = solve_recurrence(50.0, 400)
    assert sol.rescaled
    assert np.all(np.isfinite(sol.probabilities))
    assert abs(sol.probabilities.sum() - 1) < 1e-12


@pytest.mark.parametrize("n", [3, 5, 10, 30])
def test_recurrence_blocking_monotone_and_bounded(n):
    grid = np.round(np.arange(1, 11) * 0.1, 12)
    reps = [blocking_from_recurrence(solve_recurrence(a, n)) for a in grid]
    t1 = [r.type1_blocking for r in reps]
    assert all(b >= a for a, b in zip(t1, t1[1:]))
    for r in reps:
        worst = max(r.type1_blocking, r.type2_blocking, r.type3_blocking)
        assert r.aggregate_blocking <= worst + 1e-12


# -- Erlang B ----------------------------------------------------------------------


def test_erlang_b_values():
    assert erlang_b(0, 3.0) == 1.0
    assert erlang_b(1, 1.0) == 0.5
    assert erlang_b(2, 1.0) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(InvalidParameterError):
        erlang_b(-1, 1.0)


@given(st.integers(0, 60), st.floats(0.01, 50.0))
def test_erlang_b_closed_form(n, a):
    af = Fraction(a)
    weights = [af ** k / factorial(k) for k in range(n + 1)]
    assert erlang_b(n, a) == pytest.approx(float(weights[-1] / sum(weights)), rel=1e-10)


# -- CTMC --------------------------------------------------------------------------


def test_birth_death_structure():
    m = build_ctmc(single_class(2, 1.0), AdmitIfFits())
    assert m.size == 3
    q = m.generator.toarray()
    assert np.allclose(q, [[-1, 1, 0], [1, -2, 1], [0, 2, -2]])


def test_state_count_matches_enumeration():
    cfg = SystemConfig(6, canonical_classes(1.0, 1.0))
    m = build_ctmc(cfg, AdmitIfFits())
    brute = [s for s in itertools.product(range(7), repeat=3)
             if s[0] + 2 * s[1] + 3 * s[2] <= 6]
    assert m.size == len(brute) == 23
    assert {tuple(s) for s in m.states} == set(brute)


def test_generator_rows_sum_to_zero():
    m = build_ctmc(SystemConfig(10, canonical_classes(0.7, 1.3)), AdmitIfFits())
    assert np.max(np.abs(np.asarray(m.generator.sum(axis=1)))) < 1e-10


def test_small_stationary_vectors():
    pi = ctmc_steady_state(build_ctmc(single_class(1, 1.0), AdmitIfFits()))
    assert np.allclose(pi, [0.5, 0.5], atol=1e-14)
    pi = ctmc_steady_state(build_ctmc(single_class(2, 1.0), AdmitIfFits()))
    assert np.allclose(pi, [0.4, 0.4, 0.2], atol=1e-14)


@pytest.mark.parametrize("policy", [AdmitIfFits(), FuzzyPolicy(), ThresholdPolicy(ThresholdSet(2, 4, 6))])
def test_stationary_postconditions(policy):
    m = build_ctmc(SystemConfig(12, canonical_classes(0.8, 1.0)), policy)
    pi = ctmc_steady_state(m)
    assert pi.min() >= 0 and abs(pi.sum() - 1) < 1e-10
    assert np.abs(m.generator.T @ pi).max() < 1e-8


def test_sparse_path_agrees_with_dense(monkeypatch):
    from caclab import markov
    cfg = SystemConfig(18, canonical_classes(1.0, 1.0))
    m = build_ctmc(cfg, AdmitIfFits())
    dense = ctmc_steady_state(m)
    monkeypatch.setattr(markov, "DENSE_LIMIT", 0)
    sparse = ctmc_steady_state(m)
    assert np.allclose(dense, sparse, atol=1e-13)


def test_single_class_matches_erlang_b():
    for n in (1, 3, 8, 20):
        for a in (0.2, 0.5, 1.0, 2.0):
            rep = analyze(single_class(n, a), AdmitIfFits())
            assert abs(rep.type1_blocking - erlang_b(n, a)) < 1e-10


def test_reject_all_blocks_everything():
    rep = analyze(SystemConfig(6, canonical_classes(1, 1)), RejectAll())
    assert rep.per_class() == {c: 1.0 for c in ClassId}
    assert rep.aggregate_blocking == 1.0


def test_three_class_ordering_and_weighting():
    cfg = SystemConfig(6, canonical_classes(1.0, 1.0))
    rep = analyze(cfg, AdmitIfFits())
    assert rep.type3_blocking >= rep.type2_blocking >= rep.type1_blocking
    assert rep.aggregate_blocking == pytest.approx(
        np.mean([rep.type1_blocking, rep.type2_blocking, rep.type3_blocking]), rel=1e-14)


def test_three_class_matches_kaufman_roberts():
    """Complete sharing has a product-form occupancy distribution."""
    n, a = 9, 0.8
    q = np.zeros(n + 1)
    q[0] = 1.0
    for j in range(1, n + 1):
        q[j] = sum(a * d * q[j - d] for d in (1, 2, 3) if j >= d) / j
    q /= q.sum()
    rep = analyze(SystemConfig(n, canonical_classes(a, 1.0)), AdmitIfFits())
    for d, c in zip((1, 2, 3), ClassId):
        assert rep.for_class(c) == pytest.approx(q[n - d + 1:].sum(), rel=1e-10)


@pytest.mark.parametrize("policy", [AdmitIfFits(), ThresholdPolicy(ThresholdSet(2, 4, 6))])
def test_blocking_non_increasing_in_pool_size(policy):
    prev = None
    for n in range(6, 31):
        rep = analyze(SystemConfig(n, canonical_classes(0.9, 1.0), ThresholdSet(2, 4, 6)), policy)
        cur = [rep.for_class(c) for c in ClassId]
        if prev is not None:
            assert all(c <= p + 1e-12 for c, p in zip(cur, prev))
        prev = cur


def test_fuzzy_blocking_not_monotone_in_pool_size():
    # fuzzy boundaries are fractions of the pool, so a bigger pool can reserve more channels
    b = [analyze(SystemConfig(n, canonical_classes(0.9, 1.0)), FuzzyPolicy()).type1_blocking
         for n in (8, 9)]
    assert 0 <= b[0] < b[1] <= 1


def test_multi_rat_partition():
    cfg = SystemConfig(6, canonical_classes(1.0, 1.0), rats=(3, 3))
    m = build_ctmc(cfg, AdmitIfFits())
    occ = m.states.reshape(-1, 2, 3) @ np.array([1, 2, 3])
    assert occ.max() <= 3
    rep = ctmc_blocking(m, ctmc_steady_state(m))
    shared = analyze(SystemConfig(6, canonical_classes(1.0, 1.0)), AdmitIfFits())
    assert rep.type3_blocking > shared.type3_blocking  # fragmentation hurts wide calls


def test_state_cap():
    with pytest.raises(ResourceLimitError, match="50"):
        build_ctmc(SystemConfig(30, canonical_classes(1, 1)), AdmitIfFits(), max_states=50)


def test_stateful_policy_refused(trained):
    from caclab.rrbfn import FncacPolicy
    with pytest.raises(InvalidParameterError):
        build_ctmc(SystemConfig(30, canonical_classes(1, 1)), FncacPolicy(trained.params))


def test_blocking_report_range_check():
    with pytest.raises(NumericalError):
        BlockingReport(0.1, 1.5, 0.2, 0.3)
