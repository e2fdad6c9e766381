import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from potlab.exact_ot import solve_primal
from potlab.measures import make_discrete, make_rng, pushforward, uniform
from potlab.theory_checks import (CheckReport, composed_cost, corollary1_instance, duality_gap_check,
                                  plan_to_conditional, random_map, random_measure, reports_to_json, run_suite,
                                  theorem1_instance, verify_corollary1, verify_factorization, verify_lemma2,
                                  verify_theorem1)


def two_point_couplings_value(xs, ys, cost):
    """Brute force over the two perfect matchings of uniform 2-point measures."""
    best = np.inf
    for perm in itertools.permutations(range(2)):
        best = min(best, np.mean([cost(xs[i], ys[j]) for i, j in enumerate(perm)]))
    return best


def test_self_transport():
    p_z = uniform([[0.0], [1.0], [2.5]])
    g = lambda z: 3 * z - 1
    rep = verify_theorem1(pushforward(p_z, g), p_z, g)
    assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.passed


def test_theorem1_hand_example():
    p_x, p_z = uniform([[0.0], [4.0]]), uniform([[0.0], [1.0]])
    rep = verify_theorem1(p_x, p_z, lambda z: 2 * z, "sq_euclidean")
    oracle = two_point_couplings_value([0.0, 4.0], [0.0, 2.0], lambda a, b: (a - b) ** 2)
    assert oracle == 2.0
    assert rep.lhs == pytest.approx(2.0, abs=1e-12) and rep.rhs == pytest.approx(2.0, abs=1e-12)
    assert rep.passed


def test_theorem1_non_injective_map_merges():
    p_x = uniform([[1.0], [-1.0], [0.5]])
    p_z = uniform([[-1.0], [1.0], [0.0]])
    rep = verify_theorem1(p_x, p_z, lambda z: z**2)
    assert rep.passed
    assert rep.details["lhs_merged"] == pytest.approx(rep.rhs, abs=1e-12)


def test_theorem1_rejects_non_finite_map():
    with pytest.raises(ValueError):
        verify_theorem1(uniform([[0.0]]), uniform([[0.0]]), lambda z: np.full_like(z, np.nan))


def test_theorem1_random_suite():
    reps = run_suite("theorem1", 100)
    assert all(r.passed for r in reps)
    costs = {r.details["cost"] for r in reps}
    assert costs == {"sq_euclidean", "euclidean"}
    assert max(max(r.details["n"], r.details["m"]) for r in reps) <= 64


def test_factorization_optimal_conditional():
    rng = make_rng(1)
    p_x, p_z, g, cost = theorem1_instance(rng)
    plan = solve_primal(p_x, p_z, composed_cost(p_x, p_z, g, cost))
    rep = verify_factorization(p_x, p_z, g, plan_to_conditional(plan.gamma, p_x), cost)
    assert rep.passed and rep.abs_gap <= 1e-9


def test_factorization_product_coupling():
    rng = make_rng(2)
    p_x, p_z = random_measure(rng, 5, 2), random_measure(rng, 4, 1)
    g = random_map(rng, 1, 2)
    q = np.tile(p_z.weights, (p_x.n, 1))
    rep = verify_factorization(p_x, p_z, g, q)
    assert rep.passed and rep.rhs >= rep.lhs - 1e-9
    assert rep.details["conditions"] == {"row_marginal": True, "col_marginal": True}


def test_factorization_rejects_concentrated_conditional():
    p_x, p_z = uniform([[0.0], [1.0]]), uniform([[0.0], [1.0]])
    q = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError, match="aggregated"):
        verify_factorization(p_x, p_z, lambda z: z, q)


def test_factorization_rejects_non_simplex_rows():
    p = uniform([[0.0], [1.0]])
    with pytest.raises(ValueError):
        verify_factorization(p, p, lambda z: z, np.array([[0.7, 0.7], [0.3, 0.3]]))


@given(st.integers(0, 10_000))
def test_factorized_couplings_upper_bound_optimum(seed):
    rng = make_rng(seed, 90)
    p_x, p_z = random_measure(rng, 4, 2), random_measure(rng, 3, 2)
    g = random_map(rng, 2, 2)
    # random conditional with the right aggregate: mix the optimal one with the product
    plan = solve_primal(p_x, p_z, composed_cost(p_x, p_z, g, "sq_euclidean"))
    t = rng.uniform()
    q = t * plan_to_conditional(plan.gamma, p_x) + (1 - t) * np.tile(p_z.weights, (p_x.n, 1))
    assert verify_factorization(p_x, p_z, g, q).passed


def test_corollary1_self_model():
    rng = make_rng(3)
    p_z = uniform(rng.standard_normal((32, 2)))
    g = random_map(rng, 2, 2)
    s2 = 0.2
    y = g(p_z.points) + np.sqrt(s2) * rng.standard_normal((32, 2))
    rep = verify_corollary1(uniform(y), p_z, g, s2, 128, rng)
    assert rep.passed
    assert rep.rhs >= 2 * s2


def test_corollary1_one_dim_gaussian():
    rng = make_rng(4)
    p_x = uniform(rng.standard_normal((64, 1)))
    p_z = uniform(rng.standard_normal((64, 1)))
    rep = verify_corollary1(p_x, p_z, lambda z: z, 0.25, 128, rng)
    assert rep.rhs == pytest.approx(0.25 + solve_primal(p_x, p_z, composed_cost(p_x, p_z, lambda z: z, "sq_euclidean")).value)
    assert rep.passed


def test_corollary1_errors():
    p = uniform([[0.0]])
    with pytest.raises(ValueError):
        verify_corollary1(p, p, lambda z: z, 0.0, 128, make_rng(0))
    with pytest.raises(ValueError):
        verify_corollary1(p, p, lambda z: z, 0.1, 63, make_rng(0))


def test_lemma2_formula():
    rep = verify_lemma2(lambda z: 2 * z, 100_000, 0.25, make_rng(5))
    assert rep.passed
    assert rep.rhs == pytest.approx(4.25, abs=0.05)


def test_lemma2_no_noise():
    rep = verify_lemma2(lambda z: np.sin(z), 10_000, 0.0, make_rng(6))
    assert rep.lhs == rep.rhs and rep.passed


def test_lemma2_constant_map():
    rep = verify_lemma2(lambda z: np.full_like(z, 3.0), 20_000, 0.5, make_rng(7))
    assert rep.passed and rep.lhs == pytest.approx(0.5, rel=0.05)


def test_lemma2_needs_samples():
    with pytest.raises(ValueError):
        verify_lemma2(lambda z: z, 9_999, 0.1, make_rng(0))


def test_duality_examples():
    rep = duality_gap_check(uniform([[0.0], [1.0]]), uniform([[2.0], [3.0]]))
    assert rep.lhs == pytest.approx(2.0) and rep.rhs == pytest.approx(2.0) and rep.passed
    mu = uniform([[0.0, 1.0], [2.0, 2.0]])
    rep = duality_gap_check(mu, mu)
    assert rep.lhs == 0.0 and abs(rep.rhs) <= 1e-12 and rep.passed


def test_duality_suite():
    assert all(r.passed for r in run_suite("duality", 50))


def test_report_pass_rule():
    assert CheckReport.build("x", 1.0, 1.0 + 1e-10, 1e-9).passed
    assert not CheckReport.build("x", 1.0, 1.1, 1e-9).passed
    assert CheckReport.build("x", 0.5, 1.0, 0.0, kind="bound").passed
    assert not CheckReport.build("x", 1.5, 1.0, 0.1, kind="bound").passed
    assert not CheckReport.build("x", 1.0, 1.0, 1e-9, details={"conditions": {"a": False}}).passed


@pytest.mark.parametrize("name", ["theorem1", "factorization", "duality", "lemma2", "corollary1"])
def test_reports_roundtrip_and_determinism(name):
    a = run_suite(name, 3)
    b = run_suite(name, 3)
    assert reports_to_json(a) == reports_to_json(b)
    for r in a:
        back = CheckReport.from_json(r.to_json())
        assert back == r
        assert back.abs_gap == abs(back.lhs - back.rhs)


def test_unknown_suite():
    with pytest.raises(ValueError, match="valid"):
        run_suite("lemma9", 1)
