import math

import mpmath
import numpy as np
import pytest
import sympy
from scipy.stats import binom

from streamcode.bounds import (
    BoundParams,
    CgfModel,
    alternating_bound,
    berry_esseen_constant,
    c_llt,
    cgf_from_channel,
    cl_error_bound,
    cl_error_bound_closed,
    cramer_bound,
    dt_step_bound,
    erasure_total_bound,
    erasure_undetected_bound,
    finite_md_rhs,
    md_bound,
    md_exponent_targets,
    q_func,
    q_sum,
    qsum_tail_bound,
    rate_function,
    sum_distribution,
    sum_le_integral_check,
    vardelay_error_bound,
    vardelay_excess_delay_bound,
    wrong_codeword_tail,
)
from streamcode.channel import InputDist, bsc, capacity, measures

mpmath.mp.dps = 40


def bernoulli_model(bias):
    return CgfModel.from_support([-bias, 1 - bias], [1 - bias, bias])


def bernoulli_tail(bias, n, eps):
    # P(sum (X - bias) >= n eps) for X ~ Bernoulli(bias)
    return float(binom.sf(math.ceil(n * (bias + eps) - 1e-9) - 1, n, bias))


PM_ONE = CgfModel.from_support([-1.0, 1.0], [0.5, 0.5])


@pytest.mark.parametrize("x", [0.0, 0.5, 1.959964, 3.0, 7.5, 10.0])
def test_q_func_matches_high_precision(x):
    exact = float(mpmath.erfc(mpmath.mpf(x) / mpmath.sqrt(2)) / 2)
    assert q_func(x) == pytest.approx(exact, rel=1e-14)
    assert q_func(x) + q_func(-x) == pytest.approx(1.0, abs=1e-15)


def test_q_func_examples():
    assert q_func(0) == 0.5
    assert q_func(1.959964) == pytest.approx(0.025, abs=1e-6)


def test_q_sum_against_direct_summation():
    mu, t = 1.0, 1
    j = np.arange(1, 10 ** 6 + 1, dtype=np.float64)
    from scipy.special import erfc
    partial = math.fsum((0.5 * erfc(mu * np.sqrt(j) / math.sqrt(2)))[::-1].tolist())
    remainder = qsum_tail_bound(mu, 10 ** 6 + 1)
    assert remainder < 1e-100
    assert q_sum(mu, t) == pytest.approx(partial, abs=1e-10)


def test_q_sum_large_mu_dominated_by_first_term():
    assert q_sum(10.0, 1) == pytest.approx(q_func(10.0), rel=1e-6)


@pytest.mark.parametrize("mu", [0.5, 1, 2, 3, 4])
@pytest.mark.parametrize("t", range(1, 7))
def test_qsum_inequality_on_grid(mu, t):
    assert q_sum(mu, t) <= c_llt(mu, t) * q_func(mu * math.sqrt(t))


def test_c_llt_reference_values():
    assert c_llt(3, 2) < 1.1
    assert c_llt(4, 2) < 1.05
    mu, t = mpmath.mpf(3), 2
    exact = (1 + mu ** 2 * t) / (mu ** 2 * t) / (1 - mpmath.exp(-mu ** 2 / 2))
    assert c_llt(3, 2) == pytest.approx(float(exact), abs=1e-12)
    assert c_llt(3, 2) == pytest.approx(1.0674, abs=1e-4)


def test_c_llt_monotone_and_tends_to_one():
    mus = [0.5 * 2 ** i for i in range(8)]
    for t in range(1, 6):
        vals = [c_llt(mu, t) for mu in mus]
        assert all(v >= 1 for v in vals)
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] - 1 < 1e-3
    for mu in (0.5, 1, 3):
        vals = [c_llt(mu, t) for t in range(1, 7)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("a,b,expected", [(1, 1, (1.0, 2.0)), (4, 4, (0.5, 2 * (2 - math.sqrt(3))))])
def test_sum_integral_examples(a, b, expected):
    lhs, rhs = sum_le_integral_check(a, b)
    assert lhs == pytest.approx(expected[0], abs=1e-12)
    assert rhs == pytest.approx(expected[1], abs=1e-12)


def test_sum_integral_hundred_terms():
    lhs, rhs = sum_le_integral_check(1, 100)
    assert lhs == pytest.approx(18.5896, abs=1e-3)
    assert rhs == 20.0


def test_k_for_two_point_law_matches_symbolic_maximum():
    s = sympy.symbols("s", real=True)
    h = sympy.log(sympy.cosh(s))
    h3 = sympy.diff(h, s, 3)
    crit = sympy.nsolve(sympy.diff(h3, s), s, 0.6)
    symbolic = abs(float(h3.subs(s, crit)))
    assert symbolic == pytest.approx(4 / (3 * math.sqrt(3)), rel=1e-12)
    assert PM_ONE.k == pytest.approx(symbolic, rel=1e-9)


def test_cgf_derivatives_match_closed_forms():
    for x in (0.0, 0.3, 0.9):
        assert PM_ONE.h(x) == pytest.approx(math.log(math.cosh(x)), abs=1e-14)
        assert PM_ONE.h1(x) == pytest.approx(math.tanh(x), abs=1e-14)
        assert PM_ONE.h2(x) == pytest.approx(1 / math.cosh(x) ** 2, abs=1e-14)
        assert PM_ONE.h3(x) == pytest.approx(-2 * math.tanh(x) / math.cosh(x) ** 2, abs=1e-14)


def test_cgf_model_rejects_bad_laws():
    with pytest.raises(ValueError):
        CgfModel.from_support([0.0, 1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        CgfModel.from_support([0.0], [1.0])
    with pytest.raises(ValueError):
        CgfModel.from_support([-1.0, 1.0], [0.5, 0.6])
    assert CgfModel.from_support([0.0, 1.0], [0.5, 0.5], center=True).sigma2 == pytest.approx(0.25)


def test_md_bound_examples():
    assert md_bound(PM_ONE, 10, 0.0) == 1.0
    expected = math.exp(-100 * (0.005 - 0.1 ** 3 * PM_ONE.k / 6))
    assert md_bound(PM_ONE, 100, 0.1) == pytest.approx(expected, rel=1e-12)
    tail = float(binom.sf(math.ceil(200 * 0.55) - 1, 200, 0.5))
    assert md_bound(PM_ONE, 200, 0.1) >= tail


def test_md_bound_clamps_and_survives_huge_exponents():
    assert md_bound(PM_ONE, 1, 100.0) == 1.0
    assert md_bound(PM_ONE, 10 ** 6, 0.5) == 0.0


@pytest.mark.parametrize("bias", [0.2, 0.35, 0.5])
def test_md_bound_dominates_exact_tails(bias):
    model = bernoulli_model(bias)
    failures = [n for n in range(1, 501)
                if md_bound(model, n, n ** (-1 / 3)) < bernoulli_tail(bias, n, n ** (-1 / 3))]
    n0 = failures[-1] + 1 if failures else 1
    assert n0 <= 50


@pytest.mark.parametrize("bias", [0.2, 0.35, 0.5])
@pytest.mark.parametrize("eps", [0.05, 0.2, 0.4])
def test_cramer_bound_dominates_exact_tails(bias, eps):
    model = bernoulli_model(bias)
    if eps >= model.z_max:
        pytest.skip("eps at or above the support")
    for n in range(1, 201):
        assert cramer_bound(model, n, eps) >= bernoulli_tail(bias, n, eps)


def test_rate_function_closed_form():
    s_star = math.atanh(0.5)
    assert s_star == pytest.approx(math.log(math.sqrt(3)))
    expected = 0.5 * s_star - math.log(math.cosh(s_star))
    assert rate_function(PM_ONE, 0.5) == pytest.approx(expected, abs=1e-9)
    for eps in (0.1, 0.7):
        closed = (1 + eps) / 2 * math.log(1 + eps) + (1 - eps) / 2 * math.log(1 - eps)
        assert rate_function(PM_ONE, eps) == pytest.approx(closed, abs=1e-9)
    assert cramer_bound(PM_ONE, 10, 0.5) == pytest.approx(math.exp(-10 * expected), rel=1e-8)


def test_rate_function_at_and_beyond_support():
    assert cramer_bound(PM_ONE, 5, 1.5) == 0.0
    assert cramer_bound(PM_ONE, 5, 1.0) == pytest.approx(0.5 ** 5)
    with pytest.raises(ValueError):
        rate_function(PM_ONE, 0.0)


def test_cgf_from_bsc_matches_channel_module():
    ch, p = bsc(0.11), InputDist.uniform(2)
    model = cgf_from_channel(ch, p)
    info = measures(ch, p)
    assert model.sigma2 == pytest.approx(info.u_var, abs=1e-12)
    assert len(model.values) <= 4
    assert model.h(0.0) == pytest.approx(0.0, abs=1e-15)
    small = 1e-5
    assert abs((model.h(small) - model.h(-small)) / (2 * small)) <= 1e-9
    step = 1e-4
    second = (model.h(step) - 2 * model.h(0.0) + model.h(-step)) / step ** 2
    assert abs(second - model.sigma2) <= 1e-7


def test_cgf_from_useless_channel_rejected():
    with pytest.raises(ValueError):
        cgf_from_channel(bsc(0.5), InputDist.uniform(2))


def test_berry_esseen_constant_for_two_point_law():
    assert berry_esseen_constant(PM_ONE) == pytest.approx(0.56)


def test_exponent_targets():
    v, n, rho = 0.4279, 1000, 0.05
    nr2 = n * rho * rho
    assert md_exponent_targets(v, 1, "basic", 0.5, n, rho) == pytest.approx(-nr2 / (2 * v))
    assert md_exponent_targets(v, 2, "erasure_total", 0.999999, n, rho) == pytest.approx(0.0, abs=1e-9)
    assert md_exponent_targets(v, 2, "erasure_undetected", 0.999999, n, rho) == pytest.approx(-2 * n * rho, rel=1e-5)
    assert md_exponent_targets(v, 3, "alt_odd", 0.5, n, rho) == pytest.approx(-4 / (2 * v) * nr2)
    assert md_exponent_targets(v, 3, "alt_even", 0.5, n, rho) == pytest.approx(-2 / (2 * v) * nr2)
    assert md_exponent_targets(v, 4, "alt_odd", 0.5, n, rho) == md_exponent_targets(v, 4, "basic", 0.5, n, rho)
    with pytest.raises(ValueError):
        md_exponent_targets(v, 1, "nope", 0.5, n, rho)


@pytest.mark.parametrize("t", [1, 2, 3, 5])
def test_alternating_targets_average_to_basic(t):
    v, n, rho = 0.4279, 500, 0.1
    odd = md_exponent_targets(v, t, "alt_odd", 0.5, n, rho)
    even = md_exponent_targets(v, t, "alt_even", 0.5, n, rho)
    assert (odd + even) / 2 == pytest.approx(md_exponent_targets(v, t, "basic", 0.5, n, rho))


def test_finite_md_rhs_decreasing_in_t():
    params = BoundParams(lam=0.9)
    vals = [finite_md_rhs(0.4279, t, 10 ** 4, 0.05, params) for t in range(1, 6)]
    assert all(math.isfinite(v) and v > 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_finite_md_rhs_vacuous_and_domain():
    assert finite_md_rhs(0.4279, 2, 100, 0.0, BoundParams()) == 1.0
    with pytest.raises(ValueError):
        BoundParams(lam=1.0)
    with pytest.raises(ValueError):
        BoundParams(tau=-1.0)


def test_erasure_bound_ordering():
    v, n, rho, g = 0.4279, 200, 0.2, 0.5
    und = erasure_undetected_bound(2, n, rho, g)
    tot = erasure_total_bound(v, 2, n, rho, g)
    assert und < tot
    assert und == pytest.approx(math.exp(-2 * n * g * rho) / (1 - math.exp(-n * g * rho)))
    # summing the undetected bound over every delay d >= T
    direct = sum(erasure_undetected_bound(d, n, rho, g) for d in range(2, 400))
    assert vardelay_error_bound(2, n, rho, g) == pytest.approx(direct, rel=1e-9)
    assert vardelay_excess_delay_bound(v, 2, n, rho, g) > 0
    assert erasure_undetected_bound(2, n, -0.1, g) == 1.0


def test_alternating_bound_orders_parities_for_odd_t():
    params = BoundParams(lam=0.9, tau_prime=0.05)
    odd = alternating_bound(0.4279, 3, 5000, 0.05, 0.5, "odd", params)
    even = alternating_bound(0.4279, 3, 5000, 0.05, 0.5, "even", params)
    assert odd < even


def test_cl_closed_form_dominates_direct_sum():
    for tau in (0.0, 0.3):
        direct = cl_error_bound(1.0, 2.0, 2, 40, 4, 10 ** 4, tau, tau)
        closed = cl_error_bound_closed(1.0, 2.0, 2, 40, 4, 10 ** 4, tau, tau)
        assert closed >= direct


def test_sum_distribution_is_a_law():
    vals, probs = sum_distribution([-1.0, 1.0], [0.5, 0.5], 6)
    assert probs.sum() == pytest.approx(1.0)
    assert np.allclose(vals, np.arange(-6, 7, 2))
    assert np.allclose(probs, binom.pmf(np.arange(7), 6, 0.5))


@pytest.mark.parametrize("thr", [-1.0, 0.5, 2.0, 4.0])
def test_change_of_measure_identity(thr):
    direct, tilted = wrong_codeword_tail(bsc(0.11), InputDist.uniform(2), 6, thr)
    assert direct == pytest.approx(tilted, abs=1e-14)


def test_dt_step_bound_is_probability():
    p_star, _ = capacity(bsc(0.11))
    val = dt_step_bound(bsc(0.11), p_star, 16, math.log(2), math.log(2))
    assert 0 < val <= 1
