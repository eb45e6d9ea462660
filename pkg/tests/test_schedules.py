import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from monoflow.errors import InvalidInputError, ParameterViolation
from monoflow.schedules import (BetaSchedule, SolverParams, aux_inequalities, beta_derivative,
                                beta_seq, beta_value, check_growth_continuous,
                                check_growth_discrete, growth_function_continuous,
                                growth_sequence_discrete, beta_inequalities)


# -- parameters ---------------------------------------------------------------

def box_oracle(r, alpha, theta, mode):
    """Independent restatement of the admissibility boxes."""
    if mode == "discrete" and r == 0:
        return False
    if r < 1:
        return theta > 2 / alpha
    upper = 0.5 if mode == "continuous" else 0.25
    return 2 / (alpha + 1) <= theta < upper


@given(st.sampled_from([0.0, 0.2, 0.5, 0.9, 1.0]), st.floats(0.5, 20), st.floats(0.01, 2),
       st.sampled_from(["continuous", "discrete"]))
def test_violations_match_box_oracle(r, alpha, theta, mode):
    p = SolverParams(r=r, alpha=alpha, theta=theta)
    assert (p.violations(mode) == []) == box_oracle(r, alpha, theta, mode)


def test_box_boundaries():
    alpha = 8.0
    on_lower = SolverParams(r=1, alpha=alpha, theta=2 / (alpha + 1))
    assert on_lower.violations("continuous") == [] and on_lower.violations("discrete") == []
    assert SolverParams(r=1, alpha=alpha, theta=0.5).violations("continuous")
    assert SolverParams(r=1, alpha=alpha, theta=0.25).violations("discrete")
    assert SolverParams(r=1, alpha=alpha, theta=0.25).violations("continuous") == []


def test_violation_messages_quote_rules():
    msg = SolverParams(r=0.5, alpha=8, theta=0.2).violations()[0]
    assert "theta > 2/alpha" in msg and "0.25" in msg
    msg = SolverParams(r=1, alpha=8, theta=0.3).violations("discrete")[0]
    assert "theta < 1/4" in msg
    with pytest.raises(ParameterViolation) as exc:
        SolverParams(r=0, alpha=1, theta=1).check("discrete")
    assert len(exc.value.violations) == 2


def test_params_domain_errors():
    for kw in ({"r": 1.5}, {"r": -0.1}, {"alpha": 0}, {"theta": -1}):
        args = {"r": 0.5, "alpha": 8, "theta": 1, **kw}
        with pytest.raises(InvalidInputError):
            SolverParams(**args)
    with pytest.raises(InvalidInputError):
        SolverParams(r=0.5, alpha=8, theta=1, k0=0)


def test_exponential_schedule_delta_consistency():
    p = SolverParams(r=0.5, alpha=8, theta=0.3)
    s = BetaSchedule.exponential_continuous(0.5, 0.25, 1.0)
    assert any("theta" in m for m in p.violations("continuous", s))


# -- schedule values ----------------------------------------------------------

def test_constant_and_power_values():
    s = BetaSchedule.constant(1.0)
    assert beta_value(s, 7.0) == 1.0 and beta_derivative(s, 7.0) == 0.0
    p = BetaSchedule.power(1.0)
    assert beta_value(p, 10.0) == 10.0 and beta_derivative(p, 10.0) == 1.0


def test_exponential_continuous_value_at_one():
    s = BetaSchedule.exponential_continuous(0.5, 1 / 3, 2.0)
    assert beta_value(s, 1.0) == pytest.approx(math.e ** 2, rel=1e-14)


def test_exponential_requires_r_below_one_and_delta_range():
    with pytest.raises(InvalidInputError):
        BetaSchedule.exponential_continuous(1.0, 0.25, 1.0)
    with pytest.raises(InvalidInputError):
        BetaSchedule.exponential_continuous(0.5, 0.25, 4.0)  # delta >= 1/theta
    with pytest.raises(InvalidInputError):
        BetaSchedule.exponential_discrete(0.5, 0.25, 2.0)  # delta >= 1/(2 theta)


def test_domain_errors():
    with pytest.raises(InvalidInputError):
        beta_value(BetaSchedule.constant(), 0.0)
    with pytest.raises(InvalidInputError):
        beta_seq(BetaSchedule.constant(), 0)
    with pytest.raises(InvalidInputError):
        BetaSchedule.power(-1.0)
    with pytest.raises(InvalidInputError):
        BetaSchedule("nope")


@given(st.sampled_from(["power", "exp_c", "exp_d"]), st.floats(1.0, 200.0))
def test_derivative_matches_central_difference(fam, t):
    if fam == "power":
        s = BetaSchedule.power(1.7, 0.5)
    elif fam == "exp_c":
        s = BetaSchedule.exponential_continuous(0.4, 0.5, 0.5)
    else:
        s = BetaSchedule.exponential_discrete(0.6, 0.3, 0.4)
    h = 1e-5 * t
    fd = (s.log_value(t + h) - s.log_value(t - h)) / (2 * h)
    assert s.log_derivative(t) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_seq_array_defines_beta0_as_beta1():
    s = BetaSchedule.power(2.0)
    b = s.seq_array(5)
    assert b[0] == b[1] == 1.0 and b[5] == pytest.approx(25.0)
    tab = BetaSchedule.tabulated([0, 1, 2], [0.5, 1.0, 2.0])
    assert tab.seq_array(2).tolist() == [0.5, 1.0, 2.0]


def test_schedule_roundtrip():
    for s in (BetaSchedule.constant(2.0), BetaSchedule.power(1.0, 3.0),
              BetaSchedule.exponential_discrete(0.5, 0.3, 1.0),
              BetaSchedule.tabulated([1, 2, 4], [1, 2, 3])):
        t = BetaSchedule.from_dict(s.to_dict())
        assert t.to_dict() == s.to_dict()


# -- growth conditions ----------------------------------------------------------

def test_growth_constant_closed_form_example():
    rep = check_growth_continuous(BetaSchedule.constant(), SolverParams(r=0.5, alpha=8, theta=0.25))
    assert rep.analytic and rep.sup_value == pytest.approx(1.0) and rep.passes
    assert rep.bound == 4.0


def test_growth_exponential_example():
    s = BetaSchedule.exponential_continuous(0.5, 1 / 3, 2.0)
    rep = check_growth_continuous(s, SolverParams(r=0.5, alpha=8, theta=1 / 3, delta=2))
    assert rep.sup_value == pytest.approx(1.0) and rep.bound == pytest.approx(3.0) and rep.passes


def test_growth_power_fails_example():
    rep = check_growth_continuous(BetaSchedule.power(1.0), SolverParams(r=1, alpha=8, theta=0.4))
    assert rep.sup_value == pytest.approx(3.0) and not rep.passes


@pytest.mark.parametrize("s,r", [
    (BetaSchedule.constant(), 0.0), (BetaSchedule.constant(), 0.5), (BetaSchedule.constant(), 1.0),
    (BetaSchedule.power(1.0), 0.3), (BetaSchedule.power(2.5, 4.0), 1.0),
])
def test_closed_form_sup_equals_grid_max(s, r):
    rep = check_growth_continuous(s, SolverParams(r=r, alpha=20, theta=0.3))
    assert abs(rep.sup_value - rep.grid_max) <= 1e-12 * max(1.0, abs(rep.sup_value))


def test_growth_tabulated_uses_grid():
    s = BetaSchedule.tabulated(np.linspace(1, 100, 50), np.linspace(1, 100, 50))
    rep = check_growth_continuous(s, SolverParams(r=1, alpha=8, theta=0.25))
    assert not rep.analytic and np.isfinite(rep.sup_value)


def test_discrete_constant_closed_form():
    p = SolverParams(r=0.5, alpha=8, theta=0.25)
    rep = check_growth_discrete(BetaSchedule.constant(), p, 1000)
    ks = np.arange(1, 1001)
    assert np.allclose(rep.g, 1 / np.sqrt(ks), rtol=1e-14)
    assert rep.sup_value == pytest.approx(1.0) and rep.passes and rep.first_passing_k0 == 1


def test_discrete_doubling_sequence_fails():
    ks = np.arange(0, 61)
    s = BetaSchedule.tabulated(ks, 2.0 ** ks)
    rep = check_growth_discrete(s, SolverParams(r=1, alpha=8, theta=0.24), 60)
    assert np.allclose(rep.g, ks[1:] / 2 + 2)
    assert not rep.passes and rep.first_passing_k0 is None


def _g_mp(k, r, theta, delta):
    """High-precision oracle for the discrete growth sequence."""
    mpmath.mp.dps = 40
    kap = mpmath.mpf(1) / (2 * theta) - delta
    lb = lambda j: -2 * r * mpmath.log(j) + kap * mpmath.power(j, 1 - r) / (1 - r)
    inc = 1 - mpmath.exp(lb(k - 1) - lb(k))
    return float(mpmath.power(k, r) * (inc + 2 * r / mpmath.mpf(k)))


@pytest.mark.parametrize("r,theta,delta", [(0.5, 0.25, 1.0), (0.5, 0.3, 1.0), (0.25, 0.3, 0.5)])
def test_discrete_exponential_matches_high_precision(r, theta, delta):
    s = BetaSchedule.exponential_discrete(r, theta, delta)
    g = growth_sequence_discrete(s, r, 5000)
    for k in (2, 10, 100, 1000, 5000):
        assert g[k - 1] == pytest.approx(_g_mp(k, r, theta, delta), rel=1e-12)


def test_discrete_exponential_limit_and_rate():
    s = BetaSchedule.exponential_discrete(0.5, 0.25, 1.0)
    rep = check_growth_discrete(s, SolverParams(r=0.5, alpha=8, theta=0.25, delta=1), 10_000)
    assert rep.limit == pytest.approx(1.0) and rep.passes
    dev = np.abs(rep.g - rep.limit)
    ks = rep.ks.astype(float)
    # deviation behaves like kappa^2 / (2 k^r) for large k
    assert dev[-1] * ks[-1] ** 0.5 == pytest.approx(0.5, rel=0.05)
    assert np.all(np.diff(dev[100:]) < 0)


def test_continuous_exponential_growth_is_constant():
    s = BetaSchedule.exponential_continuous(0.5, 1 / 3, 2.0)
    t = np.geomspace(1, 1e6, 10_000)
    g = growth_function_continuous(s, 0.5, t)
    assert np.max(np.abs(g - 1.0)) <= 1e-12


# -- inequality utilities --------------------------------------------------------

def test_beta_inequalities_constant_example():
    p = SolverParams(r=1, alpha=8, theta=0.2, delta=0.5)
    rep = beta_inequalities(BetaSchedule.constant(), p, 10)
    # (2 r theta k^(r-1) - 1) * 1 + 0 with r = 1
    assert rep.g1_lhs == pytest.approx(2 * 0.2 - 1) and rep.g1_rhs == pytest.approx(-0.1)
    assert rep.holds()


def test_beta_inequalities_zero_increment_g2():
    p = SolverParams(r=0.5, alpha=8, theta=0.3, delta=0.5)
    for k in (1, 5, 50):
        rep = beta_inequalities(BetaSchedule.constant(), p, k)
        assert rep.g2_lhs == 0.0
        if 1 - 2 * 0.5 * 0.3 * k ** -0.5 - 0.5 * 0.3 >= 0:
            assert rep.g2 <= 0


def test_beta_inequalities_g3_not_applicable_small_k():
    p = SolverParams(r=0.5, alpha=8, theta=0.25, delta=0.1)
    rep = beta_inequalities(BetaSchedule.constant(), p, 1)
    # 2 r k^(r-1) - 1/theta + delta + k^r = 1 - 4 + 0.1 + 1 < 0
    assert not rep.g3_applicable and rep.g3 is None


def test_aux_examples():
    a = aux_inequalities(1, 1.0, -1.0)
    assert a.A1 and a.all()
    b = aux_inequalities(1, 0.0, -0.5)
    assert b.A1 and b.A3


@given(st.integers(1, 10 ** 6), st.floats(0, 1), st.floats(-3, 0))
def test_aux_inequalities_hold(k, r, sigma):
    assert aux_inequalities(k, r, sigma).all()


def test_aux_rejects_bad_arguments():
    with pytest.raises(InvalidInputError):
        aux_inequalities(0, 0.5, -1)
    with pytest.raises(InvalidInputError):
        aux_inequalities(1, 0.5, 1)
