import numpy as np
import pytest
from hypothesis import given, strategies as st

from monoflow import _backend
from monoflow.errors import (DivergenceError, InvalidInputError, ParameterViolation,
                             StiffnessError)
from monoflow.flow import (EnergyParams, FlowState, IntegratorConfig, default_energy_params,
                           default_lambda, energy_continuous, energy_terms, flow_rhs, initial_u,
                           integrate, trajectory_energy, velocity_from_u)
from monoflow.operators import OperatorSpec, affine_operator, example1_operator, identity_operator
from monoflow.schedules import BetaSchedule, SolverParams

from conftest import random_monotone_matrix, second_order_rk4

ONE = BetaSchedule.constant()


@pytest.fixture(scope="module")
def scalar_oracle():
    return second_order_rk4(8.0, 0.25, 1.0, 1.0, 0.0, 1.0, 100.0, 1e-3)


# -- vector field -----------------------------------------------------------------

def test_rhs_scalar_example():
    st_ = FlowState(1.0, [1.0], [4.0])
    du, dz = flow_rhs(st_, identity_operator(1), ONE, SolverParams(r=0, alpha=2, theta=1))
    assert du[0] == -2.0 and dz[0] == -1.0


@given(st.floats(1.0, 500.0), st.floats(0.05, 0.45), st.floats(-3, 3), st.floats(-3, 3))
def test_rhs_r1_simplification(t, theta, z, u):
    # at r = 1 the factor t^(r-1) is 1 and the z term drops out
    p = SolverParams(r=1, alpha=8, theta=theta)
    du, _ = flow_rhs(FlowState(t, [z], [u]), identity_operator(1), ONE, p)
    assert du[0] == pytest.approx(2 * t * (2 * theta - 1) * z, rel=1e-12, abs=1e-12)


def test_rhs_at_zero_of_operator():
    op = example1_operator()
    zs = op.known_zero
    p = SolverParams(r=0.5, alpha=8, theta=0.3)
    u = np.linspace(-1, 1, 6)
    t = 4.0
    du, dz = flow_rhs(FlowState(t, zs, u), op, ONE, p)
    assert np.allclose(du, 2 * 0.5 * 0.5 * t ** -1.5 * zs, atol=1e-14)
    assert np.allclose(dz, (u - 2 * (8 - 0.5 * t ** -0.5) * zs) / (2 * t ** 0.5), atol=1e-14)


def test_flow_state_validation():
    with pytest.raises(InvalidInputError):
        FlowState(1.0, [1.0, 2.0], [1.0])
    with pytest.raises(ArithmeticError):
        FlowState(0.0, [1.0], [1.0])


# -- integration --------------------------------------------------------------------

def test_zero_operator_keeps_rest_state(backend):
    op = affine_operator(np.zeros((3, 3)))
    p = SolverParams(r=0.5, alpha=8, theta=0.3)
    z0 = np.array([1.0, -2.0, 0.5])
    tr = integrate(op, ONE, p, IntegratorConfig(50.0, sample_count=50), z0=z0, backend=backend)
    assert np.allclose(tr.z, z0, atol=1e-12)
    # velocity is reconstructed from u, so it carries the O(rtol |u|) cancellation error
    assert np.allclose(tr.velocity, 0, atol=1e-6)


def test_initial_u_consistency():
    op = example1_operator()
    p = SolverParams(r=0.5, alpha=8, theta=0.3)
    z0, v0 = np.arange(6.0), np.ones(6)
    tr = integrate(op, ONE, p, IntegratorConfig(2.0, sample_count=5), z0=z0, zdot0=v0)
    expect = 2 * (8 - 0.5) * z0 + 2 * v0 + 2 * 0.3 * op(z0)
    assert np.allclose(tr.aux[0], expect, rtol=1e-15)
    assert np.allclose(tr.velocity[0], v0, atol=1e-13)


def test_scalar_decay_against_oracle(scalar_oracle, backend):
    p = SolverParams(r=1, alpha=8, theta=0.25)
    tr = integrate(identity_operator(1), ONE, p, IntegratorConfig(100.0, rtol=1e-11), z0=[1.0],
                   backend=backend)
    assert abs(tr.z[-1, 0]) <= 1e-3
    assert tr.z[-1, 0] == pytest.approx(scalar_oracle[0], rel=1e-6)
    assert tr.velocity[-1, 0] == pytest.approx(scalar_oracle[1], rel=1e-5)
    assert tr.tau[-1] == 100.0


def test_rk4_fourth_order():
    # short horizon keeps h inside the RK4 stability region (damping grows like theta t)
    oracle = second_order_rk4(8.0, 0.25, 1.0, 1.0, 0.0, 1.0, 10.0, 1e-4)
    p = SolverParams(r=1, alpha=8, theta=0.25)
    errs = []
    for h in (0.05, 0.025):
        cfg = IntegratorConfig(10.0, method="rk4_fixed", step=h, sample_count=2)
        tr = integrate(identity_operator(1), ONE, p, cfg, z0=[1.0])
        errs.append(abs(tr.z[-1, 0] - oracle[0]))
    assert 12 <= errs[0] / errs[1] <= 20


def test_example1_reaches_solution():
    op = example1_operator()
    p = SolverParams(r=1, alpha=8, theta=0.25)
    tr = integrate(op, ONE, p, IntegratorConfig(1000.0))
    assert np.max(np.abs(tr.z[-1, :4] - op.known_zero[:4])) <= 1e-2


def test_velocity_reconstruction_identity():
    op = example1_operator()
    p = SolverParams(r=0.6, alpha=8, theta=0.3)
    tr = integrate(op, ONE, p, IntegratorConfig(30.0, sample_count=100))
    for i in (0, 17, 99):
        t = tr.tau[i]
        expect = (tr.aux[i] - 2 * (8 - 0.6 * t ** -0.4) * tr.z[i]
                  - 2 * 0.3 * t ** 1.2 * tr.V[i]) / (2 * t ** 0.6)
        assert np.allclose(tr.velocity[i], expect, rtol=1e-13, atol=1e-15)


def test_recentered_matches_absolute():
    op = example1_operator()
    p = SolverParams(r=1, alpha=8, theta=0.25)
    cfg = IntegratorConfig(20.0, sample_count=20)
    a = integrate(op, ONE, p, cfg)
    b = integrate(op, ONE, p, cfg, origin=op.known_zero)
    assert np.allclose(a.z, b.absolute(), atol=1e-8)


@given(st.integers(1, 6), st.integers(0, 10 ** 6))
def test_compiled_and_generic_paths_agree(d, seed):
    rng = np.random.default_rng(seed)
    M = random_monotone_matrix(rng, d)
    q = rng.standard_normal(d)
    op = affine_operator(M, q)
    general = OperatorSpec(d, lambda z: M @ z + q)
    p = SolverParams(r=0.5, alpha=6, theta=0.5)
    cfg = IntegratorConfig(5.0, rtol=1e-10, sample_count=10)
    z0 = rng.standard_normal(d)
    a = integrate(op, BetaSchedule.power(0.5), p, cfg, z0=z0)
    b = integrate(general, BetaSchedule.power(0.5), p, cfg, z0=z0)
    assert np.allclose(a.z, b.z, rtol=1e-7, atol=1e-9)


@pytest.mark.skipif(not _backend.compiled_available(), reason="extension not built")
def test_backends_agree_on_exponential_schedule():
    op = example1_operator()
    p = SolverParams(r=0.5, alpha=8, theta=1 / 3, delta=2)
    s = BetaSchedule.exponential_continuous(0.5, 1 / 3, 2)
    cfg = IntegratorConfig(6.0, rtol=1e-10, sample_count=20)
    a = integrate(op, s, p, cfg, origin=op.known_zero, backend="compiled")
    b = integrate(op, s, p, cfg, origin=op.known_zero, backend="python")
    assert a.info["steps"] == b.info["steps"]
    assert np.allclose(a.z, b.z, rtol=1e-9, atol=1e-300)


def test_parameter_violation_and_force():
    p = SolverParams(r=0.5, alpha=8, theta=0.25)  # on the open boundary theta = 2/alpha
    cfg = IntegratorConfig(5.0, sample_count=5)
    with pytest.raises(ParameterViolation):
        integrate(example1_operator(), ONE, p, cfg)
    assert len(integrate(example1_operator(), ONE, p, cfg, force=True)) == 5


def test_growth_violation_rejected():
    p = SolverParams(r=1, alpha=8, theta=0.4)
    with pytest.raises(ParameterViolation) as exc:
        integrate(example1_operator(), BetaSchedule.power(1.0), p, IntegratorConfig(5.0))
    assert any("growth" in v for v in exc.value.violations)


def test_divergence_carries_partial():
    op = OperatorSpec(1, lambda z: -1000.0 * z)  # anti-monotone: exponential blow-up
    p = SolverParams(r=1, alpha=8, theta=0.25)
    with pytest.raises(DivergenceError) as exc:
        integrate(op, ONE, p, IntegratorConfig(60.0, sample_count=200), z0=[1.0], force=True)
    part = exc.value.partial
    assert part is not None and len(part) >= 1 and np.all(np.isfinite(part.z))
    assert part.tau[-1] < 60.0


def test_step_budget_raises_stiffness():
    p = SolverParams(r=1, alpha=8, theta=0.25)
    cfg = IntegratorConfig(100.0, max_steps=10, sample_count=10)
    with pytest.raises(StiffnessError) as exc:
        integrate(example1_operator(), ONE, p, cfg)
    assert exc.value.partial is not None


def test_integrator_config_validation():
    assert IntegratorConfig(10.0, step=9.5).violations(1.0)
    assert IntegratorConfig(10.0, rtol=0.1).violations(1.0)
    assert IntegratorConfig(1.0).violations(1.0)
    assert IntegratorConfig(10.0, method="euler").violations(1.0)
    assert IntegratorConfig(10.0).violations(1.0) == []
    ts = IntegratorConfig(1000.0, sample_count=2000).sample_times(1.0)
    assert ts[0] == 1.0 and ts[-1] == 1000.0 and np.all(np.diff(ts) > 0)
    with pytest.raises(InvalidInputError):
        integrate(example1_operator(), ONE, SolverParams(r=1, alpha=8, theta=0.25),
                  IntegratorConfig(10.0, rtol=0.5))


# -- energy ------------------------------------------------------------------------------

def test_energy_params_rules():
    assert EnergyParams(1.0, 0.0).violations(0.0, 8) == []
    assert EnergyParams(1.0, 0.1).violations(0.0, 8)
    assert EnergyParams(1.0, 0.3).violations(0.5, 8) == []
    assert EnergyParams(1.0, 0.5).violations(0.5, 8)
    assert EnergyParams(6.5, 1.0).violations(1.0, 8) == []
    assert EnergyParams(7.0, 1.0).violations(1.0, 8)
    with pytest.raises(ParameterViolation):
        EnergyParams(9.0, 0.0).check(0.0, 8)


def test_default_lambda_values():
    assert default_lambda(SolverParams(r=1, alpha=8, theta=0.25)) == pytest.approx(1.5)
    assert default_lambda(SolverParams(r=0.5, alpha=8, theta=0.3)) == pytest.approx(4 - 1 / 0.6)
    for p in (SolverParams(r=1, alpha=3, theta=0.45), SolverParams(r=0.5, alpha=2, theta=1.1),
              SolverParams(r=0, alpha=3, theta=1)):
        e = default_energy_params(p)
        assert e.violations(p.r, p.alpha) == []


def test_energy_vanishes_at_rest_on_zero():
    op = example1_operator()
    zs = op.known_zero
    p = SolverParams(r=0.5, alpha=8, theta=0.3)
    e = default_energy_params(p)
    assert energy_continuous(3.0, zs, np.zeros(6), op(zs), ONE, p, e, zs) == pytest.approx(0, abs=1e-25)


@given(st.floats(1, 1e4), st.floats(0.1, 5.0))
def test_energy_second_term_constant_coefficient_at_r1(t, lam):
    p = SolverParams(r=1, alpha=8, theta=0.25)
    e = EnergyParams(lam, 1.0)
    d = np.array([[1.0, 2.0]])
    terms = energy_terms(t, d, np.zeros_like(d), np.zeros_like(d), 0.0, p, e)
    assert terms[0, 1] == pytest.approx(2 * lam * (8 - 1 - lam) * 5.0, rel=1e-12)


def test_energy_matches_direct_formula():
    rng = np.random.default_rng(0)
    p = SolverParams(r=0.4, alpha=8, theta=0.3)
    s = BetaSchedule.power(0.3)
    e = EnergyParams(2.0, 0.2)
    t, z, v, zs = 7.0, rng.standard_normal(6), rng.standard_normal(6), rng.standard_normal(6)
    op = example1_operator()
    V = op(z)
    b = 7.0 ** 0.3
    d = z - zs
    X = 2 * 2.0 * t ** (0.2 - 0.4) * d + 2 * t ** 0.2 * v + 0.3 * t ** 0.6 * b * V
    E = (0.5 * X @ X + 2 * 2.0 * t ** (2 * (0.2 - 0.4)) * (8 - 0.0 * t ** -0.6 - 2.0) * d @ d
         + 2 * 2.0 * 0.3 * t ** 0.4 * b * d @ V + 0.5 * 0.09 * t ** 1.2 * b * b * V @ V)
    assert energy_continuous(t, z, v, V, s, p, e, zs) == pytest.approx(E, rel=1e-12)


def test_energy_nonincreasing_after_transient_two_lambdas():
    from monoflow.diagnostics import monotonicity_report
    op = example1_operator()
    p = SolverParams(r=1, alpha=8, theta=0.25)
    tr = integrate(op, ONE, p, IntegratorConfig(1000.0, rtol=1e-10), origin=op.known_zero)
    lam0 = default_lambda(p)
    for lam in (lam0 - 0.5, lam0 + 0.5):
        rep = monotonicity_report(tr.tau, trajectory_energy(tr, EnergyParams(lam, 1.0)))
        assert rep.passes, rep


def test_velocity_from_u_vectorized_matches_scalar():
    p = SolverParams(r=0.5, alpha=8, theta=0.3)
    s = BetaSchedule.power(1.0)
    t = np.array([1.0, 2.0, 5.0])
    z = np.arange(6.0).reshape(3, 2)
    u = z[::-1].copy()
    V = z * 2
    vec = velocity_from_u(t, z, u, V, s, p)
    for i in range(3):
        assert np.allclose(vec[i], velocity_from_u(t[i], z[i], u[i], V[i], s, p))
    assert np.allclose(initial_u(1.0, z[0], vec[0], V[0], s, p), u[0])
