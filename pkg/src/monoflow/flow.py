"""Second-order monotone flow with Hessian-driven damping and time rescaling.

The flow

    z'' + (alpha / t**r) z' + theta t**r beta(t) d/dt V(z) + beta(t) V(z) = 0

is integrated as the first-order system in ``(u, z)`` with

    u  = 2 (alpha - r t**(r-1)) z + 2 t**r z' + 2 theta t**(2r) beta V(z)
    u' = 2 t**r [(2 r theta t**(r-1) - 1) beta + theta t**r beta'] V(z)
         + 2 r (1 - r) t**(r-2) z

which never differentiates ``V``.  Affine operators with closed-form
schedules go through the compiled kernels; everything else uses the
pure-Python stepper with a Python right-hand side.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from . import _kernels_py
from .errors import (DivergenceError, InvalidInputError, NumericalDomainError,
                     ParameterViolation, StiffnessError)
from .operators import OperatorSpec, as_vector
from .schedules import BetaSchedule, SolverParams, check_growth_continuous
from .trajectory import Trajectory

METHODS = ("rk4_fixed", "rk45_adaptive")


@dataclass(frozen=True)
class FlowState:
    """Time ``t``, state ``z`` and auxiliary ``u`` of the first-order system."""

    t: float
    z: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        z = as_vector(self.z, name="z")
        u = as_vector(self.u, z.size, "u")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "u", u)
        if not self.t > 0:
            raise NumericalDomainError(f"flow time must be positive (got t = {self.t})")


@dataclass(frozen=True)
class IntegratorConfig:
    """Time stepping and output thinning.

    Parameters
    ----------
    horizon : float
        Final time ``T``.
    method : {"rk45_adaptive", "rk4_fixed"}
    step : float
        Fixed step for RK4; initial trial step for the adaptive method.
    rtol, atol : float
        Adaptive error scale is ``atol + rtol * max(|y|_inf, |y_new|_inf)``.
        The tiny default ``atol`` only matters once the state approaches the
        bottom of the floating-point range.
    sample_count : int
        Number of emitted samples, including ``t0`` and ``T``.
    spacing : {"geometric", "linear"}
    max_steps : int
    h_min_rel : float
        The adaptive method gives up when the step falls below
        ``h_min_rel * max(1, t)``.
    """

    horizon: float
    method: str = "rk45_adaptive"
    step: float = 1e-2
    rtol: float = 1e-8
    atol: float = 1e-300
    sample_count: int = 2000
    spacing: str = "geometric"
    max_steps: int = 50_000_000
    h_min_rel: float = 1e-14

    def violations(self, t0: float = 1.0) -> list:
        out = []
        if self.method not in METHODS:
            out.append(f"method must be one of {METHODS} (got {self.method!r})")
        if not self.horizon > t0:
            out.append(f"horizon T = {self.horizon} must exceed t0 = {t0}")
        elif not (0 < self.step < self.horizon - t0):
            out.append(f"step must lie in (0, T - t0) = (0, {self.horizon - t0:g}) (got {self.step})")
        if not (0 < self.rtol <= 1e-2):
            out.append(f"rtol must lie in (0, 1e-2] (got {self.rtol})")
        if self.atol < 0:
            out.append(f"atol must be >= 0 (got {self.atol})")
        if int(self.sample_count) != self.sample_count or self.sample_count < 2:
            out.append(f"sample_count must be an integer >= 2 (got {self.sample_count})")
        if self.spacing not in ("geometric", "linear"):
            out.append(f"spacing must be 'geometric' or 'linear' (got {self.spacing!r})")
        if self.max_steps < 1:
            out.append("max_steps must be >= 1")
        return out

    def sample_times(self, t0: float = 1.0) -> np.ndarray:
        n = int(self.sample_count)
        if self.spacing == "geometric":
            ts = np.geomspace(t0, self.horizon, n)
        else:
            ts = np.linspace(t0, self.horizon, n)
        ts[0], ts[-1] = t0, self.horizon
        return np.unique(ts)


@dataclass(frozen=True)
class EnergyParams:
    """Weights ``lam`` and time exponent ``rho`` of the Lyapunov energy."""

    lam: float
    rho: float

    def violations(self, r: float, alpha: float) -> list:
        lam, rho = self.lam, self.rho
        out = []
        if r == 0:
            if rho != 0:
                out.append(f"r = 0 requires rho = 0 (got {rho})")
            if not 0 < lam < alpha:
                out.append(f"r = 0 requires 0 < lambda < alpha = {alpha} (got {lam})")
        elif r < 1:
            if not 0 < rho < r:
                out.append(f"r in (0, 1) requires rho in (0, r) = (0, {r}) (got {rho})")
            if not 0 < lam < alpha:
                out.append(f"r in (0, 1) requires 0 < lambda < alpha = {alpha} (got {lam})")
        else:
            if rho != 1:
                out.append(f"r = 1 requires rho = 1 (got {rho})")
            if not 0 < lam < alpha - 1:
                out.append(f"r = 1 requires 0 < lambda < alpha - 1 = {alpha - 1} (got {lam})")
        return out

    def check(self, r: float, alpha: float) -> None:
        bad = self.violations(r, alpha)
        if bad:
            raise ParameterViolation(bad)


def default_lambda(p: SolverParams) -> float:
    """``alpha/2 - 1/(2 theta)`` (``(alpha-1)/2 - 1/(2 theta)`` at ``r = 1``), clipped inside the open interval."""
    if p.r == 1:
        lam, hi = (p.alpha - 1.0) / 2.0 - 1.0 / (2.0 * p.theta), p.alpha - 1.0
    else:
        lam, hi = p.alpha / 2.0 - 1.0 / (2.0 * p.theta), p.alpha
    eps = 1e-3 * hi
    return float(min(max(lam, eps), hi - eps))


def default_energy_params(p: SolverParams, lam: Optional[float] = None) -> EnergyParams:
    """Admissible ``(lam, rho)``: ``rho = r/2`` inside ``(0, r)`` for ``0 < r < 1``."""
    if p.r == 0:
        rho = 0.0
    elif p.r < 1:
        rho = p.r / 2.0
    else:
        rho = 1.0
    return EnergyParams(default_lambda(p) if lam is None else float(lam), rho)


# ---------------------------------------------------------------------------
# vector field


def _coefficients(t, s: BetaSchedule, p: SolverParams):
    """``(beta, c_du, c_z)`` with ``du = c_du V + c_z z``."""
    if t <= 0:
        raise NumericalDomainError(f"flow time must be positive (got t = {t})")
    r, th = p.r, p.theta
    beta = s.value(t)
    dbeta = s.derivative(t)
    tr = t ** r
    c_du = 2.0 * tr * ((2.0 * r * th * t ** (r - 1.0) - 1.0) * beta + th * tr * dbeta)
    c_z = 2.0 * r * (1.0 - r) * t ** (r - 2.0)
    return beta, c_du, c_z


def velocity_from_u(t, z, u, Vz, s: BetaSchedule, p: SolverParams):
    """Reconstruct ``z'`` from ``u``; ``t`` may be an array of sample times."""
    t = np.asarray(t, dtype=float)
    r = p.r
    with np.errstate(over="ignore", invalid="ignore"):
        beta = np.asarray(s.value(t), dtype=float)
    tr = t ** r
    col = (lambda a: a[:, None]) if np.ndim(t) else (lambda a: a)
    return (u - col(2.0 * (p.alpha - r * t ** (r - 1.0))) * z
            - col(2.0 * p.theta * tr * tr * beta) * Vz) / col(2.0 * tr)


def initial_u(t0, z0, zdot0, Vz0, s: BetaSchedule, p: SolverParams):
    r = p.r
    tr = t0 ** r
    return (2.0 * (p.alpha - r * t0 ** (r - 1.0)) * z0 + 2.0 * tr * zdot0
            + 2.0 * p.theta * tr * tr * s.value(t0) * Vz0)


def flow_rhs(state: FlowState, op: OperatorSpec, s: BetaSchedule, p: SolverParams):
    """``(du/dt, dz/dt)`` at ``state``; evaluates ``V`` once.

    Examples
    --------
    >>> from monoflow.operators import identity_operator
    >>> st = FlowState(1.0, [1.0], [4.0])
    >>> du, dz = flow_rhs(st, identity_operator(1), BetaSchedule.constant(),
    ...                   SolverParams(r=0, alpha=2, theta=1))
    >>> float(du[0]), float(dz[0])
    (-2.0, -1.0)
    """
    t, z, u = state.t, state.z, state.u
    Vz = op(z)
    beta, c_du, c_z = _coefficients(t, s, p)
    du = c_du * Vz + c_z * z
    dz = velocity_from_u(t, z, u, Vz, s, p)
    return du, dz


def _encode_schedule(s: BetaSchedule):
    if s.family == "constant":
        return (0, s.c, 0.0)
    if s.family == "power":
        return (1, s.c, s.p)
    if s.family.startswith("exponential"):
        return (2, s.r, s.rate)
    return None


def _python_rhs(op: OperatorSpec, s: BetaSchedule, p: SolverParams, d: int):
    f = op._evaluate

    def rhs(t, y):
        u, z = y[:d], y[d:]
        Vz = np.asarray(f(z), dtype=float)
        beta, c_du, c_z = _coefficients(t, s, p)
        tr = t ** p.r
        out = np.empty(2 * d)
        out[:d] = c_du * Vz + c_z * z
        out[d:] = (u - 2.0 * (p.alpha - p.r * t ** (p.r - 1.0)) * z
                   - 2.0 * p.theta * tr * tr * beta * Vz) / (2.0 * tr)
        return out

    return rhs


def flow_violations(op: OperatorSpec, s: BetaSchedule, p: SolverParams) -> list:
    """Parameter-box and growth-condition messages for the continuous flow."""
    bad = p.violations("continuous", s)
    g = check_growth_continuous(s, p)
    if not g.passes:
        bad.append(
            f"growth condition sup t^r (beta'/beta + 2r/t) < 1/theta fails: "
            f"sup = {g.sup_value:.6g} >= {g.bound:.6g}"
        )
    return bad


def integrate(op: OperatorSpec, s: BetaSchedule, p: SolverParams, cfg: IntegratorConfig,
              z0=None, zdot0=None, *, origin=None, force: bool = False,
              backend: Optional[str] = None) -> Trajectory:
    """Integrate the flow from ``t0 = p.t0`` to ``cfg.horizon``.

    Parameters
    ----------
    op, s, p, cfg
        Operator, schedule, solver parameters and integrator settings.
    z0, zdot0 : array_like, optional
        Initial state and velocity, zero by default.
    origin : array_like, optional
        Integrate in displacement coordinates ``w = z - origin``.  For affine
        operators ``origin`` must be a zero of ``V``; the dynamics are then
        exactly linear in ``w``.
    force : bool
        Run even when the parameter box or growth condition is violated.
    backend : {"compiled", "python"}, optional
        Kernel selection for affine operators.

    Returns
    -------
    Trajectory
        ``cfg.sample_count`` samples (fewer if sample times coincide).

    Raises
    ------
    ParameterViolation
        Inadmissible parameters and ``force`` is false.
    DivergenceError, StiffnessError
        With ``partial`` holding the samples recorded before the failure.
    """
    bad = cfg.violations(p.t0)
    if bad:
        raise InvalidInputError("; ".join(bad))
    if not force:
        bad = flow_violations(op, s, p)
        if bad:
            raise ParameterViolation(bad)
    d = op.dimension
    z0 = np.zeros(d) if z0 is None else as_vector(z0, d, "z0")
    zdot0 = np.zeros(d) if zdot0 is None else as_vector(zdot0, d, "zdot0")
    work = op
    if origin is not None:
        origin = as_vector(origin, d, "origin")
        work = op.recentered(origin)
        z0 = z0 - origin
    t0 = float(p.t0)
    V0 = work(z0)
    u0 = initial_u(t0, z0, zdot0, V0, s, p)
    if not np.all(np.isfinite(u0)):
        raise NumericalDomainError("initial auxiliary state is not finite")
    t_out = cfg.sample_times(t0)
    method = METHODS.index(cfg.method)
    code = _encode_schedule(s)

    t_start = time.perf_counter()
    if work.is_affine and code is not None:
        kern = _backend.get_kernels(backend)
        Y, n_rec, status, steps, rejected, t_end = kern.integrate_affine(
            work.matrix, work.offset, code, p.r, p.alpha, p.theta, t0, u0, z0, t_out,
            method, cfg.step, cfg.rtol, cfg.atol, int(cfg.max_steps), cfg.h_min_rel)
        used = _backend.backend_name(kern)
        Z = Y[:n_rec, d:]
        with np.errstate(over="ignore", invalid="ignore"):
            Vs = Z @ work.matrix.T + work.offset
    else:
        rhs = _python_rhs(work, s, p, d)
        y0 = np.concatenate([u0, z0])
        with np.errstate(over="ignore", invalid="ignore"):
            Y, n_rec, status, steps, rejected, t_end = _kernels_py.integrate_generic(
                rhs, t0, y0, t_out, method, cfg.step, cfg.rtol, cfg.atol,
                int(cfg.max_steps), cfg.h_min_rel)
        used = "python"
        Z = Y[:n_rec, d:]
        Vs = np.array([work._evaluate(z) for z in Z]).reshape(n_rec, d)
    elapsed = time.perf_counter() - t_start

    U = Y[:n_rec, :d]
    # keep only the finite prefix
    ok = np.all(np.isfinite(U), axis=1) & np.all(np.isfinite(Z), axis=1) & np.all(np.isfinite(Vs), axis=1)
    n_ok = int(np.argmin(ok)) if not ok.all() else n_rec
    tau = t_out[:n_ok]
    with np.errstate(over="ignore", invalid="ignore"):
        vel = velocity_from_u(tau, Z[:n_ok], U[:n_ok], Vs[:n_ok], s, p)
    info = {
        "steps": int(steps), "rejected": int(rejected), "t_reached": float(t_end),
        "status": int(status), "backend": used, "method": cfg.method, "wall_time": elapsed,
        "operator": op.name,
    }
    if n_ok == 0:
        raise DivergenceError("no finite samples were produced", partial=None)
    traj = Trajectory("continuous", tau, Z[:n_ok], Vs[:n_ok], p, s, velocity=vel,
                      origin=origin, aux=U[:n_ok], info=info)
    if status == _kernels_py.STATUS_NONFINITE or n_ok < n_rec:
        raise DivergenceError(
            f"state became non-finite near t = {t_end:.6g}; last finite sample at t = {tau[-1]:.6g}",
            partial=traj,
        )
    if status == _kernels_py.STATUS_UNDERFLOW:
        raise StiffnessError(f"adaptive step underflow at t = {t_end:.6g}", partial=traj)
    if status == _kernels_py.STATUS_MAX_STEPS:
        raise StiffnessError(f"step budget {cfg.max_steps} exhausted at t = {t_end:.6g}", partial=traj)
    return traj


# ---------------------------------------------------------------------------
# energy


def energy_terms(tau, disp, vel, Vz, log_beta, p: SolverParams, e: EnergyParams):
    """The four summands of the continuous energy, vectorized over samples.

    ``disp`` is ``z - z*``, ``vel`` is ``z'``; returns an ``(N, 4)`` array.
    """
    t = np.atleast_1d(np.asarray(tau, dtype=float))
    disp, vel, Vz = (np.atleast_2d(a) for a in (disp, vel, Vz))
    lb = np.atleast_1d(np.asarray(log_beta, dtype=float))
    r, al, th = p.r, p.alpha, p.theta
    lam, rho = e.lam, e.rho
    lt = np.log(t)
    # theta t^(rho+r) beta, formed in log space
    w3 = th * np.exp((rho + r) * lt + lb)
    col = lambda a: a[:, None]
    X = col(2.0 * lam * t ** (rho - r)) * disp + col(2.0 * t ** rho) * vel + col(w3) * Vz
    e1 = 0.5 * np.einsum("ij,ij->i", X, X)
    e2 = 2.0 * lam * t ** (2.0 * (rho - r)) * (al - (2.0 * rho - r) * t ** (r - 1.0) - lam) \
        * np.einsum("ij,ij->i", disp, disp)
    e3 = 2.0 * lam * th * np.exp(2.0 * rho * lt + lb) * np.einsum("ij,ij->i", disp, Vz)
    e4 = 0.5 * w3 ** 2 * np.einsum("ij,ij->i", Vz, Vz)
    return np.column_stack([e1, e2, e3, e4])


def energy_continuous(t, z, zdot, Vz, s: BetaSchedule, p: SolverParams, e: EnergyParams,
                      z_star) -> float:
    """Lyapunov energy of a single flow sample with respect to ``z_star``."""
    z = np.asarray(z, dtype=float)
    terms = energy_terms(t, z - np.asarray(z_star, dtype=float), zdot, Vz,
                         s.log_value(float(t)), p, e)
    return float(terms.sum())


def trajectory_energy(traj: Trajectory, e: EnergyParams, z_star=None) -> np.ndarray:
    """Energy at every sample of a continuous trajectory.

    ``z_star`` defaults to the trajectory origin (a zero of ``V``).
    """
    if traj.kind != "continuous":
        raise InvalidInputError("trajectory_energy expects a continuous trajectory")
    if traj.velocity is None:
        raise InvalidInputError("trajectory carries no velocity")
    if z_star is None:
        if traj.origin is None:
            raise InvalidInputError("z_star is required when the trajectory has no origin")
        z_star = traj.origin
    disp = traj.displacement(z_star)
    return energy_terms(traj.tau, disp, traj.velocity, traj.V, traj.log_beta(),
                        traj.params, e).sum(axis=1)
