"""Implicit inertial scheme with Hessian-type correction and time rescaling.

Each step forms

    w_k     = z^k + m_k (z^k - z^(k-1)) + a_k V(z^k)
    z^(k+1) = (I + gamma_k V)^(-1) (w_k),      gamma_k = a_k + b_k

so the only implicit work is one resolvent evaluation.  Affine operators use
a dense solve (compiled kernel for whole runs), general operators use Newton.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from .errors import (ConvergenceError, DivergenceError, IllPosedStepError, InvalidInputError,
                     NumericalDomainError, ParameterViolation)
from .flow import EnergyParams
from .operators import OperatorSpec, as_vector
from .schedules import BetaSchedule, SolverParams, _power_diff, check_growth_discrete
from .trajectory import Trajectory

RESOLVENT_METHODS = ("direct_affine", "newton")


@dataclass(frozen=True)
class StepCoefficients:
    """Weights of step ``k``: ``z^(k+1) = J_gamma(z^k + m (z^k - z^(k-1)) + a V(z^k))``."""

    k: int
    D: float
    m: float
    a: float
    b: float
    gamma: float


@dataclass(frozen=True)
class ResolventConfig:
    """How ``z + gamma V(z) = w`` is solved.

    ``method=None`` picks ``direct_affine`` for affine operators and
    ``newton`` otherwise.  Newton stops once
    ``|z + gamma V(z) - w| <= newton_tol * (1 + |w| + gamma |V(z)|)``.
    """

    method: Optional[str] = None
    newton_tol: float = 1e-12
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.method is not None and self.method not in RESOLVENT_METHODS:
            raise InvalidInputError(f"resolvent method must be one of {RESOLVENT_METHODS}")
        if not self.newton_tol > 0:
            raise InvalidInputError("newton_tol must be > 0")
        if int(self.newton_max_iter) != self.newton_max_iter or self.newton_max_iter < 1:
            raise InvalidInputError("newton_max_iter must be a positive integer")


def _check_discrete_r(p: SolverParams):
    if not (0 < p.r <= 1):
        raise InvalidInputError(f"the implicit scheme needs r in (0, 1] (got r = {p.r})")


def _coeffs(k: int, r: float, alpha: float, theta: float, bk: float, bkm: float) -> StepCoefficients:
    kr = k ** r
    D = alpha - r * k ** (r - 1.0) + (k + 1.0) ** r
    m = kr / D
    a = theta * k ** (2.0 * r) * bkm / D
    b = (theta * (float(_power_diff(k, 2.0 * r)) - 2.0 * r * k ** (2.0 * r - 1.0)) + kr) * bk / D
    return StepCoefficients(k, D, m, a, b, a + b)


def compute_coefficients(k: int, p: SolverParams, s: BetaSchedule, beta=None) -> StepCoefficients:
    """Step weights at index ``k >= 1``.

    ``beta`` may pass a precomputed ``s.seq_array(k)`` (or longer).

    Examples
    --------
    >>> c = compute_coefficients(1, SolverParams(r=1, alpha=8, theta=0.24), BetaSchedule.constant())
    >>> round(c.D, 12), round(c.gamma * 9, 12)
    (9.0, 1.48)
    """
    if int(k) != k or k < 1:
        raise InvalidInputError(f"k must be a positive integer (got {k!r})")
    _check_discrete_r(p)
    k = int(k)
    b = s.seq_array(k) if beta is None else beta
    c = _coeffs(k, p.r, p.alpha, p.theta, float(b[k]), float(b[k - 1]))
    if not c.D > 0:
        raise IllPosedStepError(f"step denominator D = {c.D:.6g} is not positive at k = {k}")
    if not c.gamma > 0:
        raise IllPosedStepError(
            f"resolvent parameter gamma = {c.gamma:.6g} is not positive at k = {k} "
            f"for schedule {s.to_dict()}"
        )
    return c


def resolvent(op: OperatorSpec, gamma: float, w, cfg: Optional[ResolventConfig] = None) -> np.ndarray:
    """Solve ``z + gamma V(z) = w``.

    Examples
    --------
    >>> from monoflow.operators import affine_operator
    >>> resolvent(affine_operator([[0.0, 1.0], [-1.0, 0.0]]), 1.0, [1.0, 0.0])
    array([0.5, 0.5])
    """
    cfg = cfg or ResolventConfig()
    if not gamma > 0:
        raise IllPosedStepError(f"resolvent parameter must be positive (got {gamma})")
    w = as_vector(w, op.dimension, "w")
    method = cfg.method or ("direct_affine" if op.is_affine else "newton")
    d = op.dimension
    if method == "direct_affine":
        if not op.is_affine:
            raise InvalidInputError("direct_affine needs an affine operator")
        try:
            z = np.linalg.solve(np.eye(d) + gamma * op.matrix, w - gamma * op.offset)
        except np.linalg.LinAlgError as exc:  # impossible for monotone M
            raise NumericalDomainError(f"resolvent system is singular: {exc}") from None
        return z
    z = w.copy()
    f, eye = op._evaluate, np.eye(d)
    res = math.inf
    for _ in range(int(cfg.newton_max_iter)):
        Vz = np.asarray(f(z), dtype=float)
        F = z + gamma * Vz - w
        res = np.linalg.norm(F)
        if not np.isfinite(res):
            raise NumericalDomainError("non-finite residual in Newton resolvent")
        if res <= cfg.newton_tol * (1.0 + np.linalg.norm(w) + gamma * np.linalg.norm(Vz)):
            return z
        J = op.jacobian(z)
        z = z - np.linalg.solve(eye + gamma * J, F)
    Vz = np.asarray(f(z), dtype=float)
    res = np.linalg.norm(z + gamma * Vz - w)
    if res <= cfg.newton_tol * (1.0 + np.linalg.norm(w) + gamma * np.linalg.norm(Vz)):
        return z
    raise ConvergenceError(
        f"Newton resolvent did not converge in {cfg.newton_max_iter} iterations (residual {res:.3e})",
        residual=res,
    )


def default_stride(k_max: int, samples: int = 2000) -> int:
    return max(1, math.ceil(k_max / samples))


def discrete_violations(s: BetaSchedule, p: SolverParams, k_max: int) -> list:
    bad = p.violations("discrete", s)
    if p.r > 0:
        g = check_growth_discrete(s, p, max(k_max, p.k0 + 1))
        if not g.passes:
            bad.append(
                f"discrete growth condition sup k^r ((b_k - b_(k-1))/b_k + 2r/k) < 1/(2 theta) fails: "
                f"sup = {g.sup_value:.6g} >= {g.bound:.6g}"
            )
    return bad


def run_discrete(op: OperatorSpec, s: BetaSchedule, p: SolverParams, z0=None, z1=None,
                 k_max: int = 1000, cfg: Optional[ResolventConfig] = None, *,
                 stride: Optional[int] = None, origin=None, force: bool = False,
                 backend: Optional[str] = None) -> Trajectory:
    """Run ``k_max`` steps from ``(z^0, z^1)``; samples are indexed by ``k``.

    Parameters
    ----------
    z0, z1 : array_like, optional
        Zero vector and ``z1 = z0`` by default.
    stride : int, optional
        Keep the iterates whose index is a multiple of ``stride`` (default
        ``ceil(k_max / 2000)``); ``z^1`` and the last iterate are always kept.
    origin : array_like, optional
        Iterate in displacement coordinates, as in :func:`monoflow.flow.integrate`.
    force : bool
        Skip the parameter-box and growth-condition audit.

    Returns
    -------
    Trajectory
        ``tau = k``, ``z = z^k``, ``velocity = z^k - z^(k-1)``.
    """
    _check_discrete_r(p)
    if int(k_max) != k_max or k_max < 1:
        raise InvalidInputError(f"k_max must be a positive integer (got {k_max!r})")
    k_max = int(k_max)
    if not force:
        bad = discrete_violations(s, p, k_max)
        if bad:
            raise ParameterViolation(bad)
    cfg = cfg or ResolventConfig()
    d = op.dimension
    z0 = np.zeros(d) if z0 is None else as_vector(z0, d, "z0")
    z1 = z0.copy() if z1 is None else as_vector(z1, d, "z1")
    work = op
    if origin is not None:
        origin = as_vector(origin, d, "origin")
        work = op.recentered(origin)
        z0, z1 = z0 - origin, z1 - origin
    stride = default_stride(k_max) if stride is None else int(stride)
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    with np.errstate(over="ignore"):
        beta = s.seq_array(k_max)
    if not np.all(np.isfinite(beta)) or np.any(beta <= 0):
        bad_k = int(np.flatnonzero(~(np.isfinite(beta) & (beta > 0)))[0])
        raise NumericalDomainError(f"beta_k is not positive and finite at k = {bad_k}")

    method = cfg.method or ("direct_affine" if work.is_affine else "newton")
    t_start = time.perf_counter()
    if method == "direct_affine" and work.is_affine:
        kern = _backend.get_kernels(backend)
        ks, Z, Zp, status, k_reached, max_res, min_gamma = kern.discrete_affine(
            work.matrix, work.offset, beta, p.r, p.alpha, p.theta, z0, z1, k_max, stride)
        used = _backend.backend_name(kern)
        Vs = Z @ work.matrix.T + work.offset
        err = None
        if status == 4:
            err = IllPosedStepError(
                f"resolvent parameter is not positive at k = {k_reached} for schedule {s.to_dict()}")
        elif status != 0:
            err = DivergenceError(f"iterate became non-finite after k = {k_reached}")
    else:
        ks, Z, Zp, Vs, k_reached, max_res, min_gamma, err = _run_python(
            work, beta, p, z0, z1, k_max, stride, cfg, method)
        used = "python"
    elapsed = time.perf_counter() - t_start
    info = {
        "k_reached": int(k_reached), "max_rel_residual": float(max_res),
        "min_gamma": float(min_gamma), "backend": used, "resolvent": method,
        "wall_time": elapsed, "operator": op.name, "stride": stride,
    }
    traj = Trajectory("discrete", np.asarray(ks, dtype=float), Z, Vs, p, s,
                      velocity=Z - Zp, origin=origin, info=info)
    if err is not None:
        err.partial = traj
        raise err
    return traj


def _run_python(op, beta, p, z0, z1, k_max, stride, cfg, method):
    """Generic loop; returns recorded samples and the first error (or None)."""
    ks, Z, Zp, Vs = [1], [z1.copy()], [z0.copy()], [op._evaluate(z1)]
    zprev, z, Vz = z0, z1, np.asarray(Vs[0], dtype=float)
    max_res, min_gamma, k_reached = 0.0, math.inf, 1
    err = None
    rcfg = ResolventConfig(method, cfg.newton_tol, cfg.newton_max_iter)
    for k in range(1, k_max + 1):
        c = _coeffs(k, p.r, p.alpha, p.theta, float(beta[k]), float(beta[k - 1]))
        min_gamma = min(min_gamma, c.gamma)
        if not c.gamma > 0:
            err = IllPosedStepError(f"resolvent parameter gamma = {c.gamma:.6g} is not positive at k = {k}")
            break
        w = z + c.m * (z - zprev) + c.a * Vz
        try:
            znew = resolvent(op, c.gamma, w, rcfg)
        except (ConvergenceError, NumericalDomainError, InvalidInputError) as exc:
            exc.args = (f"step k = {k}: {exc.args[0]}",) + exc.args[1:]
            err = exc
            break
        Vnew = np.asarray(op._evaluate(znew), dtype=float)
        if not (np.all(np.isfinite(znew)) and np.all(np.isfinite(Vnew))):
            err = DivergenceError(f"iterate became non-finite at k = {k + 1}")
            break
        res = np.linalg.norm(znew + c.gamma * Vnew - w) / (
            1.0 + np.linalg.norm(w) + c.gamma * np.linalg.norm(Vnew))
        max_res = max(max_res, res)
        zprev, z, Vz = z, znew, Vnew
        k_reached = k + 1
        if (k + 1) % stride == 0 or k == k_max:
            ks.append(k + 1)
            Z.append(z)
            Zp.append(zprev)
            Vs.append(Vz)
    return (np.array(ks), np.array(Z), np.array(Zp), np.array(Vs), k_reached, max_res, min_gamma, err)


# ---------------------------------------------------------------------------
# diagnostics tied to the scheme


def eta_k(k: int, p: SolverParams, s: BetaSchedule, beta=None) -> float:
    """``2 k^r [(2 r theta k^(r-1) - 1) b_k + theta k^r (b_k - b_(k-1))] - theta [(k+1)^(2r) b_k - k^(2r) b_(k-1)]``."""
    if int(k) != k or k < 1:
        raise InvalidInputError("k must be a positive integer")
    k = int(k)
    r, th = p.r, p.theta
    b = s.seq_array(k) if beta is None else beta
    bk, bkm = float(b[k]), float(b[k - 1])
    kr = k ** r
    return (2.0 * kr * ((2.0 * r * th * k ** (r - 1.0) - 1.0) * bk + th * kr * (bk - bkm))
            - th * ((k + 1.0) ** (2.0 * r) * bk - k ** (2.0 * r) * bkm))


def recurrence_residual(k: int, z_prev, z_k, z_next, V_k, V_next, p: SolverParams,
                        s: BetaSchedule, beta=None) -> float:
    """Relative residual of the four-term recurrence at step ``k``.

    The recurrence reads

        2 D (z^(k+1) - z^k) - 2 k^r (z^k - z^(k-1))
          + 2 theta [(k+1)^(2r) b_k - k^(2r) b_(k-1)] V(z^(k+1))
          + 2 theta k^(2r) b_(k-1) [V(z^(k+1)) - V(z^k)]
        = 2 k^r [(2 r theta k^(r-1) - 1) b_k + theta k^r (b_k - b_(k-1))] V(z^(k+1))

    and the residual is the norm of ``lhs - rhs`` over the sum of the
    norms of every operand (each difference counted through both of its
    members), so round-off in iterates near convergence is not magnified.
    """
    k = int(k)
    r, th = p.r, p.theta
    b = s.seq_array(k) if beta is None else beta
    bk, bkm = float(b[k]), float(b[k - 1])
    kr = k ** r
    D = p.alpha - r * k ** (r - 1.0) + (k + 1.0) ** r
    z_prev, z_k, z_next, V_k, V_next = (np.asarray(a, dtype=float) for a in (z_prev, z_k, z_next, V_k, V_next))
    c3 = 2.0 * th * ((k + 1.0) ** (2.0 * r) * bk - k ** (2.0 * r) * bkm)
    c4 = 2.0 * th * k ** (2.0 * r) * bkm
    c5 = 2.0 * kr * ((2.0 * r * th * k ** (r - 1.0) - 1.0) * bk + th * kr * (bk - bkm))
    total = (2.0 * D * (z_next - z_k) - 2.0 * kr * (z_k - z_prev) + c3 * V_next
             + c4 * (V_next - V_k) - c5 * V_next)
    nz = np.linalg.norm
    scale = (2.0 * D * (nz(z_next) + nz(z_k)) + 2.0 * kr * (nz(z_k) + nz(z_prev))
             + (abs(c3) + abs(c4) + abs(c5)) * nz(V_next) + abs(c4) * nz(V_k))
    return float(nz(total) / scale) if scale > 0 else 0.0


def energy_discrete_terms(k, disp, step, Vz, log_beta_k, log_beta_km1, p: SolverParams,
                          e: EnergyParams) -> np.ndarray:
    """The four summands of the discrete energy, vectorized over ``k``.

    ``disp = z^k - z*``, ``step = z^k - z^(k-1)``; returns ``(N, 4)``.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    disp, step, Vz = (np.atleast_2d(a) for a in (disp, step, Vz))
    lb, lbm = np.atleast_1d(log_beta_k), np.atleast_1d(log_beta_km1)
    r, al, th = p.r, p.alpha, p.theta
    lam, rho = e.lam, e.rho
    lk = np.log(k)
    w3 = th * np.exp((rho + r) * lk + lbm)
    col = lambda a: a[:, None]
    X = col(2.0 * lam * k ** (rho - r)) * disp + col(2.0 * k ** rho) * step + col(w3) * Vz
    e1 = 0.5 * np.einsum("ij,ij->i", X, X)
    e2 = 2.0 * lam * k ** (2.0 * (rho - r)) * (al - (2.0 * rho - r) * k ** (r - 1.0) - lam) \
        * np.einsum("ij,ij->i", disp, disp)
    e3 = 2.0 * lam * th * np.exp(2.0 * rho * lk + lbm) * np.einsum("ij,ij->i", disp, Vz)
    e4 = 0.5 * th ** 2 * np.exp(2.0 * r * np.log1p(k) + 2.0 * rho * lk + lb + lbm) \
        * np.einsum("ij,ij->i", Vz, Vz)
    return np.column_stack([e1, e2, e3, e4])


def energy_discrete(k: int, z_k, z_km1, op: OperatorSpec, s: BetaSchedule, p: SolverParams,
                    e: EnergyParams, z_star) -> float:
    """Discrete Lyapunov energy at index ``k`` with respect to ``z_star``."""
    k = int(k)
    z_k = np.asarray(z_k, dtype=float)
    lb = s.log_seq_array(k)
    terms = energy_discrete_terms(k, z_k - np.asarray(z_star, dtype=float),
                                  z_k - np.asarray(z_km1, dtype=float), op(z_k),
                                  lb[k], lb[k - 1], p, e)
    return float(terms.sum())


def trajectory_energy_discrete(traj: Trajectory, e: EnergyParams, z_star=None) -> np.ndarray:
    """Discrete energy at every recorded ``k`` (``z_star`` defaults to the origin)."""
    if traj.kind != "discrete":
        raise InvalidInputError("expected a discrete trajectory")
    if z_star is None:
        if traj.origin is None:
            raise InvalidInputError("z_star is required when the trajectory has no origin")
        z_star = traj.origin
    ks = traj.tau.astype(int)
    lb = traj.schedule.log_seq_array(int(ks[-1]))
    return energy_discrete_terms(ks, traj.displacement(z_star), traj.velocity, traj.V,
                                 lb[ks], lb[ks - 1], traj.params, e).sum(axis=1)
