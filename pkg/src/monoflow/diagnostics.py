"""Gap functions, primal-dual metrics, decay products and rate fits.

Everything here is a pure function of a finished :class:`Trajectory`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import FitDomainError, InvalidInputError, UnsupportedMetricError
from .operators import LagrangianProblem
from .trajectory import Trajectory, row_norms

NONPOSITIVE = "certified_nonpositive"
DECAY_SLOPE = -1e-8  # fits flatter than this are reported as non-decaying
NONNEGATIVE = "certified_nonnegative"
INDETERMINATE = "indeterminate"


def gap_function(z, z_star, V_of_z) -> float:
    """``<z - z*, V(z)>``; nonnegative for monotone ``V`` with ``V(z*) = 0``."""
    z, z_star, V_of_z = (np.asarray(a, dtype=float) for a in (z, z_star, V_of_z))
    if not z.shape == z_star.shape == V_of_z.shape:
        raise InvalidInputError(f"shape mismatch: {z.shape}, {z_star.shape}, {V_of_z.shape}")
    return float(np.dot(z - z_star, V_of_z))


def trajectory_gap(traj: Trajectory, z_star=None) -> np.ndarray:
    """Gap at every sample; ``z_star`` defaults to the trajectory origin."""
    disp = traj.displacement(_star(traj, z_star))
    return np.einsum("ij,ij->i", disp, traj.V)


def _star(traj: Trajectory, z_star):
    if z_star is not None:
        return np.asarray(z_star, dtype=float)
    if traj.origin is None:
        raise UnsupportedMetricError("a reference zero is required (trajectory has no origin)")
    return traj.origin


# ---------------------------------------------------------------------------
# primal-dual metrics

METRIC_NAMES = ("lagrangian_gap", "feasibility", "f_gap", "grad_gap", "adjoint_gap")


def primal_dual_metrics(x, lam, p: LagrangianProblem) -> dict:
    """Five optimality measures of ``(x, lam)`` against the known solution.

    Examples
    --------
    >>> from monoflow.operators import example1_problem
    >>> m = primal_dual_metrics([1, 1, 0, 0], [0.4, 1.2], example1_problem())
    >>> round(m["feasibility"], 12), round(m["f_gap"], 12)
    (1.0, 0.6)
    """
    if p.known_solution is None:
        raise UnsupportedMetricError(f"problem {p.name!r} has no known solution")
    xs, ls = p.known_solution
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    fx, fs = float(p.f_value(x)), float(p.f_value(xs))
    return {
        "lagrangian_gap": fx - fs + float(ls @ (p.A @ x - p.b)),
        "feasibility": float(np.linalg.norm(p.A @ x - p.b)),
        "f_gap": abs(fx - fs),
        "grad_gap": float(np.linalg.norm(np.asarray(p.grad_f(x)) - np.asarray(p.grad_f(xs)))),
        "adjoint_gap": float(np.linalg.norm(p.A.T @ (lam - ls))),
    }


def primal_dual_from_displacement(dx, dlam, p: LagrangianProblem) -> dict:
    """Vectorized metrics from ``dx = x - x*``, ``dlam = lam - lam*`` (rows are samples).

    Quadratic objectives use the exact expansion
    ``f(x* + dx) - f(x*) = grad f(x*) . dx + dx' H dx / 2``, so the metrics
    stay accurate far below the rounding level of ``f(x*)``.  Other
    objectives are evaluated at ``x* + dx``.
    """
    if p.known_solution is None:
        raise UnsupportedMetricError(f"problem {p.name!r} has no known solution")
    xs, ls = p.known_solution
    dx = np.atleast_2d(np.asarray(dx, dtype=float))
    dlam = np.atleast_2d(np.asarray(dlam, dtype=float))
    Adx = dx @ p.A.T
    if p.hessian is not None:
        g = np.asarray(p.grad_f(xs), dtype=float)
        Hdx = dx @ p.hessian.T
        quad = 0.5 * np.einsum("ij,ij->i", dx, Hdx)
        df = dx @ g + quad
        # grad f(x*) + A' lam* = 0 at the solution, leaving the quadratic
        # (adding its rounding-level residual back would only inject noise)
        lag = quad
        grad_gap = row_norms(Hdx)
    else:
        X = xs + dx
        fs = float(p.f_value(xs))
        df = np.array([float(p.f_value(x)) - fs for x in X])
        lag = df + Adx @ ls
        gs = np.asarray(p.grad_f(xs), dtype=float)
        grad_gap = np.array([np.linalg.norm(np.asarray(p.grad_f(x)) - gs) for x in X])
    return {
        "lagrangian_gap": lag,
        "feasibility": row_norms(Adx),
        "f_gap": np.abs(df),
        "grad_gap": grad_gap,
        "adjoint_gap": row_norms(dlam @ p.A),
    }


def trajectory_primal_dual(traj: Trajectory, p: LagrangianProblem) -> dict:
    """Primal-dual metric series along a trajectory of the Lagrangian operator."""
    if p.known_solution is None:
        raise UnsupportedMetricError(f"problem {p.name!r} has no known solution")
    disp = traj.displacement(np.concatenate(p.known_solution))
    return primal_dual_from_displacement(disp[:, :p.n], disp[:, p.n:], p)


# ---------------------------------------------------------------------------
# decay products


def _log_product(log_scale, values):
    """``exp(log_scale) * values`` without forming ``exp(log_scale)``."""
    values = np.asarray(values, dtype=float)
    mag = np.abs(values)
    with np.errstate(divide="ignore", over="ignore"):
        out = np.exp(log_scale + np.log(np.where(mag > 0, mag, 1.0)))
    return np.where(mag > 0, np.copysign(out, values), 0.0)


def decay_products(traj: Trajectory, z_star=None, rho: Optional[float] = None) -> dict:
    """Rate-weighted products along a trajectory.

    With ``tau`` the time or index and ``rho`` defaulting to ``r``:

    ``V``        ``tau^(rho+r) beta |V(z)|``
    ``gap``      ``tau^(rho+r) beta <z - z*, V(z)>``
    ``velocity`` ``tau^rho |z'|`` (flows) or ``k^rho |z^k - z^(k-1)|``

    Products are formed in log space so exponential schedules do not
    overflow before the tiny residuals bring them back down.
    """
    r = traj.params.r
    rho = r if rho is None else float(rho)
    lt = np.log(traj.tau)
    lscale = (rho + r) * lt + traj.log_beta()
    out = {"tau": traj.tau, "V": _log_product(lscale, traj.norm_V())}
    try:
        out["gap"] = _log_product(lscale, trajectory_gap(traj, z_star))
    except UnsupportedMetricError:
        pass
    if traj.velocity is not None:
        out["velocity"] = _log_product(rho * lt, row_norms(traj.velocity))
    return out


# ---------------------------------------------------------------------------
# rate fits


@dataclass
class RateReport:
    """Least-squares rate of one series over a window.

    ``kind`` is ``"loglog"`` (slope of ``log v`` against ``log tau``) or
    ``"exponential"`` (slope of ``log v`` against ``tau^(1-r)/(1-r)``).
    """

    metric: str
    kind: str
    slope: float
    intercept: float
    window: tuple
    residual: float
    n_points: int
    decays: bool
    terminal_product: Optional[float] = None
    floored: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def _window_mask(tau, window):
    tau = np.asarray(tau, dtype=float)
    if window is None:
        hi = tau[-1]
        lo = max(hi / 10.0, tau[0])
    else:
        lo, hi = map(float, window)
    if lo < tau[0] or hi > tau[-1] or not lo < hi:
        raise InvalidInputError(f"fit window [{lo}, {hi}] is not inside the span [{tau[0]}, {tau[-1]}]")
    return (tau >= lo) & (tau <= hi), (lo, hi)


def _prepare(tau, values, window, floor, min_points):
    tau = np.asarray(tau, dtype=float)
    values = np.asarray(values, dtype=float)
    if tau.shape != values.shape or tau.ndim != 1:
        raise InvalidInputError("tau and values must be 1-d arrays of equal length")
    mask, win = _window_mask(tau, window)
    t, v = tau[mask], values[mask]
    if t.size < min_points:
        raise InvalidInputError(f"fit window holds {t.size} samples, need at least {min_points}")
    floored = 0
    if floor is not None:
        floored = int(np.count_nonzero(v < floor))
        v = np.maximum(v, floor)
    if np.any(~(v > 0)) or not np.all(np.isfinite(v)):
        raise FitDomainError("rate fits need positive finite values (pass floor= to clamp)")
    return t, np.log(v), win, floored


def _lsq(x, y):
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res ** 2)))


def fit_loglog_slope(tau, values, window=None, *, floor: Optional[float] = None,
                     min_points: int = 10, metric: str = "series") -> RateReport:
    """Slope of ``log(values)`` against ``log(tau)``.

    Parameters
    ----------
    tau, values : array_like
    window : (lo, hi), optional
        Fit range in ``tau``; default is the trailing decade ``[T/10, T]``.
    floor : float, optional
        Clamp values from below (e.g. ``1e-300``) instead of rejecting zeros.
    min_points : int
    """
    t, ly, win, floored = _prepare(tau, values, window, floor, min_points)
    slope, icpt, res = _lsq(np.log(t), ly)
    return RateReport(metric, "loglog", slope, icpt, win, res, int(t.size), slope < DECAY_SLOPE, floored=floored)


def fit_exponential_rate(tau, values, r: float, window=None, *, floor: Optional[float] = None,
                         min_points: int = 10, metric: str = "series") -> RateReport:
    """Slope of ``log(values)`` against ``tau^(1-r)/(1-r)``; needs ``r < 1``."""
    if not r < 1:
        raise InvalidInputError("exponential rate fits need r < 1")
    t, ly, win, floored = _prepare(tau, values, window, floor, min_points)
    slope, icpt, res = _lsq(t ** (1.0 - r) / (1.0 - r), ly)
    return RateReport(metric, "exponential", slope, icpt, win, res, int(t.size), slope < DECAY_SLOPE, floored=floored)


# ---------------------------------------------------------------------------
# sign certificates and trajectory audits


def quad_form_sign(A: float, B: float, C: float) -> str:
    """Sign certificate for ``A |X|^2 + 2 B <X, Y> + C |Y|^2``.

    ``B^2 - A C <= 0`` with ``A < 0`` certifies a nonpositive form, with
    ``A > 0`` a nonnegative one.
    """
    if A == 0:
        raise InvalidInputError("quad_form_sign needs A != 0")
    if B * B - A * C <= 0:
        return NONPOSITIVE if A < 0 else NONNEGATIVE
    return INDETERMINATE


def detect_transient(values, run: int = 50) -> Optional[int]:
    """First index from which ``values`` strictly decreases for ``run`` consecutive samples."""
    v = np.asarray(values, dtype=float)
    dec = np.diff(v) < 0
    if dec.size < run:
        return None
    # length of the strictly decreasing streak starting at each index
    streak = 0
    for i in range(dec.size - 1, -1, -1):
        streak = streak + 1 if dec[i] else 0
        dec[i] = streak >= run
    hits = np.flatnonzero(dec)
    return int(hits[0]) if hits.size else None


@dataclass
class MonotonicityReport:
    transient_index: Optional[int]
    transient_tau: Optional[float]
    tolerance: float
    violations: int
    max_increase: float
    checked: int

    @property
    def passes(self) -> bool:
        return self.transient_index is not None and self.violations == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passes"] = self.passes
        return d


def monotonicity_report(tau, values, run: int = 50, rel_tol: float = 1e-8) -> MonotonicityReport:
    """Count increases beyond ``rel_tol * E(transient)`` after the detected transient."""
    v = np.asarray(values, dtype=float)
    i0 = detect_transient(v, run)
    if i0 is None:
        return MonotonicityReport(None, None, float("nan"), 0, float("nan"), 0)
    tol = float(rel_tol * abs(v[i0]))
    inc = np.diff(v[i0:])
    return MonotonicityReport(i0, float(np.asarray(tau)[i0]), tol, int(np.count_nonzero(inc > tol)),
                              float(inc.max()) if inc.size else 0.0, int(inc.size))


@dataclass
class BoundednessReport:
    max_norm_z: float
    max_norm_displacement: Optional[float]
    max_norm_velocity: Optional[float]
    finite: bool

    def to_dict(self) -> dict:
        return asdict(self)


def boundedness_report(traj: Trajectory, z_star=None) -> BoundednessReport:
    """Empirical size of the run; stands in for the boundedness hypothesis."""
    za = traj.absolute()
    try:
        disp = traj.displacement(_star(traj, z_star))
        md = float(row_norms(disp).max())
    except UnsupportedMetricError:
        md = None
    mv = None if traj.velocity is None else float(row_norms(traj.velocity).max())
    return BoundednessReport(float(row_norms(za).max()), md, mv,
                             bool(np.all(np.isfinite(traj.z)) and np.all(np.isfinite(traj.V))))


def cauchy_profile(traj: Trajectory) -> np.ndarray:
    """``sup_{j >= i} |z_j - z_i|`` over the recorded samples."""
    Z = traj.z
    n = Z.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = np.linalg.norm(Z[i:] - Z[i], axis=1).max()
    return out


def little_o_ratio(products, index: int) -> float:
    """Terminal product over its value at ``index``; small means vanishing."""
    p = np.abs(np.asarray(products, dtype=float))
    return float(p[-1] / p[index]) if p[index] > 0 else float("inf")
