"""Solver parameters, time-rescaling schedules and their growth-condition audits.

Four closed-form families are supported plus a tabulated escape hatch:

========================  ==============================================
``constant``              ``beta(t) = c``
``power``                 ``beta(t) = c * t**p``
``exponential_continuous`` ``t**(-2r) * exp(kappa * t**(1-r) / (1-r))``,
                          ``kappa = 1/theta - delta``
``exponential_discrete``  same shape with ``kappa = 1/(2 theta) - delta``
``tabulated``             piecewise-linear through ``(t, beta)`` nodes
========================  ==============================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import InvalidInputError, ParameterViolation, ScheduleInvalidError

FAMILIES = ("constant", "power", "exponential_continuous", "exponential_discrete", "tabulated")


@dataclass(frozen=True)
class SolverParams:
    """Damping exponent ``r``, damping ``alpha``, Hessian weight ``theta``.

    Only domain checks happen at construction.  The admissibility boxes of
    the continuous and discrete schemes are audited by :meth:`violations`,
    because experiments occasionally run deliberately on a boundary.
    """

    r: float
    alpha: float
    theta: float
    delta: Optional[float] = None
    t0: float = 1.0
    k0: int = 1

    def __post_init__(self):
        bad = []
        if not (0.0 <= self.r <= 1.0):
            bad.append(f"r must lie in [0, 1] (got {self.r})")
        if not self.alpha > 0:
            bad.append(f"alpha must be > 0 (got {self.alpha})")
        if not self.theta > 0:
            bad.append(f"theta must be > 0 (got {self.theta})")
        if self.delta is not None and not self.delta > 0:
            bad.append(f"delta must be > 0 (got {self.delta})")
        if not self.t0 > 0:
            bad.append(f"t0 must be > 0 (got {self.t0})")
        if int(self.k0) != self.k0 or self.k0 < 1:
            bad.append(f"k0 must be a positive integer (got {self.k0})")
        if bad:
            raise InvalidInputError("; ".join(bad))

    def violations(self, mode: str = "continuous", schedule: "BetaSchedule | None" = None) -> list:
        """Every broken admissibility rule for ``mode``, as readable messages."""
        if mode not in ("continuous", "discrete"):
            raise InvalidInputError(f"mode must be 'continuous' or 'discrete', got {mode!r}")
        r, a, th = self.r, self.alpha, self.theta
        out = []
        if mode == "discrete" and r == 0:
            out.append("discrete scheme requires r in (0, 1] (got r = 0)")
        if r < 1:
            if not th > 2.0 / a:
                out.append(f"r < 1 requires theta > 2/alpha = {2.0 / a:.6g} (got theta = {th:.6g})")
        else:
            upper, label = (0.5, "1/2") if mode == "continuous" else (0.25, "1/4")
            if not (2.0 / (a + 1.0) <= th < upper):
                out.append(
                    f"{mode} scheme with r = 1 requires 2/(alpha+1) <= theta < {label}, i.e. "
                    f"{2.0 / (a + 1.0):.6g} <= theta < {upper} (got theta = {th:.6g})"
                )
        if schedule is not None and schedule.family.startswith("exponential"):
            out.extend(schedule.violations(self))
        return out

    def check(self, mode: str = "continuous", schedule: "BetaSchedule | None" = None) -> None:
        bad = self.violations(mode, schedule)
        if bad:
            raise ParameterViolation(bad)

    def replace(self, **kw) -> "SolverParams":
        d = asdict(self)
        d.update(kw)
        return SolverParams(**d)


def _as_array(x):
    a = np.asarray(x, dtype=float)
    return a, a.ndim == 0


def _power_diff(k, a):
    """``(k+1)**a - k**a`` without cancellation; exact for small integer ``a``."""
    k = np.asarray(k, dtype=float)
    if float(a).is_integer():
        return (k + 1.0) ** a - k ** a
    return k ** a * np.expm1(a * np.log1p(1.0 / k))


@dataclass(frozen=True)
class BetaSchedule:
    """A positive, nondecreasing time-rescaling family (see module docstring)."""

    family: str
    c: float = 1.0
    p: float = 0.0
    r: Optional[float] = None
    theta: Optional[float] = None
    delta: Optional[float] = None
    table: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown schedule family {self.family!r}; choose from {FAMILIES}")
        if self.family in ("constant", "power") and not self.c > 0:
            raise InvalidInputError(f"scale c must be > 0 (got {self.c})")
        if self.family == "power" and self.p < 0:
            raise InvalidInputError(f"power exponent must be >= 0 (got {self.p})")
        if self.family.startswith("exponential"):
            if None in (self.r, self.theta, self.delta):
                raise InvalidInputError(f"{self.family} needs r, theta and delta")
            if not (0.0 <= self.r < 1.0):
                raise InvalidInputError(
                    f"{self.family} requires r < 1: t**(1-r)/(1-r) is undefined at r = 1 (got r = {self.r})"
                )
            if not self.theta > 0 or not self.delta > 0:
                raise InvalidInputError("theta and delta must be > 0")
            if not self.rate > 0:
                cap = "1/theta" if self.family == "exponential_continuous" else "1/(2 theta)"
                raise InvalidInputError(
                    f"{self.family} requires 0 < delta < {cap} (got delta = {self.delta}, theta = {self.theta})"
                )
        if self.family == "tabulated":
            if self.table is None:
                raise InvalidInputError("tabulated schedules need a table of (t, beta) pairs")
            ts, vs = np.asarray(self.table, dtype=float).T
            if ts.size < 2 or np.any(np.diff(ts) <= 0) or ts[0] < 0:
                raise InvalidInputError("table nodes must be >= 0, strictly increasing, at least two")
            if np.any(vs <= 0) or not np.all(np.isfinite(vs)):
                raise ScheduleInvalidError("tabulated beta must be positive and finite")
            object.__setattr__(self, "table", tuple(map(tuple, np.column_stack([ts, vs]).tolist())))

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c: float = 1.0) -> "BetaSchedule":
        return cls("constant", c=c)

    @classmethod
    def power(cls, p: float, c: float = 1.0) -> "BetaSchedule":
        return cls("power", c=c, p=p)

    @classmethod
    def exponential_continuous(cls, r, theta, delta) -> "BetaSchedule":
        return cls("exponential_continuous", r=r, theta=theta, delta=delta)

    @classmethod
    def exponential_discrete(cls, r, theta, delta) -> "BetaSchedule":
        return cls("exponential_discrete", r=r, theta=theta, delta=delta)

    @classmethod
    def tabulated(cls, ts, values) -> "BetaSchedule":
        return cls("tabulated", table=tuple(zip(map(float, ts), map(float, values))))

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        if self.family == "constant":
            return {"family": "constant", "c": self.c}
        if self.family == "power":
            return {"family": "power", "p": self.p, "c": self.c}
        if self.family == "tabulated":
            return {"family": "tabulated", "table": [list(x) for x in self.table]}
        return {"family": self.family, "r": self.r, "theta": self.theta, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: dict) -> "BetaSchedule":
        d = dict(d)
        fam = d.pop("family", None)
        if fam == "tabulated":
            return cls("tabulated", table=tuple(map(tuple, d["table"])))
        allowed = {"c", "p", "r", "theta", "delta"}
        extra = set(d) - allowed
        if extra:
            raise InvalidInputError(f"unexpected schedule keys {sorted(extra)}")
        return cls(fam, **d)

    # -- evaluation -------------------------------------------------------
    @property
    def rate(self) -> float:
        """Exponential coefficient ``kappa`` (0 for non-exponential families)."""
        if self.family == "exponential_continuous":
            return 1.0 / self.theta - self.delta
        if self.family == "exponential_discrete":
            return 1.0 / (2.0 * self.theta) - self.delta
        return 0.0

    def _check_t(self, t):
        if np.any(t <= 0):
            raise InvalidInputError("schedules are defined for t > 0 only")

    def _table(self):
        ts, vs = np.asarray(self.table).T
        return ts, vs

    def log_value(self, t):
        t, scalar = _as_array(t)
        self._check_t(t)
        fam = self.family
        if fam == "constant":
            out = np.full_like(t, math.log(self.c))
        elif fam == "power":
            out = math.log(self.c) + self.p * np.log(t)
        elif fam == "tabulated":
            out = np.log(self.value(t))
        else:
            r = self.r
            out = -2.0 * r * np.log(t) + self.rate * t ** (1.0 - r) / (1.0 - r)
        return float(out) if scalar else out

    def value(self, t):
        t, scalar = _as_array(t)
        self._check_t(t)
        if self.family == "tabulated":
            ts, vs = self._table()
            if np.any(t < ts[0]) or np.any(t > ts[-1]):
                raise InvalidInputError(f"t outside tabulated range [{ts[0]}, {ts[-1]}]")
            out = np.interp(t, ts, vs)
        elif self.family == "constant":
            out = np.full_like(t, self.c)
        elif self.family == "power":
            out = self.c * t ** self.p
        else:
            with np.errstate(over="ignore"):
                out = np.exp(self.log_value(t))
        return float(out) if scalar else out

    def log_derivative(self, t):
        """``beta'(t) / beta(t)``, evaluated without forming ``beta``."""
        t, scalar = _as_array(t)
        self._check_t(t)
        fam = self.family
        if fam == "constant":
            out = np.zeros_like(t)
        elif fam == "power":
            out = self.p / t
        elif fam == "tabulated":
            out = self.derivative(t) / self.value(t)
        else:
            r = self.r
            out = -2.0 * r / t + self.rate * t ** (-r)
        return float(out) if scalar else out

    def derivative(self, t):
        t, scalar = _as_array(t)
        self._check_t(t)
        if self.family == "tabulated":
            ts, vs = self._table()
            out = np.interp(t, ts, np.gradient(vs, ts))
        elif self.family == "constant":
            out = np.zeros_like(t)
        elif self.family == "power":
            out = self.c * self.p * t ** (self.p - 1.0)
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                out = self.value(t) * self.log_derivative(t)
        return float(out) if scalar else out

    def log_seq_array(self, k_max: int) -> np.ndarray:
        """``log beta_k`` for ``k = 0..k_max``.

        ``beta_0`` is the tabulated value at 0 when the table has it and
        ``beta_1`` otherwise.
        """
        if k_max < 1:
            raise InvalidInputError("k_max must be >= 1")
        ks = np.arange(1, k_max + 1, dtype=float)
        tail = self.log_value(ks)
        if self.family == "tabulated" and self._table()[0][0] == 0.0:
            head = math.log(self._table()[1][0])
        else:
            head = tail[0]
        return np.concatenate([[head], tail])

    def log_increment_array(self, k_max: int) -> np.ndarray:
        """``log beta_k - log beta_(k-1)`` for ``k = 1..k_max``, formed without cancellation."""
        if self.family == "tabulated":
            return np.diff(self.log_seq_array(k_max))
        ks = np.arange(1, k_max + 1, dtype=float)
        km = np.maximum(ks - 1.0, 1.0)  # beta_0 := beta_1
        if self.family == "constant":
            out = np.zeros_like(ks)
        elif self.family == "power":
            out = self.p * np.log1p(1.0 / km)
        else:
            r = self.r
            out = -2.0 * r * np.log1p(1.0 / km) + self.rate * _power_diff(km, 1.0 - r) / (1.0 - r)
        out[0] = 0.0
        return out

    def seq_array(self, k_max: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            out = np.exp(self.log_seq_array(k_max))
        if self.family == "tabulated":
            # exact table values, not exp(log(.))
            ks = np.arange(0, k_max + 1, dtype=float)
            ts, vs = self._table()
            out[1:] = np.interp(ks[1:], ts, vs)
            out[0] = vs[0] if ts[0] == 0.0 else out[1]
        return out

    def violations(self, params: SolverParams) -> list:
        """Exponential-family consistency with the solver parameters."""
        out = []
        if self.family.startswith("exponential"):
            if self.r != params.r:
                out.append(f"schedule r = {self.r} differs from solver r = {params.r}")
            if self.theta != params.theta:
                out.append(f"schedule theta = {self.theta} differs from solver theta = {params.theta}")
        return out


def beta_value(s: BetaSchedule, t):
    return s.value(t)


def beta_derivative(s: BetaSchedule, t):
    return s.derivative(t)


def beta_seq(s: BetaSchedule, k: int) -> float:
    if int(k) != k or k <= 0:
        raise InvalidInputError(f"beta_seq needs a positive integer index (got {k!r})")
    if s.family == "tabulated":
        return float(s.value(float(k)))
    return float(np.exp(s.log_value(float(k))))


# ---------------------------------------------------------------------------
# growth conditions


@dataclass(frozen=True)
class GrowthReport:
    sup_value: float
    bound: float
    passes: bool
    analytic: bool
    grid_max: float
    grid: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)


def default_grid(t0: float, n: int = 10_000, span: float = 1e6) -> np.ndarray:
    return np.geomspace(t0, span * t0, n)


def growth_function_continuous(s: BetaSchedule, r: float, t):
    """``g(t) = t**r * (beta'/beta + 2r/t)``."""
    t = np.asarray(t, dtype=float)
    return t ** r * (s.log_derivative(t) + 2.0 * r / t)


def _closed_form_sup(s: BetaSchedule, r: float, t0: float) -> Optional[float]:
    if s.family == "constant":
        return 2.0 * r if r == 1 else 2.0 * r * t0 ** (r - 1.0)
    if s.family == "power":
        return s.p + 2.0 if r == 1 else (s.p + 2.0 * r) * t0 ** (r - 1.0)
    if s.family.startswith("exponential") and s.r == r:
        return s.rate
    return None


def check_growth_continuous(s: BetaSchedule, p: SolverParams, grid=None, margin: float = 0.0) -> GrowthReport:
    """Audit ``sup_{t >= t0} g(t) < 1/theta - margin``.

    The supremum is closed-form for the constant, power and matched
    exponential families; otherwise it is the maximum over ``grid``
    (default: 10^4 geometric points on ``[t0, 1e6 t0]``).  The grid maximum is
    always reported so closed forms can be cross-checked.
    """
    grid = default_grid(p.t0) if grid is None else np.asarray(grid, dtype=float)
    if s.family == "tabulated":
        ts, vs = np.asarray(s.table).T
        if np.any(vs <= 0):
            raise ScheduleInvalidError("beta must be positive")
        grid = grid[(grid >= ts[0]) & (grid <= ts[-1])]
    g = growth_function_continuous(s, p.r, grid)
    grid_max = float(np.max(g))
    sup = _closed_form_sup(s, p.r, p.t0)
    analytic = sup is not None
    if sup is None:
        sup = grid_max
    bound = 1.0 / p.theta
    return GrowthReport(float(sup), bound, bool(sup < bound - margin), analytic, grid_max, grid, g)


@dataclass(frozen=True)
class DiscreteGrowthReport:
    sup_value: float
    bound: float
    passes: bool
    first_passing_k0: Optional[int]
    limit: Optional[float]
    ks: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)


def growth_sequence_discrete(s: BetaSchedule, r: float, k_max: int) -> np.ndarray:
    """``g_k = k**r * ((beta_k - beta_{k-1}) / beta_k + 2r/k)`` for ``k = 1..k_max``."""
    if s.family == "tabulated":
        b = s.seq_array(k_max)
        if np.any(b <= 0):
            raise ScheduleInvalidError("beta_k must be positive")
        inc = (b[1:] - b[:-1]) / b[1:]
    else:
        inc = -np.expm1(-s.log_increment_array(k_max))
    ks = np.arange(1, k_max + 1, dtype=float)
    return ks ** r * (inc + 2.0 * r / ks)


def check_growth_discrete(s: BetaSchedule, p: SolverParams, k_max: int, margin: float = 0.0) -> DiscreteGrowthReport:
    """Audit ``sup_{k >= k0} g_k < 1/(2 theta) - margin`` on ``k0..k_max``.

    ``first_passing_k0`` is the smallest index from which every sampled
    ``g_k`` stays below the bound (``None`` if even ``g_{k_max}`` fails).
    """
    k0 = int(p.k0)
    if k_max < k0 + 1:
        raise InvalidInputError(f"k_max must be >= k0 + 1 = {k0 + 1}")
    g_all = growth_sequence_discrete(s, p.r, k_max)
    ks = np.arange(k0, k_max + 1)
    g = g_all[k0 - 1:]
    bound = 1.0 / (2.0 * p.theta)
    thr = bound - margin
    sup = float(np.max(g))
    ok = g < thr
    if not ok[-1]:
        first = None
    else:
        bad = np.flatnonzero(~ok)
        first = int(ks[0] if bad.size == 0 else ks[bad[-1] + 1])
    limit = s.rate if s.family == "exponential_discrete" else None
    return DiscreteGrowthReport(sup, bound, bool(sup < thr), first, limit, ks, g)


# ---------------------------------------------------------------------------
# inequality utilities


@dataclass(frozen=True)
class BetaInequalities:
    k: int
    g1_lhs: float
    g1_rhs: float
    g2_lhs: float
    g2_rhs: float
    g3_lhs: float
    g3_rhs: Optional[float]
    m_beta: Optional[float]

    @property
    def g1(self) -> float:
        return self.g1_lhs - self.g1_rhs

    @property
    def g2(self) -> float:
        return self.g2_lhs - self.g2_rhs

    @property
    def g3(self) -> Optional[float]:
        return None if self.g3_rhs is None else self.g3_lhs - self.g3_rhs

    @property
    def g3_applicable(self) -> bool:
        return self.m_beta is not None

    def holds(self) -> bool:
        ok = self.g1 <= 0 and self.g2 <= 0
        return ok and (self.g3 is None or self.g3 <= 0)


def beta_inequalities(s: BetaSchedule, p: SolverParams, k: int, log_increments=None) -> BetaInequalities:
    """The three consequences of the growth condition with slack ``p.delta``.

    G1: ``(2 r theta k^(r-1) - 1) b_k + theta k^r (b_k - b_{k-1}) <= -delta theta b_k``
    G2: ``theta k^r (b_k - b_{k-1}) <= (1 - 2 r theta k^(r-1) - delta theta) b_k``
    G3: ``b_k <= M_beta b_{k-1}``, ``M_beta = k^r / (2 r k^(r-1) - 1/theta + delta + k^r)``

    All sides are reported in units of ``b_k`` (each inequality is
    homogeneous in the sequence), so exponential schedules are audited long
    after ``b_k`` itself overflows.  G3 is reported as not applicable
    (``m_beta is None``) when its denominator is not positive.
    ``log_increments`` may pass a precomputed ``s.log_increment_array(n)``
    with ``n >= k`` to avoid re-evaluating the schedule in sweeps.
    """
    if p.delta is None:
        raise InvalidInputError("beta_inequalities needs params.delta")
    if int(k) != k or k < 1:
        raise InvalidInputError("k must be a positive integer")
    k = int(k)
    r, th, de = p.r, p.theta, p.delta
    li = s.log_increment_array(k) if log_increments is None else log_increments
    step = float(li[k - 1])  # log b_k - log b_(k-1)
    rel_inc = -math.expm1(-step)  # (b_k - b_(k-1)) / b_k
    prev = math.exp(-step)  # b_(k-1) / b_k
    kr = k ** r
    inc = th * kr * rel_inc
    g1_lhs = (2 * r * th * k ** (r - 1) - 1) + inc
    g1_rhs = -de * th
    g2_rhs = 1 - 2 * r * th * k ** (r - 1) - de * th
    denom = 2 * r * k ** (r - 1) - 1 / th + de + kr
    if denom > 0:
        m = kr / denom
        g3_rhs = m * prev
    else:
        m = None
        g3_rhs = None
    return BetaInequalities(k, g1_lhs, g1_rhs, inc, g2_rhs, 1.0, g3_rhs, m)


@dataclass(frozen=True)
class AuxInequalities:
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    A4: np.ndarray
    A5: np.ndarray
    A6: np.ndarray

    def all(self) -> bool:
        return all(bool(np.all(getattr(self, n))) for n in ("A1", "A2", "A3", "A4", "A5", "A6"))

    def violations(self) -> dict:
        return {n: int(np.size(getattr(self, n)) - np.count_nonzero(getattr(self, n)))
                for n in ("A1", "A2", "A3", "A4", "A5", "A6")}


def aux_inequalities(k, r: float, sigma: float) -> AuxInequalities:
    """Six elementary power-difference bounds, for ``k >= 1``, ``r in [0, 1]``, ``sigma <= 0``.

    ``k`` may be an integer array; each field is then a boolean array.
    Differences ``(k+1)^a - k^a`` are formed exactly for integer ``a`` and via
    ``expm1``/``log1p`` otherwise, so equality cases compare without slack.
    """
    k = np.asarray(k, dtype=float)
    if np.any(k < 1):
        raise InvalidInputError("k must be >= 1")
    if not (0 <= r <= 1) or sigma > 0:
        raise InvalidInputError("need r in [0, 1] and sigma <= 0")
    d1 = _power_diff(k, r)
    d2 = _power_diff(k, 3 * r)
    d3 = _power_diff(k, 2 * r)
    ds = _power_diff(k, sigma)
    a1 = d1 <= r * k ** (r - 1)
    a2 = d2 <= 3 * r * k ** (3 * r - 1) + 3 * r * k ** (3 * r - 2) + r * k ** (3 * r - 3)
    a3 = d3 <= 2 * r * k ** (2 * r - 1) + r * k ** (2 * r - 2)
    a4 = ds <= sigma * k ** (sigma - 1) + sigma * (sigma - 1) * k ** (sigma - 2)
    a5 = np.abs(ds) <= abs(sigma) * k ** (sigma - 1)
    a6 = np.abs(2 * r * k ** (2 * r - 1) - d3) <= 2 * r * abs(2 * r - 1) * k ** (2 * r - 2)
    return AuxInequalities(a1, a2, a3, a4, a5, a6)
