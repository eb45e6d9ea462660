"""Sampled solution paths shared by the continuous and discrete solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .schedules import BetaSchedule, SolverParams


def row_norms(A) -> np.ndarray:
    """Euclidean norm of each row, scaled so tiny entries do not underflow when squared."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = np.max(np.abs(A), axis=1)
    safe = np.where(m > 0, m, 1.0)
    return np.where(m > 0, m * np.linalg.norm(A / safe[:, None], axis=1), 0.0)


@dataclass
class Trajectory:
    """Thinned samples ``(tau, z, V(z), velocity)`` of one run.

    Parameters
    ----------
    kind : {"continuous", "discrete"}
    tau : (N,) array
        Times ``t`` or iteration indices ``k``, strictly increasing.
    z : (N, d) array
        States.  When ``origin`` is set they are stored relative to it, which
        keeps tiny errors representable long after ``|z|`` itself has
        stopped changing in floating point.
    V : (N, d) array
        Operator values at the states.
    velocity : (N, d) array, optional
        ``dz/dt`` for flows, ``z^k - z^(k-1)`` for the implicit scheme.
    params, schedule
        Snapshot of the configuration that produced the run.
    origin : (d,) array, optional
    aux : (N, d) array, optional
        Auxiliary ``u`` variable of continuous runs.
    info : dict
        Solver statistics (steps, rejections, residuals, backend).
    """

    kind: str
    tau: np.ndarray
    z: np.ndarray
    V: np.ndarray
    params: SolverParams
    schedule: BetaSchedule
    velocity: Optional[np.ndarray] = None
    origin: Optional[np.ndarray] = None
    aux: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise InvalidInputError(f"kind must be 'continuous' or 'discrete', got {self.kind!r}")
        self.tau = np.asarray(self.tau, dtype=float)
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        n = self.tau.size
        if self.tau.ndim != 1 or n == 0:
            raise InvalidInputError("tau must be a non-empty 1-d array")
        if np.any(np.diff(self.tau) <= 0):
            raise InvalidInputError("tau must be strictly increasing")
        d = self.z.shape[1]
        for name in ("z", "V", "velocity", "aux"):
            a = getattr(self, name)
            if a is not None and np.shape(a) != (n, d):
                raise InvalidInputError(f"{name} has shape {np.shape(a)}, expected {(n, d)}")
        if self.origin is not None:
            self.origin = np.asarray(self.origin, dtype=float)
            if self.origin.shape != (d,):
                raise InvalidInputError(f"origin has shape {self.origin.shape}, expected {(d,)}")

    def __len__(self):
        return self.tau.size

    @property
    def dimension(self) -> int:
        return self.z.shape[1]

    def absolute(self) -> np.ndarray:
        """States in the original coordinates."""
        return self.z if self.origin is None else self.z + self.origin

    def displacement(self, z_star) -> np.ndarray:
        """``z - z_star`` per sample, computed without cancellation when possible."""
        z_star = np.asarray(z_star, dtype=float)
        if self.origin is None:
            return self.z - z_star
        return self.z - (z_star - self.origin)

    def log_beta(self) -> np.ndarray:
        """``log beta`` at ``tau`` (``beta(t)`` or ``beta_k``)."""
        return np.asarray(self.schedule.log_value(self.tau), dtype=float)

    def beta(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.asarray(self.schedule.value(self.tau), dtype=float)

    def norm_V(self) -> np.ndarray:
        return row_norms(self.V)

    def head(self, n: int) -> "Trajectory":
        """The first ``n`` samples (used for partial results)."""
        sl = slice(0, n)
        pick = lambda a: None if a is None else a[sl]
        return Trajectory(
            self.kind, self.tau[sl], self.z[sl], self.V[sl], self.params, self.schedule,
            velocity=pick(self.velocity), origin=self.origin, aux=pick(self.aux), info=dict(self.info),
        )
