"""Monotone operators and the concrete problem families used as testbeds.

Every solver in the package consumes an :class:`OperatorSpec`.  Affine
operators ``V(z) = M z + q`` are declared explicitly (never inferred) so the
implicit stepper and the compiled kernels can take their direct paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError, NumericalDomainError

Array = np.ndarray

# relative tolerance on the symmetric part's smallest eigenvalue
_PSD_TOL = 1e-10


def as_vector(z, dim: Optional[int] = None, name: str = "z") -> Array:
    v = np.asarray(z, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-d vector, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise InvalidInputError(f"{name} has dimension {v.size}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return v


class OperatorSpec:
    """An evaluatable monotone map ``V : R^d -> R^d``.

    Parameters
    ----------
    dimension : int
    evaluate : callable
        ``z -> V(z)``; must not mutate its argument.
    jacobian : callable, optional
        ``z -> dV/dz`` as a dense ``(d, d)`` array.  When absent, Newton
        resolvents use forward differences.
    matrix, offset : array_like, optional
        Declare the operator affine, ``V(z) = matrix @ z + offset``.  In that
        case ``evaluate``/``jacobian`` are derived and must not be given.
    known_zero : array_like, optional
        A point with ``V(z) = 0`` if one is known.
    name : str
    """

    def __init__(
        self,
        dimension: int,
        evaluate: Optional[Callable[[Array], Array]] = None,
        jacobian: Optional[Callable[[Array], Array]] = None,
        *,
        matrix=None,
        offset=None,
        known_zero=None,
        name: str = "operator",
    ):
        if int(dimension) != dimension or dimension < 1:
            raise InvalidInputError(f"dimension must be a positive integer, got {dimension!r}")
        self.dimension = int(dimension)
        self.name = name
        if matrix is not None:
            if evaluate is not None or jacobian is not None:
                raise InvalidInputError("affine operators take matrix/offset, not callables")
            M = np.array(matrix, dtype=float)
            q = np.zeros(self.dimension) if offset is None else np.array(offset, dtype=float)
            if M.shape != (self.dimension, self.dimension) or q.shape != (self.dimension,):
                raise InvalidInputError(
                    f"affine data has shapes {M.shape} and {q.shape}, expected "
                    f"({self.dimension}, {self.dimension}) and ({self.dimension},)"
                )
            if not (np.all(np.isfinite(M)) and np.all(np.isfinite(q))):
                raise InvalidInputError("affine data contains non-finite entries")
            S = 0.5 * (M + M.T)
            lam_min = np.linalg.eigvalsh(S)[0] if self.dimension else 0.0
            if lam_min < -_PSD_TOL * max(1.0, np.abs(S).max()):
                raise InvalidInputError(
                    f"symmetric part of M is not positive semidefinite (min eigenvalue {lam_min:.3e})"
                )
            M.setflags(write=False)
            q.setflags(write=False)
            self.matrix: Optional[Array] = M
            self.offset: Optional[Array] = q
            self._evaluate = lambda z: M @ z + q
            self._jacobian = lambda z: M
        else:
            if evaluate is None:
                raise InvalidInputError("general operators need an evaluate callable")
            self.matrix = None
            self.offset = None
            self._evaluate = evaluate
            self._jacobian = jacobian
        self.known_zero = None if known_zero is None else as_vector(known_zero, self.dimension, "known_zero")
        if self.known_zero is not None:
            self.known_zero.setflags(write=False)

    @property
    def structure(self) -> str:
        return "affine" if self.matrix is not None else "general"

    @property
    def is_affine(self) -> bool:
        return self.matrix is not None

    @property
    def has_jacobian(self) -> bool:
        return self._jacobian is not None

    def __call__(self, z: Array) -> Array:
        return evaluate(self, z)

    def __repr__(self):
        return f"OperatorSpec(name={self.name!r}, dimension={self.dimension}, structure={self.structure!r})"

    def jacobian(self, z: Array) -> Array:
        """Dense Jacobian at ``z``; forward differences when none was supplied."""
        z = as_vector(z, self.dimension)
        if self._jacobian is not None:
            return np.asarray(self._jacobian(z), dtype=float)
        return finite_difference_jacobian(self._evaluate, z)

    def recentered(self, origin) -> "OperatorSpec":
        """The operator in displacement coordinates ``w = z - origin``.

        For affine operators ``origin`` must be a zero; the result is then the
        exact linear map ``w -> M w`` (the offset is dropped rather than
        recomputed, so the zero of the shifted map is exactly ``w = 0``).
        """
        origin = as_vector(origin, self.dimension, "origin")
        if self.is_affine:
            res = self.matrix @ origin + self.offset
            scale = 1.0 + np.abs(self.matrix).sum(axis=1) @ np.abs(origin) + np.linalg.norm(self.offset)
            if np.linalg.norm(res) > 1e-8 * scale:
                raise InvalidInputError(
                    f"origin is not a zero of {self.name} (residual {np.linalg.norm(res):.3e})"
                )
            return OperatorSpec(
                self.dimension, matrix=self.matrix, offset=np.zeros(self.dimension),
                known_zero=np.zeros(self.dimension), name=f"{self.name}@origin",
            )
        f, J = self._evaluate, self._jacobian
        return OperatorSpec(
            self.dimension,
            lambda w: f(w + origin),
            None if J is None else (lambda w: J(w + origin)),
            known_zero=None if self.known_zero is None else self.known_zero - origin,
            name=f"{self.name}@origin",
        )


def finite_difference_jacobian(f: Callable[[Array], Array], z: Array) -> Array:
    h = 1e-7 * (1.0 + np.linalg.norm(z))
    f0 = np.asarray(f(z), dtype=float)
    J = np.empty((f0.size, z.size))
    for j in range(z.size):
        zp = z.copy()
        zp[j] += h
        J[:, j] = (np.asarray(f(zp), dtype=float) - f0) / h
    return J


def evaluate(op: OperatorSpec, z) -> Array:
    """Return ``V(z)``; raises on dimension mismatch or non-finite output."""
    z = as_vector(z, op.dimension)
    out = np.asarray(op._evaluate(z), dtype=float)
    if out.shape != (op.dimension,):
        raise InvalidInputError(f"{op.name} returned shape {out.shape}, expected ({op.dimension},)")
    if not np.all(np.isfinite(out)):
        raise NumericalDomainError(f"{op.name} produced a non-finite value")
    return out


def affine_operator(M, q=None, *, known_zero=None, name="affine") -> OperatorSpec:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"M must be square, got shape {M.shape}")
    return OperatorSpec(M.shape[0], matrix=M, offset=q, known_zero=known_zero, name=name)


def identity_operator(dim: int) -> OperatorSpec:
    return affine_operator(np.eye(dim), known_zero=np.zeros(dim), name="identity")


def find_affine_zero(op: OperatorSpec) -> Array:
    """Least-squares zero of an affine operator; raises if ``Mz = -q`` is inconsistent."""
    if not op.is_affine:
        raise InvalidInputError("find_affine_zero needs an affine operator")
    M, q = op.matrix, op.offset
    z, *_ = np.linalg.lstsq(M, -q, rcond=None)
    res = np.linalg.norm(M @ z + q)
    if res > 1e-9 * (1.0 + np.linalg.norm(q)):
        raise InvalidInputError(f"{op.name} has no zero (least-squares residual {res:.3e})")
    return z


# ---------------------------------------------------------------------------
# constrained minimization


@dataclass(frozen=True)
class LagrangianProblem:
    """``min f(x)`` subject to ``A x = b``.

    ``hessian`` marks ``f`` as quadratic with that constant Hessian; the
    induced operator is then affine.
    """

    grad_f: Callable[[Array], Array]
    f_value: Callable[[Array], float]
    A: Array
    b: Array
    known_solution: Optional[tuple] = None
    hessian: Optional[Array] = None
    name: str = "lagrangian"
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise InvalidInputError(f"A has {A.shape[0]} rows but b has length {b.size}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.hessian is not None:
            H = np.asarray(self.hessian, dtype=float)
            if H.shape != (A.shape[1], A.shape[1]):
                raise InvalidInputError(f"hessian has shape {H.shape}, expected {(A.shape[1],) * 2}")
            object.__setattr__(self, "hessian", H)
        if self.known_solution is not None:
            xs = as_vector(self.known_solution[0], self.n, "x*")
            ls = as_vector(self.known_solution[1], self.m, "lambda*")
            object.__setattr__(self, "known_solution", (xs, ls))
            stat, feas = self.optimality_residuals(xs, ls)
            scale = 1.0 + np.linalg.norm(self.grad_f(xs)) + np.linalg.norm(A) * np.linalg.norm(ls)
            fscale = 1.0 + np.linalg.norm(A) * np.linalg.norm(xs) + np.linalg.norm(b)
            if stat > 1e-12 * scale or feas > 1e-12 * fscale:
                raise InvalidInputError(
                    f"known solution fails optimality (stationarity {stat:.3e}, feasibility {feas:.3e})"
                )

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def optimality_residuals(self, x, lam):
        stat = np.linalg.norm(self.grad_f(x) + self.A.T @ lam)
        feas = np.linalg.norm(self.A @ x - self.b)
        return stat, feas


def build_lagrangian_operator(p: LagrangianProblem) -> OperatorSpec:
    """``V(x, lam) = (grad f(x) + A^T lam, b - A x)`` on ``R^(n+m)``."""
    n, m = p.n, p.m
    A, b = p.A, p.b
    zero = None if p.known_solution is None else np.concatenate(p.known_solution)
    if p.hessian is not None:
        H = p.hessian
        M = np.block([[H, A.T], [-A, np.zeros((m, m))]])
        g0 = np.asarray(p.grad_f(np.zeros(n)), dtype=float)
        return OperatorSpec(n + m, matrix=M, offset=np.concatenate([g0, b]),
                            known_zero=zero, name=p.name)

    def V(z):
        x, lam = z[:n], z[n:]
        return np.concatenate([p.grad_f(x) + A.T @ lam, b - A @ x])

    return OperatorSpec(n + m, V, known_zero=zero, name=p.name)


def example1_problem() -> LagrangianProblem:
    """Strongly convex quadratic in R^4 under two linear equality constraints."""
    c = np.array([1.0, 1.0, 0.0, 0.0])
    A = np.array([[1.0, -1.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])
    return LagrangianProblem(
        grad_f=lambda x: 2.0 * (x - c),
        f_value=lambda x: float(np.sum((x - c) ** 2)),
        A=A,
        b=np.zeros(2),
        known_solution=(np.array([0.8, 0.6, 0.2, 0.6]), np.array([0.4, 1.2])),
        hessian=2.0 * np.eye(4),
        name="example1",
    )


def example1_operator() -> OperatorSpec:
    return build_lagrangian_operator(example1_problem())


def example2_matrices(n: int):
    """``(A, H, h, b)`` of the bilinear-coupled saddle problem of size ``n``."""
    if int(n) != n or n < 2:
        raise InvalidInputError(f"example2 needs n >= 2, got {n!r}")
    n = int(n)
    A = np.zeros((n, n))
    for i in range(1, n):
        # row i: -1 at column n-i, +1 at column n-i+1 (1-based)
        A[i - 1, n - i - 1] = -1.0
        A[i - 1, n - i] = 1.0
    A[n - 1, 0] = 1.0
    A *= 0.25
    H = 2.0 * A.T @ A
    h = np.zeros(n)
    h[-1] = 0.25
    b = np.full(n, 0.25)
    return A, H, h, b


def build_saddle_example2(n: int) -> OperatorSpec:
    """``V(x, y) = (H x - h - A^T y, A x - b)`` on ``R^(2n)``."""
    A, H, h, b = example2_matrices(n)
    M = np.block([[H, -A.T], [A, np.zeros((n, n))]])
    q = np.concatenate([-h, -b])
    zero = np.linalg.solve(M, -q)
    return OperatorSpec(2 * n, matrix=M, offset=q, known_zero=zero, name=f"example2(n={n})")


# ---------------------------------------------------------------------------
# probing


@dataclass(frozen=True)
class ProbeReport:
    min_inner: float
    min_normalized: float
    trials: int
    monotone: bool


def monotonicity_probe(op: OperatorSpec, trials: int = 100, seed: int = 0,
                       radius: float = 10.0) -> ProbeReport:
    """Minimum of ``<V(u) - V(v), u - v>`` over random pairs from a ball of ``radius``.

    ``monotone`` is False as soon as one pair falls below
    ``-1e-10 * |u - v|^2``.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    d = op.dimension

    def draw():
        x = rng.standard_normal(d)
        x /= np.linalg.norm(x)
        return radius * rng.uniform() ** (1.0 / d) * x

    min_inner = np.inf
    min_norm = np.inf
    for _ in range(trials):
        u, v = draw(), draw()
        diff = u - v
        ip = float(np.dot(evaluate(op, u) - evaluate(op, v), diff))
        min_inner = min(min_inner, ip)
        dd = float(diff @ diff)
        if dd > 0:
            min_norm = min(min_norm, ip / dd)
    return ProbeReport(min_inner, min_norm, trials, bool(min_norm >= -1e-10))
