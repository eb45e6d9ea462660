import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from monoflow import _backend

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = ["python"] + (["compiled"] if _backend.compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def random_monotone_matrix(rng, d, skew=1.0, rank=None):
    """``S + K`` with ``S`` PSD (possibly singular) and ``K`` skew."""
    rank = d if rank is None else rank
    B = rng.standard_normal((d, rank))
    S = B @ B.T / d
    C = rng.standard_normal((d, d))
    return S + skew * (C - C.T) / 2


def second_order_rk4(alpha, theta, r, z0, v0, t0, T, h):
    """Oracle: classic RK4 on z'' = -(alpha/t^r + theta t^r) z' - z (scalar V(z) = z, beta = 1)."""
    def f(t, z, v):
        return v, -(alpha / t ** r + theta * t ** r) * v - z

    t, z, v = t0, z0, v0
    n = int(round((T - t0) / h))
    for _ in range(n):
        k1 = f(t, z, v)
        k2 = f(t + h / 2, z + h / 2 * k1[0], v + h / 2 * k1[1])
        k3 = f(t + h / 2, z + h / 2 * k2[0], v + h / 2 * k2[1])
        k4 = f(t + h, z + h * k3[0], v + h * k3[1])
        z += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        t += h
    return z, v


# -- acceptance report --------------------------------------------------------------

ACCEPTANCE_LINES = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    """Keep one PASS/FAIL line per criterion for the end-of-run summary."""
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_key):
            terminalreporter.write_line(line)


def _criterion_key(line):
    label = line.split()[1].rstrip(":")
    num = "".join(ch for ch in label if ch.isdigit())
    return int(num), label
