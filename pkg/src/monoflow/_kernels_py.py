"""Pure-Python reference implementation of the hot loops.

Same signatures and algorithms as the compiled ``_kernels`` extension; used
when the extension is unavailable or ``MONOFLOW_PURE_PYTHON`` is set.

Schedules reach the affine kernels as ``(code, a, b)``:
0 -> constant ``a``; 1 -> power ``a * t**b``;
2 -> exponential ``t**(-2a) * exp(b * t**(1-a) / (1-a))``.
"""

import math

import numpy as np

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_UNDERFLOW = 2
STATUS_MAX_STEPS = 3

# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def schedule_eval(code, a, b, t):
    """``(beta(t), beta'(t))`` for an encoded schedule."""
    if code == 0:
        return a, 0.0
    if code == 1:
        v = a * t ** b
        return v, a * b * t ** (b - 1.0)
    v = math.exp(-2.0 * a * math.log(t) + b * t ** (1.0 - a) / (1.0 - a))
    return v, v * (-2.0 * a / t + b * t ** (-a))


def _rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_generic(rhs, t0, y0, t_out, method, h, rtol, atol, max_steps, h_min_rel):
    """Advance ``y' = rhs(t, y)`` from ``t0`` and record ``y`` at each ``t_out``.

    ``method`` is 0 for fixed-step RK4 (step ``h``) and 1 for adaptive
    Dormand-Prince with error scale ``atol + rtol * max(|y|_inf, |y_new|_inf)``
    (``h`` is then the initial step).  Steps are shortened to land on output
    times.  Returns ``(Y, n_recorded, status, steps, rejected, t_reached)``.
    """
    t_out = np.asarray(t_out, dtype=float)
    y = np.array(y0, dtype=float)
    Y = np.full((t_out.size, y.size), np.nan)
    t = float(t0)
    n_rec = 0
    steps = rejected = 0
    status = STATUS_OK
    while n_rec < t_out.size and t_out[n_rec] <= t:
        Y[n_rec] = y
        n_rec += 1
    if n_rec == t_out.size:
        return Y, n_rec, status, steps, rejected, t

    h_des = float(h)
    k1 = rhs(t, y) if method == 1 else None
    while n_rec < t_out.size:
        if steps >= max_steps:
            status = STATUS_MAX_STEPS
            break
        target = t_out[n_rec]
        hit = h_des >= target - t
        hs = target - t if hit else h_des
        if method == 0:
            y_new = _rk4_step(rhs, t, y, hs)
            if not np.all(np.isfinite(y_new)):
                status = STATUS_NONFINITE
                break
        else:
            ks = [k1]
            for i in range(1, 7):
                yi = y.copy()
                for j, aij in enumerate(_A[i]):
                    if aij != 0.0:
                        yi += (hs * aij) * ks[j]
                ks.append(rhs(t + _C[i] * hs, yi))
            y_new = yi  # stage 7 input is the 5th-order solution
            err = np.zeros_like(y)
            for e, kk in zip(_E, ks):
                if e != 0.0:
                    err += (hs * e) * kk
            scale = atol + rtol * max(np.max(np.abs(y)), np.max(np.abs(y_new)))
            emax = np.max(np.abs(err))
            if not (np.isfinite(emax) and np.all(np.isfinite(ks[6]))):
                en = math.inf
            elif emax == 0.0:
                en = 0.0
            elif scale == 0.0:
                en = math.inf
            else:
                en = emax / scale
            if en > 1.0:
                rejected += 1
                fac = 0.2 if not math.isfinite(en) else max(0.2, 0.9 * en ** -0.2)
                h_des = min(h_des, hs) * fac
                if h_des < h_min_rel * max(1.0, abs(t)):
                    status = STATUS_NONFINITE if not math.isfinite(en) else STATUS_UNDERFLOW
                    break
                continue
            fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            if not hit or hs >= h_des:
                h_des = hs * fac
            else:
                # step was shortened to hit an output; do not shrink the estimate
                h_des = max(h_des, hs * fac)
            k1 = ks[6]
        steps += 1
        t = target if hit else t + hs
        y = y_new
        if hit:
            while n_rec < t_out.size and t_out[n_rec] <= t:
                Y[n_rec] = y
                n_rec += 1
    return Y, n_rec, status, steps, rejected, t


def integrate_affine(M, q, sched, r, alpha, theta, t0, u0, z0, t_out,
                     method, h, rtol, atol, max_steps, h_min_rel):
    """First-order ``(u, z)`` flow for ``V(z) = M z + q``; state is ``[u, z]``."""
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q.size
    code, sa, sb = sched

    def rhs(t, y):
        u, z = y[:d], y[d:]
        V = M @ z + q
        beta, dbeta = schedule_eval(code, sa, sb, t)
        tr = t ** r
        trm1 = t ** (r - 1.0)
        cdu = 2.0 * tr * ((2.0 * r * theta * trm1 - 1.0) * beta + theta * tr * dbeta)
        cz = 2.0 * r * (1.0 - r) * t ** (r - 2.0)
        out = np.empty(2 * d)
        out[:d] = cdu * V + cz * z
        out[d:] = (u - 2.0 * (alpha - r * trm1) * z - 2.0 * theta * tr * tr * beta * V) / (2.0 * tr)
        return out

    y0 = np.concatenate([np.asarray(u0, dtype=float), np.asarray(z0, dtype=float)])
    return integrate_generic(rhs, t0, y0, t_out, method, h, rtol, atol, max_steps, h_min_rel)


def discrete_affine(M, q, beta, r, alpha, theta, z0, z1, k_max, stride):
    """Implicit scheme for ``V(z) = M z + q`` with ``beta[k] = beta_k``, ``k = 0..k_max``.

    Records ``z^k`` and ``z^(k-1)`` at ``k = 1``, at every multiple of
    ``stride`` and at ``k_max + 1``.  Returns ``(ks, Z, Zprev,
    status, k_reached, max_rel_residual, min_gamma)``; status 1 flags a non-finite iterate, 4 a non-positive
    resolvent parameter.
    """
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q.size
    eye = np.eye(d)
    n_out = (k_max + 1) // stride + 2
    ks = np.zeros(n_out, dtype=np.int64)
    Z = np.full((n_out, d), np.nan)
    Zp = np.full((n_out, d), np.nan)
    zprev = np.array(z0, dtype=float)
    z = np.array(z1, dtype=float)
    ks[0] = 1
    Z[0] = z
    Zp[0] = zprev
    n_rec = 1
    Vz = M @ z + q
    max_res = 0.0
    min_gamma = math.inf
    status = STATUS_OK
    k_reached = 1
    for k in range(1, k_max + 1):
        D = alpha - r * k ** (r - 1.0) + (k + 1.0) ** r
        kr = k ** r
        m = kr / D
        a = theta * k ** (2.0 * r) * beta[k - 1] / D
        if (2.0 * r).is_integer():
            d2 = (k + 1.0) ** (2.0 * r) - k ** (2.0 * r)
        else:
            d2 = k ** (2.0 * r) * math.expm1(2.0 * r * math.log1p(1.0 / k))
        b = (theta * (d2 - 2.0 * r * k ** (2.0 * r - 1.0)) + kr) * beta[k] / D
        g = a + b
        min_gamma = min(min_gamma, g)
        if not g > 0:
            status = 4
            break
        w = z + m * (z - zprev) + a * Vz
        znew = np.linalg.solve(eye + g * M, w - g * q)
        Vnew = M @ znew + q
        if not (np.all(np.isfinite(znew)) and np.all(np.isfinite(Vnew))):
            status = STATUS_NONFINITE
            break
        res = np.linalg.norm(znew + g * Vnew - w) / (1.0 + np.linalg.norm(w) + g * np.linalg.norm(Vnew))
        max_res = max(max_res, res)
        zprev, z, Vz = z, znew, Vnew
        k_reached = k + 1
        if (k + 1) % stride == 0 or k == k_max:
            ks[n_rec] = k + 1
            Z[n_rec] = z
            Zp[n_rec] = zprev
            n_rec += 1
    return ks[:n_rec], Z[:n_rec], Zp[:n_rec], status, k_reached, max_res, min_gamma
