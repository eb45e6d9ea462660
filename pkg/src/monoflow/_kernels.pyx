# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow, exp, log, expm1, log1p, fabs, sqrt, isfinite, INFINITY, fmax, fmin

cnp.import_array()

cdef enum:
    NSTAGE = 7

cdef double[7] C_ = [0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0]
cdef double[7] E_ = [71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200, 22.0 / 525, -1.0 / 40]
cdef double[42] A_ = [
    0, 0, 0, 0, 0, 0,
    1.0 / 5, 0, 0, 0, 0, 0,
    3.0 / 40, 9.0 / 40, 0, 0, 0, 0,
    44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0,
    19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0,
    9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0,
    35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84,
]

cdef struct FlowCtx:
    double* M
    double* q
    double* V
    int d
    int code
    double sa
    double sb
    double r
    double alpha
    double theta


cdef inline void schedule_eval(int code, double a, double b, double t, double* beta, double* dbeta) noexcept nogil:
    cdef double v
    if code == 0:
        beta[0] = a
        dbeta[0] = 0.0
    elif code == 1:
        beta[0] = a * pow(t, b)
        dbeta[0] = a * b * pow(t, b - 1.0)
    else:
        v = exp(-2.0 * a * log(t) + b * pow(t, 1.0 - a) / (1.0 - a))
        beta[0] = v
        dbeta[0] = v * (-2.0 * a / t + b * pow(t, -a))


cdef void flow_rhs(FlowCtx* c, double t, double* y, double* dy) noexcept nogil:
    cdef int d = c.d, i, j
    cdef double s, beta, dbeta, tr, trm1, cdu, cz, cv, cu
    cdef double r = c.r
    cdef double* z = y + d
    for i in range(d):
        s = c.q[i]
        for j in range(d):
            s = s + c.M[i * d + j] * z[j]
        c.V[i] = s
    schedule_eval(c.code, c.sa, c.sb, t, &beta, &dbeta)
    tr = pow(t, r)
    trm1 = pow(t, r - 1.0)
    cdu = 2.0 * tr * ((2.0 * r * c.theta * trm1 - 1.0) * beta + c.theta * tr * dbeta)
    cz = 2.0 * r * (1.0 - r) * pow(t, r - 2.0)
    cu = 2.0 * (c.alpha - r * trm1)
    cv = 2.0 * c.theta * tr * tr * beta
    for i in range(d):
        dy[i] = cdu * c.V[i] + cz * z[i]
        dy[d + i] = (y[i] - cu * z[i] - cv * c.V[i]) / (2.0 * tr)


cdef inline double vmaxabs(double* x, int n) noexcept nogil:
    cdef double m = 0.0
    cdef int i
    for i in range(n):
        if fabs(x[i]) > m or x[i] != x[i]:
            m = fabs(x[i]) if x[i] == x[i] else INFINITY
    return m


cdef inline bint allfinite(double* x, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        if not isfinite(x[i]):
            return False
    return True


def integrate_affine(M, q, sched, double r, double alpha, double theta, double t0,
                     u0, z0, t_out, int method, double h, double rtol, double atol,
                     long max_steps, double h_min_rel):
    cdef cnp.ndarray[double, ndim=2, mode="c"] Mc = np.ascontiguousarray(M, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] qc = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] to = np.ascontiguousarray(t_out, dtype=np.float64)
    cdef int d = qc.shape[0]
    cdef int n = 2 * d
    cdef int n_out = to.shape[0]
    cdef cnp.ndarray[double, ndim=2, mode="c"] Y = np.full((n_out, n), np.nan)
    cdef cnp.ndarray[double, ndim=1, mode="c"] y = np.concatenate(
        [np.asarray(u0, dtype=np.float64), np.asarray(z0, dtype=np.float64)])
    cdef cnp.ndarray[double, ndim=1, mode="c"] ynew = np.empty(n)
    cdef cnp.ndarray[double, ndim=1, mode="c"] tmp = np.empty(n)
    cdef cnp.ndarray[double, ndim=2, mode="c"] K = np.empty((NSTAGE, n))
    cdef cnp.ndarray[double, ndim=1, mode="c"] V = np.empty(d)
    cdef FlowCtx ctx
    ctx.M = &Mc[0, 0]
    ctx.q = &qc[0]
    ctx.V = &V[0]
    ctx.d = d
    ctx.code = int(sched[0])
    ctx.sa = float(sched[1])
    ctx.sb = float(sched[2])
    ctx.r = r
    ctx.alpha = alpha
    ctx.theta = theta

    cdef double t = t0, target, hs, h_des = h, en, emax, scale, fac, e, aij
    cdef int n_rec = 0, status = 0, i, j, s
    cdef long steps = 0, rejected = 0
    cdef bint hit
    cdef double* yp = &y[0]
    cdef double* yn = &ynew[0]
    cdef double* tp = &tmp[0]
    cdef double* Kp = &K[0, 0]
    cdef double* Yp = &Y[0, 0]
    cdef double* top = &to[0]

    with nogil:
        while n_rec < n_out and top[n_rec] <= t:
            for i in range(n):
                Yp[n_rec * n + i] = yp[i]
            n_rec += 1
        if method == 1 and n_rec < n_out:
            flow_rhs(&ctx, t, yp, Kp)
        while n_rec < n_out:
            if steps >= max_steps:
                status = 3
                break
            target = top[n_rec]
            hit = h_des >= target - t
            hs = target - t if hit else h_des
            if method == 0:
                flow_rhs(&ctx, t, yp, Kp)
                for i in range(n):
                    tp[i] = yp[i] + 0.5 * hs * Kp[i]
                flow_rhs(&ctx, t + 0.5 * hs, tp, Kp + n)
                for i in range(n):
                    tp[i] = yp[i] + 0.5 * hs * Kp[n + i]
                flow_rhs(&ctx, t + 0.5 * hs, tp, Kp + 2 * n)
                for i in range(n):
                    tp[i] = yp[i] + hs * Kp[2 * n + i]
                flow_rhs(&ctx, t + hs, tp, Kp + 3 * n)
                for i in range(n):
                    yn[i] = yp[i] + (hs / 6.0) * (Kp[i] + 2.0 * Kp[n + i] + 2.0 * Kp[2 * n + i] + Kp[3 * n + i])
                if not allfinite(yn, n):
                    status = 1
                    break
            else:
                for s in range(1, NSTAGE):
                    for i in range(n):
                        tp[i] = yp[i]
                    for j in range(s):
                        aij = A_[s * 6 + j]
                        if aij != 0.0:
                            for i in range(n):
                                tp[i] = tp[i] + (hs * aij) * Kp[j * n + i]
                    flow_rhs(&ctx, t + C_[s] * hs, tp, Kp + s * n)
                for i in range(n):
                    yn[i] = tp[i]
                emax = 0.0
                for i in range(n):
                    e = 0.0
                    for s in range(NSTAGE):
                        if E_[s] != 0.0:
                            e = e + (hs * E_[s]) * Kp[s * n + i]
                    if not isfinite(e):
                        emax = INFINITY
                    elif fabs(e) > emax:
                        emax = fabs(e)
                scale = atol + rtol * fmax(vmaxabs(yp, n), vmaxabs(yn, n))
                if not (isfinite(emax) and allfinite(Kp + 6 * n, n)):
                    en = INFINITY
                elif emax == 0.0:
                    en = 0.0
                elif scale == 0.0:
                    en = INFINITY
                else:
                    en = emax / scale
                if en > 1.0:
                    rejected += 1
                    if isfinite(en):
                        fac = fmax(0.2, 0.9 * pow(en, -0.2))
                    else:
                        fac = 0.2
                    h_des = fmin(h_des, hs) * fac
                    if h_des < h_min_rel * fmax(1.0, fabs(t)):
                        status = 2 if isfinite(en) else 1
                        break
                    continue
                if en == 0.0:
                    fac = 5.0
                else:
                    fac = fmin(5.0, fmax(0.2, 0.9 * pow(en, -0.2)))
                if (not hit) or hs >= h_des:
                    h_des = hs * fac
                else:
                    h_des = fmax(h_des, hs * fac)
                for i in range(n):
                    Kp[i] = Kp[6 * n + i]
            steps += 1
            t = target if hit else t + hs
            for i in range(n):
                yp[i] = yn[i]
            if hit:
                while n_rec < n_out and top[n_rec] <= t:
                    for i in range(n):
                        Yp[n_rec * n + i] = yp[i]
                    n_rec += 1
    return Y, n_rec, status, steps, rejected, t


cdef int lu_solve(double* A, double* b, int d) noexcept nogil:
    """In-place Gaussian elimination with partial pivoting; 1 if singular."""
    cdef int i, j, k, p
    cdef double m, tmp
    for k in range(d):
        p = k
        m = fabs(A[k * d + k])
        for i in range(k + 1, d):
            if fabs(A[i * d + k]) > m:
                m = fabs(A[i * d + k])
                p = i
        if m == 0.0:
            return 1
        if p != k:
            for j in range(d):
                tmp = A[k * d + j]
                A[k * d + j] = A[p * d + j]
                A[p * d + j] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
        for i in range(k + 1, d):
            m = A[i * d + k] / A[k * d + k]
            if m != 0.0:
                for j in range(k + 1, d):
                    A[i * d + j] = A[i * d + j] - m * A[k * d + j]
                b[i] = b[i] - m * b[k]
    for i in range(d - 1, -1, -1):
        tmp = b[i]
        for j in range(i + 1, d):
            tmp = tmp - A[i * d + j] * b[j]
        b[i] = tmp / A[i * d + i]
    return 0


def discrete_affine(M, q, beta, double r, double alpha, double theta, z0, z1, long k_max, long stride):
    cdef cnp.ndarray[double, ndim=2, mode="c"] Mc = np.ascontiguousarray(M, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] qc = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] bc = np.ascontiguousarray(beta, dtype=np.float64)
    cdef int d = qc.shape[0]
    cdef long n_out = (k_max + 1) // stride + 2
    cdef cnp.ndarray[long long, ndim=1, mode="c"] ks = np.zeros(n_out, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Z = np.full((n_out, d), np.nan)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Zq = np.full((n_out, d), np.nan)
    cdef cnp.ndarray[double, ndim=1, mode="c"] zprev = np.array(z0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] z = np.array(z1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] Vz = np.empty(d)
    cdef cnp.ndarray[double, ndim=1, mode="c"] w = np.empty(d)
    cdef cnp.ndarray[double, ndim=1, mode="c"] x = np.empty(d)
    cdef cnp.ndarray[double, ndim=1, mode="c"] Vx = np.empty(d)
    cdef cnp.ndarray[double, ndim=2, mode="c"] L = np.empty((d, d))
    cdef double* Mp = &Mc[0, 0]
    cdef double* qp = &qc[0]
    cdef double* bp = &bc[0]
    cdef double* zp = &z[0]
    cdef double* zpp = &zprev[0]
    cdef double* Vp = &Vz[0]
    cdef double* wp = &w[0]
    cdef double* xp = &x[0]
    cdef double* Vxp = &Vx[0]
    cdef double* Lp = &L[0, 0]
    cdef double* Zp = &Z[0, 0]
    cdef double* Zqp = &Zq[0, 0]
    cdef long long* ksp = &ks[0]
    cdef long k, n_rec = 1, k_reached = 1
    cdef int i, j, status = 0
    cdef double kd, D, kr, m, a, b, g, d2, s, nres, nw, nv, res, max_res = 0.0, min_gamma = INFINITY
    cdef bint int2r = (2.0 * r) == <double>(<long>(2.0 * r))

    ksp[0] = 1
    for i in range(d):
        Zp[i] = zp[i]
        Zqp[i] = zpp[i]
    with nogil:
        for i in range(d):
            s = qp[i]
            for j in range(d):
                s = s + Mp[i * d + j] * zp[j]
            Vp[i] = s
        for k in range(1, k_max + 1):
            kd = <double>k
            D = alpha - r * pow(kd, r - 1.0) + pow(kd + 1.0, r)
            kr = pow(kd, r)
            m = kr / D
            a = theta * pow(kd, 2.0 * r) * bp[k - 1] / D
            if int2r:
                d2 = pow(kd + 1.0, 2.0 * r) - pow(kd, 2.0 * r)
            else:
                d2 = pow(kd, 2.0 * r) * expm1(2.0 * r * log1p(1.0 / kd))
            b = (theta * (d2 - 2.0 * r * pow(kd, 2.0 * r - 1.0)) + kr) * bp[k] / D
            g = a + b
            if g < min_gamma:
                min_gamma = g
            if not g > 0:
                status = 4
                break
            for i in range(d):
                wp[i] = zp[i] + m * (zp[i] - zpp[i]) + a * Vp[i]
                xp[i] = wp[i] - g * qp[i]
                for j in range(d):
                    Lp[i * d + j] = g * Mp[i * d + j]
                Lp[i * d + i] = Lp[i * d + i] + 1.0
            if lu_solve(Lp, xp, d) != 0:
                status = 1
                break
            for i in range(d):
                s = qp[i]
                for j in range(d):
                    s = s + Mp[i * d + j] * xp[j]
                Vxp[i] = s
            if not (allfinite(xp, d) and allfinite(Vxp, d)):
                status = 1
                break
            nres = 0.0
            nw = 0.0
            nv = 0.0
            for i in range(d):
                s = xp[i] + g * Vxp[i] - wp[i]
                nres = nres + s * s
                nw = nw + wp[i] * wp[i]
                nv = nv + Vxp[i] * Vxp[i]
            res = sqrt(nres) / (1.0 + sqrt(nw) + g * sqrt(nv))
            if res > max_res:
                max_res = res
            for i in range(d):
                zpp[i] = zp[i]
                zp[i] = xp[i]
                Vp[i] = Vxp[i]
            k_reached = k + 1
            if (k + 1) % stride == 0 or k == k_max:
                ksp[n_rec] = k + 1
                for i in range(d):
                    Zp[n_rec * d + i] = zp[i]
                    Zqp[n_rec * d + i] = zpp[i]
                n_rec += 1
    return ks[:n_rec], Z[:n_rec], Zq[:n_rec], status, k_reached, max_res, min_gamma
