"""Compiled inner loops for the recursion.

All randomness is supplied by the caller as pre-drawn uniforms, so the
kernels are pure functions of their arguments. ``u[0]`` is reserved for the
initial state; ``u[k + 1]`` drives the transition out of the state used at
step k.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _next_state(cum_row, u):
    # first j with u < cum_row[j]; counting is branch-free and equal because
    # cum_row is non-decreasing (the last entry is never compared)
    j = 0
    for i in range(cum_row.shape[0] - 1):
        j += u >= cum_row[i]
    return j


@njit(cache=True, nogil=True)
def _sq_and_log(theta):
    s = 0.0
    m = 0.0
    for i in range(theta.shape[0]):
        s += theta[i] * theta[i]
        a = abs(theta[i])
        if a > m:
            m = a
    if s == 0.0:
        return 0.0, -np.inf
    if np.isfinite(s) and s > 1e-290:
        return s, np.log(s)
    # rescale so the log-norm survives over/underflow of the plain sum
    t = 0.0
    for i in range(theta.shape[0]):
        r = theta[i] / m
        t += r * r
    return s, 2.0 * np.log(m) + np.log(t)


@njit(cache=True, nogil=True)
def finite_full(A, b, cum, theta0, x0, eps, u, thetas, states):
    d = theta0.shape[0]
    K = eps.shape[0]
    tmp = np.empty(d)
    for i in range(d):
        thetas[0, i] = theta0[i]
    x = x0
    for k in range(K):
        states[k] = x
        e = eps[k]
        for i in range(d):
            s = b[x, i]
            for j in range(d):
                s += A[x, i, j] * thetas[k, j]
            tmp[i] = thetas[k, i] + e * s
        for i in range(d):
            thetas[k + 1, i] = tmp[i]
        x = _next_state(cum[x], u[k + 1])


@njit(cache=True, nogil=True)
def finite_record(A, b, cum, theta0, x0, eps, u, record, out_sq, out_log):
    d = theta0.shape[0]
    K = eps.shape[0]
    theta = theta0.copy()
    tmp = np.empty(d)
    n_rec = record.shape[0]
    r = 0
    while r < n_rec and record[r] == 0:
        out_sq[r], out_log[r] = _sq_and_log(theta)
        r += 1
    x = x0
    for k in range(K):
        if r >= n_rec:
            break
        e = eps[k]
        for i in range(d):
            s = b[x, i]
            for j in range(d):
                s += A[x, i, j] * theta[j]
            tmp[i] = theta[i] + e * s
        for i in range(d):
            theta[i] = tmp[i]
        x = _next_state(cum[x], u[k + 1])
        while r < n_rec and record[r] == k + 1:
            out_sq[r], out_log[r] = _sq_and_log(theta)
            r += 1


@njit(cache=True, nogil=True)
def _trace_step(F, c, alpha, theta_star, z, zn, trace, theta, e):
    # A(X)theta + b(X) = trace * (c(z) - (phi(z) - alpha phi(z'))^T (theta + theta*))
    d = theta.shape[0]
    g = c[z]
    for i in range(d):
        g -= (F[z, i] - alpha * F[zn, i]) * (theta[i] + theta_star[i])
    for i in range(d):
        theta[i] += e * g * trace[i]


@njit(cache=True, nogil=True)
def trace_full(F, c, alpha, lam, theta_star, cum, theta0, z0, eps, u, thetas, zs, trace_norms):
    d = theta0.shape[0]
    K = eps.shape[0]
    theta = theta0.copy()
    trace = F[z0].copy()
    for i in range(d):
        thetas[0, i] = theta[i]
    z = z0
    zs[0] = z0
    decay = alpha * lam
    for k in range(K):
        zn = _next_state(cum[z], u[k + 1])
        zs[k + 1] = zn
        t2 = 0.0
        for i in range(d):
            t2 += trace[i] * trace[i]
        trace_norms[k] = np.sqrt(t2)
        _trace_step(F, c, alpha, theta_star, z, zn, trace, theta, eps[k])
        for i in range(d):
            thetas[k + 1, i] = theta[i]
        z = zn
        for i in range(d):
            trace[i] = decay * trace[i] + F[z, i]


@njit(cache=True, nogil=True)
def trace_record(F, c, alpha, lam, theta_star, cum, theta0, z0, eps, u, record, out_sq, out_log):
    d = theta0.shape[0]
    K = eps.shape[0]
    theta = theta0.copy()
    trace = F[z0].copy()
    n_rec = record.shape[0]
    r = 0
    while r < n_rec and record[r] == 0:
        out_sq[r], out_log[r] = _sq_and_log(theta)
        r += 1
    z = z0
    decay = alpha * lam
    for k in range(K):
        if r >= n_rec:
            break
        zn = _next_state(cum[z], u[k + 1])
        _trace_step(F, c, alpha, theta_star, z, zn, trace, theta, eps[k])
        z = zn
        for i in range(d):
            trace[i] = decay * trace[i] + F[z, i]
        while r < n_rec and record[r] == k + 1:
            out_sq[r], out_log[r] = _sq_and_log(theta)
            r += 1
