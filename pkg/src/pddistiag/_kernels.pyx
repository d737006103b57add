# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled PD-DistIAG kernel; same contract as ``_kernels_py.run_steps``."""
from libc.math cimport sqrt, isfinite

import numpy as np


cdef void _metrics(double[:, ::1] theta, double[:, ::1] w, double[:, ::1] s,
                   double[::1] gsum, double nm, double[:, ::1] H,
                   double[::1] theta_star, double[:, ::1] w_star, double beta,
                   double[::1] buf, double[::1] out) nogil:
    cdef Py_ssize_t N = theta.shape[0], d = theta.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double gap = 0.0, cons = 0.0, track = 0.0, vn = 0.0, acc, x
    # buf[:d] = theta_bar
    for k in range(d):
        acc = 0.0
        for i in range(N):
            acc += theta[i, k]
        buf[k] = acc / N
    for i in range(N):
        for j in range(d):
            x = theta[i, j] - theta_star[j]
            acc = 0.0
            for k in range(d):
                acc += H[j, k] * (theta[i, k] - theta_star[k])
            gap += x * acc
            x = theta[i, j] - buf[j]
            cons += x * x
            x = s[i, j] - gsum[j] / nm
            track += x * x
            x = w[i, j] - w_star[i, j]
            vn += x * x
    vn /= beta * N
    for k in range(d):
        x = buf[k] - theta_star[k]
        vn += x * x
    out[0] = 0.5 * gap / N
    out[1] = sqrt(cons) / N
    out[2] = sqrt(track) / N
    out[3] = vn


def run_steps(double[:, ::1] theta, double[:, ::1] w, double[:, ::1] s,
              double[:, ::1] dvec, double[:, :, ::1] gtab_theta,
              double[:, :, ::1] gtab_w, double[::1] gsum, long long[::1] tau,
              double[:, ::1] W, double[:, :, ::1] A, double[:, :, ::1] C,
              double[:, :, ::1] b, long long[::1] picks, long long t0,
              double gamma1, double gamma2, double rho,
              double[:, ::1] metrics=None, double[:, ::1] H=None,
              double[::1] theta_star=None, double[:, ::1] w_star=None,
              double beta=1.0, Py_ssize_t record_every=1):
    cdef Py_ssize_t N = theta.shape[0], d = theta.shape[1], M = A.shape[0]
    cdef Py_ssize_t n_steps = picks.shape[0]
    cdef Py_ssize_t i, j, k, l, step, p
    cdef double inv_m = 1.0 / M, acc, gt, gw, diff
    cdef bint record = metrics is not None
    cdef double[:, ::1] new_s = np.empty((N, d))
    cdef double[:, ::1] new_theta = np.empty((N, d))
    cdef double[::1] buf = np.empty(d)
    cdef long long bad = -1

    with nogil:
        for step in range(n_steps):
            p = picks[step]
            # gossip on the previous surrogates and iterates
            for i in range(N):
                for k in range(d):
                    acc = 0.0
                    gt = 0.0
                    for j in range(N):
                        acc += W[i, j] * s[j, k]
                        gt += W[i, j] * theta[j, k]
                    new_s[i, k] = acc
                    new_theta[i, k] = gt
            for i in range(N):
                for k in range(d):
                    # rho theta + A_p^T w_i
                    gt = rho * theta[i, k]
                    # A_p theta_i - C_p w_i - b_{p,i}
                    gw = -b[p, i, k]
                    for l in range(d):
                        gt += A[p, l, k] * w[i, l]
                        gw += A[p, k, l] * theta[i, l] - C[p, k, l] * w[i, l]
                    diff = gt - gtab_theta[i, p, k]
                    new_s[i, k] += inv_m * diff
                    gsum[k] += diff
                    dvec[i, k] += inv_m * (gw - gtab_w[i, p, k])
                    gtab_theta[i, p, k] = gt
                    gtab_w[i, p, k] = gw
            tau[p] = t0 + step
            for i in range(N):
                for k in range(d):
                    s[i, k] = new_s[i, k]
                    theta[i, k] = new_theta[i, k] - gamma1 * new_s[i, k]
                    w[i, k] = w[i, k] + gamma2 * dvec[i, k]
                    if not (isfinite(theta[i, k]) and isfinite(w[i, k])):
                        bad = t0 + step
            if bad >= 0:
                break
            if record and ((step + 1) % record_every == 0 or step == n_steps - 1):
                _metrics(theta, w, s, gsum, <double>(N * M), H, theta_star,
                         w_star, beta, buf, metrics[step])
    return bad
