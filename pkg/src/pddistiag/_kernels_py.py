"""Pure-NumPy PD-DistIAG kernel; reference for the compiled backend.

All state arrays are updated in place. ``metrics`` rows hold
``(mspbe_gap, consensus_err, tracking_err, v_norm)`` after each recorded step.
"""
import numpy as np


def step_metrics(theta, w, s, gsum, nm, H, theta_star, w_star, beta):
    N = theta.shape[0]
    theta_bar = theta.mean(axis=0)
    e = theta - theta_star
    gap = 0.5 * np.einsum("ij,jk,ik->", e, H, e) / N
    cons = np.sqrt(((theta - theta_bar) ** 2).sum()) / N
    g = gsum / nm
    track = np.sqrt(((s - g) ** 2).sum()) / N
    db = theta_bar - theta_star
    vn = db @ db + ((w - w_star) ** 2).sum() / (beta * N)
    return gap, cons, track, vn


def run_steps(theta, w, s, dvec, gtab_theta, gtab_w, gsum, tau, W, A, C, b,
              picks, t0, gamma1, gamma2, rho,
              metrics=None, H=None, theta_star=None, w_star=None, beta=1.0,
              record_every=1):
    """Run ``len(picks)`` iterations; return the first diverging iteration or -1."""
    N = theta.shape[0]
    M = A.shape[0]
    inv_m = 1.0 / M
    n_steps = len(picks)
    for k in range(n_steps):
        p = int(picks[k])
        t = t0 + k
        Ap = A[p]
        new_gt = rho * theta + w @ Ap
        new_gw = theta @ Ap.T - w @ C[p] - b[p]
        diff_t = new_gt - gtab_theta[:, p]
        s[...] = W @ s + inv_m * diff_t
        dvec += inv_m * (new_gw - gtab_w[:, p])
        gsum += diff_t.sum(axis=0)
        gtab_theta[:, p] = new_gt
        gtab_w[:, p] = new_gw
        tau[p] = t
        theta[...] = W @ theta - gamma1 * s
        w += gamma2 * dvec
        if not (np.isfinite(theta).all() and np.isfinite(w).all()):
            return t
        if metrics is not None and ((k + 1) % record_every == 0 or k == n_steps - 1):
            metrics[k] = step_metrics(theta, w, s, gsum, N * M, H,
                                      theta_star, w_star, beta)
    return -1
