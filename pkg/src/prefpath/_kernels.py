"""Compiled per-shard iteration kernels shared by the serial and parallel solvers.

Each kernel releases the GIL so worker threads overlap. fastmath stays off:
identical inputs must give bit-identical outputs, and the serial solver must
reproduce the single-shard parallel run exactly.

Family codes: 0 linear, 1 Bradley-Terry, 2 Thurstone-Mosteller.
Mode codes: 0 group-sparse, 1 entrywise-sparse.
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

FAMILY_CODES = {"linear": 0, "bt": 1, "tm": 2}
MODE_CODES = {"group": 0, "entrywise": 1}


@njit(cache=True, nogil=True, inline="always")
def _mills_series(x):
    # Psi(-x) * x / pdf(x) = 1 - 1/x^2 + 3/x^4 - ... (odd double factorials)
    ix2 = 1.0 / (x * x)
    return 1.0 + ix2 * (-1.0 + ix2 * (3.0 + ix2 * (-15.0 + ix2 * (105.0 + ix2 * (-945.0 + ix2 * 10395.0)))))


@njit(cache=True, nogil=True, inline="always")
def _norm_logcdf(t):
    # erfc keeps full relative precision until it underflows near t = -37.5;
    # beyond that switch to the asymptotic tail expansion.
    if t > -37.0:
        return math.log(0.5 * math.erfc(-t * _INV_SQRT2))
    x = -t
    return -0.5 * x * x - math.log(x) - _LOG_SQRT_2PI + math.log(_mills_series(x))


@njit(cache=True, nogil=True, inline="always")
def _norm_hazard(t):
    # pdf/cdf; direct ratio is safe to t = -8, then the Mills asymptotics
    # (~ -t for t -> -inf) take over with ~1e-9 relative error at the switch.
    if t > -8.0:
        cdf = 0.5 * math.erfc(-t * _INV_SQRT2)
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * t * t)
        return pdf / cdf
    x = -t
    return x / _mills_series(x)


@njit(cache=True, nogil=True, inline="always")
def _bt_neg_logcdf(t):
    if t >= 0.0:
        return math.log1p(math.exp(-t))
    return -t + math.log1p(math.exp(t))


@njit(cache=True, nogil=True, inline="always")
def _bt_hazard(t):
    # logistic survival Psi(-t)
    if t >= 0.0:
        e = math.exp(-t)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(t))


@njit(cache=True, nogil=True, inline="always")
def _residual_and_loss(family, y, p):
    """Per-record (g, loss) for outcome y and predictor p."""
    if family == 0:
        r = p - y
        return r, 0.5 * r * r
    s = y * p
    if family == 1:
        # share one exp between the hazard and the log-likelihood
        if s >= 0.0:
            e = math.exp(-s)
            return -y * (e / (1.0 + e)), math.log1p(e)
        e = math.exp(s)
        return -y / (1.0 + e), -s + math.log1p(e)
    if s > -8.0:
        cdf = 0.5 * math.erfc(-s * _INV_SQRT2)
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * s * s)
        return -y * (pdf / cdf), -math.log(cdf)
    x = -s
    haz = x / _mills_series(x)
    if s > -37.0:
        return -y * haz, -math.log(0.5 * math.erfc(x * _INV_SQRT2))
    return -y * haz, 0.5 * x * x + math.log(x) + _LOG_SQRT_2PI - math.log(_mills_series(x))


@njit(cache=True, nogil=True)
def shard_step_dense(
    D,
    y,
    w,
    seg_start,
    seg_end,
    uids,
    eta,
    xi,
    gamma,
    z_xi,
    z_gamma,
    xi_active,
    gamma_active,
    evt_xi,
    evt_gamma,
    acc,
    family,
    mode,
    alpha_over_m,
    kappa,
):
    """Gradient/dual/shrink phase over one shard with explicit feature diffs.

    Accumulates the common-coefficient gradient into `acc` in within-shard
    record order, updates the shard's per-user dual and primal blocks, and
    flags support changes. Returns (weighted loss partial, change count).
    """
    d = D.shape[1]
    for j in range(d):
        acc[j] = 0.0
    coef = np.empty(d)
    loss = 0.0
    n_changed = 0
    for s in range(uids.shape[0]):
        u = uids[s]
        for j in range(d):
            coef[j] = eta[j] + xi[u, j]
        for k in range(seg_start[s], seg_end[s]):
            p = gamma[u]
            for j in range(d):
                p += D[k, j] * coef[j]
            g, l = _residual_and_loss(family, y[k], p)
            loss += w[k] * l
            wg = w[k] * g
            for j in range(d):
                c = wg * D[k, j]
                acc[j] += c
                z_xi[u, j] -= alpha_over_m * c
            z_gamma[u] -= alpha_over_m * wg
        n_changed += _shrink_user(
            u, d, mode, kappa, xi, gamma, z_xi, z_gamma,
            xi_active, gamma_active, evt_xi, evt_gamma,
        )
    return loss, n_changed


@njit(cache=True, nogil=True)
def shard_step_identity(
    left,
    right,
    y,
    w,
    seg_start,
    seg_end,
    uids,
    eta,
    xi,
    gamma,
    z_xi,
    z_gamma,
    xi_active,
    gamma_active,
    evt_xi,
    evt_gamma,
    acc,
    family,
    mode,
    alpha_over_m,
    kappa,
):
    """Same phase as shard_step_dense for identity features (index scatter)."""
    d = xi.shape[1]
    for j in range(d):
        acc[j] = 0.0
    loss = 0.0
    n_changed = 0
    for s in range(uids.shape[0]):
        u = uids[s]
        for k in range(seg_start[s], seg_end[s]):
            li = left[k]
            ri = right[k]
            p = eta[li] - eta[ri] + xi[u, li] - xi[u, ri] + gamma[u]
            g, l = _residual_and_loss(family, y[k], p)
            loss += w[k] * l
            wg = w[k] * g
            acc[li] += wg
            acc[ri] -= wg
            c = alpha_over_m * wg
            z_xi[u, li] -= c
            z_xi[u, ri] += c
            z_gamma[u] -= c
        n_changed += _shrink_user(
            u, d, mode, kappa, xi, gamma, z_xi, z_gamma,
            xi_active, gamma_active, evt_xi, evt_gamma,
        )
    return loss, n_changed


@njit(cache=True, nogil=True, inline="always")
def _shrink_user(
    u, d, mode, kappa, xi, gamma, z_xi, z_gamma,
    xi_active, gamma_active, evt_xi, evt_gamma,
):
    """Apply the proximal map to user u's blocks; record support flips."""
    changed = 0
    if mode == 0:
        nrm = 0.0
        for j in range(d):
            nrm += z_xi[u, j] * z_xi[u, j]
        nrm = math.sqrt(nrm)
        if nrm > 1.0:
            fac = kappa * (1.0 - 1.0 / nrm)
            for j in range(d):
                xi[u, j] = fac * z_xi[u, j]
            now = np.uint8(1)
        else:
            for j in range(d):
                xi[u, j] = 0.0
            now = np.uint8(0)
    else:
        now = np.uint8(0)
        for j in range(d):
            zz = z_xi[u, j]
            az = abs(zz)
            if az > 1.0:
                sgn = 1.0 if zz > 0.0 else -1.0
                xi[u, j] = (kappa * sgn) * (az - 1.0)
                now = np.uint8(1)
            else:
                xi[u, j] = 0.0
    if now != xi_active[u]:
        evt_xi[u] = 1 if now else 2
        xi_active[u] = now
        changed += 1
    else:
        evt_xi[u] = 0

    zz = z_gamma[u]
    az = abs(zz)
    if az > 1.0:
        sgn = 1.0 if zz > 0.0 else -1.0
        gamma[u] = (kappa * sgn) * (az - 1.0)
        gnow = np.uint8(1)
    else:
        gamma[u] = 0.0
        gnow = np.uint8(0)
    if gnow != gamma_active[u]:
        evt_gamma[u] = 1 if gnow else 2
        gamma_active[u] = gnow
        changed += 1
    else:
        evt_gamma[u] = 0
    return changed


@njit(cache=True, nogil=True)
def eta_update(eta, accs, j0, j1, step, n_shards, scratch):
    """eta[j0:j1] -= step * tree_sum(accs[:, j]), fixed binary-tree order."""
    for j in range(j0, j1):
        for i in range(n_shards):
            scratch[i] = accs[i, j]
        stride = 1
        while stride < n_shards:
            i = 0
            while i + stride < n_shards:
                scratch[i] += scratch[i + stride]
                i += 2 * stride
            stride *= 2
        eta[j] -= step * scratch[0]
