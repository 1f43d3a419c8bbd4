"""Hot loops, each in a numba and a pure-numpy flavour.

Both flavours consume randomness from the same flat buffer of standard
uniforms in the same order, so for a given seed they make the same
accept/reject decisions. They may differ in the last bits of summed
log-densities because numpy reductions use pairwise summation.
"""

import math

import numpy as np
from scipy.special import logsumexp

from ._accel import njit

# |a| below this rejects a proposal as singular.
SINGULAR_TOL = 1e-12

# counters layout shared by the SDE chain kernels
ACCEPTED, OUT_OF_SUPPORT, SINGULAR, PROPOSALS = 0, 1, 2, 3
# meta layout: global iteration index, next output row
STEP, ROW = 0, 1
# update modes
MODE_ALL, MODE_SINGLE, MODE_SWEEP = 0, 1, 2


def draws_per_step(mode, n):
    """Upper bound on uniforms one iteration consumes."""
    if mode == MODE_ALL:
        return n + 1
    if mode == MODE_SINGLE:
        return 3
    return 2 * n


# ---------------------------------------------------------------------------
# SDE increment-space chain
#
# State of a chain: increments ``dx`` (N), path ``xp`` (N+1) and prefix sums
# ``pss``/``pla`` (N+1) of the squared innovations and of log|a|, accumulated
# left to right. Changing increment k leaves the first k terms untouched, so
# a proposal only recomputes the tail; the running sums see the same
# additions in the same order as a full recomputation.
# ---------------------------------------------------------------------------


@njit(cache=False, nogil=True)
def _tail_numba(drift, diffusion, dt, prop, k, xp, pss, pla, nxp, npss, npla):
    n = prop.shape[0]
    xprev = xp[k]
    ss = pss[k]
    la = pla[k]
    nxp[k] = xprev
    for i in range(k, n):
        t = i * dt
        a = diffusion(xprev, t)
        if abs(a) < SINGULAR_TOL:
            return False
        b = drift(xprev, t)
        y = (prop[i] - b * dt) / a
        ss += y * y
        la += math.log(abs(a))
        xprev = xprev + prop[i]
        nxp[i + 1] = xprev
        npss[i + 1] = ss
        npla[i + 1] = la
    return True


@njit(cache=False, nogil=True)
def init_state_numba(drift, diffusion, x0, dt, dx, xp, pss, pla):
    xp[0] = x0
    pss[0] = 0.0
    pla[0] = 0.0
    return _tail_numba(drift, diffusion, dt, dx, 0, xp, pss, pla, xp, pss, pla)


@njit(cache=False, nogil=True)
def _try_update(drift, diffusion, dt, rho, prop, k, dx, xp, pss, pla,
                nxp, npss, npla, buf, pos, counters):
    """Metropolis decision for a proposal differing from ``dx`` from index k on.

    Returns the new buffer position.
    """
    n = dx.shape[0]
    counters[PROPOSALS] += 1
    for i in range(k, n):
        if abs(prop[i]) > rho:
            counters[OUT_OF_SUPPORT] += 1
            return pos
    if not _tail_numba(drift, diffusion, dt, prop, k, xp, pss, pla, nxp, npss, npla):
        counters[SINGULAR] += 1
        return pos
    log_alpha = (-npss[n] + pss[n]) / (2.0 * dt) + (pla[n] - npla[n])
    u = buf[pos]
    pos += 1
    if u <= math.exp(min(0.0, log_alpha)):
        for i in range(k, n):
            dx[i] = prop[i]
            xp[i + 1] = nxp[i + 1]
            pss[i + 1] = npss[i + 1]
            pla[i + 1] = npla[i + 1]
        counters[ACCEPTED] += 1
    return pos


@njit(cache=False, nogil=True)
def sde_chain_numba(drift, diffusion, dt, rho, half_width, mode,
                    dx, xp, pss, pla, buf, pos, max_steps, burn_in, thinning,
                    out, out_step, meta, counters):
    """Advance the probing-corrected chain over increment vectors.

    Works in place on the chain state, ``out``/``out_step`` (retained
    samples), ``meta`` and ``counters``. Stops after ``max_steps`` iterations
    or when ``buf`` cannot cover another full iteration; returns the new
    buffer position.
    """
    n = dx.shape[0]
    need = n + 1 if mode == MODE_ALL else (3 if mode == MODE_SINGLE else 2 * n)
    lo = -half_width
    span = half_width - lo
    prop = dx.copy()
    nxp = xp.copy()
    npss = pss.copy()
    npla = pla.copy()
    done = 0
    while done < max_steps and pos + need <= buf.shape[0]:
        if mode == MODE_ALL:
            for j in range(n):
                prop[j] = dx[j] + (lo + span * buf[pos + j])
            pos += n
            pos = _try_update(drift, diffusion, dt, rho, prop, 0, dx, xp, pss, pla,
                              nxp, npss, npla, buf, pos, counters)
        elif mode == MODE_SINGLE:
            k = int(buf[pos] * n)
            if k >= n:
                k = n - 1
            for j in range(n):
                prop[j] = dx[j]
            prop[k] = dx[k] + (lo + span * buf[pos + 1])
            pos += 2
            pos = _try_update(drift, diffusion, dt, rho, prop, k, dx, xp, pss, pla,
                              nxp, npss, npla, buf, pos, counters)
        else:
            for k in range(n):
                for j in range(n):
                    prop[j] = dx[j]
                prop[k] = dx[k] + (lo + span * buf[pos])
                pos += 1
                pos = _try_update(drift, diffusion, dt, rho, prop, k, dx, xp, pss, pla,
                                  nxp, npss, npla, buf, pos, counters)

        meta[STEP] += 1
        step = meta[STEP]
        if step > burn_in and (step - burn_in - 1) % thinning == 0:
            row = meta[ROW]
            for j in range(n):
                out[row, j] = dx[j]
            out_step[row] = step
            meta[ROW] = row + 1
        done += 1
    return pos


def path_terms_numpy(drift, diffusion, x0, dt, inc):
    """(sum of squared innovations, sum log|a|, ok) for one increment vector."""
    n = inc.shape[0]
    path = np.cumsum(np.concatenate(([x0], inc)))
    xprev = path[:-1]
    t = np.arange(n) * dt
    a = np.broadcast_to(np.asarray(diffusion(xprev, t), dtype=float), (n,))
    if np.any(np.abs(a) < SINGULAR_TOL):
        return 0.0, 0.0, False
    b = np.broadcast_to(np.asarray(drift(xprev, t), dtype=float), (n,))
    y = (inc - b * dt) / a
    return float(y @ y), float(np.sum(np.log(np.abs(a)))), True


class _NumpyChain:
    """State for the numpy backend: increments plus the two totals."""

    def __init__(self, drift, diffusion, x0, dt, rho, counters):
        self.drift, self.diffusion, self.x0, self.dt, self.rho = drift, diffusion, x0, dt, rho
        self.counters = counters

    def try_update(self, prop, changed, dx, tot, buf, pos):
        self.counters[PROPOSALS] += 1
        if np.any(np.abs(prop[changed]) > self.rho):
            self.counters[OUT_OF_SUPPORT] += 1
            return pos
        ss, la, ok = path_terms_numpy(self.drift, self.diffusion, self.x0, self.dt, prop)
        if not ok:
            self.counters[SINGULAR] += 1
            return pos
        log_alpha = (-ss + tot[0]) / (2.0 * self.dt) + (tot[1] - la)
        u = buf[pos]
        pos += 1
        if u <= math.exp(min(0.0, log_alpha)):
            dx[:] = prop
            tot[0] = ss
            tot[1] = la
            self.counters[ACCEPTED] += 1
        return pos


def sde_chain_numpy(drift, diffusion, x0, dt, rho, half_width, mode,
                    dx, tot, buf, pos, max_steps, burn_in, thinning,
                    out, out_step, meta, counters):
    """numpy twin of :func:`sde_chain_numba`; ``tot`` holds the two totals."""
    n = dx.shape[0]
    need = draws_per_step(mode, n)
    lo = -half_width
    span = half_width - lo
    chain = _NumpyChain(drift, diffusion, x0, dt, rho, counters)
    done = 0
    while done < max_steps and pos + need <= buf.shape[0]:
        if mode == MODE_ALL:
            prop = dx + (lo + span * buf[pos:pos + n])
            pos += n
            pos = chain.try_update(prop, slice(None), dx, tot, buf, pos)
        elif mode == MODE_SINGLE:
            k = min(int(buf[pos] * n), n - 1)
            prop = dx.copy()
            prop[k] = dx[k] + (lo + span * buf[pos + 1])
            pos += 2
            pos = chain.try_update(prop, slice(k, k + 1), dx, tot, buf, pos)
        else:
            for k in range(n):
                prop = dx.copy()
                prop[k] = dx[k] + (lo + span * buf[pos])
                pos += 1
                pos = chain.try_update(prop, slice(k, k + 1), dx, tot, buf, pos)

        meta[STEP] += 1
        step = meta[STEP]
        if step > burn_in and (step - burn_in - 1) % thinning == 0:
            out[meta[ROW]] = dx
            out_step[meta[ROW]] = step
            meta[ROW] += 1
        done += 1
    return pos


# ---------------------------------------------------------------------------
# Finite-state Metropolis simulation
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def discrete_mh_numba(proposal_cdf, log_weight, start, buf, visits):
    """Simulate a finite-state MH chain; two uniforms per step."""
    n = proposal_cdf.shape[0]
    state = start
    for k in range(buf.shape[0] // 2):
        u = buf[2 * k]
        j = 0
        while j < n - 1 and u >= proposal_cdf[state, j]:
            j += 1
        log_alpha = log_weight[j] - log_weight[state]
        if buf[2 * k + 1] <= math.exp(min(0.0, log_alpha)):
            state = j
        visits[state] += 1
    return state


def discrete_mh_numpy(proposal_cdf, log_weight, start, buf, visits):
    n = proposal_cdf.shape[0]
    state = start
    for k in range(buf.shape[0] // 2):
        j = min(int(np.searchsorted(proposal_cdf[state], buf[2 * k], side="right")), n - 1)
        if buf[2 * k + 1] <= math.exp(min(0.0, log_weight[j] - log_weight[state])):
            state = j
        visits[state] += 1
    return state


# ---------------------------------------------------------------------------
# Gaussian product-kernel density
# ---------------------------------------------------------------------------

_LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def kde_logpdf_numba(points, bandwidth, queries):
    m_pts, dim = points.shape
    n_q = queries.shape[0]
    const = -math.log(m_pts) - 0.5 * dim * _LOG_2PI
    for d in range(dim):
        const -= math.log(bandwidth[d])
    out = np.empty(n_q)
    expo = np.empty(m_pts)
    for q in range(n_q):
        best = -np.inf
        for j in range(m_pts):
            z = 0.0
            for d in range(dim):
                r = (queries[q, d] - points[j, d]) / bandwidth[d]
                z += r * r
            e = -0.5 * z
            expo[j] = e
            if e > best:
                best = e
        acc = 0.0
        for j in range(m_pts):
            acc += math.exp(expo[j] - best)
        out[q] = best + math.log(acc) + const
    return out


def kde_logpdf_numpy(points, bandwidth, queries, max_cells=1 << 22):
    m_pts, dim = points.shape
    block = max(1, max_cells // m_pts)
    const = -math.log(m_pts) - 0.5 * dim * _LOG_2PI - float(np.sum(np.log(bandwidth)))
    scaled_pts = points / bandwidth
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], block):
        q = queries[start:start + block] / bandwidth
        z = np.zeros((q.shape[0], m_pts))
        for d in range(dim):
            z += (q[:, d, None] - scaled_pts[None, :, d]) ** 2
        out[start:start + block] = logsumexp(-0.5 * z, axis=1) + const
    return out
