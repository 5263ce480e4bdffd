"""Inner-loop stepping kernels.

The batched Euler sweep dominates every experiment's runtime, so it is
JIT-compiled with numba when available.  The numpy fallbacks compute the
same per-element expressions in the same order, so outputs agree bitwise
(fastmath stays off for that reason).  The JIT kernels are deliberately
single-threaded: on small hosts the per-step thread synchronization of a
parallel sweep costs more than the arithmetic itself at every batch shape
that matters here.

Noise blocks are laid out (R, S, N): trajectory-major, so each
trajectory's generator fills a contiguous slab and no transpose is needed.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco


@njit(cache=True, fastmath=False)
def _euler_span_quadratic_nb(eta, noise, s0, s1, p, q, dt):
    """Advance through noise steps [s0, s1) of the quadratic dynamics.

    eta : (R, N), updated in place.  noise : (R, S, N) increments of
    variance dt.
    """
    R, N = eta.shape
    tmp = np.empty(N)
    for s in range(s0, s1):
        for r in range(R):
            row = eta[r]
            nz = noise[r, s]
            for x in range(N):
                xp = x + 1 if x + 1 < N else 0
                xm = x - 1 if x > 0 else N - 1
                tmp[x] = (
                    row[x]
                    + dt * (p * (row[xp] - row[x]) + q * (row[xm] - row[x]))
                    + (nz[xp] - nz[x])
                )
            for x in range(N):
                eta[r, x] = tmp[x]


@njit(cache=True, fastmath=False)
def _euler_step_general_nb(eta, vp, noise, s, p, q, dt, out):
    """One step with precomputed bond forces vp = V'(eta); noise row s."""
    R, N = eta.shape
    for r in range(R):
        for x in range(N):
            xp = x + 1 if x + 1 < N else 0
            xm = x - 1 if x > 0 else N - 1
            out[r, x] = (
                eta[r, x]
                + dt * (p * (vp[r, xp] - vp[r, x]) + q * (vp[r, xm] - vp[r, x]))
                + (noise[r, s, xp] - noise[r, s, x])
            )


def _euler_step_np(eta, vp, nz, p, q, dt, out):
    vpp = np.roll(vp, -1, axis=-1)
    vpm = np.roll(vp, 1, axis=-1)
    nzp = np.roll(nz, -1, axis=-1)
    np.copyto(out, eta + dt * (p * (vpp - vp) + q * (vpm - vp)) + (nzp - nz))


def _euler_span_quadratic_np(eta, noise, s0, s1, p, q, dt):
    cur = eta
    buf = np.empty_like(eta)
    for s in range(s0, s1):
        _euler_step_np(cur, cur, noise[:, s, :], p, q, dt, buf)
        cur, buf = buf, cur
    if cur is not eta:
        np.copyto(eta, cur)


def euler_span_quadratic(eta, noise, s0, s1, p, q, dt):
    """Dispatch the fused quadratic-potential span update (in place)."""
    if HAVE_NUMBA:
        _euler_span_quadratic_nb(eta, noise, s0, s1, p, q, dt)
    else:
        _euler_span_quadratic_np(eta, noise, s0, s1, p, q, dt)


def euler_step_general(eta, vp, noise, s, p, q, dt, out):
    """Dispatch a single general-potential step into ``out``."""
    if HAVE_NUMBA:
        _euler_step_general_nb(eta, vp, noise, s, p, q, dt, out)
    else:
        _euler_step_np(eta, vp, noise[:, s, :], p, q, dt, out)
