"""Exact generator algebra for the tilt dynamics.

Applies the symmetric and asymmetric parts of the generator and the carre
du champ to local observables, on the torus and on blocks; estimates the
associated bilinear forms by Monte Carlo; solves the Poisson equation for
linear functionals under the quadratic potential; and measures the
Dynkin-martingale and time-average moment diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import BatchIntegrator, TrajectoryRecord
from .errors import InvalidArgumentError, NumericFailureError
from .measures import ValueWithSE, sample_canonical, sample_grand_canonical
from .model import Asymmetry, LocalField, Potential, TorusField
from .observables import Observable


def _torus_positions(f: Observable, n: int) -> np.ndarray:
    pos = f.offsets % n
    if len(np.unique(pos)) != f.size:
        raise InvalidArgumentError(
            f"observable support of {f.size} coordinates does not embed in a "
            f"torus of {n} sites"
        )
    return pos


def gradient_on_torus(f: Observable, eta: TorusField) -> np.ndarray:
    """First partials of f scattered onto the full torus (offset y at
    internal position y mod N, i.e. site y for y >= 1)."""
    pos = _torus_positions(f, eta.N)
    out = np.zeros(eta.N)
    out[pos] = f.gradient(eta.values[pos])
    return out


def phi_gradient(f: Observable, eta: TorusField) -> np.ndarray:
    """Height-variable partials: d/d_phi(x) f = (d_eta(x-1) - d_eta(x)) f."""
    g = gradient_on_torus(f, eta)
    return np.roll(g, 1) - g


def generator_symmetric(f: Observable, eta: TorusField, pot: Potential) -> float:
    """Symmetric part of the generator applied to f at the state eta."""
    n = eta.N
    pos = _torus_positions(f, n)
    window = eta.values[pos]
    grad = f.gradient(window)
    hess = f.hessian(window)
    hmat = np.zeros((n, n))
    hmat[np.ix_(pos, pos)] = hess
    idx = np.arange(n)
    term2 = float(np.trace(hmat) - hmat[idx, (idx - 1) % n].sum())
    gt = np.zeros(n)
    gt[pos] = grad
    vp = np.asarray(pot.dv(eta.values), dtype=float)
    lap = np.roll(vp, -1) - 2.0 * vp + np.roll(vp, 1)
    return term2 + 0.5 * float(np.dot(lap, gt))


def generator_asymmetric(
    f: Observable, eta: TorusField, pot: Potential, asym: Asymmetry
) -> float:
    """Asymmetric part: gamma * sum_x (V'(eta(x+1)) - V'(eta(x-1))) d_x f."""
    gt = gradient_on_torus(f, eta)
    vp = np.asarray(pot.dv(eta.values), dtype=float)
    return asym.gamma * float(np.dot(np.roll(vp, -1) - np.roll(vp, 1), gt))


def carre_du_champ(f: Observable, eta: TorusField) -> float:
    """Squared intrinsic gradient sum_x (d_x f - d_{x-1} f)^2."""
    gt = gradient_on_torus(f, eta)
    d = gt - np.roll(gt, 1)
    return float(np.dot(d, d))


def generator_symmetric_local(f: Observable, etaL: LocalField, pot: Potential) -> float:
    """Localized symmetric generator on the block [-ell, ell-1].

    Only bond pairs interior to the block enter; no boundary term.
    """
    ell = etaL.ell
    window = f.window_of(etaL, 0)  # raises if the window leaves the block
    pos = f.offsets + ell
    n = 2 * ell
    gt = np.zeros(n)
    gt[pos] = f.gradient(window)
    hmat = np.zeros((n, n))
    hmat[np.ix_(pos, pos)] = f.hessian(window)
    vp = np.asarray(pot.dv(etaL.values), dtype=float)
    i = np.arange(1, n)
    sq = hmat[i, i] - 2.0 * hmat[i, i - 1] + hmat[i - 1, i - 1]
    drift = (vp[i] - vp[i - 1]) * (gt[i] - gt[i - 1])
    return 0.5 * float(np.sum(sq - drift))


# ----------------------------------------------------------------------
# vectorized application over trajectory batches


def generator_apply_batch(f: Observable, states: np.ndarray, pot: Potential, asym: Asymmetry):
    """L0 f, L1 f and carre du champ at each row of ``states`` (R, N).

    Uses the observable's vectorized partials; rows are independent states.
    """
    states = np.asarray(states, dtype=float)
    r, n = states.shape
    pos = _torus_positions(f, n)
    windows = states[:, pos]
    grad = f.gradient_batch(windows)
    hess = f.hessian_batch(windows)
    gt = np.zeros((r, n))
    gt[:, pos] = grad
    term2 = np.trace(hess, axis1=1, axis2=2).copy()
    posmap = {int(p): i for i, p in enumerate(pos)}
    for i, p in enumerate(pos):  # cyclic neighbor pairs with both ends in support
        j = posmap.get((int(p) - 1) % n)
        if j is not None:
            term2 -= hess[:, i, j]
    vp = np.asarray(pot.dv(states), dtype=float)
    lap = np.roll(vp, -1, axis=1) - 2.0 * vp + np.roll(vp, 1, axis=1)
    l0 = term2 + 0.5 * np.einsum("rn,rn->r", lap, gt)
    skew = np.roll(vp, -1, axis=1) - np.roll(vp, 1, axis=1)
    l1 = asym.gamma * np.einsum("rn,rn->r", skew, gt)
    d = gt - np.roll(gt, 1, axis=1)
    gamma = np.einsum("rn,rn->r", d, d)
    return l0, l1, gamma


@dataclass
class SymmetryResult:
    """Monte Carlo symmetry/antisymmetry residuals under the product measure."""

    s0: float
    s0_se: float
    s1: float
    s1_se: float
    gl0f: float      # E[G * L0 F], for the Dirichlet-form cross-check
    gl0f_se: float
    n_samples: int


def symmetry_residuals(
    F: Observable,
    G: Observable,
    pot: Potential,
    u: float,
    n_samples: int,
    rng,
    n_sites: int | None = None,
    asym: Asymmetry | None = None,
) -> SymmetryResult:
    """Estimate E[G L0 F - F L0 G] and E[G L1 F + F L1 G] under the
    mean-u product measure; both vanish for the reversible/antisymmetric
    split at any asymmetry strength."""
    asym = asym if asym is not None else Asymmetry(1.0)
    if n_sites is None:
        n_sites = max(2 * F.window + 1, 2 * G.window + 1) + 5
    states = sample_grand_canonical(pot, u, n_samples * n_sites, rng).reshape(
        n_samples, n_sites
    )
    l0f, l1f, _ = generator_apply_batch(F, states, pot, asym)
    l0g, l1g, _ = generator_apply_batch(G, states, pot, asym)
    fv = F.value_windows(states[:, _torus_positions(F, n_sites)])
    gv = G.value_windows(states[:, _torus_positions(G, n_sites)])
    s0 = gv * l0f - fv * l0g
    s1 = gv * l1f + fv * l1g
    gl0f = gv * l0f
    sq = np.sqrt(n_samples)
    return SymmetryResult(
        s0=float(s0.mean()),
        s0_se=float(s0.std(ddof=1) / sq),
        s1=float(s1.mean()),
        s1_se=float(s1.std(ddof=1) / sq),
        gl0f=float(gl0f.mean()),
        gl0f_se=float(gl0f.std(ddof=1) / sq),
        n_samples=n_samples,
    )


def dirichlet_form(F: Observable, G: Observable, sampler, n_samples: int, rng=None):
    """Monte Carlo Dirichlet form (1/2) E[sum over interior bond pairs of
    the pair-difference derivatives of F and G] under canonical samples.

    ``sampler`` is either an object with .draw(count) -> (count, 2*ell)
    or a callable(count) -> (count, 2*ell).
    """
    draw = sampler.draw if hasattr(sampler, "draw") else sampler
    fields = np.asarray(draw(n_samples), dtype=float)
    n = fields.shape[1]
    ell = n // 2
    for obs in (F, G):
        if not obs.fits_block(ell):
            raise InvalidArgumentError("observable window leaves the block")
    posf = F.offsets + ell
    posg = G.offsets + ell
    gtf = np.zeros((n_samples, n))
    gtf[:, posf] = F.gradient_batch(fields[:, posf])
    gtg = np.zeros((n_samples, n))
    gtg[:, posg] = G.gradient_batch(fields[:, posg])
    df = gtf[:, 1:] - gtf[:, :-1]
    dg = gtg[:, 1:] - gtg[:, :-1]
    vals = 0.5 * np.einsum("ri,ri->r", df, dg)
    return ValueWithSE(
        float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))
    )


# ----------------------------------------------------------------------
# Dynkin martingale diagnostics


@dataclass
class DynkinResult:
    mean_residual: float
    se_residual: float
    qv_ratio: float
    n_trajectories: int


def dynkin_residual(f: Observable, records, pot: Potential, asym: Asymmetry) -> DynkinResult:
    """Martingale residual of f along recorded trajectories.

    M_t = f(eta_t) - f(eta_0) - int_0^t (L0+L1) f(eta_s) ds in microscopic
    time (trapezoid on the record grid); returns the batch mean of M_T and
    the ratio of realized quadratic variation to the integrated carre du
    champ.
    """
    if isinstance(records, TrajectoryRecord):
        records = [records]
    residuals = []
    qv_sum = 0.0
    gamma_sum = 0.0
    for rec in records:
        states = rec.fields
        n = states.shape[1]
        t_micro = rec.times * n * n
        pos = _torus_positions(f, n)
        fv = f.value_windows(states[:, pos])
        l0, l1, gam = generator_apply_batch(f, states, pot, asym)
        lf = l0 + l1
        dt_seg = np.diff(t_micro)
        integral = np.concatenate(
            [[0.0], np.cumsum(0.5 * dt_seg * (lf[1:] + lf[:-1]))]
        )
        m = fv - fv[0] - integral
        residuals.append(m[-1])
        qv_sum += float(np.sum(np.diff(m) ** 2))
        gamma_sum += float(np.sum(0.5 * dt_seg * (gam[1:] + gam[:-1])))
    residuals = np.asarray(residuals)
    se = float(residuals.std(ddof=1) / np.sqrt(len(residuals))) if len(residuals) > 1 else 0.0
    return DynkinResult(
        mean_residual=float(residuals.mean()),
        se_residual=se,
        qv_ratio=qv_sum / gamma_sum if gamma_sum > 0 else float("nan"),
        n_trajectories=len(residuals),
    )


# ----------------------------------------------------------------------
# Poisson solve and the time-average moment diagnostic


@dataclass(frozen=True)
class LinearFunctional:
    """Linear functional sum_x a(x) eta(x) on the torus."""

    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @property
    def n(self) -> int:
        return self.coeffs.size

    def value(self, eta_values) -> float:
        return float(np.dot(self.coeffs, eta_values))

    def check_mean_zero(self):
        total = abs(float(self.coeffs.sum()))
        if total > 1e-10 * max(1.0, float(np.abs(self.coeffs).sum())):
            raise InvalidArgumentError("coefficients must sum to zero")

    def as_observable(self) -> Observable:
        """Windowed form (odd torus sizes only): offset y holds a(y mod N)."""
        n = self.n
        if n % 2 == 0:
            raise InvalidArgumentError("whole-torus window needs odd N")
        w = n // 2
        b = np.array([self.coeffs[y % n] for y in range(-w, w + 1)])
        return Observable(
            window=w,
            evaluate=lambda win: float(np.dot(b, np.asarray(win, dtype=float))),
            grad=lambda win: b.copy(),
            hess=lambda win: np.zeros((n, n)),
            value_windows=lambda W: W @ b,
            grad_batch=lambda W: np.broadcast_to(b, W.shape).copy(),
            hess_batch=lambda W: np.zeros(W.shape + (n,)),
            name="linear_functional",
            validate=False,
        )


def poisson_solve_linear(a, n: int | None = None) -> LinearFunctional:
    """Solve (1/2) * discrete_laplacian(b) = -a with sum b = 0.

    Under the quadratic potential the symmetric generator acts on linear
    functionals as half the cyclic Laplacian on their coefficients, so the
    solve is a Fourier division; residual checked to 1e-10.
    """
    if not isinstance(a, LinearFunctional):
        a = LinearFunctional(np.asarray(a, dtype=float))
    if n is not None and n != a.n:
        raise InvalidArgumentError("size mismatch between a and n")
    a.check_mean_zero()
    n = a.n
    ahat = np.fft.rfft(a.coeffs)
    w = 2.0 * np.pi * np.arange(n // 2 + 1) / n
    denom = 1.0 - np.cos(w)
    bhat = np.zeros_like(ahat)
    bhat[1:] = ahat[1:] / denom[1:]
    b = np.fft.irfft(bhat, n=n)
    resid = 0.5 * (np.roll(b, -1) - 2.0 * b + np.roll(b, 1)) + a.coeffs
    scale = max(1.0, float(np.abs(a.coeffs).max()))
    if np.abs(resid).max() > 1e-10 * scale:
        raise NumericFailureError("Poisson residual above tolerance")
    return LinearFunctional(b)


def ito_tanaka_ratio(
    a,
    pot: Potential,
    asym: Asymmetry,
    N: int,
    T: float,
    p: float,
    batch: int,
    master_seed: int,
    dt: float = 2e-3,
    u0: float = 0.0,
) -> ValueWithSE:
    """Measured-over-envelope ratio for the time-averaged linear functional.

    LHS: Monte Carlo estimate of E[ sup_{t<=T} | int_0^t V_a(eta^N_s) ds |^p ]
    started from the canonical ensemble at mean u0, with the running sup
    tracked on the micro grid.  RHS: N^{-p} T^{(p-2)/2} * T * Gamma^{p/2}
    with Gamma the (constant) carre du champ of the Poisson preimage of
    V_a, computed exactly.  Requires the quadratic potential and p >= 2.
    """
    if p < 2:
        raise InvalidArgumentError("p >= 2 required")
    if not pot.is_quadratic:
        raise InvalidArgumentError("exact envelope needs the quadratic potential")
    if not isinstance(a, LinearFunctional):
        a = LinearFunctional(np.asarray(a, dtype=float))
    if a.n != N:
        raise InvalidArgumentError("coefficient length must equal N")
    if not np.any(a.coeffs):
        return ValueWithSE(0.0, 0.0, {"lhs": 0.0, "rhs": 0.0})
    b = poisson_solve_linear(a)
    gamma_const = float(np.sum((b.coeffs - np.roll(b.coeffs, 1)) ** 2))
    rhs = N ** (-p) * T ** ((p - 2) / 2.0) * T * gamma_const ** (p / 2.0)

    rng = np.random.default_rng([master_seed, 10_000_019])
    states = sample_canonical(pot, N, u0, rng, size=batch)
    coeffs = a.coeffs

    sup = np.zeros(batch)
    integral = np.zeros(batch)
    prev = {"va": states @ coeffs}
    dt_diff = dt / (N * N)

    def observer(step, t_micro, s):
        if step == 0:
            return
        va = s @ coeffs
        np.add(integral, 0.5 * dt_diff * (prev["va"] + va), out=integral)
        np.maximum(sup, np.abs(integral), out=sup)
        prev["va"] = va

    n_steps = int(round(T * N * N / dt))
    engine = BatchIntegrator(states, pot, asym, dt, master_seed)
    engine.run(n_steps, observer=observer, observe_every=1)
    powers = sup**p
    lhs = float(powers.mean())
    se = float(powers.std(ddof=1) / np.sqrt(batch))
    return ValueWithSE(
        lhs / rhs,
        se / rhs,
        {"lhs": lhs, "rhs": rhs, "gamma": gamma_const, "n_steps": n_steps,
         "sup_grid": "micro"},
    )
