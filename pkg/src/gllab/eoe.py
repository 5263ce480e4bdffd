"""Conditional expectations given block averages and the
equivalence-of-ensembles residual norms with their scaling exponents.

For the quadratic potential everything is Gaussian: conditioned on the
block average m, the block sites are jointly normal with mean m, variance
1 - 1/(2*ell) and pairwise covariance -1/(2*ell), and the block average
itself is N(u0, var/(2*ell)).  The Monte Carlo path reproduces the same
quantities through canonical sampling on an m-grid and works for any
convex potential.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidCurveError, InvalidObservableError
from .measures import (
    CanonicalSampler,
    ValueWithSE,
    sample_grand_canonical,
    tilde_derivs,
    variance,
)
from .model import Potential
from .observables import Observable

_QUADRATIC = Potential.quadratic()


class GaussianCondExp:
    """E[f | block average = m] for the quadratic potential, any local f.

    Evaluates by Gauss-Hermite quadrature over the conditional Gaussian of
    the f-window (exact for polynomial f); vectorized over m.
    """

    def __init__(self, f: Observable, ell: int, nodes: int = 24):
        if not f.fits_block(ell):
            raise InvalidArgumentError("observable window leaves the block")
        self.f = f
        self.ell = int(ell)
        k = f.size
        cov = np.full((k, k), -1.0 / (2 * ell))
        np.fill_diagonal(cov, 1.0 - 1.0 / (2 * ell))
        chol = np.linalg.cholesky(cov)
        t, w = np.polynomial.hermite_e.hermegauss(nodes)
        grids = np.meshgrid(*([t] * k), indexing="ij")
        tt = np.stack([g.ravel() for g in grids], axis=-1)  # (nodes^k, k)
        wgt = np.ones(tt.shape[0])
        for g in np.meshgrid(*([w] * k), indexing="ij"):
            wgt *= g.ravel()
        self._offsets = tt @ chol.T
        self._weights = wgt / wgt.sum()

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        flat = m.reshape(-1)
        out = np.empty(flat.size)
        # chunk the (m, node) product to bound memory
        step = max(1, int(2_000_000 / max(1, self._offsets.shape[0])))
        for lo in range(0, flat.size, step):
            hi = min(flat.size, lo + step)
            wins = flat[lo:hi, None, None] + self._offsets[None, :, :]
            vals = self.f.value_windows(wins.reshape(-1, self.f.size))
            vals = vals.reshape(hi - lo, -1)
            out[lo:hi] = vals @ self._weights
        return out.reshape(m.shape) if m.shape else float(out[0])


@dataclass
class TabulatedCondExp:
    """Monte Carlo conditional expectation on an m-grid, linearly
    interpolated between grid points."""

    grid: np.ndarray
    values: np.ndarray
    se: np.ndarray
    meta: dict = field(default_factory=dict)

    def __call__(self, m):
        return np.interp(np.asarray(m, dtype=float), self.grid, self.values)


def default_m_grid(u0: float, ell: int, var: float = 1.0, points: int = 33) -> np.ndarray:
    """Grid spanning u0 +- 5 standard deviations of the block average."""
    half = 5.0 * np.sqrt(var / (2 * ell))
    return np.linspace(u0 - half, u0 + half, points)


def cond_exp(
    f: Observable,
    ell: int,
    u0: float = 0.0,
    m_grid=None,
    method: str = "analytic",
    rng=None,
    pot: Potential | None = None,
    n_per_point: int = 20_000,
):
    """Conditional expectation function m -> E[f | block average = m].

    The conditioning identity makes this the canonical expectation on the
    2*ell block at mean m, which is how the Monte Carlo path computes it.
    """
    pot = pot or _QUADRATIC
    if not f.fits_block(ell):
        raise InvalidArgumentError("observable window leaves the block")
    if method == "analytic":
        if not pot.is_quadratic:
            raise InvalidArgumentError("analytic conditioning needs the quadratic potential")
        return GaussianCondExp(f, ell)
    if method != "mc":
        raise InvalidArgumentError(f"unknown method {method!r}")
    rng = np.random.default_rng(rng)
    grid = default_m_grid(u0, ell, variance(pot, u0)) if m_grid is None else np.asarray(m_grid)
    pos = f.offsets + ell
    values = np.empty(grid.size)
    se = np.empty(grid.size)
    for i, m in enumerate(grid):
        fields = CanonicalSampler(pot, 2 * ell, float(m), rng).draw(n_per_point)
        vals = f.value_windows(fields[:, pos])
        values[i] = vals.mean()
        se[i] = vals.std(ddof=1) / np.sqrt(n_per_point)
    return TabulatedCondExp(grid, values, se, {"n_per_point": n_per_point, "ell": ell})


class ResidualNorm(float):
    """L^p residual norm carrying its standard error and method tag."""

    def __new__(cls, value, se=0.0, method="analytic"):
        obj = super().__new__(cls, value)
        obj.se = float(se)
        obj.method = method
        return obj


def _block_mean_weights(u0, ell, var):
    """Gauss-Hermite nodes/weights for the block-average law (quadratic)."""
    t, w = np.polynomial.hermite_e.hermegauss(160)
    sd = np.sqrt(var / (2 * ell))
    return u0 + sd * t, w / w.sum()


def _residual_norm(
    f, ell, u0, p, order, rng, method, pot, n_per_point
):
    pot = pot or _QUADRATIC
    var = variance(pot, u0)
    if pot.is_quadratic and getattr(f, "tilde_quadratic", None) is not None:
        a0, a1, a2 = f.tilde_quadratic(u0)
    else:
        a0, a1, a2 = tilde_derivs(f, pot, u0)
    if abs(a0) > 1e-6 or (order == 2 and abs(a1) > 1e-6):
        raise InvalidObservableError(
            f"vanishing conditions fail at u0={u0}: mean={a0:.2e} slope={a1:.2e}"
        )

    if order == 2:
        def model(m):
            return 0.5 * a2 * ((m - u0) ** 2 - var / (2 * ell + 1))
    else:
        def model(m):
            return a1 * (m - u0)

    if method == "analytic":
        g = cond_exp(f, ell, u0, method="analytic", pot=pot)
        nodes, weights = _block_mean_weights(u0, ell, var)
        r = g(nodes) - model(nodes)
        norm = float(np.dot(weights, np.abs(r) ** p) ** (1.0 / p))
        return ResidualNorm(norm, 0.0, "analytic")

    rng = np.random.default_rng(rng)
    grid = default_m_grid(u0, ell, var)
    tab = cond_exp(f, ell, u0, m_grid=grid, method="mc", rng=rng, pot=pot,
                   n_per_point=n_per_point)
    r = tab.values - model(grid)
    if pot.is_quadratic:
        sd = np.sqrt(var / (2 * ell))
        dens = np.exp(-0.5 * ((grid - u0) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    else:
        blocks = 50_000
        means = sample_grand_canonical(pot, u0, blocks * 2 * ell, rng)
        means = means.reshape(blocks, 2 * ell).mean(axis=1)
        # Gaussian-kernel density estimate of the block-average law
        bw = 1.06 * means.std() * blocks ** (-0.2)
        dens = np.exp(
            -0.5 * ((grid[:, None] - means[None, :]) / bw) ** 2
        ).mean(axis=1) / (bw * np.sqrt(2 * np.pi))
    w = dens / np.trapezoid(dens, grid)
    if p == 2:
        # unbiased second moment: subtract the sampling variance of each r_j
        sq = np.clip(r**2 - tab.se**2, 0.0, None)
        norm_p = float(np.trapezoid(w * sq, grid))
        var_term = np.trapezoid(w * (2 * np.abs(r) * tab.se) ** 2, grid)
    else:
        norm_p = float(np.trapezoid(w * np.abs(r) ** p, grid))
        var_term = np.trapezoid(w * (p * np.abs(r) ** (p - 1) * tab.se) ** 2, grid)
    norm_p = max(norm_p, 1e-300)
    norm = norm_p ** (1.0 / p)
    se = norm ** (1 - p) / p * np.sqrt(float(var_term))
    return ResidualNorm(norm, se, "mc")


def eoe_residual_second(f, ell, u0, p, rng=None, method="analytic", pot=None,
                        n_per_point=20_000):
    """L^p norm of E[f | block avg] minus its second-order replacement
    0.5 * f''(u0) * ((m - u0)^2 - var/(2*ell+1)) under the block-average
    law.  Requires the ensemble mean and slope of f to vanish at u0."""
    return _residual_norm(f, ell, u0, p, 2, rng, method, pot, n_per_point)


def eoe_residual_first(f, ell, u0, p, rng=None, method="analytic", pot=None,
                       n_per_point=20_000):
    """L^p norm of E[f | block avg] minus the linear replacement
    f'(u0) * (m - u0); requires only the vanishing ensemble mean."""
    return _residual_norm(f, ell, u0, p, 1, rng, method, pot, n_per_point)


@dataclass
class EoECurve:
    """Residual norms over a ladder of block sizes."""

    ells: np.ndarray
    norms: np.ndarray
    stderrs: np.ndarray
    p: float
    order: int
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ells = np.asarray(self.ells, dtype=float)
        self.norms = np.asarray(self.norms, dtype=float)
        self.stderrs = np.asarray(self.stderrs, dtype=float)
        if self.ells.size and np.any(np.diff(self.ells) <= 0):
            raise InvalidCurveError("block sizes must be strictly increasing")
        if np.any(self.norms < 0):
            raise InvalidCurveError("norms must be nonnegative")

    def rows(self):
        for ell, nrm, se in zip(self.ells, self.norms, self.stderrs):
            yield (int(ell), nrm, se, self.method)


def residual_curve(f, ells, u0, p, order=2, method="analytic", rng=None, pot=None,
                   n_per_point=20_000) -> EoECurve:
    fn = eoe_residual_second if order == 2 else eoe_residual_first
    norms, ses = [], []
    for ell in ells:
        r = fn(f, int(ell), u0, p, rng=rng, method=method, pot=pot,
               n_per_point=n_per_point)
        norms.append(float(r))
        ses.append(r.se)
    return EoECurve(np.asarray(ells, float), np.asarray(norms), np.asarray(ses),
                    p=p, order=order, method=method)


def scaling_exponent(curve: EoECurve):
    """Least-squares slope of log norm against log ell, with its SE."""
    if curve.ells.size < 4:
        raise InvalidCurveError("need at least 4 points to fit an exponent")
    if np.any(curve.norms <= 0):
        raise InvalidCurveError("nonpositive norms cannot be fit on a log scale")
    x = np.log(curve.ells)
    y = np.log(curve.norms)
    n = x.size
    xc = x - x.mean()
    slope = float(np.dot(xc, y) / np.dot(xc, xc))
    resid = y - (y.mean() + slope * xc)
    dof = max(n - 2, 1)
    se = float(np.sqrt(np.dot(resid, resid) / dof / np.dot(xc, xc)))
    return slope, se


@dataclass
class BlockCLTReport:
    ells: np.ndarray
    scaled_norms: np.ndarray     # ||blockavg - u0||_p * sqrt(ell)
    fourth_moment_ratios: np.ndarray
    stability: float             # max/min of the scaled norms

    @property
    def stable(self) -> bool:
        return self.stability < 2.0


def clt_block_check(u0, ells, p, samples=200_000, rng=None, pot=None) -> BlockCLTReport:
    """Scaled block-average norms across block sizes.

    For the quadratic potential at p=2 the norm is exactly 1/sqrt(2*ell);
    otherwise estimated from independent block draws.  Also reports the
    fourth-moment ratio against the Gaussian value 3.
    """
    pot = pot or _QUADRATIC
    rng = np.random.default_rng(rng)
    scaled, ratios = [], []
    for ell in ells:
        n = 2 * int(ell)
        if pot.is_quadratic and p == 2:
            norm = 1.0 / np.sqrt(n)
            draws = u0 + rng.standard_normal((samples // 4, n)).mean(axis=1)
        else:
            draws = sample_grand_canonical(pot, u0, samples * n, rng).reshape(samples, n)
            draws = draws.mean(axis=1)
            norm = float(np.mean(np.abs(draws - u0) ** p) ** (1.0 / p))
        centered = draws - u0
        m2 = np.mean(centered**2)
        ratios.append(float(np.mean(centered**4) / m2**2))
        scaled.append(norm * np.sqrt(ell))
    scaled = np.asarray(scaled)
    return BlockCLTReport(
        ells=np.asarray(ells, float),
        scaled_norms=scaled,
        fourth_moment_ratios=np.asarray(ratios),
        stability=float(scaled.max() / scaled.min()),
    )
