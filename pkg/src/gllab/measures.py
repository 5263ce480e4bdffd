"""Tilted single-site measures, product ensembles and mean-constrained
canonical sampling.

The single-site measure with tilt lam has density exp(-V(z) + lam*z) up to
normalization; its mean u(lam) is strictly increasing, so target means are
reached by Newton inversion.  Conditioning the product measure on the
empirical mean gives the canonical family, sampled exactly for the
quadratic potential and by pair-exchange Metropolis otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .errors import (
    EnvelopeViolationError,
    InvalidArgumentError,
    MixingWarning,
    NumericFailureError,
)
from .model import Potential

LAMBDA_RANGE = 20.0  # quadrature-stable tilt window


class ValueWithSE(float):
    """A float carrying a Monte Carlo standard error in .se."""

    def __new__(cls, value, se=0.0, meta=None):
        obj = super().__new__(cls, value)
        obj.se = float(se)
        obj.meta = meta or {}
        return obj


def _tilt_mode(pot: Potential, lam: float) -> float:
    """Argmin of V(z) - lam*z, i.e. the root of V'(z) = lam."""
    d0 = float(pot.dv(0.0))
    gap = lam - d0
    # V' grows at rate between c_minus and c_plus, giving a hard bracket
    lo = min(gap / pot.c_minus, gap / pot.c_plus) - 1e-9
    hi = max(gap / pot.c_minus, gap / pot.c_plus) + 1e-9
    try:
        return float(optimize.brentq(lambda z: float(pot.dv(z)) - lam, lo, hi, xtol=1e-14))
    except ValueError as err:
        raise NumericFailureError(f"mode search failed for lam={lam}: {err}") from None


def _shifted_quad(pot: Potential, lam: float, weight=None):
    """Integral of weight(z)*exp(-V(z)+lam*z-g*), g* the max of the exponent."""
    mode = _tilt_mode(pot, lam)
    gstar = -float(pot.v(mode)) + lam * mode
    width = 1.0 / np.sqrt(pot.c_minus)

    def integrand(z):
        val = np.exp(-pot.v(z) + lam * z - gstar)
        return val if weight is None else val * weight(z)

    out, err = integrate.quad(
        integrand,
        mode - 40 * width,
        mode + 40 * width,
        epsabs=1e-13,
        epsrel=1e-12,
        limit=200,
    )
    if not np.isfinite(out):
        raise NumericFailureError(f"quadrature failed for lam={lam}")
    return out, gstar


def partition_1d(pot: Potential, lam: float) -> float:
    """Normalization of the tilted site measure, relative error <= 1e-10."""
    out, gstar = _shifted_quad(pot, lam)
    return float(out * np.exp(gstar))


def mean_u(pot: Potential, lam: float) -> float:
    """Mean of the tilted site measure at tilt lam."""
    mode = _tilt_mode(pot, lam)
    z0, _ = _shifted_quad(pot, lam)
    z1, _ = _shifted_quad(pot, lam, weight=lambda z: z - mode)
    return float(mode + z1 / z0)


def _tilted_variance(pot: Potential, lam: float) -> float:
    mu = mean_u(pot, lam)
    z0, _ = _shifted_quad(pot, lam)
    z2, _ = _shifted_quad(pot, lam, weight=lambda z: (z - mu) ** 2)
    return float(z2 / z0)


def lambda_of_u(pot: Potential, u: float) -> float:
    """Invert the mean map by Newton; |mean(result) - u| <= 1e-10."""
    if pot.is_quadratic:
        return float(u)
    lam = float(u)  # exact for the quadratic case, good start generally
    for _ in range(50):
        resid = mean_u(pot, lam) - u
        if abs(resid) <= 1e-10:
            return lam
        lam -= resid / _tilted_variance(pot, lam)
        if abs(lam) > LAMBDA_RANGE:
            raise NumericFailureError(f"tilt left stable range for u={u}")
    raise NumericFailureError(f"Newton did not reach u={u} in 50 iterations")


def variance(pot: Potential, u: float) -> float:
    """Single-site variance at mean u (evaluated at the matching tilt)."""
    if pot.is_quadratic:
        return 1.0
    return _tilted_variance(pot, lambda_of_u(pot, u))


@dataclass(frozen=True)
class TiltedSite:
    """Single-site measure exp(-V+lam*z)/Z with its cached normalization."""

    pot: Potential
    lam: float
    z: float = field(init=False)

    def __post_init__(self):
        z = partition_1d(self.pot, self.lam)
        if not (np.isfinite(z) and z > 0):
            raise NumericFailureError("normalization is not finite")
        object.__setattr__(self, "z", z)

    def logdensity(self, x):
        return -self.pot.v(x) + self.lam * x - np.log(self.z)


@dataclass(frozen=True)
class EnsembleParams:
    """Mean-parametrized description of the single-site ensemble."""

    u: float
    lam: float
    var: float

    @classmethod
    def at_mean(cls, pot: Potential, u: float) -> "EnsembleParams":
        lam = lambda_of_u(pot, u)
        return cls(u=float(u), lam=lam, var=variance(pot, u))


def rejection_sample(tilted: TiltedSite, size: int, rng) -> tuple[np.ndarray, float]:
    """Exact draws via a Gaussian envelope at the curvature lower bound.

    Returns (samples, measured acceptance rate).  The envelope inequality
    exp(-(V - lam z - g*)) <= exp(-c_minus (z - mode)^2 / 2) is asserted at
    runtime; a violation means the potential bounds are wrong.
    """
    pot, lam = tilted.pot, tilted.lam
    mode = _tilt_mode(pot, lam)
    gmode = float(pot.v(mode)) - lam * mode
    scale = 1.0 / np.sqrt(pot.c_minus)
    out = np.empty(size)
    filled = 0
    proposed = 0
    accepted_total = 0
    while filled < size:
        chunk = max(64, int(1.3 * (size - filled) * np.sqrt(pot.c_plus / pot.c_minus)))
        z = mode + scale * rng.standard_normal(chunk)
        log_accept = -(np.asarray(pot.v(z)) - lam * z - gmode) + 0.5 * pot.c_minus * (
            z - mode
        ) ** 2
        if np.any(log_accept > 1e-9):
            raise EnvelopeViolationError(
                "tilted density exceeded its rejection envelope; "
                "check c_minus against the actual curvature"
            )
        accept = np.log(rng.uniform(size=chunk)) < log_accept
        n_acc = int(accept.sum())
        take = min(n_acc, size - filled)
        out[filled : filled + take] = z[accept][:take]
        filled += take
        proposed += chunk
        accepted_total += n_acc
    return out, accepted_total / proposed


def sample_site(tilted: TiltedSite, rng) -> float:
    """One exact draw from the tilted site measure."""
    return float(rejection_sample(tilted, 1, rng)[0][0])


def sample_grand_canonical(pot: Potential, u: float, n: int, rng) -> np.ndarray:
    """n independent draws from the mean-u site measure."""
    if pot.is_quadratic:
        return u + rng.standard_normal(n)
    tilted = TiltedSite(pot, lambda_of_u(pot, u))
    return rejection_sample(tilted, n, rng)[0]


# ----------------------------------------------------------------------
# canonical (mean-constrained) sampling


@dataclass
class CanonicalOptions:
    burn_sweeps: int = 50
    proposal_scale: float | None = None
    target_accept: tuple = (0.3, 0.5)
    calibration_sweeps: int = 200
    ess_threshold: float = 20.0


@dataclass
class CanonicalInfo:
    acceptance_rate: float = float("nan")
    proposal_scale: float = float("nan")
    autocorr_time: float = 1.0
    thin: int = 1
    ess: float = float("inf")
    exact: bool = False

    def as_dict(self):
        def clean(x):
            if isinstance(x, float) and not np.isfinite(x):
                return None
            return x

        return {
            "acceptance_rate": clean(self.acceptance_rate),
            "proposal_scale": clean(self.proposal_scale),
            "autocorr_time": clean(self.autocorr_time),
            "thin": self.thin,
            "ess": clean(self.ess),
            "exact": self.exact,
        }


def _integrated_autocorr(series: np.ndarray) -> float:
    """Initial-positive-sequence estimate of the integrated autocorrelation."""
    x = series - series.mean()
    n = x.size
    if n < 8 or np.allclose(x, 0):
        return 1.0
    acf = np.correlate(x, x, mode="full")[n - 1 :]
    acf = acf / acf[0]
    tau = 1.0
    for k in range(1, min(n // 4, 200)):
        if acf[k] <= 0:
            break
        tau += 2.0 * acf[k]
    return max(1.0, float(tau))


class CanonicalSampler:
    """Sampler for the mean-constrained product measure on n sites.

    Quadratic potential: exact (i.i.d. Gaussians recentred to the target
    mean).  Otherwise pair-exchange Metropolis, which conserves the mean by
    construction: propose (x, y) -> (x + d, y - d) and accept with the
    Gibbs ratio.  The proposal scale is tuned to the target acceptance
    window during burn-in and then frozen.
    """

    def __init__(self, pot: Potential, n: int, m: float, rng, opts: CanonicalOptions | None = None):
        if n < 2:
            raise InvalidArgumentError("canonical sampling needs n >= 2")
        self.pot = pot
        self.n = int(n)
        self.m = float(m)
        self.rng = rng
        self.opts = opts or CanonicalOptions()
        self.info = CanonicalInfo(exact=pot.is_quadratic)
        if not pot.is_quadratic:
            self._init_chain()

    # -- exact path ---------------------------------------------------------

    def _draw_exact(self, count):
        z = self.rng.standard_normal((count, self.n))
        z += self.m - z.mean(axis=1, keepdims=True)
        return z

    # -- Metropolis path ----------------------------------------------------

    def _init_chain(self):
        o = self.opts
        start = sample_grand_canonical(self.pot, self.m, self.n, self.rng)
        self.state = start + (self.m - start.mean())
        scale = o.proposal_scale or 1.0 / np.sqrt(self.pot.c_plus)
        lo, hi = o.target_accept
        for _ in range(o.burn_sweeps):
            rate = self._sweep(scale)
            if rate < lo:
                scale *= 0.8
            elif rate > hi:
                scale *= 1.25
        self.info.proposal_scale = scale
        series = np.empty(o.calibration_sweeps)
        acc = 0.0
        for i in range(o.calibration_sweeps):
            acc += self._sweep(scale)
            series[i] = float(np.sum(self.pot.v(self.state)))
        self.info.acceptance_rate = acc / o.calibration_sweeps
        tau = _integrated_autocorr(series)
        self.info.autocorr_time = tau
        self.info.thin = max(1, int(np.ceil(tau)))
        self.info.ess = o.calibration_sweeps / tau
        if self.info.ess < o.ess_threshold:
            warnings.warn(
                f"canonical chain ESS {self.info.ess:.1f} below threshold "
                f"{o.ess_threshold}; draws may be correlated",
                MixingWarning,
                stacklevel=3,
            )

    def _sweep(self, scale) -> float:
        """n pair-exchange proposals; returns the acceptance fraction."""
        n = self.n
        i = self.rng.integers(0, n, size=n)
        j = self.rng.integers(0, n, size=n)
        d = scale * self.rng.standard_normal(n)
        logu = np.log(self.rng.uniform(size=n))
        state = self.state
        pot = self.pot
        accepted = 0
        for k in range(n):
            a, b = i[k], j[k]
            if a == b:
                continue
            xa, xb = state[a], state[b]
            na, nb = xa + d[k], xb - d[k]
            dh = float(pot.v(na) + pot.v(nb) - pot.v(xa) - pot.v(xb))
            if logu[k] < -dh:
                state[a], state[b] = na, nb
                accepted += 1
        return accepted / n

    # -- public -------------------------------------------------------------

    def draw(self, count: int = 1) -> np.ndarray:
        """(count, n) samples with mean exactly m along each row."""
        if self.pot.is_quadratic:
            out = self._draw_exact(count)
        else:
            out = np.empty((count, self.n))
            for k in range(count):
                for _ in range(self.info.thin):
                    self._sweep(self.info.proposal_scale)
                out[k] = self.state
        out += self.m - out.mean(axis=1, keepdims=True)
        return out


def sample_canonical(pot: Potential, n: int, m: float, rng, opts=None, size=None):
    """Draw from the canonical measure; a single field or a (size, n) batch."""
    sampler = CanonicalSampler(pot, n, m, rng, opts)
    out = sampler.draw(1 if size is None else size)
    return out[0] if size is None else out


# ----------------------------------------------------------------------
# ensemble averages and their mean-derivatives


def _hermite_rule(pot: Potential, lam: float, n: int):
    """Self-normalizing nodes/weights for the tilted site measure."""
    mode = _tilt_mode(pot, lam)
    scale = 1.0 / np.sqrt(float(pot.ddv(mode)))
    t, w = np.polynomial.hermite_e.hermegauss(n)
    z = mode + scale * t
    logw = np.log(w) + (-np.asarray(pot.v(z)) + lam * z) + 0.5 * t * t
    logw -= logw.max()
    wz = np.exp(logw)
    return z, wz / wz.sum()


QUADRATURE_DIM_CAP = 3


def ensemble_avg(f, pot: Potential, u: float, n_mc: int = 200_000, rng=None, method=None):
    """Product-ensemble average of a windowed observable at mean u.

    Windows of up to QUADRATURE_DIM_CAP coordinates go through tensorized
    Gauss-Hermite quadrature with one refinement (relative error target
    1e-8); larger windows fall back to Monte Carlo with a reported SE.
    """
    k = f.size
    if method is None:
        method = "quadrature" if k <= QUADRATURE_DIM_CAP else "mc"
    lam = lambda_of_u(pot, u)
    if method == "quadrature":
        if k > QUADRATURE_DIM_CAP:
            raise InvalidArgumentError(
                f"window of {k} coordinates exceeds the quadrature cap"
            )
        prev = None
        for n_nodes in (48, 72, 108):
            z, w = _hermite_rule(pot, lam, n_nodes)
            grids = np.meshgrid(*([z] * k), indexing="ij")
            windows = np.stack([g.ravel() for g in grids], axis=-1)
            wmesh = np.meshgrid(*([w] * k), indexing="ij")
            wgt = np.ones(windows.shape[0])
            for g in wmesh:
                wgt *= g.ravel()
            vals = f.value_windows(windows)
            est = float(np.dot(wgt, vals))
            if prev is not None and abs(est - prev) <= 1e-8 * max(1.0, abs(est)):
                return ValueWithSE(est, 0.0, {"method": "quadrature", "nodes": n_nodes})
            prev = est
        raise NumericFailureError("tensor quadrature did not stabilize at 1e-8")
    rng = np.random.default_rng(rng)
    draws = sample_grand_canonical(pot, u, n_mc * k, rng).reshape(n_mc, k)
    vals = f.value_windows(draws)
    se = float(vals.std(ddof=1) / np.sqrt(n_mc))
    return ValueWithSE(float(vals.mean()), se, {"method": "mc", "n": n_mc})


def tilde_derivs(f, pot: Potential, u0: float, **kwargs):
    """Ensemble average and its first two mean-derivatives at u0.

    Central differences with step h = 1e-3 * max(1, |u0|), Richardson
    extrapolated once.
    """
    h = 1e-3 * max(1.0, abs(u0))

    def a(u):
        return float(ensemble_avg(f, pot, u, **kwargs))

    a0 = a(u0)
    ap, am = a(u0 + h), a(u0 - h)
    ap2, am2 = a(u0 + h / 2), a(u0 - h / 2)
    d1_h = (ap - am) / (2 * h)
    d1_h2 = (ap2 - am2) / h
    d2_h = (ap - 2 * a0 + am) / (h * h)
    d2_h2 = (ap2 - 2 * a0 + am2) / (h * h / 4)
    return (
        a0,
        float((4 * d1_h2 - d1_h) / 3),
        float((4 * d2_h2 - d2_h) / 3),
    )
