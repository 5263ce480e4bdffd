"""End-to-end space-time replacement experiments.

A run draws R stationary trajectories, accumulates the running integral
I(t) = int_0^t sum_x h(s,x) r_s(x) ds of a weighted residual field on the
snapshot grid (trapezoid; sup over the same grid, as recorded in the
metadata), and reports the p-th moment of sup |I| with bootstrap errors
next to the two-branch theoretical envelopes.  Residual fields implement
the first- and second-order replacements of a local observable by
polynomials of its block average, plus the one-block / two-blocks /
dyadic-iteration diagnostics.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import BatchIntegrator
from .eoe import GaussianCondExp, cond_exp
from .errors import InvalidArgumentError, InvalidObservableError
from .measures import ValueWithSE, ensemble_avg, tilde_derivs, variance
from .model import Asymmetry, Potential, block_average_all
from .observables import Observable, make_observable

# ----------------------------------------------------------------------
# configuration


@dataclass
class HSpec:
    """Space-time weight h(s, x); kinds: constant, sinusoidal, tabulated.

    Sinusoidal: amplitude * sin(2*pi*space_periods*x/N + time_freq*s) with
    x the 0-based site position.  Tabulated: explicit (snapshot, site)
    array.
    """

    kind: str = "constant"
    amplitude: float = 1.0
    space_periods: int = 1
    time_freq: float = 0.0
    table: list | None = None

    def row(self, t: float, n: int, snap_index: int = 0) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, self.amplitude)
        if self.kind == "sinusoidal":
            x = np.arange(n)
            return self.amplitude * np.sin(
                2.0 * np.pi * self.space_periods * x / n + self.time_freq * t
            )
        if self.kind == "tabulated":
            return np.asarray(self.table[snap_index], dtype=float)
        raise InvalidArgumentError(f"unknown h kind {self.kind!r}")


@dataclass
class BGConfig:
    """Experiment sizing; every numeric default is overridable from JSON."""

    N: int = 128
    ells: tuple = (4, 8, 16)
    ell0: int = 2
    T: float = 0.5
    p: float = 4.0
    p_prime: float = 6.0
    gamma: float = 0.0
    u0: float = 0.0
    observable: str = "pair"
    h: HSpec = field(default_factory=HSpec)
    R: int = 500
    master_seed: int = 20240801
    dt: float = 0.05
    snapshot_dt: float = 0.01
    potential: str = "quadratic"
    scan_N: tuple = (64, 128, 256)
    scan_R: int = 256
    scan_T: float = 0.1

    def __post_init__(self):
        if self.T <= 0:
            raise InvalidArgumentError("T must be positive")
        if self.p < 4:
            raise InvalidArgumentError("moment order p >= 4 required")
        if self.p_prime <= self.p:
            raise InvalidArgumentError("p_prime must exceed p")
        if 2 * max(self.ells) > self.N:
            raise InvalidArgumentError("largest block does not fit on the torus")
        if min(self.ells) < self.ell0:
            raise InvalidArgumentError("blocks must be at least ell0")

    def make_potential(self) -> Potential:
        if self.potential == "quadratic":
            return Potential.quadratic()
        if self.potential.startswith("quadratic_cosine"):
            eps = float(self.potential.split(":")[1]) if ":" in self.potential else 0.1
            return Potential.quadratic_cosine(eps)
        raise InvalidArgumentError(f"unknown potential {self.potential!r}")

    def to_json(self) -> str:
        d = asdict(self)
        d["ells"] = list(self.ells)
        d["scan_N"] = list(self.scan_N)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BGConfig":
        d = json.loads(text)
        if "h" in d and isinstance(d["h"], dict):
            d["h"] = HSpec(**d["h"])
        for key in ("ells", "scan_N"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


# ----------------------------------------------------------------------
# residual fields


def residual_second_all(states, ell, u0, fdd, var, f: Observable) -> np.ndarray:
    """Second-order replacement residual at every site, batched (R, N)."""
    avg = block_average_all(states, ell)
    return f.value_tau(states) - 0.5 * fdd * (
        (avg - u0) ** 2 - var / (2.0 * ell + 1.0)
    )


def residual_first_all(states, ell, u0, fd, f: Observable) -> np.ndarray:
    """First-order replacement residual at every site, batched (R, N)."""
    avg = block_average_all(states, ell)
    return f.value_tau(states) - fd * (avg - u0)


def residual_field_second(eta, x: int, ell: int, coeffs, f: Observable) -> float:
    """Scalar residual at site x; coeffs = (u0, fdd, var)."""
    u0, fdd, var = coeffs
    row = residual_second_all(eta.values[None, :], ell, u0, fdd, var, f)[0]
    return float(row[(int(x) - 1) % eta.N])


def residual_field_first(eta, x: int, ell: int, coeffs, f: Observable) -> float:
    """Scalar residual at site x; coeffs = (u0, fd)."""
    u0, fd = coeffs
    row = residual_first_all(eta.values[None, :], ell, u0, fd, f)[0]
    return float(row[(int(x) - 1) % eta.N])


def _tilde_coeffs(f: Observable, pot: Potential, u0: float):
    if pot.is_quadratic and getattr(f, "tilde_quadratic", None) is not None:
        return f.tilde_quadratic(u0)
    return tilde_derivs(f, pot, u0)


def _cond_exp_fn(f: Observable, ell: int, u0: float, pot: Potential, seed: int = 0):
    """Vectorized m -> E[f | block average = m], closed form when known."""
    if pot.is_quadratic:
        if f.name.startswith(("pair", "square")):
            def g(m):
                return (np.asarray(m) - u0) ** 2 - 1.0 / (2.0 * ell)
            return g
        if f.name.startswith("site"):
            def g(m):
                return np.asarray(m) - u0
            return g
        return GaussianCondExp(f, ell)
    return cond_exp(f, ell, u0, method="mc", pot=pot,
                    rng=np.random.default_rng([seed, ell]))


# ----------------------------------------------------------------------
# results


@dataclass
class BGResult:
    order: int
    ells: np.ndarray
    moments: np.ndarray        # E[sup_t |I|^p]
    roots: np.ndarray          # moments^(1/p)
    root_ses: np.ndarray       # bootstrap SE of the roots
    envelope_rise: np.ndarray
    envelope_fall: np.ndarray
    envelope_scale: float      # ||f||_{p'}^p * int (1/N) sum |h|^p dt
    meta: dict = field(default_factory=dict)

    def envelope_total(self) -> np.ndarray:
        return (self.envelope_rise + self.envelope_fall) * self.envelope_scale

    def rows(self):
        for i, ell in enumerate(self.ells):
            yield (
                int(ell),
                self.moments[i],
                self.roots[i],
                self.root_ses[i],
                self.envelope_rise[i] * self.envelope_scale,
                self.envelope_fall[i] * self.envelope_scale,
            )

    def to_json(self) -> str:
        return json.dumps(
            {
                "order": self.order,
                "ells": [int(e) for e in self.ells],
                "moments": list(map(float, self.moments)),
                "roots": list(map(float, self.roots)),
                "root_ses": list(map(float, self.root_ses)),
                "envelope_rise": list(map(float, self.envelope_rise)),
                "envelope_fall": list(map(float, self.envelope_fall)),
                "envelope_scale": self.envelope_scale,
                "meta": self.meta,
            },
            sort_keys=True,
        )


def _bootstrap_root_se(sups: np.ndarray, p: float, n_boot: int = 400, seed: int = 0):
    rng = np.random.default_rng(seed)
    r = sups.shape[0]
    idx = rng.integers(0, r, size=(n_boot, r))
    boots = np.mean(sups[idx] ** p, axis=1) ** (1.0 / p)
    return float(boots.std(ddof=1))


class _SupIntegralAccumulator:
    """Trapezoid running integrals and their sups for several integrand
    families evaluated on the snapshot grid.

    ``compute`` maps states (R, N) to a dict of (R,) integrand values; one
    call per snapshot lets the families share block averages.
    """

    def __init__(self, compute, keys, R: int):
        self.compute = compute
        self.keys = list(keys)
        self.integral = {k: np.zeros(R) for k in self.keys}
        self.sup = {k: np.zeros(R) for k in self.keys}
        self._prev = {}
        self._prev_t = None

    def observe(self, t_diff: float, states: np.ndarray):
        vals = self.compute(states)
        if self._prev_t is not None:
            dt = t_diff - self._prev_t
            for k in self.keys:
                self.integral[k] += 0.5 * dt * (self._prev[k] + vals[k])
                np.maximum(self.sup[k], np.abs(self.integral[k]), out=self.sup[k])
        self._prev = vals
        self._prev_t = t_diff


def _h_time_integral(config: BGConfig, n_snaps: int) -> float:
    """int_0^T (1/N) sum_x |h(t,x)|^p dt on the snapshot grid."""
    ts = np.linspace(0.0, config.T, n_snaps + 1)
    vals = [
        float(np.mean(np.abs(config.h.row(t, config.N, j)) ** config.p))
        for j, t in enumerate(ts)
    ]
    return float(np.trapezoid(vals, ts))


def _observable_norm(f: Observable, pot: Potential, u0: float, p_prime: float) -> float:
    class _Power:
        size = f.size

        @staticmethod
        def value_windows(w):
            return np.abs(f.value_windows(w)) ** p_prime

    return float(ensemble_avg(_Power(), pot, u0)) ** (1.0 / p_prime)


def bg_moment_multi(config: BGConfig, orders=(1, 2)) -> dict:
    """Both replacement orders over one shared trajectory batch.

    The residual families for every (order, block size) pair ride on the
    same trajectories and share each snapshot's block averages, so running
    both orders costs barely more than one.  Returns {order: BGResult}.
    """
    orders = tuple(sorted(set(int(o) for o in orders)))
    if any(o not in (1, 2) for o in orders):
        raise InvalidArgumentError("orders must be within {1, 2}")
    pot = config.make_potential()
    f = make_observable(config.observable, config.u0)
    a0, a1, a2 = _tilde_coeffs(f, pot, config.u0)
    if abs(a0) > 1e-6 or (2 in orders and abs(a1) > 1e-6):
        raise InvalidObservableError(
            f"observable fails order-{max(orders)} vanishing conditions: "
            f"mean={a0:.2e} slope={a1:.2e}"
        )
    var = variance(pot, config.u0)
    hrow = _HRow(config.h, config.N)
    u0 = config.u0

    def compute(states):
        h = hrow.current()
        fvals = f.value_tau(states)
        out = {}
        for ell in config.ells:
            avg = block_average_all(states, ell)
            if 2 in orders:
                r2 = fvals - 0.5 * a2 * ((avg - u0) ** 2 - var / (2.0 * ell + 1.0))
                out[(2, ell)] = r2 @ h
            if 1 in orders:
                r1 = fvals - a1 * (avg - u0)
                out[(1, ell)] = r1 @ h
        return out

    keys = [(o, ell) for o in orders for ell in config.ells]
    acc, meta = _run_families_advancing(config, pot, compute, keys, hrow)

    ells = np.asarray(config.ells, dtype=float)
    p = config.p
    fnorm = _observable_norm(f, pot, config.u0, config.p_prime)
    h_int = _h_time_integral(config, meta["snapshots"] - 1)
    meta["observable"] = f.name
    meta["f_norm_p_prime"] = fnorm
    meta["h_integral"] = h_int
    t, n = config.T, config.N
    results = {}
    for order in orders:
        sups = np.stack([acc.sup[(order, ell)] for ell in config.ells])
        moments = (sups**p).mean(axis=1)
        ses = np.array(
            [_bootstrap_root_se(sups[i], p, seed=i) for i in range(len(config.ells))]
        )
        if order == 2:
            rise = t ** ((p - 2) / 2.0) * n ** (-p / 2.0) * ells ** (p / 2.0)
            fall = t ** (p - 1.0) * n**p * ells ** (-1.5 * p)
        else:
            rise = t ** ((p - 2) / 2.0) * n ** (-p / 2.0) * ells**p
            fall = t ** (p - 1.0) * n**p * ells ** (-p)
        results[order] = BGResult(
            order=order,
            ells=ells,
            moments=moments,
            roots=moments ** (1.0 / p),
            root_ses=ses,
            envelope_rise=rise,
            envelope_fall=fall,
            envelope_scale=fnorm**p * h_int,
            meta={**meta, "order": order},
        )
    return results


def bg_moment(config: BGConfig, order: int) -> BGResult:
    """Replacement-residual moment experiment at every block size.

    order 2 subtracts the centered quadratic of the block average, order 1
    the linear term; the observable must satisfy the matching vanishing
    conditions at u0 (certified before the run).
    """
    if order not in (1, 2):
        raise InvalidArgumentError("order must be 1 or 2")
    return bg_moment_multi(config, (order,))[order]


class _HRow:
    """Caches the h row for the snapshot currently being observed."""

    def __init__(self, h: HSpec, n: int):
        self.h = h
        self.n = n
        self.index = 0
        self.t = 0.0
        self._row = h.row(0.0, n, 0)

    def advance(self, t: float):
        self._row = self.h.row(t, self.n, self.index)
        self.index += 1
        self.t = t

    def current(self) -> np.ndarray:
        return self._row


def _run_families_advancing(config, pot, compute, keys, hrow):
    """Integrate R trajectories, ticking the h row once per snapshot and
    feeding the states to the joint integrand evaluator."""
    n, big_r = config.N, config.R
    asym = Asymmetry(config.gamma)
    k_snap = max(1, int(round(config.snapshot_dt * n * n / config.dt)))
    n_snaps = max(1, int(round(config.T * n * n / config.dt / k_snap)))
    n_steps = n_snaps * k_snap
    actual_t = n_steps * config.dt / (n * n)

    init_rngs = [
        np.random.default_rng([config.master_seed, 900_000_000, i])
        for i in range(big_r)
    ]
    if pot.is_quadratic:
        states = np.stack([config.u0 + g.standard_normal(n) for g in init_rngs])
    else:
        from .measures import sample_grand_canonical

        states = np.stack(
            [sample_grand_canonical(pot, config.u0, n, g) for g in init_rngs]
        )

    acc = _SupIntegralAccumulator(compute, keys, big_r)
    scale = 1.0 / (n * n)

    def observer(step, t_micro, s):
        hrow.advance(t_micro * scale)
        acc.observe(t_micro * scale, s)

    engine = BatchIntegrator(states, pot, asym, config.dt, config.master_seed)
    t0 = time.time()
    engine.run(n_steps, observer=observer, observe_every=k_snap)
    meta = {
        "config_hash": config.config_hash,
        "dt": config.dt,
        "snapshot_stride": k_snap,
        "snapshots": n_snaps + 1,
        "actual_T": actual_t,
        "R": big_r,
        "gamma": config.gamma,
        "N": n,
        "sup_grid": "snapshot",
        "integral_rule": "trapezoid-on-snapshots",
        "runtime_s": round(time.time() - t0, 3),
    }
    return acc, meta


# ----------------------------------------------------------------------
# block-replacement diagnostics


@dataclass
class DiagCurve:
    kind: str
    ells: np.ndarray
    moments: np.ndarray
    roots: np.ndarray
    root_ses: np.ndarray
    envelope: np.ndarray
    meta: dict = field(default_factory=dict)


def one_block_diag(config: BGConfig) -> DiagCurve:
    """Moment of the integrated difference between the observable field
    and its block conditional expectation, against the one-block envelope
    N^{-p/2} ell^{3p/2}."""
    pot = config.make_potential()
    f = make_observable(config.observable, config.u0)
    hrow = _HRow(config.h, config.N)
    conds = {ell: _cond_exp_fn(f, ell, config.u0, pot) for ell in config.ells}

    def compute(states):
        h = hrow.current()
        fvals = f.value_tau(states)
        return {
            ell: (fvals - conds[ell](block_average_all(states, ell))) @ h
            for ell in config.ells
        }

    acc, meta = _run_families_advancing(config, pot, compute, config.ells, hrow)
    p = config.p
    ells = np.asarray(config.ells, float)
    sups = np.stack([acc.sup[ell] for ell in config.ells])
    moments = (sups**p).mean(axis=1)
    envelope = (
        config.T ** ((p - 2) / 2.0) * config.N ** (-p / 2.0) * ells ** (1.5 * p)
    )
    ses = np.array([_bootstrap_root_se(sups[i], p, seed=i) for i in range(len(ells))])
    meta["kind"] = "one_block"
    return DiagCurve("one_block", ells, moments, moments ** (1 / p), ses, envelope, meta)


def two_block_diag(config: BGConfig, order: int = 2) -> DiagCurve:
    """Moment of the difference of conditionings at ell0 and ell, against
    N^{-p/2} ell^{p/2} (order-2 conditions) or N^{-p/2} ell^p (order-1)."""
    pot = config.make_potential()
    f = make_observable(config.observable, config.u0)
    hrow = _HRow(config.h, config.N)
    base = _cond_exp_fn(f, config.ell0, config.u0, pot)
    conds = {ell: _cond_exp_fn(f, ell, config.u0, pot) for ell in config.ells}

    def compute(states):
        h = hrow.current()
        base_vals = base(block_average_all(states, config.ell0))
        return {
            ell: (base_vals - conds[ell](block_average_all(states, ell))) @ h
            for ell in config.ells
        }

    acc, meta = _run_families_advancing(config, pot, compute, config.ells, hrow)
    p = config.p
    ells = np.asarray(config.ells, float)
    sups = np.stack([acc.sup[ell] for ell in config.ells])
    moments = (sups**p).mean(axis=1)
    power = p / 2.0 if order == 2 else float(p)
    envelope = config.T ** ((p - 2) / 2.0) * config.N ** (-p / 2.0) * ells**power
    ses = np.array([_bootstrap_root_se(sups[i], p, seed=i) for i in range(len(ells))])
    meta["kind"] = "two_block"
    meta["order"] = order
    return DiagCurve("two_block", ells, moments, moments ** (1 / p), ses, envelope, meta)


def iteration_diag(config: BGConfig, ell: int) -> ValueWithSE:
    """Moment of the single dyadic difference of conditionings at ell and
    2*ell (the one step of the block-doubling iteration)."""
    if 2 * 2 * ell > config.N:
        raise InvalidArgumentError("doubled block does not fit")
    pot = config.make_potential()
    f = make_observable(config.observable, config.u0)
    hrow = _HRow(config.h, config.N)
    g1 = _cond_exp_fn(f, ell, config.u0, pot)
    g2 = _cond_exp_fn(f, 2 * ell, config.u0, pot)

    def compute(states):
        r = g1(block_average_all(states, ell)) - g2(block_average_all(states, 2 * ell))
        return {"dyadic": r @ hrow.current()}

    acc, meta = _run_families_advancing(config, pot, compute, ["dyadic"], hrow)
    sups = acc.sup["dyadic"]
    p = config.p
    moment = float((sups**p).mean())
    return ValueWithSE(moment ** (1 / p), _bootstrap_root_se(sups, p), meta)


@dataclass
class TurnoverReport:
    Ns: np.ndarray
    ells: np.ndarray
    roots: np.ndarray
    root_ses: np.ndarray
    envelope_rise: np.ndarray
    envelope_fall: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def nonincreasing_within_se(self) -> bool:
        r, s = self.roots, self.root_ses
        return all(
            r[i + 1] <= r[i] + 2.0 * np.hypot(s[i], s[i + 1]) for i in range(len(r) - 1)
        )


def turnover_scan(config: BGConfig) -> TurnoverReport:
    """Second-order moments at the balancing block size ell = round(N^{3/4})
    across a ladder of torus sizes."""
    roots, ses, ells_used = [], [], []
    rise, fall = [], []
    metas = []
    for n in config.scan_N:
        ell = int(round(n**0.75))
        if ell < config.ell0:
            raise InvalidArgumentError(f"round(N^(3/4))={ell} below ell0")
        sub = BGConfig(
            N=n,
            ells=(ell,),
            ell0=config.ell0,
            T=config.scan_T,
            p=config.p,
            p_prime=config.p_prime,
            gamma=config.gamma,
            u0=config.u0,
            observable=config.observable,
            h=config.h,
            R=config.scan_R,
            master_seed=config.master_seed,
            dt=config.dt,
            snapshot_dt=config.snapshot_dt,
            potential=config.potential,
        )
        res = bg_moment(sub, order=2)
        roots.append(res.roots[0])
        ses.append(res.root_ses[0])
        ells_used.append(ell)
        rise.append(res.envelope_rise[0] * res.envelope_scale)
        fall.append(res.envelope_fall[0] * res.envelope_scale)
        metas.append(res.meta)
    return TurnoverReport(
        Ns=np.asarray(config.scan_N, float),
        ells=np.asarray(ells_used, float),
        roots=np.asarray(roots),
        root_ses=np.asarray(ses),
        envelope_rise=np.asarray(rise),
        envelope_fall=np.asarray(fall),
        meta={"runs": metas, "T": config.scan_T, "R": config.scan_R},
    )
