"""Conservative tilt dynamics: Euler-Maruyama stepping, diffusive-time
simulation, localized symmetric dynamics and the exact Gaussian oracle.

The tilt SDE on the torus is

    d eta(x) = p (V'(eta(x+1)) - V'(eta(x))) dt
             + q (V'(eta(x-1)) - V'(eta(x))) dt + dB(x+1) - dB(x),

with cyclic indices and B(N+1) = B(1).  Both the drift and the noise
telescope, so the mean is conserved pathwise; the explicit scheme inherits
that exactly up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    IntegratorDivergedError,
    InvalidArgumentError,
    UnsupportedPotentialError,
)
from .model import Asymmetry, LocalField, Potential, TorusField


def default_micro_step(pot: Potential) -> float:
    """Stable explicit step: min(0.05/c_plus, 1e-3)."""
    return min(0.05 / pot.c_plus, 1e-3)


class NoiseStream:
    """Reproducible Gaussian increments, one independent stream per site.

    The stream is keyed by (master_seed, trajectory_index); replaying the
    same key and step count reproduces the increments bit for bit.
    """

    def __init__(self, master_seed: int, trajectory_index: int = 0):
        self.master_seed = int(master_seed)
        self.trajectory_index = int(trajectory_index)
        self._gen = np.random.default_rng([self.master_seed, self.trajectory_index])
        self.steps = 0

    def increments(self, n_sites: int, dt: float) -> np.ndarray:
        """Per-site Brownian increments of variance dt for one step."""
        self.steps += 1
        return np.sqrt(dt) * self._gen.standard_normal(n_sites)

    def gaussians(self, shape) -> np.ndarray:
        """Auxiliary standard normals drawn from the same stream."""
        return self._gen.standard_normal(shape)

    def reset(self) -> "NoiseStream":
        return NoiseStream(self.master_seed, self.trajectory_index)


class ZeroNoise:
    """Noise frozen to zero; useful for drift-only checks."""

    def __init__(self):
        self.steps = 0

    def increments(self, n_sites, dt):
        self.steps += 1
        return np.zeros(n_sites)

    def gaussians(self, shape):
        return np.zeros(shape)

    def reset(self):
        return ZeroNoise()


@dataclass
class TrajectoryRecord:
    """Snapshots of one trajectory in diffusive time."""

    times: np.ndarray            # diffusive units, strictly increasing
    fields: np.ndarray           # (n_snapshots, N)
    m0: float                    # conserved mean at start
    residuals: np.ndarray        # |mean(snapshot) - m0| per snapshot
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.fields = np.asarray(self.fields, dtype=float)
        self.residuals = np.asarray(self.residuals, dtype=float)
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise InvalidArgumentError("snapshot times must be strictly increasing")

    def to_rows_long(self):
        """Rows (t, site, value) with sites labelled 1..N."""
        n = self.fields.shape[1]
        for t, row in zip(self.times, self.fields):
            for x in range(n):
                yield (t, x + 1, row[x])


def drift_torus(eta: TorusField, pot: Potential, asym: Asymmetry) -> np.ndarray:
    """Deterministic part of the tilt dynamics at every site."""
    vp = pot.dv(eta.values)
    return asym.p * (np.roll(vp, -1) - vp) + asym.q * (np.roll(vp, 1) - vp)


def step_torus(
    eta: TorusField, pot: Potential, asym: Asymmetry, dt: float, noise
) -> TorusField:
    """One explicit Euler-Maruyama step; conserves the mean to rounding."""
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    dB = noise.increments(eta.N, dt)
    vp = pot.dv(eta.values)
    v = eta.values
    out = (
        v
        + dt * (asym.p * (np.roll(vp, -1) - vp) + asym.q * (np.roll(vp, 1) - vp))
        + (np.roll(dB, -1) - dB)
    )
    if not np.all(np.isfinite(out)):
        raise IntegratorDivergedError("non-finite state after step")
    return TorusField(out)


def step_local(etaL: LocalField, pot: Potential, dt: float, noise) -> LocalField:
    """One step of the localized symmetric dynamics on [-ell, ell-1].

    Interior sites follow the symmetric torus update; the two boundary
    sites couple to only one bond and one Brownian motion each, so the
    block mean is conserved pathwise.
    """
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    ell = etaL.ell
    v = etaL.values
    vp = pot.dv(v)
    # one Brownian motion per height site in (-ell, ell); dB[i] is B(i-ell+1)
    dB = noise.increments(2 * ell - 1, dt)
    out = v.copy()
    # interior x in [-ell+1, ell-2] -> positions 1 .. 2ell-2
    if ell > 1:
        i = np.arange(1, 2 * ell - 1)
        out[i] += 0.5 * dt * (vp[i + 1] - 2.0 * vp[i] + vp[i - 1]) + (dB[i] - dB[i - 1])
    out[0] += 0.5 * dt * (vp[1] - vp[0]) + dB[0]
    out[-1] += -0.5 * dt * (vp[-1] - vp[-2]) - dB[-1]
    if not np.all(np.isfinite(out)):
        raise IntegratorDivergedError("non-finite state after local step")
    return LocalField(out)


def simulate(
    eta0: TorusField,
    pot: Potential,
    asym: Asymmetry,
    T_diffusive: float,
    dt_micro: float,
    snapshots,
    noise,
) -> TrajectoryRecord:
    """Integrate to diffusive time T (microscopic horizon N^2*T).

    Snapshots are requested in diffusive units and land on the nearest
    micro step; actual times are recorded.  The step must resolve the
    snapshot grid (at least one micro step per interval).
    """
    if T_diffusive < 0 or dt_micro <= 0:
        raise InvalidArgumentError("need T >= 0 and dt_micro > 0")
    N = eta0.N
    snaps = np.atleast_1d(np.asarray(snapshots, dtype=float))
    if snaps.size == 0 or T_diffusive == 0:
        return TrajectoryRecord(
            times=np.zeros(1),
            fields=eta0.values[None, :].copy(),
            m0=eta0.m,
            residuals=np.zeros(1),
            meta={"dt_micro": dt_micro, "gamma": asym.gamma, "N": N},
        )
    if np.any(snaps < 0) or np.any(snaps > T_diffusive + 1e-12):
        raise InvalidArgumentError("snapshots must lie in [0, T]")
    snaps = np.unique(snaps)
    keep_initial = snaps[0] == 0.0
    positive = snaps[1:] if keep_initial else snaps
    if positive.size == 0:
        return TrajectoryRecord(
            times=np.zeros(1),
            fields=eta0.values[None, :].copy(),
            m0=eta0.m,
            residuals=np.zeros(1),
            meta={"dt_micro": dt_micro, "gamma": asym.gamma, "N": N},
        )
    spacing = np.min(np.diff(np.concatenate([[0.0], positive])))
    if dt_micro > N * N * spacing * (1.0 + 1e-9):
        raise InvalidArgumentError(
            "micro step too coarse for the snapshot grid: "
            f"dt={dt_micro} > N^2*spacing={N * N * spacing}"
        )
    step_targets = np.rint(positive * N * N / dt_micro).astype(np.int64)
    step_targets = np.unique(np.maximum(step_targets, 1))

    m0 = eta0.m
    state = eta0
    times, fields, residuals = [], [], []
    if keep_initial:
        times.append(0.0)
        fields.append(eta0.values.copy())
        residuals.append(0.0)
    step = 0
    for target in step_targets:
        while step < target:
            try:
                state = step_torus(state, pot, asym, dt_micro, noise)
            except IntegratorDivergedError as err:
                err.time = (step + 1) * dt_micro / (N * N)
                raise
            step += 1
        times.append(step * dt_micro / (N * N))
        fields.append(state.values.copy())
        residuals.append(abs(state.m - m0))
    return TrajectoryRecord(
        times=np.asarray(times),
        fields=np.asarray(fields),
        m0=m0,
        residuals=np.asarray(residuals),
        meta={"dt_micro": dt_micro, "gamma": asym.gamma, "N": N},
    )


def conservation_residual(record: TrajectoryRecord) -> float:
    """Worst snapshot deviation of the mean from its initial value."""
    if record.residuals.size == 0:
        return 0.0
    return float(np.max(record.residuals))


# ----------------------------------------------------------------------
# exact Gaussian (quadratic potential) transition


def drift_spectrum(N: int, asym: Asymmetry) -> np.ndarray:
    """Eigenvalues of the linear drift on Fourier modes k = 0..N-1.

    a_k = (cos w - 1) + 2i*gamma*sin w with w = 2*pi*k/N; gamma = 0 gives
    the symbol of half the discrete Laplacian.
    """
    w = 2.0 * np.pi * np.arange(N) / N
    return (np.cos(w) - 1.0) + 1j * (2.0 * asym.gamma * np.sin(w))


def _exact_multipliers(N: int, gamma: float, dt: float):
    """Per-rfft-mode state multiplier and shared-noise multiplier.

    The transition of the linear SDE is eta' = e^{A dt} eta + xi with xi of
    per-mode variance 1 - e^{-2(1-cos w)dt}.  Building xi from the shared
    per-site increments keeps the zero mode exactly zero and yields a
    strong order-1 coupling with the Euler step.
    """
    w = 2.0 * np.pi * np.arange(N // 2 + 1) / N
    a = (np.cos(w) - 1.0) + 1j * (2.0 * gamma * np.sin(w))
    ea = np.exp(a * dt)
    beta = 2.0 * (1.0 - np.cos(w))  # noise covariance symbol = |sigma|^2
    with np.errstate(invalid="ignore"):
        v = np.where(beta > 0, -np.expm1(-beta * dt) / np.maximum(beta, 1e-300), dt)
    sigma = np.exp(1j * w) - 1.0
    g = sigma * np.sqrt(v / dt)
    return ea, g


def exact_gaussian_evolve(
    states: np.ndarray, asym: Asymmetry, dt: float, rng
) -> np.ndarray:
    """Batched exact transition over time dt for (R, N) quadratic-model states.

    Each row advances by one exact step driven by fresh increments from
    ``rng``; dt may be arbitrarily large (the multipliers are closed-form),
    so a diffusive horizon costs a single FFT sweep.
    """
    states = np.asarray(states, dtype=float)
    n = states.shape[-1]
    ea, g = _exact_multipliers(n, asym.gamma, dt)
    incr = np.sqrt(dt) * rng.standard_normal(states.shape)
    out = np.fft.irfft(
        ea * np.fft.rfft(states, axis=-1) + g * np.fft.rfft(incr, axis=-1), n=n, axis=-1
    )
    return out


def exact_gaussian_step(
    eta: TorusField, pot: Potential, asym: Asymmetry, dt: float, noise
) -> TorusField:
    """Sample the exact transition of the quadratic-potential dynamics.

    Uses the real Fourier factorization of the circulant drift and of the
    noise covariance 2I - S - S^T.  The supplied per-site increments are
    reused, so Euler steps driven by the same stream can be compared
    pathwise.
    """
    if not pot.is_quadratic:
        raise UnsupportedPotentialError("exact transition requires the quadratic potential")
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    N = eta.N
    dB = noise.increments(N, dt)
    ea, g = _exact_multipliers(N, asym.gamma, dt)
    out = np.fft.irfft(ea * np.fft.rfft(eta.values) + g * np.fft.rfft(dB), n=N)
    return TorusField(out)


# ----------------------------------------------------------------------
# batched driver for Monte Carlo experiments


class BatchIntegrator:
    """Euler driver for R independent trajectories stepped in lockstep.

    Trajectory i draws its noise from the stream (master_seed, offset+i)
    regardless of batch layout, so estimates are exactly invariant under
    splitting or reordering batches.  Noise is generated in blocks to
    amortize generator overhead; the inner sweep is JIT-compiled.
    """

    def __init__(
        self,
        states: np.ndarray,
        pot: Potential,
        asym: Asymmetry,
        dt: float,
        master_seed: int,
        trajectory_offset: int = 0,
        block: int = 64,
    ):
        states = np.array(states, dtype=float)
        if states.ndim != 2:
            raise InvalidArgumentError("states must be (R, N)")
        if dt <= 0:
            raise InvalidArgumentError("dt must be positive")
        self.states = states
        self.R, self.N = states.shape
        self.pot = pot
        self.asym = asym
        self.dt = float(dt)
        self.block = int(block)
        self._gens = [
            np.random.default_rng([int(master_seed), int(trajectory_offset) + i])
            for i in range(self.R)
        ]
        self._sqdt = np.sqrt(dt)
        self._scratch = np.empty_like(states)
        self._noise_buf = None
        self._noise_pos = 0
        self.step_count = 0

    def _refill_noise(self):
        # fixed-shape block draws keep each trajectory's stream independent
        # of the observation pattern and of how runs are chunked
        if self._noise_buf is None:
            self._noise_buf = np.empty((self.R, self.block, self.N))
        for i, gen in enumerate(self._gens):
            self._noise_buf[i] = gen.standard_normal((self.block, self.N))
        self._noise_buf *= self._sqdt
        self._noise_pos = 0

    def run(self, n_steps: int, observer=None, observe_every: int = 1):
        """Advance n_steps; call observer(step, t_micro, states) on the grid.

        The observer is also called once at the very first step 0 so running
        integrals can include the left endpoint.
        """
        if observer is not None and self.step_count == 0:
            observer(0, 0.0, self.states)
        done = 0
        p, q, dt = self.asym.p, self.asym.q, self.dt
        while done < n_steps:
            if self._noise_buf is None or self._noise_pos >= self.block:
                self._refill_noise()
            take = min(n_steps - done, self.block - self._noise_pos)
            if observer is not None:
                take = min(take, observe_every - (self.step_count % observe_every))
            s0 = self._noise_pos
            if self.pot.is_quadratic:
                _kernels.euler_span_quadratic(
                    self.states, self._noise_buf, s0, s0 + take, p, q, dt
                )
            else:
                for s in range(s0, s0 + take):
                    vp = np.asarray(self.pot.dv(self.states), dtype=float)
                    _kernels.euler_step_general(
                        self.states, vp, self._noise_buf, s, p, q, dt, self._scratch
                    )
                    self.states, self._scratch = self._scratch, self.states
            self._noise_pos += take
            done += take
            self.step_count += take
            if not np.all(np.isfinite(self.states[:, 0])):
                bad = ~np.isfinite(self.states).all(axis=1)
                raise IntegratorDivergedError(
                    f"{int(bad.sum())} trajectories diverged",
                    time=self.step_count * dt,
                )
            if observer is not None and self.step_count % observe_every == 0:
                observer(self.step_count, self.step_count * dt, self.states)
        if not np.all(np.isfinite(self.states)):
            raise IntegratorDivergedError(
                "non-finite state at end of run", time=self.step_count * dt
            )
