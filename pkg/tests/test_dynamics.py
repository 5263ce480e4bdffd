import numpy as np
import pytest

from gllab.dynamics import (
    BatchIntegrator,
    NoiseStream,
    TrajectoryRecord,
    ZeroNoise,
    conservation_residual,
    default_micro_step,
    drift_spectrum,
    drift_torus,
    exact_gaussian_evolve,
    exact_gaussian_step,
    simulate,
    step_local,
    step_torus,
)
from gllab.errors import (
    IntegratorDivergedError,
    InvalidArgumentError,
    UnsupportedPotentialError,
)
from gllab.model import Asymmetry, LocalField, Potential, TorusField


class TestNoiseStream:
    def test_bitwise_reproducible(self):
        a = NoiseStream(7, 3)
        b = NoiseStream(7, 3)
        for _ in range(5):
            np.testing.assert_array_equal(a.increments(8, 0.1), b.increments(8, 0.1))
        assert a.steps == b.steps == 5

    def test_distinct_trajectories_differ(self):
        a = NoiseStream(7, 0).increments(8, 0.1)
        b = NoiseStream(7, 1).increments(8, 0.1)
        assert not np.allclose(a, b)

    def test_zero_noise(self):
        z = ZeroNoise()
        assert np.all(z.increments(4, 0.5) == 0.0)


class TestDrift:
    def test_hand_example(self, quad, sym):
        eta = TorusField([0.0, 1.0, 0.0])
        d = drift_torus(eta, quad, sym)
        np.testing.assert_allclose(d, [0.5, -1.0, 0.5])

    def test_constant_state(self, quad):
        eta = TorusField(np.full(6, 2.0))
        for gamma in (-2.0, 0.0, 0.5, 2.0):
            np.testing.assert_allclose(
                drift_torus(eta, quad, Asymmetry(gamma)), 0.0, atol=1e-15
            )

    @pytest.mark.parametrize("gamma", [-2.0, 0.0, 0.5, 2.0])
    def test_telescoping(self, quad, cosine_pot, rng, gamma):
        for pot in (quad, cosine_pot):
            eta = TorusField(rng.normal(size=17))
            total = drift_torus(eta, pot, Asymmetry(gamma)).sum()
            assert abs(total) < 1e-13


class TestStepTorus:
    def test_frozen_noise_constant_state(self, quad):
        eta = TorusField(np.full(5, 1.5))
        out = step_torus(eta, quad, Asymmetry(0.7), 1e-3, ZeroNoise())
        np.testing.assert_allclose(out.values, eta.values, atol=1e-16)

    def test_mean_preserved(self, quad, rng):
        eta = TorusField(rng.normal(size=32))
        ns = NoiseStream(3, 0)
        out = eta
        for _ in range(50):
            out = step_torus(out, quad, Asymmetry(0.5), 1e-3, ns)
        assert abs(out.m - eta.m) <= 1e-12 * 32

    def test_divergence_detected(self, quad):
        eta = TorusField([1e308, -1e308, 0.0])
        with pytest.raises(IntegratorDivergedError):
            step_torus(eta, quad, Asymmetry(0.0), 1e6, ZeroNoise())

    def test_drift_taylor_remainder_vs_exact(self, quad, sym, rng):
        # zero noise isolates the deterministic part: Euler vs exact
        # transition differs at second order in dt
        eta = TorusField(rng.normal(size=16))
        errs = []
        for dt in (4e-3, 2e-3, 1e-3):
            euler = step_torus(eta, quad, sym, dt, ZeroNoise())
            exact = exact_gaussian_step(eta, quad, sym, dt, ZeroNoise())
            errs.append(np.max(np.abs(euler.values - exact.values)))
        slopes = np.diff(np.log2(errs))
        assert np.all(np.abs(slopes + 2.0) < 0.2)  # halving dt quarters the error


class TestStepLocal:
    def test_two_site_example(self, quad):
        etaL = LocalField([1.0, 3.0])
        ns = NoiseStream(11, 0)
        dB = NoiseStream(11, 0).increments(1, 1e-2)[0]
        out = step_local(etaL, quad, 1e-2, ns)
        expected_minus = 1.0 + 0.5 * 1e-2 * (3.0 - 1.0) + dB
        expected_zero = 3.0 - 0.5 * 1e-2 * (3.0 - 1.0) - dB
        assert out.site(-1) == pytest.approx(expected_minus, abs=1e-15)
        assert out.site(0) == pytest.approx(expected_zero, abs=1e-15)
        assert out.values.sum() == pytest.approx(4.0, abs=1e-14)

    def test_constant_state_zero_noise(self, quad):
        etaL = LocalField(np.full(8, 0.7))
        out = step_local(etaL, quad, 1e-3, ZeroNoise())
        np.testing.assert_allclose(out.values, etaL.values, atol=1e-16)

    def test_mean_residual(self, quad, rng):
        etaL = LocalField(rng.normal(size=12))
        ns = NoiseStream(5, 0)
        out = etaL
        for _ in range(200):
            out = step_local(out, quad, 1e-3, ns)
        assert abs(out.m - etaL.m) <= 1e-12 * 12

    def test_invariance_of_canonical_measure(self, quad):
        # long run from the canonical ensemble: mid-block moments stay put
        ell = 3
        count = 400
        rng = np.random.default_rng(8)
        z = rng.standard_normal((count, 2 * ell))
        start = z - z.mean(axis=1, keepdims=True)  # canonical at m=0
        finals = np.empty_like(start)
        for i in range(count):
            state = LocalField(start[i])
            ns = NoiseStream(99, i)
            for _ in range(400):
                state = step_local(state, quad, 5e-2, ns)
            finals[i] = state.values
        mid = finals[:, ell]
        target_var = 1.0 - 1.0 / (2 * ell)
        se = target_var * np.sqrt(2.0 / count)
        assert abs(mid.mean()) < 4 / np.sqrt(count)
        assert abs(mid.var() - target_var) < 5 * se


class TestSimulate:
    def test_zero_horizon(self, quad, sym, rng):
        eta0 = TorusField(rng.normal(size=8))
        rec = simulate(eta0, quad, sym, 0.0, 1e-3, [0.0], NoiseStream(1, 0))
        assert rec.times.tolist() == [0.0]
        np.testing.assert_array_equal(rec.fields[0], eta0.values)

    def test_snapshot_grid(self, quad, sym, rng):
        eta0 = TorusField(rng.normal(size=8))
        times = [0.05, 0.1]
        rec = simulate(eta0, quad, sym, 0.1, 1e-3, times, NoiseStream(1, 0))
        np.testing.assert_allclose(rec.times, times, rtol=1e-2)
        assert rec.fields.shape == (2, 8)

    def test_too_coarse_step_rejected(self, quad, sym, rng):
        eta0 = TorusField(rng.normal(size=4))
        with pytest.raises(InvalidArgumentError):
            simulate(eta0, quad, sym, 1.0, 20.0, [0.5, 1.0], NoiseStream(1, 0))

    def test_conservation_residual(self, quad, rng):
        eta0 = TorusField(rng.normal(size=16))
        times = np.linspace(0.01, 0.1, 10)
        for gamma in (0.0, 2.0):
            rec = simulate(
                eta0, quad, Asymmetry(gamma), 0.1, 1e-3, times, NoiseStream(2, 0)
            )
            assert conservation_residual(rec) <= 1e-11

    def test_invariant_law(self, quad, sym):
        # OU invariant single-site variance 1, batched trajectories
        R, n = 500, 16
        rng = np.random.default_rng(0)
        states = rng.standard_normal((R, n))
        engine = BatchIntegrator(states, quad, sym, 4e-3, master_seed=17)
        engine.run(int(0.25 * n * n / 4e-3))
        x = engine.states[:, 0]
        se_var = np.sqrt(2.0 / R)
        assert abs(x.mean()) < 4 / np.sqrt(R)
        assert abs(x.var() - 1.0) < 4 * se_var

    def test_record_validation(self):
        with pytest.raises(InvalidArgumentError):
            TrajectoryRecord(
                times=[0.2, 0.1],
                fields=np.zeros((2, 3)),
                m0=0.0,
                residuals=[0.0, 0.0],
            )


class TestExactGaussian:
    def test_requires_quadratic(self, cosine_pot, rng):
        eta = TorusField(rng.normal(size=8))
        with pytest.raises(UnsupportedPotentialError):
            exact_gaussian_step(eta, cosine_pot, Asymmetry(0.0), 0.1, NoiseStream(1, 0))

    def test_small_dt_limit(self, quad, sym, rng):
        eta = TorusField(rng.normal(size=8))
        out = exact_gaussian_step(eta, quad, sym, 1e-12, ZeroNoise())
        np.testing.assert_allclose(out.values, eta.values, atol=1e-10)

    def test_mean_exact(self, quad, rng):
        eta = TorusField(rng.normal(size=10))
        out = exact_gaussian_step(eta, quad, Asymmetry(1.5), 0.3, NoiseStream(4, 0))
        assert out.m == pytest.approx(eta.m, abs=1e-13)

    def test_spectrum_n4(self):
        spec = drift_spectrum(4, Asymmetry(0.0))
        np.testing.assert_allclose(np.sort(spec.real), [-2.0, -1.0, -1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(spec.imag, 0.0, atol=1e-12)

    def test_asymmetric_spectrum(self):
        spec = drift_spectrum(6, Asymmetry(1.0))
        w = 2 * np.pi * np.arange(6) / 6
        np.testing.assert_allclose(spec.imag, 2.0 * np.sin(w), atol=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, 2.0])
    def test_invariant_law_exact(self, quad, gamma):
        rng = np.random.default_rng(31)
        R, n = 8000, 16
        states = rng.standard_normal((R, n))
        out = exact_gaussian_evolve(states, Asymmetry(gamma), 300.0, rng)
        x = out[:, 0]
        assert abs(x.mean()) < 4 / np.sqrt(R)
        assert abs(x.var() - 1.0) < 4 * np.sqrt(2.0 / R)
        assert abs((x**4).mean() - 3.0) < 4 * np.sqrt(96.0 / R)

    def test_strong_order_one(self, quad, sym):
        # shared-noise coupling of Euler and exact transitions
        n, t_micro = 16, 4.0
        errs = []
        for dt in (4e-3, 2e-3, 1e-3):
            per_rep = []
            for rep in range(4):
                rng0 = np.random.default_rng([913, rep])
                eta_e = TorusField(rng0.standard_normal(n))
                eta_x = TorusField(eta_e.values.copy())
                ns_e = NoiseStream(101 + rep, 0)
                ns_x = NoiseStream(101 + rep, 0)
                for _ in range(int(t_micro / dt)):
                    eta_e = step_torus(eta_e, quad, sym, dt, ns_e)
                    eta_x = exact_gaussian_step(eta_x, quad, sym, dt, ns_x)
                per_rep.append(np.sqrt(np.mean((eta_e.values - eta_x.values) ** 2)))
            errs.append(np.mean(per_rep))
        slope = np.polyfit(np.log2([4e-3, 2e-3, 1e-3]), np.log2(errs), 1)[0]
        assert 0.8 <= slope <= 1.2


class TestBatchIntegrator:
    def test_matches_reference_stepper_bitwise(self, quad):
        states = np.random.default_rng(3).normal(size=(4, 12))
        engine = BatchIntegrator(states.copy(), quad, Asymmetry(0.5), 1e-3, master_seed=42)
        engine.run(100)
        for i in range(4):
            ref = TorusField(states[i])
            ns = NoiseStream(42, i)
            for _ in range(100):
                ref = step_torus(ref, quad, Asymmetry(0.5), 1e-3, ns)
            np.testing.assert_array_equal(ref.values, engine.states[i])

    def test_split_merge_invariance(self, quad, sym):
        # trajectory i depends only on (master_seed, offset+i): two half
        # batches reproduce the full batch exactly
        states = np.random.default_rng(5).normal(size=(6, 8))
        full = BatchIntegrator(states.copy(), quad, sym, 1e-3, master_seed=9)
        full.run(77)
        first = BatchIntegrator(states[:3].copy(), quad, sym, 1e-3, master_seed=9)
        first.run(77)
        second = BatchIntegrator(
            states[3:].copy(), quad, sym, 1e-3, master_seed=9, trajectory_offset=3
        )
        second.run(77)
        np.testing.assert_array_equal(full.states[:3], first.states)
        np.testing.assert_array_equal(full.states[3:], second.states)

    def test_chunked_runs_match_single_run(self, quad, sym):
        states = np.random.default_rng(6).normal(size=(3, 8))
        a = BatchIntegrator(states.copy(), quad, sym, 1e-3, master_seed=1)
        a.run(130)
        b = BatchIntegrator(states.copy(), quad, sym, 1e-3, master_seed=1)
        for k in (13, 64, 29, 24):
            b.run(k)
        np.testing.assert_array_equal(a.states, b.states)

    def test_general_potential_path(self, cosine_pot, rng):
        states = rng.normal(size=(4, 10))
        engine = BatchIntegrator(states.copy(), cosine_pot, Asymmetry(0.3), 1e-3, master_seed=2)
        engine.run(60)
        ref = TorusField(states[0])
        ns = NoiseStream(2, 0)
        for _ in range(60):
            ref = step_torus(ref, cosine_pot, Asymmetry(0.3), 1e-3, ns)
        np.testing.assert_allclose(engine.states[0], ref.values, atol=1e-14)

    def test_observer_grid(self, quad, sym):
        states = np.zeros((2, 6))
        engine = BatchIntegrator(states, quad, sym, 1e-3, master_seed=3)
        seen = []
        engine.run(40, observer=lambda s, t, x: seen.append(s), observe_every=10)
        assert seen == [0, 10, 20, 30, 40]

    def test_default_step(self, quad, cosine_pot):
        assert default_micro_step(quad) == pytest.approx(1e-3)
        assert default_micro_step(cosine_pot) == pytest.approx(1e-3)
        stiff = Potential(
            v=lambda z: 50.0 * np.square(z),
            dv=lambda z: 100.0 * np.asarray(z, dtype=float),
            ddv=lambda z: np.full_like(np.asarray(z, dtype=float), 100.0),
            c_minus=100.0,
            c_plus=100.0,
        )
        assert default_micro_step(stiff) == pytest.approx(5e-4)
