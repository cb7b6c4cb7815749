import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kljn_transient.errors import InvalidParameterError
from kljn_transient.noise import NoiseSpec, synthesize
from kljn_transient.vmg import LoopState, steady_state_observables
from kljn_transient.wireline import (
    CableParams,
    Termination,
    TraceSet,
    early_window_identity,
    simulate_loop,
    simulate_loop_filtered,
    stationary_moments,
    write_traces_csv,
)


def step(n):
    return np.ones(n)


class TestCableParams:
    def test_from_fly_time(self):
        c = CableParams.from_fly_time(50, 1e-5, 100)
        assert c.n_delay == 100
        assert c.dt == pytest.approx(1e-7)
        assert c.sample_rate == pytest.approx(1e7)

    def test_from_length(self):
        c = CableParams.from_length(50, 2000.0, 2e8, 100)
        assert c.fly_time == pytest.approx(1e-5)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(z0=0, fly_time=1e-5, dt=1e-7, n_delay=100),
            dict(z0=50, fly_time=1e-5, dt=0, n_delay=100),
            dict(z0=50, fly_time=1e-5, dt=1e-7, n_delay=0),
            dict(z0=50, fly_time=1e-5, dt=1e-7, n_delay=99),
            dict(z0=50, fly_time=1e-5, dt=1e-7, n_delay=100.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidParameterError):
            CableParams(**kwargs)

    def test_termination_needs_positive_resistance(self):
        with pytest.raises(InvalidParameterError):
            Termination(0.0, np.zeros(3))


class TestSimulateLoop:
    def test_matched_line(self):
        c = CableParams.from_fly_time(50, 1e-6, 10)
        tr = simulate_loop(c, Termination(50, step(60)), Termination(50, np.zeros(60)), 60)
        np.testing.assert_allclose(tr.u_a, 0.5, rtol=1e-15)
        assert np.all(tr.u_b[:10] == 0)
        np.testing.assert_allclose(tr.u_b[10:], 0.5, rtol=1e-15)
        np.testing.assert_allclose(tr.i_b[10:], -0.5 / 50, rtol=1e-15)

    def test_open_far_end_doubles(self):
        c = CableParams.from_fly_time(50, 1e-6, 10)
        tr = simulate_loop(c, Termination(50, step(25)), Termination(1e9, np.zeros(25)), 25)
        np.testing.assert_allclose(tr.u_b[10:20], 1.0, rtol=1e-6)
        # the doubled wave returns to a matched source and is absorbed
        np.testing.assert_allclose(tr.u_a[20:], 1.0, rtol=1e-6)

    def test_dc_divider_converges(self):
        c = CableParams.from_fly_time(50, 1e-5, 100)
        n = 400_000
        tr = simulate_loop(c, Termination(11e3, step(n)), Termination(2e3, np.zeros(n)), n)
        expected = 2e3 / 13e3
        assert tr.u_a[-1] == pytest.approx(expected, abs=1e-6)
        assert tr.u_b[-1] == pytest.approx(expected, abs=1e-6)

    def test_causality(self, rng):
        c = CableParams.from_fly_time(50, 1e-6, 10)
        n, t0 = 200, 37
        e_a = rng.standard_normal(n)
        e_a[:t0] = 0
        tr = simulate_loop(c, Termination(3e3, e_a), Termination(9e3, np.zeros(n)), n)
        for x in (tr.u_a, tr.i_a, tr.u_b, tr.i_b):
            assert np.all(x[:t0] == 0)
        assert np.all(tr.u_b[: t0 + 10] == 0)
        assert tr.u_b[t0 + 10] != 0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_delay=st.integers(1, 30), r_a=st.floats(1, 1e5), r_b=st.floats(1, 1e5))
    def test_linearity(self, seed, n_delay, r_a, r_b):
        rng = np.random.default_rng(seed)
        c = CableParams.from_fly_time(50, 1e-6, n_delay)
        n = 5 * n_delay + 3
        e1, e2, f1, f2 = rng.standard_normal((4, n))
        both = simulate_loop(c, Termination(r_a, e1 + e2), Termination(r_b, f1 + f2), n)
        one = simulate_loop(c, Termination(r_a, e1), Termination(r_b, f1), n)
        two = simulate_loop(c, Termination(r_a, e2), Termination(r_b, f2), n)
        for name in ("u_a", "i_a", "u_b", "i_b"):
            x, y = getattr(both, name), getattr(one, name) + getattr(two, name)
            scale = np.max(np.abs(x)) + np.max(np.abs(y))
            assert np.max(np.abs(x - y)) <= 1e-12 * scale

    def test_batches_match_single_runs(self, rng):
        c = CableParams.from_fly_time(50, 1e-6, 7)
        e_a, e_b = rng.standard_normal((2, 5, 40))
        batch = simulate_loop(c, Termination(11e3, e_a), Termination(2e3, e_b), 40)
        for j in range(5):
            single = simulate_loop(c, Termination(11e3, e_a[j]), Termination(2e3, e_b[j]), 40)
            assert np.array_equal(batch.run(j).u_a, single.u_a)
            assert np.array_equal(batch.run(j).i_b, single.i_b)

    def test_voltage_equals_source_minus_drop(self, rng):
        c = CableParams.from_fly_time(50, 1e-6, 7)
        e_a, e_b = rng.standard_normal((2, 100))
        tr = simulate_loop(c, Termination(11e3, e_a), Termination(2e3, e_b), 100)
        np.testing.assert_allclose(tr.u_a, e_a - 11e3 * tr.i_a, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(tr.u_b, e_b - 2e3 * tr.i_b, rtol=1e-9, atol=1e-12)

    def test_source_checks(self):
        c = CableParams.from_fly_time(50, 1e-6, 5)
        with pytest.raises(InvalidParameterError):
            simulate_loop(c, Termination(1, np.zeros(9)), Termination(1, np.zeros(10)), 10)
        with pytest.raises(InvalidParameterError):
            simulate_loop(c, Termination(1, np.zeros((3, 10))), Termination(1, np.zeros((2, 10))), 10)
        with pytest.raises(InvalidParameterError):
            simulate_loop(c, Termination(1, np.zeros(10)), Termination(1, np.zeros(10)), 0)


class TestFilteredForm:
    @pytest.mark.parametrize("n_delay", [1, 3, 100])
    def test_agrees_with_step_recursion(self, rng, n_delay):
        c = CableParams.from_fly_time(50, 1e-5, n_delay)
        n = 20 * n_delay + 5
        e_a, e_b = rng.standard_normal((2, 3, n))
        a = simulate_loop(c, Termination(11e3, e_a), Termination(2e3, e_b), n)
        b = simulate_loop_filtered(c, Termination(11e3, e_a), Termination(2e3, e_b), n)
        for name in ("u_a", "i_a", "u_b", "i_b"):
            x, y = getattr(a, name), getattr(b, name)
            assert np.max(np.abs(x - y)) <= 1e-12 * np.max(np.abs(x))


class TestEarlyWindowIdentity:
    def test_holds_for_simulation_output(self, rng):
        c = CableParams.from_fly_time(50, 1e-5, 100)
        e_a, e_b = rng.standard_normal((2, 400))
        tr = simulate_loop(c, Termination(11e3, e_a), Termination(2e3, e_b), 400)
        assert early_window_identity(tr, c)

    def test_perturbed_sample_breaks_it(self, rng):
        c = CableParams.from_fly_time(50, 1e-5, 100)
        e_a, e_b = rng.standard_normal((2, 100))
        tr = simulate_loop(c, Termination(11e3, e_a), Termination(2e3, e_b), 100)
        u_a = tr.u_a.copy()
        u_a[42] = np.nextafter(u_a[42], np.inf)
        assert not early_window_identity(TraceSet(u_a, tr.i_a, tr.u_b, tr.i_b, tr.dt), c)

    def test_noise_sweep(self, temps):
        c = CableParams.from_fly_time(50, 1e-5, 100)
        spec_a = NoiseSpec(c.sample_rate, 5e3, temps.u_ha, 2**16)
        spec_b = NoiseSpec(c.sample_rate, 5e3, temps.u_lb, 2**16)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            sa, sb = rng.integers(0, 2**16 - 400, size=2)
            e_a = synthesize(spec_a, 2 * seed).samples[sa : sa + 400]
            e_b = synthesize(spec_b, 2 * seed + 1).samples[sb : sb + 400]
            tr = simulate_loop(c, Termination(11e3, e_a), Termination(2e3, e_b), 400)
            assert early_window_identity(tr, c)


@pytest.fixture(scope="module")
def short_line_run(quad, temps):
    c = CableParams.from_fly_time(5000, 1e-6, 1)
    spec = NoiseSpec(c.sample_rate, 5e3, 1.0, 2**20)
    e_a = synthesize(spec, 1).samples
    e_b = synthesize(spec, 2).samples
    out = {}
    for state in LoopState:
        r_a, r_b = quad.loop(state)
        u_a, u_b = temps.loop(state)
        drives = (u_a * e_a, u_b * e_b)
        tr = simulate_loop_filtered(c, Termination(r_a, drives[0]), Termination(r_b, drives[1]), len(e_a))
        out[state] = (tr, drives)
    return c, out


class TestStationaryBehaviour:
    def test_passivity(self, short_line_run):
        _, runs = short_line_run
        for tr, _ in runs.values():
            into_line = np.mean(tr.u_a * tr.i_a + tr.u_b * tr.i_b)
            gross = np.mean(np.abs(tr.u_a * tr.i_a))
            assert abs(into_line) <= 1e-3 * gross

    @pytest.mark.parametrize("state", list(LoopState))
    def test_lumped_limit(self, short_line_run, quad, temps, state):
        _, runs = short_line_run
        tr, (e_a, e_b) = runs[state]
        r_a, r_b = quad.loop(state)
        # the zero-length circuit driven by the same realizations
        u_lumped = (e_a * r_b + e_b * r_a) / (r_a + r_b)
        i_lumped = (e_a - e_b) / (r_a + r_b)
        assert np.mean(tr.u_a**2) == pytest.approx(np.mean(u_lumped**2), rel=0.02)
        assert np.mean(tr.i_a**2) == pytest.approx(np.mean(i_lumped**2), rel=0.02)
        # and one 0.1 s record already lands within its sampling spread of the oracle
        obs = steady_state_observables(state, quad, temps)
        assert np.mean(tr.u_a**2) == pytest.approx(obs.u_ms, rel=0.15)
        assert np.mean(tr.i_a**2) == pytest.approx(obs.i_ms, rel=0.15)

    def test_moments_tend_to_lumped_values(self, quad, temps):
        for state in LoopState:
            obs = steady_state_observables(state, quad, temps)
            r_a, r_b = quad.loop(state)
            u_a, u_b = temps.loop(state)
            c = CableParams.from_fly_time(5000, 1e-9, 1)
            m = stationary_moments(c, r_a, r_b, u_a, u_b, 5e3)
            np.testing.assert_allclose(m, [obs.u_ms, obs.i_ms, obs.p_flow], rtol=1e-6)

    def test_moments_match_long_simulation(self, quad, temps):
        # a 10 us cable is far from lumped at 5 kHz, so compare with the exact line response
        c = CableParams.from_fly_time(50, 1e-5, 4)
        spec = NoiseSpec(c.sample_rate, 5e3, 1.0, 2**20)
        r_a, r_b = quad.loop(LoopState.HL)
        u_a, u_b = temps.loop(LoopState.HL)
        stats = []
        for k in range(8):
            e_a = synthesize(spec, 100 + k).samples
            e_b = synthesize(spec, 200 + k).samples
            tr = simulate_loop_filtered(c, Termination(r_a, u_a * e_a), Termination(r_b, u_b * e_b), len(e_a))
            stats.append([np.mean(tr.u_a**2), np.mean(tr.i_a**2)])
        measured = np.mean(stats, axis=0)
        expected = stationary_moments(c, r_a, r_b, u_a, u_b, 5e3)[:2]
        np.testing.assert_allclose(measured, expected, rtol=0.05)
        assert expected[0] < 0.2 * steady_state_observables(LoopState.HL, quad, temps).u_ms


class TestTraceDump:
    def test_csv_round_trip(self, tmp_path, rng):
        c = CableParams.from_fly_time(50, 1e-6, 5)
        e_a, e_b = rng.standard_normal((2, 12))
        tr = simulate_loop(c, Termination(11e3, e_a), Termination(2e3, e_b), 12)
        path = write_traces_csv(tr, tmp_path / "traces.csv")
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t_s", "u_a_v", "i_a_a", "u_b_v", "i_b_a"]
        data = np.array(rows[1:], dtype=float)
        assert np.array_equal(data[:, 1], tr.u_a)
        assert np.array_equal(data[:, 4], tr.i_b)
        np.testing.assert_allclose(data[:, 0], tr.time)

    def test_rejects_batches(self, tmp_path):
        tr = TraceSet(*(np.zeros((2, 3)) for _ in range(4)), dt=1.0)
        with pytest.raises(InvalidParameterError):
            write_traces_csv(tr, tmp_path / "x.csv")

    def test_trace_shapes_must_agree(self):
        with pytest.raises(InvalidParameterError):
            TraceSet(np.zeros(3), np.zeros(3), np.zeros(4), np.zeros(3), 1.0)
