import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftflow.delta import (
    DeltaSpec,
    SubproblemError,
    _subtract,
    gaussian_initial,
    iter_delta,
    mass_interpolate,
    p_fix,
    solve_delta,
    solve_selection,
)
from driftflow.newton import NewtonParams
from driftflow.stepper import ParticleState, SolverParams

P_FIX_PLUS = 0.8129939862767012  # mpmath, x0 = 0.4, s = 1e-4, Ne = 1e4
P_FIX_MINUS = 0.07375315047162305  # same with s = -1e-4


def particles(x, m, i_s=None, i_e=None):
    x = np.asarray(x, dtype=float)
    i_s = int(np.flatnonzero(x == 0.0).max()) if i_s is None else i_s
    i_e = int(np.flatnonzero(x == 1.0).min()) if i_e is None else i_e
    return ParticleState(x, np.asarray(m, dtype=float), i_s, i_e)


def random_particles(rng, n, bundle_left=0, bundle_right=0):
    free = n - bundle_left - bundle_right
    gaps = rng.uniform(0.05, 1.0, free)
    inner = np.cumsum(gaps)[:-1] / gaps.sum()
    x = np.concatenate((np.zeros(bundle_left + 1), inner, np.ones(bundle_right + 1)))
    return particles(x, rng.uniform(0.0, 1.0, n + 1), bundle_left, n - bundle_right)


class TestMassInterpolate:
    def test_identity(self, rng):
        x = random_particles(rng, 15)
        out = mass_interpolate(x, x)
        np.testing.assert_allclose(out.target_masses, x.m0, atol=1e-13)

    def test_hand_example(self):
        x = particles([0.0, 0.5, 1.0], [0.25, 0.5, 0.25])
        y = particles([0.0, 0.25, 1.0], [0.0, 0.0, 0.0])
        out = mass_interpolate(x, y)
        np.testing.assert_allclose(out.target_masses, [0.125, 0.5, 0.375], atol=1e-15)
        assert out.free_range == (0, 2)

    def test_bundled_mass_shared_equally(self):
        x = particles([0.0, 0.0, 0.0, 0.5, 1.0], [0.1, 0.1, 0.1, 0.4, 0.3])
        y = particles([0.0, 0.0, 0.4, 0.8, 1.0], np.zeros(5))
        out = mass_interpolate(x, y)
        # x bundles 0.2 below i_s = 2; y has a single bundled particle
        assert out.target_masses[0] == pytest.approx(0.2, abs=1e-15)
        assert out.target_masses.sum() == pytest.approx(1.0, abs=1e-15)

    def test_bundled_mass_to_free_end(self):
        x = particles([0.0, 0.0, 0.5, 1.0], [0.2, 0.2, 0.4, 0.2])
        y = particles([0.0, 0.3, 0.6, 1.0], np.zeros(4))
        out = mass_interpolate(x, y)
        assert out.target_masses.sum() == pytest.approx(1.0, abs=1e-15)
        assert out.target_masses[0] >= 0.2

    @settings(max_examples=100, deadline=None)
    @given(
        n=st.integers(3, 60),
        seed=st.integers(0, 2**31),
        bundles=st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.integers(0, 3)),
    )
    def test_conserves_mass(self, n, seed, bundles):
        rng = np.random.default_rng(seed)
        lx, rx, ly, ry = bundles
        if lx + rx > n - 2 or ly + ry > n - 2:
            return
        x = random_particles(rng, n, lx, rx)
        y = random_particles(rng, n, ly, ry)
        out = mass_interpolate(x, y)
        assert abs(out.target_masses.sum() - x.m0.sum()) <= 1e-12
        assert np.all(out.target_masses >= 0.0)

    def test_antisymmetric_subtraction(self, rng):
        for _ in range(20):
            a = random_particles(rng, 30, 2, 1)
            b = random_particles(rng, 30, 0, 3)
            fwd = _subtract(a, b, 1e-10)
            # G - W on the same grid is the negation
            back = mass_interpolate(b, a).target_masses - a.m0
            assert back.sum() == pytest.approx(-fwd.masses.sum(), abs=1e-12)
            assert _subtract(b, a, 1e-10).masses.sum() == pytest.approx(-fwd.masses.sum(), abs=1e-12)


class TestGaussianInitial:
    def test_signed_mass_is_one(self):
        from driftflow.stepper import init_state
        from driftflow.energy import ProblemSpec

        w0, g0 = gaussian_initial(DeltaSpec(0.4), 500)
        m_w = init_state(ProblemSpec(w0)).m0.sum()
        m_g = init_state(ProblemSpec(g0)).m0.sum()
        assert m_w - m_g == pytest.approx(1.0, abs=1e-13)

    @pytest.mark.parametrize("kw", [{"x0": 0.0}, {"x0": 1.0}, {"x0": 0.5, "sigma": 0.0}, {"x0": 0.5, "offset": -1.0}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            DeltaSpec(**kw)


class TestSolveDelta:
    def test_output_times(self):
        fields = solve_delta(DeltaSpec(0.4), 100, SolverParams(tau=0.05), [0.0, 0.5, 1.0])
        assert len(fields) == 3
        for f in fields:
            assert f.masses.sum() == pytest.approx(1.0, abs=1e-3)

    def test_rejects_unsorted_times(self):
        with pytest.raises(ValueError):
            solve_delta(DeltaSpec(0.4), 50, SolverParams(tau=0.1), [1.0, 0.5])

    def test_zero_selection_is_bitwise_pure_drift(self):
        solver = SolverParams(tau=0.05)
        times = [0.5, 1.0]
        plain = solve_delta(DeltaSpec(0.3), 100, solver, times)
        sel = solve_selection(DeltaSpec(0.3), 0.0, 1e4, 100, solver, times)
        for a, (b, _) in zip(plain, sel):
            np.testing.assert_array_equal(a.positions, b.positions)
            np.testing.assert_array_equal(a.density, b.density)
            np.testing.assert_array_equal(a.masses, b.masses)

    @pytest.mark.parametrize("s, ne", [(0.02, 1e4), (1e-4, 0.0)])
    def test_selection_validation(self, s, ne):
        with pytest.raises(ValueError):
            solve_selection(DeltaSpec(0.4), s, ne, 50, SolverParams(tau=0.1), [0.1])

    def test_subproblem_failure_is_tagged(self):
        solver = SolverParams(tau=0.05, newton=NewtonParams(max_iters=1, decrement_tol=1e-300, residual_tol=1e-300))
        with pytest.raises(SubproblemError) as info:
            for _ in iter_delta(DeltaSpec(0.4), 50, solver, 1.0):
                pass
        assert info.value.which in {"g", "w"}
        assert info.value.report is not None


class TestDeskScaleDelta:
    def test_total_probability_invariant(self, desk_pure_drift):
        history, _ = desk_pure_drift
        assert max(abs(d.total_mass - 1.0) for d in history) <= 1e-3

    def test_splits_toward_boundaries(self, desk_pure_drift):
        _, field = desk_pure_drift
        assert field.masses[0] > field.masses[-1] > 0.3

    def test_spike_scale(self, desk_pure_drift):
        _, field = desk_pure_drift
        assert 1e9 <= field.density[0] <= 2e10 and 1e9 <= field.density[-1] <= 2e10

    @pytest.mark.xfail(
        strict=True,
        reason="at h = tau = 1e-3 the expectation drifts by about 0.024; "
        "the drift is first order in tau (about 0.016 at tau = 1e-4)",
    )
    def test_expectation_invariant(self, desk_pure_drift):
        history, _ = desk_pure_drift
        e0 = history[0].barycenter
        assert max(abs(d.barycenter - e0) for d in history) <= 0.005

    def test_selection_total_probability(self, desk_selection):
        for history, _ in desk_selection.values():
            assert max(abs(d.total_mass - 1.0) for d in history) <= 1e-3

    @pytest.mark.parametrize("s, target", [(1e-4, P_FIX_PLUS), (-1e-4, P_FIX_MINUS)])
    def test_selection_expectation_reaches_p_fix(self, desk_selection, s, target):
        history, _ = desk_selection[s]
        assert abs(history[-1].barycenter - target) <= 0.02

    @pytest.mark.parametrize("s, target", [(1e-4, P_FIX_PLUS), (-1e-4, P_FIX_MINUS)])
    @pytest.mark.xfail(
        strict=True,
        reason="the expectation overshoots P_fix by the first-order-in-tau moment drift "
        "and reverses by up to 1e-2 while the last free particles fixate",
    )
    def test_selection_expectation_monotone_toward_p_fix(self, desk_selection, s, target):
        history, _ = desk_selection[s]
        gap = np.abs(np.array([d.barycenter for d in history[:: len(history) // 20]]) - target)
        assert np.all(np.diff(gap) <= 0.0)

    def test_negative_selection_prefers_loss(self, desk_selection):
        _, field = desk_selection[-1e-4]
        assert field.masses[-1] < 0.4 < field.masses[0]


class TestPFix:
    @pytest.mark.parametrize("s", [1e-4, -1e-3, 0.0, 1e-12])
    def test_endpoints(self, s):
        assert p_fix(0.0, s, 1e4) == 0.0
        assert p_fix(1.0, s, 1e4) == 1.0

    @pytest.mark.parametrize("x0", [0.0, 0.1, 0.4, 0.77, 1.0])
    def test_neutral_limit(self, x0):
        assert p_fix(x0, 0.0, 1e4) == x0
        assert p_fix(x0, 1e-16, 1.0) == pytest.approx(x0, abs=1e-15)

    def test_series_branch_continuous(self):
        c = 4 * 1e-9 * 1.0
        inside = p_fix(0.4, 1e-9 * 0.99, 1.0)
        outside = p_fix(0.4, 1e-8, 1.0)
        assert inside == pytest.approx(0.4 * (1 + 0.5 * c * 0.99 * 0.6), rel=1e-15)
        assert outside == pytest.approx(0.4 * (1 + 0.5 * 4e-8 * 0.6), rel=1e-12)

    def test_value(self):
        assert p_fix(0.4, 1e-4, 1e4) == pytest.approx(0.81300, abs=1e-5)
        assert p_fix(0.4, 1e-4, 1e4) == pytest.approx(P_FIX_PLUS, rel=1e-14)
        assert p_fix(0.4, -1e-4, 1e4) == pytest.approx(P_FIX_MINUS, rel=1e-13)

    def test_arbitrary_precision_cross_check(self):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 40
        for x0, s, ne in [(0.2, 3e-5, 1e4), (0.9, -2e-4, 5e3), (0.5, 1e-6, 10.0)]:
            c = 4 * mpmath.mpf(s) * ne
            exact = (1 - mpmath.exp(-c * x0)) / (1 - mpmath.exp(-c))
            assert p_fix(x0, s, ne) == pytest.approx(float(exact), rel=1e-13)

    def test_monotone(self):
        xs = np.linspace(0.0, 1.0, 100)
        assert np.all(np.diff([p_fix(x, 1e-4, 1e4) for x in xs]) > 0)
        ss = np.linspace(-1e-3, 1e-3, 100)
        assert np.all(np.diff([p_fix(0.4, s, 1e3) for s in ss]) > 0)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            p_fix(1.5, 1e-4, 1e4)
