import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchcons.signal import (
    DWELL_RTOL, SwitchingSignal, constant_signal, expand_timeshift, normalize_bounded, random_signal,
)


def three_step():
    return SwitchingSignal(0.0, 3.0, [0.0, 1.0, 2.0], [1, 2, 3], tau_d=1.0)


class TestLookup:
    def test_mode_inside_interval(self):
        assert three_step().mode_at(1.5) == 2

    def test_right_continuous_at_switch(self):
        sig = three_step()
        assert sig.mode_at(1.0) == 2
        assert sig.mode_at(np.nextafter(1.0, 0.0)) == 1

    def test_last_interval_closed_at_horizon_end(self):
        assert three_step().mode_at(3.0) == 3

    def test_constant_signal(self):
        sig = constant_signal(4, 0.0, 10.0)
        assert {sig.mode_at(t) for t in np.linspace(0, 10, 57)} == {4}

    @pytest.mark.parametrize("t, expected", [(1.5, 1.0), (1.0, 1.0), (0.3, 0.0), (3.0, 2.0)])
    def test_gamma(self, t, expected):
        assert three_step().gamma(t) == expected

    @pytest.mark.parametrize("t", [-0.1, 3.0001])
    def test_out_of_horizon(self, t):
        with pytest.raises(IndexError):
            three_step().mode_at(t)
        with pytest.raises(IndexError):
            three_step().gamma(t)

    def test_first_switch_may_precede_horizon(self):
        sig = SwitchingSignal(0.5, 3.0, [0.0, 1.0], [1, 2], tau_d=1.0)
        assert sig.mode_at(0.5) == 1 and sig.gamma(0.7) == 0.0


class TestValidation:
    def test_dwell_below_tau_d(self):
        with pytest.raises(ValueError):
            SwitchingSignal(0, 3, [0, 0.5, 2], [1, 2, 1], tau_d=1.0)

    def test_dwell_above_tau_u(self):
        with pytest.raises(ValueError):
            SwitchingSignal(0, 5, [0, 3], [1, 2], tau_d=1.0, tau_u=2.0)

    def test_tau_u_below_tau_d(self):
        with pytest.raises(ValueError):
            SwitchingSignal(0, 5, [0], [1], tau_d=1.0, tau_u=0.5)

    def test_unsorted_or_late_start(self):
        with pytest.raises(ValueError):
            SwitchingSignal(0, 5, [0.5], [1], tau_d=0.1)
        with pytest.raises(ValueError):
            SwitchingSignal(0, 5, [0, 2, 1.5], [1, 2, 1], tau_d=0.1)

    def test_mode_ids_one_based(self):
        with pytest.raises(ValueError):
            SwitchingSignal(0, 1, [0], [0], tau_d=0.1)

    def test_record_round_trip(self):
        sig = random_signal(3, 0.1, 0.2, (0, 5), seed=4)
        assert SwitchingSignal.from_record(sig.to_record()) == sig


class TestNormalize:
    def test_five_into_three_pieces(self):
        # equal pieces must fit in [1, 2): 5/2 is too long, 5/3 fits
        sig = SwitchingSignal(0.0, 5.0, [0.0], [7], tau_d=1.0)
        out = normalize_bounded(sig, 2.0)
        np.testing.assert_allclose(out.switch_times, [0, 5 / 3, 10 / 3], rtol=0, atol=1e-15)
        assert out.mode_ids == (7, 7, 7)
        assert out.tau_u == 2.0

    def test_short_interval_unchanged(self):
        sig = SwitchingSignal(0.0, 1.5, [0.0], [2], tau_d=1.0)
        assert normalize_bounded(sig, 2.0).switch_times == (0.0,)

    def test_target_too_small(self):
        with pytest.raises(ValueError):
            normalize_bounded(constant_signal(1, 0, 5, tau_d=1.0), 1.5)

    def test_pointwise_mode_equality(self):
        sig = SwitchingSignal(0.0, 20.0, [0.0, 1.2, 7.9, 8.9, 15.0], [1, 2, 1, 3, 2], tau_d=1.0)
        out = normalize_bounded(sig, 2.5)
        for t in np.linspace(0, 20, 1000):
            assert out.mode_at(t) == sig.mode_at(t)
        assert np.all(out.dwells >= 1.0) and np.all(out.dwells < 2.5)


def _brute_pieces(a, b, tau_d):
    # the partition written out longhand: tau_d pieces while more than 2 tau_d remains
    pieces, t, j = [], a, 0
    while b - t >= 2 * tau_d - 1e-12:
        pieces.append((t, t + tau_d, j * tau_d))
        t += tau_d
        j += 1
    pieces.append((t, b, j * tau_d))
    return pieces


class TestExpand:
    def test_three_and_a_half(self):
        sig = SwitchingSignal(0.0, 3.5, [0.0], [1], tau_d=1.0, tau_u=3.5)
        out, table = expand_timeshift(sig, 1)
        assert out.switch_times == (0.0, 1.0, 2.0)
        assert [table[k][1] for k in out.mode_ids] == [0.0, 1.0, 2.0]
        assert {table[k][0] for k in out.mode_ids} == {1}
        assert out.tau_u == 2.0

    def test_exactly_two_tau_d(self):
        sig = SwitchingSignal(0.0, 4.0, [0.0, 2.0], [1, 2], tau_d=1.0, tau_u=2.0)
        out, table = expand_timeshift(sig, 2)
        assert out.switch_times == (0.0, 1.0, 2.0, 3.0)
        assert [table[k] for k in out.mode_ids] == [(1, 0.0), (1, 1.0), (2, 0.0), (2, 1.0)]

    def test_matches_longhand_partition(self):
        sig = random_signal(3, 0.3, 1.4, (0, 30), seed=11)
        out, table = expand_timeshift(sig, 3)
        ends = list(sig.switch_times[1:]) + [sig.horizon_end]
        expected = []
        for a, b, k in zip(sig.switch_times, ends, sig.mode_ids):
            expected += [(p[0], k, p[2]) for p in _brute_pieces(a, b, 0.3)]
        got = [(t, *table[k]) for t, k in zip(out.switch_times, out.mode_ids)]
        assert len(got) == len(expected)
        for g, e in zip(got, expected):
            assert g[1] == e[1]
            assert math.isclose(g[0], e[0], abs_tol=1e-12) and math.isclose(g[2], e[2], abs_tol=1e-12)

    def test_cut_dwells_exactly_at_least_tau_d(self):
        # no slack: cut points are nudged so float differences never fall short
        for seed in range(20):
            sig = random_signal(3, 0.1, 0.45, (0.0, 20.0), seed=seed)
            out, _ = expand_timeshift(sig, 3)
            assert np.all(np.diff(out.switch_times) >= 0.1)

    def test_needs_upper_bound(self):
        with pytest.raises(ValueError):
            expand_timeshift(constant_signal(1, 0, 5), 1)


class TestRandom:
    def test_deterministic(self):
        assert random_signal(3, 0.1, 0.2, (0, 10), 5) == random_signal(3, 0.1, 0.2, (0, 10), 5)

    def test_single_mode(self):
        sig = random_signal(1, 0.1, 0.2, (0, 10), 5)
        assert sig.modes_used == {1} and len(sig.switch_times) > 1

    @pytest.mark.parametrize("bounds", [(0.0, 0.2), (0.3, 0.2), (-1, 1)])
    def test_bad_bounds(self, bounds):
        with pytest.raises(ValueError):
            random_signal(2, *bounds, (0, 10), 0)


@st.composite
def bounded_signals(draw):
    tau_d = draw(st.floats(0.05, 1.0))
    tau_u = tau_d * draw(st.floats(1.0, 4.0))
    horizon = draw(st.floats(0.5, 20.0))
    seed = draw(st.integers(0, 2**31))
    modes = draw(st.integers(1, 4))
    return random_signal(modes, tau_d, tau_u, (0.0, horizon), seed), modes


@settings(max_examples=60, deadline=None)
@given(bounded_signals())
def test_dwells_within_bounds(data):
    sig, _ = data
    # switch times are running sums, so the bounds hold up to the validator's relative slack
    d = sig.dwells
    assert np.all(d >= sig.tau_d * (1 - DWELL_RTOL)) and np.all(d <= sig.tau_u * (1 + DWELL_RTOL))


@settings(max_examples=60, deadline=None)
@given(bounded_signals(), st.floats(0, 1))
def test_gamma_idempotent(data, u):
    sig, _ = data
    t = sig.horizon_start + u * (sig.horizon_end - sig.horizon_start)
    g = sig.gamma(t)
    assert sig.gamma(g) == g and g <= t


@settings(max_examples=60, deadline=None)
@given(bounded_signals())
def test_expand_dwells_in_half_open_band(data):
    sig, modes = data
    out, table = expand_timeshift(sig, modes)
    d = out.dwells
    assert np.all(d >= out.tau_d * (1 - 1e-9)) and np.all(d < 2 * out.tau_d)
    # composed lookup: original mode and clock are reproduced
    for t in np.linspace(sig.horizon_start, sig.horizon_end, 200):
        k, off = table[out.mode_at(t)]
        assert k == sig.mode_at(t)
        assert abs((t - out.gamma(t) + off) - (t - sig.gamma(t))) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(2.0, 5.0), st.integers(0, 2**31))
def test_normalize_preserves_modes(tau_d, ratio, seed):
    rng = np.random.default_rng(seed)
    gaps = tau_d * (1 + 8 * rng.random(12))
    times = np.concatenate([[0.0], np.cumsum(gaps)[:-1]])
    sig = SwitchingSignal(0.0, float(np.sum(gaps)), times, rng.integers(1, 4, 12).tolist(), tau_d)
    out = normalize_bounded(sig, ratio * tau_d)
    assert np.all(out.dwells >= tau_d * (1 - 1e-9)) and np.all(out.dwells < ratio * tau_d)
    for t in np.linspace(0, sig.horizon_end, 300):
        assert out.mode_at(t) == sig.mode_at(t)
