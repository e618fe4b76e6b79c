import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchcons.dynamics import BallDomain, Mode, ModeSet, SwitchedSystem, integrate
from switchcons.graph import Digraph, random_uniformly_connected_signal
from switchcons.lyapunov import (
    Margins, PairCertificate, ScalarCertificate, argmax_agents, argmax_pairs, check_assumption_v,
    check_assumption_w, consensus_distance, dini_max_v, dini_max_v_fd, dini_max_w, dini_max_w_fd, fd_gradient,
    max_v, max_w, monitor, stability_radius, settling_time, squared_difference, squared_norm,
    strict_decrease_window,
)
from switchcons.signal import constant_signal, random_signal
from switchcons.systems import make_linear_consensus

from .oracles import grid_consensus_distance

V = squared_norm()
W = squared_difference()
PAIR = Digraph(2, frozenset({(1, 2), (2, 1)}))


def pair_linear(t_end=2.0):
    return SwitchedSystem(make_linear_consensus(2, 1, [PAIR]), constant_signal(1, 0.0, t_end))


def generated_linear(n=5, m=2, seed=0, horizon=12.0, kind="strong"):
    p, T = random_uniformly_connected_signal(n, 0.1, 0.2, 1.0, (0.0, horizon), kind, seed=seed)
    graphs = [p.mode_graphs[k] for k in sorted(p.mode_graphs)]
    return SwitchedSystem(make_linear_consensus(n, m, graphs), p.signal), T


class TestMaxima:
    def test_max_v(self):
        assert max_v(V, np.array([[1.0, 0.0], [0.0, 2.0]])) == 4.0
        assert max_v(V, np.array([[0.5, 0.5]] * 3)) == 0.5
        assert max_v(V, np.array([[3.0]])) == 9.0

    def test_max_w(self):
        assert max_w(W, np.array([[0.0], [1.0], [3.0]])) == 9.0
        assert max_w(W, np.full((4, 2), 0.3)) == 0.0
        x = np.array([[0.2, 1.0], [-0.4, 0.5]])
        assert max_w(W, x) == pytest.approx(W.value(x[0], x[1]))

    def test_max_w_over_ordered_pairs(self):
        asym = PairCertificate(w=lambda a, b: np.sum(np.maximum(b - a, 0.0) ** 2, axis=-1))
        assert max_w(asym, np.array([[0.0], [2.0]])) == 4.0
        assert argmax_pairs(asym, np.array([[0.0], [2.0]])) == {(1, 2)}

    def test_argmax_tie(self):
        assert argmax_agents(V, np.array([[2.0], [-2.0], [1.0]]), tol=1e-9) == {1, 2}

    def test_argmax_distinct(self):
        assert argmax_agents(V, np.array([[2.0], [-1.5], [1.0]])) == {1}

    def test_argmax_wide_tol(self):
        assert argmax_agents(V, np.array([[2.0], [-1.5], [1.0]]), tol=10.0) == {1, 2, 3}

    def test_default_tie_band_ignores_near_consensus_spread(self):
        # values 1e-12 apart are not ties once the spread itself is that small
        x = np.array([[1.0], [1.0 - 1e-12], [1.0 - 2e-12]])
        assert argmax_agents(V, x) == {1}


class TestDini:
    def test_symmetric_pair(self):
        assert dini_max_v(V, pair_linear(), 0.5, np.array([[1.0], [-1.0]])) == pytest.approx(-4.0)

    def test_unique_argmax(self):
        assert dini_max_v(V, pair_linear(), 0.5, np.array([[2.0], [1.0]])) == pytest.approx(-4.0)

    def test_zero_field(self):
        sys = SwitchedSystem(ModeSet(1, 2, [Mode(lambda s, x: 0 * x, PAIR)]), constant_signal(1, 0, 1))
        assert dini_max_v(V, sys, 0.1, np.array([[1.0], [-3.0]])) == 0.0

    def test_finite_difference_oracle(self):
        sys = pair_linear()
        for x in ([[1.0], [-1.0]], [[2.0], [1.0]]):
            fd = dini_max_v_fd(V, sys, 0.3, np.array(x))
            assert fd == pytest.approx(-4.0, abs=1e-4)

    def test_fd_gradient(self):
        y = np.array([[0.3, -1.2], [2.0, 0.1]])
        assert np.allclose(fd_gradient(V.v, y), 2 * y, atol=1e-8)

    def test_certificate_without_gradient(self):
        cert = ScalarCertificate(v=lambda y: np.sum(y ** 4, axis=-1))
        y = np.array([[0.5, -1.0]])
        assert np.allclose(cert.gradient(y), 4 * y ** 3, atol=1e-7)


def _stable_argmax(sets_fn, x):
    return sets_fn(x, 1e-12) == sets_fn(x, 1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_dini_analytic_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    g = Digraph(n, frozenset((j, i) for j in range(1, n + 1) for i in range(1, n + 1) if i != j and rng.random() < 0.5))
    sys = SwitchedSystem(make_linear_consensus(n, m, [g]), constant_signal(1, 0.0, 1.0))
    x = rng.uniform(-1, 1, size=(n, m))
    eps = 1e-6
    if _stable_argmax(lambda y, t: argmax_agents(V, y, t), x):
        lip = np.max(np.abs(x)) * n
        assert abs(dini_max_v(V, sys, 0.2, x) - dini_max_v_fd(V, sys, 0.2, x, eps)) <= max(1e-4, 10 * eps * lip)
    if _stable_argmax(lambda y, t: argmax_pairs(W, y, t), x):
        lip = 4 * np.max(np.abs(x)) * n
        assert abs(dini_max_w(W, sys, 0.2, x) - dini_max_w_fd(W, sys, 0.2, x, eps)) <= max(1e-4, 10 * eps * lip)


class TestConsensusDistance:
    def test_pair(self):
        assert consensus_distance(np.array([[1.0], [-1.0]])) == pytest.approx(math.sqrt(2), abs=1e-15)

    def test_on_consensus(self):
        assert consensus_distance(np.full((5, 3), -0.7)) == pytest.approx(0.0, abs=1e-15)

    def test_grid_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.uniform(-2, 2, size=int(rng.integers(2, 6)))
            assert abs(consensus_distance(x[:, None]) - grid_consensus_distance(x)) < 1e-6


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**31))
def test_consensus_distance_translation_invariant(n, m, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, m))
    c = rng.normal(size=m) * 10
    assert consensus_distance(x + c) == pytest.approx(consensus_distance(x), rel=1e-9, abs=1e-12)


class TestRadius:
    def test_equal_sandwich(self):
        assert stability_radius(V, 0.5) == pytest.approx(0.5)

    def test_analytic_vs_bisection(self):
        cert = ScalarCertificate(V.v, V.grad_v, beta1=lambda r: r * r, beta2=lambda r: 2 * r * r)
        with_inverse = ScalarCertificate(V.v, V.grad_v, beta1=lambda r: r * r, beta2=lambda r: 2 * r * r,
                                         beta2_inv=lambda z: np.sqrt(z / 2))
        assert stability_radius(cert, 0.8) == pytest.approx(0.8 / math.sqrt(2), abs=1e-11)
        assert stability_radius(with_inverse, 0.8) == pytest.approx(0.8 / math.sqrt(2), abs=1e-15)

    def test_zero(self):
        assert stability_radius(V, 0.0) == 0.0

    def test_outside_domain(self):
        with pytest.raises(ValueError):
            stability_radius(V, 2.0, domain_radius=1.0)

    def test_needs_sandwich(self):
        with pytest.raises(ValueError):
            stability_radius(ScalarCertificate(V.v), 0.5)

    def test_sandwich_holds_on_samples(self):
        y = np.random.default_rng(0).normal(size=(500, 3))
        r = np.linalg.norm(y, axis=-1)
        assert np.all(V.beta1(r) <= V.value(y) + 1e-12) and np.all(V.value(y) <= V.beta2(r) + 1e-12)

    def test_w_positive_off_diagonal(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))
        assert np.all(W.value(a, a) == 0) and np.all(W.value(a, b) > 0)


class TestSettling:
    def test_first_sustained_time(self):
        t = np.arange(6.0)
        assert settling_time(t, np.array([5, 0.5, 2, 0.5, 0.1, 0.0]), 1.0) == 3.0

    def test_never(self):
        assert settling_time(np.arange(3.0), np.array([5, 0.5, 2.0]), 1.0) is None

    def test_from_start(self):
        assert settling_time(np.arange(3.0), np.zeros(3), 1.0) == 0.0


class TestCheckers:
    def test_linear_v_clean(self):
        sys, _ = generated_linear(seed=1)
        traj = integrate(sys, np.random.default_rng(1).uniform(-1, 1, (5, 2)), 0.0, 12.0, 1e-3)
        rep = check_assumption_v(V, sys, traj, stride=10)
        assert rep.ok, rep.violations[:3]
        assert rep.max_increase("v") <= 1e-9

    def test_linear_w_clean(self):
        sys, _ = generated_linear(seed=2, kind="quasi-strong")
        traj = integrate(sys, np.random.default_rng(2).uniform(-1, 1, (5, 2)), 0.0, 12.0, 1e-3)
        rep = check_assumption_w(W, sys, traj, stride=10)
        assert rep.ok, rep.violations[:3]

    def test_expanding_field_flags_every_sample(self):
        grow = Mode(lambda s, x: x, Digraph.complete(3), time_invariant=True)
        sys = SwitchedSystem(ModeSet(1, 3, [grow], BallDomain(10.0)), constant_signal(1, 0, 1))
        traj = integrate(sys, [[0.5], [-0.2], [0.1]], 0.0, 1.0, 1e-2)
        rep = check_assumption_v(V, sys, traj)
        dini = [v for v in rep.violations if v.kind == "dini-positive"]
        assert len(dini) == len(traj)
        assert dini[0].witness["dini"] == pytest.approx(2 * 0.25)

    def test_consensus_start_vacuous(self):
        sys, _ = generated_linear(seed=3)
        traj = integrate(sys, np.full((5, 2), 0.4), 0.0, 3.0, 1e-2)
        assert check_assumption_v(V, sys, traj).ok
        assert check_assumption_w(W, sys, traj).ok

    def test_planted_isolated_pair_moves(self):
        # agent 1 and 2 are the extremal pair with no neighbors, yet agent 1 is pushed inward
        def f(s, x):
            out = np.zeros_like(x)
            out[0] = -x[0]
            return out

        g = Digraph(3)
        sys = SwitchedSystem(ModeSet(1, 3, [Mode(f, g, time_invariant=True)]), constant_signal(1, 0, 1))
        traj = integrate(sys, [[1.0], [-1.0], [0.0]], 0.0, 0.2, 1e-2)
        kinds = check_assumption_w(W, sys, traj).kinds()
        assert "only-if" in kinds and "nonzero-field" in kinds

    def test_time_varying_zero_condition_sampled(self):
        # field vanishes at s = 0 but not at other reset-clock values
        def f(s, x):
            return np.full_like(x, s)

        sys = SwitchedSystem(ModeSet(1, 2, [Mode(f, Digraph(2))]), random_signal(1, 0.5, 1.0, (0, 2), 0))
        traj = integrate(sys, [[0.0], [0.0]], 0.0, 1e-3, 1e-3)
        rep = check_assumption_v(V, sys, traj, Margins(), s_samples=4, seed=0)
        assert "nonzero-field" in rep.kinds()


class TestStrictDecrease:
    def test_pass_on_generated_signal(self):
        sys, T = generated_linear(seed=4, horizon=30.0)
        traj = integrate(sys, np.random.default_rng(4).uniform(-1, 1, (5, 2)), 0.0, 30.0, 1e-3)
        verdict = strict_decrease_window(monitor(traj, V), sys, 5 * (T + 2 * 0.1))
        assert verdict.passed and verdict.checked > 0 and verdict.min_decrease > 0

    def test_split_graph_fails(self):
        g = Digraph(4, frozenset({(1, 2), (2, 1), (3, 4), (4, 3)}))
        sys = SwitchedSystem(make_linear_consensus(4, 1, [g]), random_signal(1, 0.1, 0.2, (0, 10), 0))
        traj = integrate(sys, [[1.0], [1.0], [-0.5], [-0.5]], 0.0, 10.0, 1e-2)
        verdict = strict_decrease_window(monitor(traj, V), sys, 4.0)
        assert verdict.status == "fail" and verdict.failures

    def test_state_in_consensus_vacuous(self):
        sys, _ = generated_linear(seed=5)
        traj = integrate(sys, np.full((5, 2), 0.2), 0.0, 12.0, 1e-2)
        verdict = strict_decrease_window(monitor(traj, V), sys, 2.0)
        assert verdict.passed and verdict.checked == 0

    def test_window_too_long(self):
        sys, _ = generated_linear(seed=5)
        traj = integrate(sys, np.ones((5, 2)) * np.arange(5)[:, None] / 5, 0.0, 12.0, 1e-2)
        assert strict_decrease_window(monitor(traj, V), sys, 50.0).status == "insufficient horizon"


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_max_v_monotone_on_linear(seed):
    sys, _ = generated_linear(n=4, m=2, seed=seed, horizon=4.0)
    traj = integrate(sys, np.random.default_rng(seed).uniform(-1, 1, (4, 2)), 0.0, 4.0, 1e-3)
    rep = monitor(traj, V, W)
    assert rep.max_increase("v") <= 1e-9 and rep.max_increase("w") <= 1e-9
    assert set(rep.times) <= set(traj.times)
