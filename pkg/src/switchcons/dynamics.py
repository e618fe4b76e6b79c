"""Mode families, the switched right-hand side and its integrator.

States are arrays of shape ``(n, m)``: row ``i`` is agent ``i + 1``.  A mode
field is a callable ``field(s, x)`` returning an ``(n, m)`` array, where ``s``
is the reset clock (time since the last switch).
"""
from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .graph import Digraph, GraphProcess
from .signal import SwitchingSignal, random_signal


class NumericalError(ArithmeticError):
    """Integration produced a non-finite state; carries the valid prefix."""

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


class BallDomain:
    """Product of closed per-agent balls of radius ``radius`` about the origin."""

    def __init__(self, radius: float, rtol: float = 1e-9):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.rtol = rtol

    def contains(self, x) -> bool:
        return bool(self.contains_batch(np.asarray(x)[None])[0])

    def contains_batch(self, states) -> np.ndarray:
        norms = np.sqrt(np.sum(states**2, axis=-1))
        return np.all(norms <= self.radius * (1 + self.rtol), axis=-1)

    def sample(self, rng, n, m, radius=None) -> np.ndarray:
        # an unbounded domain is sampled on the unit ball
        r = self.radius if radius is None else radius
        return sample_ball(rng, n, m, r if math.isfinite(r) else 1.0)

    def to_record(self):
        return {"kind": "ball", "radius": self.radius}

    def __repr__(self):
        return f"BallDomain({self.radius})"


class BoxDomain:
    """Every agent coordinate lies in ``[low, high]``."""

    def __init__(self, low, high, rtol: float = 1e-9):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        if np.any(self.low >= 0) or np.any(self.high <= 0):
            raise ValueError("box must contain the origin in its interior")
        self.rtol = rtol

    def contains(self, x) -> bool:
        return bool(self.contains_batch(np.asarray(x)[None])[0])

    def contains_batch(self, states) -> np.ndarray:
        slack = self.rtol * np.maximum(np.abs(self.low), np.abs(self.high))
        ok = (states >= self.low - slack) & (states <= self.high + slack)
        return np.all(ok, axis=(-2, -1))

    def sample(self, rng, n, m, radius=None) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, m))

    def to_record(self):
        return {"kind": "box", "low": self.low.tolist(), "high": self.high.tolist()}

    def __repr__(self):
        return f"BoxDomain({self.low.tolist()}, {self.high.tolist()})"


def sample_ball(rng, n, m, radius) -> np.ndarray:
    """``n`` points uniform in the closed ``m``-ball of ``radius``."""
    direction = rng.normal(size=(n, m))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / m)
    return direction * r[:, None]


@dataclass
class Mode:
    field: Callable
    graph: Digraph
    time_invariant: bool = False
    # linear time-invariant modes may expose f(x) = matrix @ x
    matrix: np.ndarray | None = None

    def __call__(self, s, x):
        return self.field(s, x)


@dataclass
class ModeSet:
    m: int
    n: int
    modes: list
    domain: object = None
    name: str = ""
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if not self.modes:
            raise ValueError("a mode set needs at least one mode")
        for k, mode in enumerate(self.modes, start=1):
            if mode.graph.n != self.n:
                raise ValueError(f"mode {k} graph has {mode.graph.n} nodes, expected {self.n}")
        if self.domain is None:
            self.domain = BallDomain(np.inf)
        if not self.domain.contains(np.zeros((self.n, self.m))):
            raise ValueError("domain must contain the origin")

    def __len__(self):
        return len(self.modes)

    def mode(self, k: int) -> Mode:
        if not 1 <= k <= len(self.modes):
            raise IndexError(f"mode id {k} outside 1..{len(self.modes)}")
        return self.modes[k - 1]

    @property
    def graphs(self) -> dict:
        return {k: mode.graph for k, mode in enumerate(self.modes, start=1)}

    @property
    def time_invariant(self) -> bool:
        return all(mode.time_invariant for mode in self.modes)

    def agent_field(self, k: int, i: int, s, x) -> np.ndarray:
        """Component of mode ``k`` driving agent ``i`` (1-based)."""
        return self.mode(k).field(s, x)[i - 1]

    def timeshifted(self, table: dict) -> "ModeSet":
        """Mode set whose id ``k'`` evaluates ``f_k(s + offset)`` per ``table``."""
        modes = []
        for new_id in range(1, max(table) + 1):
            k, offset = table[new_id]
            base = self.mode(k)
            modes.append(Mode(
                _shifted(base.field, offset), base.graph, base.time_invariant,
                base.matrix,
            ))
        return ModeSet(self.m, self.n, modes, self.domain, self.name + "+shift", dict(self.meta))


def _shifted(f, offset):
    if offset == 0:
        return f
    return lambda s, x: f(s + offset, x)


@dataclass
class SwitchedSystem:
    mode_set: ModeSet
    signal: SwitchingSignal

    def __post_init__(self):
        bad = [k for k in self.signal.modes_used if not 1 <= k <= len(self.mode_set)]
        if bad:
            raise ValueError(f"signal uses unknown mode ids {sorted(bad)}")

    @property
    def n(self):
        return self.mode_set.n

    @property
    def m(self):
        return self.mode_set.m

    @property
    def graph_process(self) -> GraphProcess:
        used = self.signal.modes_used
        return GraphProcess({k: g for k, g in self.mode_set.graphs.items() if k in used}, self.signal)


def _as_state(sys_or_ms, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(sys_or_ms.n, sys_or_ms.m)


def rhs(sys: SwitchedSystem, t, x) -> np.ndarray:
    """Active field at reset clock ``t - gamma(t)``; right-continuous."""
    k = sys.signal.mode_at(t)
    return sys.mode_set.mode(k).field(t - sys.signal.gamma(t), _as_state(sys, x))


def rhs_left(sys: SwitchedSystem, t, x) -> np.ndarray:
    """Left limit of the right-hand side at ``t``."""
    sig = sys.signal
    sig._check_time(t)
    k = bisect_left(sig.switch_times, t) - 1
    if k < 0:
        raise IndexError("no left limit at the first switch time")
    mode = sys.mode_set.mode(sig.mode_ids[k])
    return mode.field(t - sig.switch_times[k], _as_state(sys, x))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (N, n, m)
    mode_ids: np.ndarray
    switch_marks: list
    domain_exit: float | None = None

    @property
    def flat_states(self) -> np.ndarray:
        return self.states.reshape(len(self.times), -1)

    @property
    def is_switch(self) -> np.ndarray:
        mask = np.zeros(len(self.times), dtype=bool)
        mask[self.switch_marks] = True
        return mask

    def at(self, t) -> np.ndarray:
        """State at the first sample time >= t."""
        return self.states[np.searchsorted(self.times, t)]

    def __len__(self):
        return len(self.times)


def rk4_propagator(a: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for x' = a @ x, as a matrix."""
    ha = h * a
    eye = np.eye(len(a))
    return eye + ha @ (eye + ha @ (eye / 2 + ha @ (eye / 6 + ha / 24)))


def _rk4_block(f, start, lo, h, count, x, out):
    for i in range(count):
        s = lo + i * h - start
        k1 = f(s, x)
        k2 = f(s + h / 2, x + h / 2 * k1)
        k3 = f(s + h / 2, x + h / 2 * k2)
        k4 = f(s + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = x
    return x


def _linear_block(a, h, count, x, out):
    p = rk4_propagator(a, h)
    for i in range(count):
        x = p @ x
        out[i] = x
    return x


def integrate(sys: SwitchedSystem, x0, t0, t_end, step, check_domain: bool = True) -> Trajectory:
    """Fixed-step RK4 that lands exactly on every switch time.

    Each dwell inside [t0, t_end] is split into equal steps no longer than
    ``step``; the field restarts with the new mode and a zeroed reset clock
    at every switch.  Integration stops at the first sample outside the
    domain (``domain_exit``).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if not t0 < t_end:
        raise ValueError("need t0 < t_end")
    sig = sys.signal
    ms = sys.mode_set
    x = _as_state(sys, x0).copy()
    if check_domain and not ms.domain.contains(x):
        raise ValueError("initial state outside the domain")

    plan = []
    for iv in sig.intervals(t0, t_end):
        if iv.hi <= iv.lo:
            continue
        count = max(1, math.ceil((iv.hi - iv.lo) / step - 1e-9))
        plan.append((iv, count))
    total = sum(c for _, c in plan)

    times = np.empty(total + 1)
    states = np.empty((total + 1, sys.n, sys.m))
    modes = np.empty(total + 1, dtype=int)
    times[0], states[0], modes[0] = t0, x, sig.mode_at(t0)
    switch_set = set(sig.switch_times)
    marks = [0] if t0 in switch_set else []

    filled = 0
    exit_time = None
    for iv, count in plan:
        h = (iv.hi - iv.lo) / count
        block = states[filled + 1: filled + 1 + count]
        mode = ms.mode(iv.mode)
        if mode.matrix is not None:
            _linear_block(mode.matrix, h, count, x, block)
        else:
            _rk4_block(mode.field, iv.start, iv.lo, h, count, x, block)
        tb = iv.lo + h * np.arange(1, count + 1)
        tb[-1] = iv.hi
        times[filled + 1: filled + 1 + count] = tb
        modes[filled + 1: filled + 1 + count] = iv.mode

        finite = np.all(np.isfinite(block), axis=(1, 2))
        inside = ms.domain.contains_batch(block) if check_domain else np.ones(count, bool)
        bad = np.flatnonzero(~(finite & inside))
        if bad.size:
            b = bad[0]
            if not finite[b]:
                traj = Trajectory(times[: filled + 1 + b], states[: filled + 1 + b],
                                  modes[: filled + 1 + b], marks)
                raise NumericalError(f"non-finite state at t={tb[b]}", traj)
            filled += b + 1
            exit_time = float(tb[b])
            break
        filled += count
        x = block[-1]
        if iv.hi in switch_set and iv.hi < sig.horizon_end:
            modes[filled] = sig.mode_at(iv.hi)
            marks.append(filled)

    n_samples = filled + 1
    return Trajectory(times[:n_samples], states[:n_samples], modes[:n_samples],
                      [k for k in marks if k < n_samples], exit_time)


@dataclass
class LocalityReport:
    samples: int
    violations: list  # (mode, agent, non-neighbor) triples, 1-based

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_locality(ms: ModeSet, samples: int, seed, s_max: float = 1.0, tol: float = 1e-12) -> LocalityReport:
    """Check each agent's field ignores non-neighbors at random points of D."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    found = set()
    for k, mode in enumerate(ms.modes, start=1):
        nbrs = [mode.graph.neighbors(i) for i in range(1, ms.n + 1)]
        for _ in range(samples):
            s = rng.uniform(0, s_max)
            x = ms.domain.sample(rng, ms.n, ms.m)
            base = mode.field(s, x)
            for j in range(1, ms.n + 1):
                outsiders = [i for i in range(1, ms.n + 1) if j not in nbrs[i - 1]]
                if not outsiders:
                    continue
                y = x.copy()
                y[j - 1] = ms.domain.sample(rng, 1, ms.m)[0]
                moved = mode.field(s, y)
                for i in outsiders:
                    if np.max(np.abs(moved[i - 1] - base[i - 1])) > tol:
                        found.add((k, i, j))
    return LocalityReport(samples, sorted(found))


@dataclass
class ProbeReport:
    trials: int
    radius: float
    exits: list  # (trial, time, max agent norm)
    max_norm: float

    @property
    def ok(self) -> bool:
        return not self.exits


def invariance_probe(
    ms: ModeSet,
    radius: float,
    trials: int,
    seed,
    tau_d: float = 0.1,
    tau_u: float = 0.2,
    horizon=(0.0, 5.0),
    step: float = 1e-2,
    tol: float = 1e-9,
) -> ProbeReport:
    """Integrate random starts in the per-agent ball under random signals.

    Reports every trial in which some agent leaves the closed ball of
    ``radius`` (beyond a relative ``tol``) or the system leaves its domain.
    """
    dom_r = getattr(ms.domain, "radius", np.inf)
    if radius > dom_r * (1 + 1e-12):
        raise ValueError("probe region must lie inside the domain")
    rng = np.random.default_rng(seed)
    exits = []
    worst = 0.0
    for trial in range(trials):
        x0 = sample_ball(rng, ms.n, ms.m, radius)
        sig = random_signal(len(ms), tau_d, tau_u, horizon, int(rng.integers(2**31)))
        traj = integrate(SwitchedSystem(ms, sig), x0, horizon[0], horizon[1], step)
        norms = np.sqrt(np.sum(traj.states**2, axis=-1)).max(axis=1)
        worst = max(worst, float(norms.max()))
        out = np.flatnonzero(norms > radius * (1 + tol))
        if out.size:
            exits.append((trial, float(traj.times[out[0]]), float(norms[out[0]])))
        elif traj.domain_exit is not None:
            exits.append((trial, traj.domain_exit, float(norms[-1])))
    return ProbeReport(trials, radius, exits, worst)
