"""Dwell-time constrained switching signals.

A signal is a finite-horizon, right-continuous, piecewise-constant map from
time to a mode id.  Mode ids start at 1.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterator

import numpy as np

# Dwell bounds are checked with a relative slack so that switch times built by
# repeated addition still validate; mode lookups stay exact.
DWELL_RTOL = 1e-9


@dataclass(frozen=True)
class Interval:
    start: float  # switch time that opened the interval (may precede the window)
    end: float
    lo: float  # clipped window [lo, hi]
    hi: float
    mode: int
    index: int


@dataclass(frozen=True)
class SwitchingSignal:
    horizon_start: float
    horizon_end: float
    switch_times: tuple
    mode_ids: tuple
    tau_d: float
    tau_u: float | None = None

    def __post_init__(self):
        times = tuple(float(t) for t in self.switch_times)
        modes = tuple(int(k) for k in self.mode_ids)
        object.__setattr__(self, "switch_times", times)
        object.__setattr__(self, "mode_ids", modes)
        object.__setattr__(self, "horizon_start", float(self.horizon_start))
        object.__setattr__(self, "horizon_end", float(self.horizon_end))
        object.__setattr__(self, "tau_d", float(self.tau_d))
        if self.tau_u is not None:
            object.__setattr__(self, "tau_u", float(self.tau_u))

        if not self.horizon_start < self.horizon_end:
            raise ValueError("horizon_start must be < horizon_end")
        if not times or len(times) != len(modes):
            raise ValueError("need one mode id per switch time")
        if self.tau_d <= 0:
            raise ValueError("tau_d must be positive")
        if self.tau_u is not None and self.tau_u < self.tau_d:
            raise ValueError("tau_u must be >= tau_d")
        if times[0] > self.horizon_start:
            raise ValueError("first switch time must be <= horizon_start")
        if len(times) > 1 and times[1] <= self.horizon_start:
            raise ValueError("only one switch time may precede horizon_start")
        if times[-1] > self.horizon_end:
            raise ValueError("switch times must lie within the horizon")
        if min(modes) < 1:
            raise ValueError("mode ids start at 1")
        lo = self.tau_d * (1 - DWELL_RTOL)
        hi = None if self.tau_u is None else self.tau_u * (1 + DWELL_RTOL)
        for k, (a, b) in enumerate(zip(times, times[1:])):
            gap = b - a
            if gap < lo:
                raise ValueError(f"dwell {gap!r} at switch {k} below tau_d={self.tau_d}")
            if hi is not None and gap > hi:
                raise ValueError(f"dwell {gap!r} at switch {k} above tau_u={self.tau_u}")

    def _check_time(self, t):
        if not self.horizon_start <= t <= self.horizon_end:
            raise IndexError(
                f"t={t} outside horizon [{self.horizon_start}, {self.horizon_end}]"
            )

    def _index(self, t) -> int:
        self._check_time(t)
        return bisect_right(self.switch_times, t) - 1

    def mode_at(self, t) -> int:
        return self.mode_ids[self._index(t)]

    def gamma(self, t) -> float:
        """Largest switch time <= t."""
        return self.switch_times[self._index(t)]

    @property
    def modes_used(self) -> set:
        return set(self.mode_ids)

    @property
    def dwells(self) -> np.ndarray:
        return np.diff(np.asarray(self.switch_times))

    def switches_in(self, t0, t1) -> list:
        """Switch times strictly inside (t0, t1)."""
        return [t for t in self.switch_times if t0 < t < t1]

    def intervals(self, t0=None, t1=None) -> Iterator[Interval]:
        """Dwell intervals overlapping [t0, t1], clipped to that window."""
        t0 = self.horizon_start if t0 is None else t0
        t1 = self.horizon_end if t1 is None else t1
        k = self._index(t0)
        self._check_time(t1)
        times = self.switch_times
        while k < len(times):
            start = times[k]
            end = times[k + 1] if k + 1 < len(times) else self.horizon_end
            if start > t1 or (start == t1 and t1 > t0):
                break
            yield Interval(start, end, max(start, t0), min(end, t1), self.mode_ids[k], k)
            if end >= t1:
                break
            k += 1

    def to_record(self) -> dict:
        return {
            "horizon": [self.horizon_start, self.horizon_end],
            "tau_d": self.tau_d,
            "tau_u": self.tau_u,
            "switches": [[t, k] for t, k in zip(self.switch_times, self.mode_ids)],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SwitchingSignal":
        switches = rec["switches"]
        return cls(
            horizon_start=rec["horizon"][0],
            horizon_end=rec["horizon"][1],
            switch_times=[s[0] for s in switches],
            mode_ids=[s[1] for s in switches],
            tau_d=rec["tau_d"],
            tau_u=rec.get("tau_u"),
        )


def constant_signal(mode: int, t0: float, t1: float, tau_d: float = 1.0) -> SwitchingSignal:
    return SwitchingSignal(t0, t1, (t0,), (mode,), tau_d)


def _trim(signal: SwitchingSignal, times, modes, tau_u) -> SwitchingSignal:
    # keep the last switch <= horizon_start and everything after it
    first = bisect_right(times, signal.horizon_start) - 1
    return SwitchingSignal(
        signal.horizon_start, signal.horizon_end, times[first:], modes[first:],
        signal.tau_d, tau_u,
    )


def normalize_bounded(signal: SwitchingSignal, tau_u_target: float, mode_set=None) -> SwitchingSignal:
    """Split long dwells so the signal gains the upper bound ``tau_u_target``.

    Only valid for time-invariant mode sets: the split restarts the reset
    clock, which a time-invariant field ignores.  Each long interval is cut
    into the smallest number of equal pieces shorter than ``tau_u_target``.
    """
    if tau_u_target < 2 * signal.tau_d:
        raise ValueError("tau_u_target must be >= 2 * tau_d")
    if mode_set is not None and not mode_set.time_invariant:
        raise ValueError("normalize_bounded requires a time-invariant mode set")
    times, modes = [], []
    ends = list(signal.switch_times[1:]) + [signal.horizon_end]
    for start, end, mode in zip(signal.switch_times, ends, signal.mode_ids):
        length = end - start
        # smallest count with equal pieces < tau_u_target; pieces stay >= tau_d
        pieces = math.floor(length / tau_u_target) + 1 if length > tau_u_target else 1
        piece = length / pieces
        for i in range(pieces):
            times.append(start + i * piece)
            modes.append(mode)
    return _trim(signal, times, modes, tau_u_target)


def expand_timeshift(signal: SwitchingSignal, mode_count: int):
    """Re-partition a bounded signal into dwells in [tau_d, 2 tau_d).

    Every interval [a, b) is cut into floor((b-a)/tau_d) - 1 pieces of length
    tau_d and one final piece; the piece starting at a + j*tau_d is labelled
    with a time-shifted copy of the original mode so the right-hand side is
    unchanged.  Returns ``(new_signal, table)`` where ``table`` maps each new
    mode id to ``(original_mode, offset)``.  New ids follow
    ``(mode - 1) * levels + j + 1`` with ``levels = floor(tau_u / tau_d)``.
    """
    if signal.tau_u is None:
        raise ValueError("expand_timeshift needs a signal with tau_u")
    tau_d = signal.tau_d
    levels = max(1, math.floor(signal.tau_u / tau_d * (1 + DWELL_RTOL)))
    table = {
        (k - 1) * levels + j + 1: (k, j * tau_d)
        for k in range(1, mode_count + 1)
        for j in range(levels)
    }
    times, modes = [], []
    ends = list(signal.switch_times[1:]) + [signal.horizon_end]
    for start, end, mode in zip(signal.switch_times, ends, signal.mode_ids):
        if mode > mode_count:
            raise ValueError(f"mode id {mode} exceeds mode_count={mode_count}")
        q = math.floor((end - start) / tau_d * (1 + DWELL_RTOL))
        if q > levels:
            raise ValueError(f"interval starting at {start} is longer than tau_u")
        for j in range(max(q - 1, 0) + 1):
            cut = start + j * tau_d
            # nudge by ulps so the stored dwell is never a rounding error short of tau_d
            while j and cut - times[-1] < tau_d:
                cut = math.nextafter(cut, math.inf)
            times.append(cut)
            modes.append((mode - 1) * levels + j + 1)
    out = SwitchingSignal(
        signal.horizon_start, signal.horizon_end, times, modes, tau_d, 2 * tau_d
    )
    return out, table


def random_signal(mode_count: int, tau_d: float, tau_u: float, horizon, seed) -> SwitchingSignal:
    """Uniform dwells in [tau_d, tau_u] and uniform mode ids, seeded."""
    t0, t1 = horizon
    if not 0 < tau_d <= tau_u:
        raise ValueError("need 0 < tau_d <= tau_u")
    if mode_count < 1 or not t0 < t1:
        raise ValueError("need mode_count >= 1 and a nonempty horizon")
    rng = np.random.default_rng(seed)
    times = [float(t0)]
    while True:
        nxt = times[-1] + rng.uniform(tau_d, tau_u)
        if nxt >= t1:
            break
        times.append(nxt)
    modes = rng.integers(1, mode_count + 1, size=len(times))
    return SwitchingSignal(t0, t1, times, modes.tolist(), tau_d, tau_u)
