"""Directed interaction graphs and connectivity checks.

Edge convention: ``(j, i)`` in ``edges`` means ``j`` is a neighbor of ``i``,
i.e. information flows from ``j`` to ``i``.  A *center* is a node with a
directed path to every other node.  Agents are numbered 1..n and every graph
carries all self-loops.
"""
from __future__ import annotations

from bisect import bisect_left, bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .signal import SwitchingSignal

STRONG = "strong"
QUASI = "quasi-strong"


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Digraph:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a digraph needs at least one node")
        edges = set()
        for j, i in self.edges:
            j, i = int(j), int(i)
            if not (1 <= j <= self.n and 1 <= i <= self.n):
                raise ValueError(f"edge ({j}, {i}) has an endpoint outside 1..{self.n}")
            edges.add((j, i))
        edges.update((i, i) for i in range(1, self.n + 1))
        object.__setattr__(self, "edges", frozenset(edges))

    @classmethod
    def from_neighbors(cls, n: int, neighbors: dict) -> "Digraph":
        """Build from ``{i: [j, ...]}`` listing N_i for each agent."""
        return cls(n, frozenset((int(j), int(i)) for i, js in neighbors.items() for j in js))

    @classmethod
    def complete(cls, n: int) -> "Digraph":
        return cls(n, frozenset((j, i) for i in range(1, n + 1) for j in range(1, n + 1)))

    def to_neighbors(self) -> dict:
        return {i: sorted(self.neighbors(i)) for i in range(1, self.n + 1)}

    def neighbors(self, i: int) -> set:
        if not 1 <= i <= self.n:
            raise IndexError(f"agent {i} outside 1..{self.n}")
        return {j for j, k in self.edges if k == i}

    def adjacency(self) -> np.ndarray:
        """``A[i-1, j-1] = 1`` iff j is a neighbor of i."""
        a = np.zeros((self.n, self.n))
        for j, i in self.edges:
            a[i - 1, j - 1] = 1.0
        return a

    def union(self, other: "Digraph") -> "Digraph":
        if other.n != self.n:
            raise ValueError("graphs have different node counts")
        return Digraph(self.n, self.edges | other.edges)

    def _successors(self) -> dict:
        out = {v: [] for v in range(1, self.n + 1)}
        for j, i in self.edges:
            if i != j:
                out[j].append(i)
        return out

    def reachable_from(self, root: int) -> set:
        succ = self._successors()
        seen = {root}
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for w in succ[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return seen


def neighbors(g: Digraph, i: int) -> set:
    return g.neighbors(i)


def is_strongly_connected(g: Digraph) -> bool:
    # strong iff node 1 reaches everyone and everyone reaches node 1
    if len(g.reachable_from(1)) != g.n:
        return False
    reverse = Digraph(g.n, frozenset((i, j) for j, i in g.edges))
    return len(reverse.reachable_from(1)) == g.n


def is_quasi_strongly_connected(g: Digraph) -> int | None:
    """Smallest center of ``g`` or ``None``."""
    for c in range(1, g.n + 1):
        if len(g.reachable_from(c)) == g.n:
            return c
    return None


def passes(g: Digraph, kind: str) -> bool:
    if kind == STRONG:
        return is_strongly_connected(g)
    if kind == QUASI:
        return is_quasi_strongly_connected(g) is not None
    raise ValueError(f"unknown connectivity kind {kind!r}")


@dataclass(frozen=True)
class GraphProcess:
    mode_graphs: dict
    signal: SwitchingSignal

    def __post_init__(self):
        sizes = {g.n for g in self.mode_graphs.values()}
        if len(sizes) != 1:
            raise ValueError("all mode graphs must have the same node count")
        missing = self.signal.modes_used - set(self.mode_graphs)
        if missing:
            raise ValueError(f"no graph for mode ids {sorted(missing)}")

    @property
    def n(self) -> int:
        return next(iter(self.mode_graphs.values())).n

    def graph_at(self, t) -> Digraph:
        return self.mode_graphs[self.signal.mode_at(t)]


def _union_of(process: GraphProcess, modes: Iterable[int]) -> Digraph:
    edges = set()
    for k in modes:
        edges |= process.mode_graphs[k].edges
    return Digraph(process.n, frozenset(edges))


def _modes_overlapping(signal: SwitchingSignal, t1, t2) -> set:
    # dwell k overlaps [t1, t2) iff tau_k < t2 and tau_{k+1} > t1
    times = signal.switch_times
    first = max(bisect_right(times, t1) - 1, 0)
    last = bisect_left(times, t2)
    return set(signal.mode_ids[first:last])


def union_graph(process: GraphProcess, t1, t2) -> Digraph:
    """Edge union of every mode graph active somewhere on [t1, t2)."""
    if not t1 < t2:
        raise ValueError("union_graph needs t1 < t2")
    sig = process.signal
    if t1 < sig.horizon_start or t2 > sig.horizon_end:
        raise ValueError("interval outside the signal horizon")
    return _union_of(process, _modes_overlapping(sig, t1, t2))


@dataclass
class ConnectivityVerdict:
    passed: bool
    kind: str
    window: float
    checked_range: tuple
    starts_checked: int
    witness: float | None = None

    def __bool__(self):
        return self.passed


def _window_starts(signal: SwitchingSignal) -> list:
    return [signal.horizon_start] + [
        t for t in signal.switch_times if signal.horizon_start < t < signal.horizon_end
    ]


def verify_uniform_connectivity(process: GraphProcess, window: float, kind: str = STRONG) -> ConnectivityVerdict:
    """Check every window [t, t+window) inside the horizon.

    Window starts at horizon_start and at switch times suffice: between two
    events the union only gains dwells at its right end.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    sig = process.signal
    checked = 0
    last = sig.horizon_start
    for s in _window_starts(sig):
        if s + window > sig.horizon_end:
            continue
        checked += 1
        last = s
        if not passes(union_graph(process, s, s + window), kind):
            return ConnectivityVerdict(False, kind, window, (sig.horizon_start, s + window), checked, s)
    return ConnectivityVerdict(True, kind, window, (sig.horizon_start, last + window), checked)


def required_window(process: GraphProcess, kind: str = STRONG) -> float:
    """Infimum of windows that pass; any strictly larger window passes."""
    sig = process.signal
    times = sig.switch_times
    need = 0.0
    for s in _window_starts(sig):
        k = sig._index(s)
        modes = set()
        found = None
        for j in range(k, len(times)):
            modes.add(sig.mode_ids[j])
            if passes(_union_of(process, modes), kind):
                found = max(times[j], s)
                break
        need = max(need, (found if found is not None else sig.horizon_end) - s)
    return need


def _random_base(n: int, kind: str, rng):
    """Edges of a random spanning cycle (strong) or rooted tree (quasi)."""
    order = [int(v) + 1 for v in rng.permutation(n)]
    if kind == STRONG:
        edges = [(order[k], order[(k + 1) % n]) for k in range(n)] if n > 1 else []
    else:
        edges = [(order[int(rng.integers(0, k))], order[k]) for k in range(1, n)]
    return edges, order


def random_uniformly_connected_signal(
    n: int,
    tau_d: float,
    tau_u: float,
    window: float,
    horizon,
    kind: str = STRONG,
    seed=0,
    mode_count: int = 3,
    extra_edge_prob: float = 0.15,
    max_tries: int = 50,
):
    """Random mode library and signal whose graphs are uniformly connected.

    A spanning cycle (``strong``) or a random rooted tree (``quasi-strong``)
    is split across ``mode_count`` graphs, each padded with random extra
    edges.  For the quasi-strong kind the extras only point away from the
    root in a fixed topological order, so no union is ever strongly
    connected.  The signal visits the modes in shuffled rounds.  Returns
    ``(process, T)`` with ``T`` the certified window (<= ``window``).
    """
    if window < tau_u:
        raise ValueError("window must be >= tau_u")
    if not 0 < tau_d <= tau_u:
        raise ValueError("need 0 < tau_d <= tau_u")
    t0, t1 = horizon
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        if kind not in (STRONG, QUASI):
            raise ValueError(f"unknown connectivity kind {kind!r}")
        base, order = _random_base(n, kind, rng)
        rank = {v: r for r, v in enumerate(order)} if kind == QUASI else None
        assignment = rng.integers(0, mode_count, size=len(base))
        graphs = {}
        for k in range(mode_count):
            edges = {e for e, a in zip(base, assignment) if a == k}
            for j in range(1, n + 1):
                for i in range(1, n + 1):
                    if i == j or rng.random() >= extra_edge_prob:
                        continue
                    if rank is not None and rank[j] > rank[i]:
                        continue
                    edges.add((j, i))
            graphs[k + 1] = Digraph(n, frozenset(edges))

        times, modes = [float(t0)], []
        while True:
            modes.extend(int(k) + 1 for k in rng.permutation(mode_count))
            while len(times) < len(modes):
                nxt = times[-1] + rng.uniform(tau_d, tau_u)
                if nxt >= t1:
                    break
                times.append(nxt)
            if len(times) < len(modes):
                break
        sig = SwitchingSignal(t0, t1, times, modes[: len(times)], tau_d, tau_u)
        process = GraphProcess(graphs, sig)
        need = required_window(process, kind)
        certified = need * (1 + 1e-9) + 1e-9
        if certified <= window and verify_uniform_connectivity(process, certified, kind):
            return process, certified
    raise GenerationError(f"no uniformly {kind} connected signal after {max_tries} tries")
