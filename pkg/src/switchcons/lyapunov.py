"""Max-of-V / max-of-W monitors and sampling checks of the decrease conditions.

Certificates operate on arrays whose last axis is the agent state dimension
``m`` and broadcast over leading axes, so a whole trajectory can be
evaluated at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import SwitchedSystem, Trajectory, _as_state, rhs


def fd_gradient(fun, y, h_rel: float = 1e-6):
    """Central differences of ``fun`` over the last axis of ``y``."""
    y = np.asarray(y, dtype=float)
    h = h_rel * (1 + np.linalg.norm(y, axis=-1, keepdims=True))
    grad = np.empty_like(y)
    for c in range(y.shape[-1]):
        e = np.zeros(y.shape[-1])
        e[c] = 1.0
        step = h * e
        grad[..., c] = (fun(y + step) - fun(y - step)) / (2 * h[..., 0])
    return grad


@dataclass(frozen=True)
class ScalarCertificate:
    v: Callable
    grad_v: Callable | None = None
    beta1: Callable | None = None
    beta2: Callable | None = None
    beta2_inv: Callable | None = None
    name: str = "V"

    def value(self, y):
        return self.v(np.asarray(y, dtype=float))

    def gradient(self, y):
        if self.grad_v is not None:
            return self.grad_v(np.asarray(y, dtype=float))
        return fd_gradient(self.v, y)


@dataclass(frozen=True)
class PairCertificate:
    w: Callable
    grad_w: Callable | None = None
    name: str = "W"

    def value(self, a, b):
        return self.w(np.asarray(a, dtype=float), np.asarray(b, dtype=float))

    def gradient(self, a, b):
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        if self.grad_w is not None:
            return self.grad_w(a, b)
        return fd_gradient(lambda y: self.w(y, b), a), fd_gradient(lambda y: self.w(a, y), b)


def squared_norm() -> ScalarCertificate:
    return ScalarCertificate(
        v=lambda y: np.sum(y * y, axis=-1),
        grad_v=lambda y: 2 * y,
        beta1=lambda r: r * r,
        beta2=lambda r: r * r,
        beta2_inv=np.sqrt,
        name="squared_norm",
    )


def squared_difference() -> PairCertificate:
    def grad(a, b):
        d = b - a
        return -2 * d, 2 * d

    return PairCertificate(
        w=lambda a, b: np.sum((b - a) ** 2, axis=-1), grad_w=grad, name="squared_difference"
    )


CERTIFICATES = {"squared_norm": squared_norm, "squared_difference": squared_difference}


def tie_tolerance(vals, rtol: float = 1e-9) -> float:
    """Band below the maximum that still counts as a tie.

    It scales with the spread of the values, so a nearly agreed state does
    not drag non-maximal members into the argmax set, and never drops below
    a few rounding units of the maximum.
    """
    vals = np.asarray(vals, dtype=float)
    top, bottom = float(np.max(vals)), float(np.min(vals))
    return rtol * (top - bottom) + 8 * np.finfo(float).eps * max(1.0, abs(top))


def agent_values(cert: ScalarCertificate, x) -> np.ndarray:
    return cert.value(x)


def pair_values(cert: PairCertificate, x) -> np.ndarray:
    """``out[i, j] = W(x_i, x_j)`` over all ordered pairs."""
    x = np.asarray(x, dtype=float)
    return cert.value(x[:, None, :], x[None, :, :])


def max_v(cert: ScalarCertificate, x) -> float:
    return float(np.max(agent_values(cert, x)))


def max_w(cert: PairCertificate, x) -> float:
    return float(np.max(pair_values(cert, x)))


def argmax_agents(cert: ScalarCertificate, x, tol: float | None = None) -> set:
    vals = agent_values(cert, x)
    top = float(np.max(vals))
    tol = tie_tolerance(vals) if tol is None else tol
    return {int(i) + 1 for i in np.flatnonzero(vals >= top - tol)}


def argmax_pairs(cert: PairCertificate, x, tol: float | None = None) -> set:
    vals = pair_values(cert, x)
    top = float(np.max(vals))
    tol = tie_tolerance(vals) if tol is None else tol
    return {(int(i) + 1, int(j) + 1) for i, j in zip(*np.nonzero(vals >= top - tol))}


def agent_rates(cert: ScalarCertificate, x, f) -> np.ndarray:
    """d/dt V(x_i) = grad V(x_i) . f_i for every agent."""
    return np.sum(cert.gradient(x) * f, axis=-1)


def pair_rates(cert: PairCertificate, x, f) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    ga, gb = cert.gradient(x[:, None, :], x[None, :, :])
    return np.sum(ga * f[:, None, :], axis=-1) + np.sum(gb * f[None, :, :], axis=-1)


def dini_max_v(cert: ScalarCertificate, sys: SwitchedSystem, t, x, tol: float | None = None) -> float:
    """Upper right Dini derivative of max_i V(x_i): max rate over the argmax set."""
    x = _as_state(sys, x)
    rates = agent_rates(cert, x, rhs(sys, t, x))
    return float(max(rates[i - 1] for i in argmax_agents(cert, x, tol)))


def dini_max_w(cert: PairCertificate, sys: SwitchedSystem, t, x, tol: float | None = None) -> float:
    x = _as_state(sys, x)
    rates = pair_rates(cert, x, rhs(sys, t, x))
    return float(max(rates[i - 1, j - 1] for i, j in argmax_pairs(cert, x, tol)))


def _short_flow(sys: SwitchedSystem, t, x, eps):
    # one RK4 step of the mode active at t, reset clock continuing from t
    sig = sys.signal
    f = sys.mode_set.mode(sig.mode_at(t)).field
    s = t - sig.gamma(t)
    k1 = f(s, x)
    k2 = f(s + eps / 2, x + eps / 2 * k1)
    k3 = f(s + eps / 2, x + eps / 2 * k2)
    k4 = f(s + eps, x + eps * k3)
    return x + eps / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def dini_max_v_fd(cert: ScalarCertificate, sys: SwitchedSystem, t, x, eps: float = 1e-6) -> float:
    """Forward difference of max V along a short integration of length eps."""
    x = _as_state(sys, x)
    return (max_v(cert, _short_flow(sys, t, x, eps)) - max_v(cert, x)) / eps


def dini_max_w_fd(cert: PairCertificate, sys: SwitchedSystem, t, x, eps: float = 1e-6) -> float:
    x = _as_state(sys, x)
    return (max_w(cert, _short_flow(sys, t, x, eps)) - max_w(cert, x)) / eps


def consensus_distance(x) -> float:
    """Euclidean distance from the stacked state to the consensus set."""
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.sum((x - x.mean(axis=0)) ** 2)))


def consensus_distance_batch(states) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    return np.sqrt(np.sum((states - states.mean(axis=1, keepdims=True)) ** 2, axis=(1, 2)))


def stability_radius(cert: ScalarCertificate, eps: float, domain_radius: float | None = None) -> float:
    """delta = beta2^{-1}(beta1(eps)); bisection when no inverse is supplied."""
    if cert.beta1 is None or cert.beta2 is None:
        raise ValueError("certificate has no class-K sandwich")
    if eps < 0 or (domain_radius is not None and eps > domain_radius):
        raise ValueError(f"eps={eps} outside the domain")
    if eps == 0:
        return 0.0
    target = cert.beta1(eps)
    if cert.beta2_inv is not None:
        return float(cert.beta2_inv(target))
    lo, hi = 0.0, max(eps, 1.0)
    while cert.beta2(hi) < target:
        hi *= 2
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if cert.beta2(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def settling_time(times, dist, eta) -> float | None:
    """First sample time after which ``dist < eta`` holds to the end."""
    above = np.flatnonzero(np.asarray(dist) >= eta)
    if above.size == 0:
        return float(times[0])
    if above[-1] == len(times) - 1:
        return None
    return float(times[above[-1] + 1])


@dataclass
class Margins:
    tol_decrease: float = 1e-10  # allowed positive Dini value
    margin_strict: float = 1e-12  # strictly negative means < -margin_strict
    tol_state: float = 1e-9  # neighbor states closer than this count as equal
    tol_zero: float = 1e-7  # field norm treated as zero
    tie_rtol: float = 1e-9


@dataclass
class Violation:
    time: float
    kind: str
    witness: dict


@dataclass
class MonitorReport:
    times: np.ndarray
    dist: np.ndarray
    mode_ids: np.ndarray
    switch_mask: np.ndarray
    max_v: np.ndarray | None = None
    max_w: np.ndarray | None = None
    dini_v: np.ndarray | None = None
    dini_w: np.ndarray | None = None
    argmax_v: list | None = None
    argmax_w: list | None = None
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set:
        return {v.kind for v in self.violations}

    def max_increase(self, which: str = "v") -> float:
        series = self.max_v if which == "v" else self.max_w
        if series is None or len(series) < 2:
            return 0.0
        return float(np.max(np.diff(series)))


def monitor(traj: Trajectory, v_cert: ScalarCertificate | None = None, w_cert: PairCertificate | None = None) -> MonitorReport:
    """Per-sample max V, max W and consensus distance, fully vectorized."""
    states = traj.states
    report = MonitorReport(
        times=traj.times,
        dist=consensus_distance_batch(states),
        mode_ids=traj.mode_ids,
        switch_mask=traj.is_switch,
    )
    if v_cert is not None:
        report.max_v = np.max(v_cert.value(states), axis=1)
    if w_cert is not None:
        report.max_w = np.max(w_cert.value(states[:, :, None, :], states[:, None, :, :]), axis=(1, 2))
    return report


def _neighbor_table(sys: SwitchedSystem) -> dict:
    table = {}
    for k, mode in enumerate(sys.mode_set.modes, start=1):
        table[k] = [np.array(sorted(mode.graph.neighbors(i))) - 1 for i in range(1, sys.n + 1)]
    return table


def _differs(x, i, nbrs, tol) -> bool:
    return bool(np.max(np.linalg.norm(x[nbrs] - x[i], axis=-1)) > tol)


def _clock_samples(sys: SwitchedSystem, k: int, s: float, rng, count: int) -> list:
    if sys.mode_set.mode(k).time_invariant or count == 0:
        return [s]
    top = sys.signal.tau_u or 2 * sys.signal.tau_d
    return [s] + list(rng.uniform(0, top, size=count))


def _sample_indices(traj: Trajectory, stride: int) -> np.ndarray:
    idx = np.arange(0, len(traj), max(1, stride))
    if idx[-1] != len(traj) - 1:
        idx = np.append(idx, len(traj) - 1)
    return idx


def check_assumption_v(
    cert: ScalarCertificate,
    sys: SwitchedSystem,
    traj: Trajectory,
    margins: Margins | None = None,
    stride: int = 1,
    s_samples: int = 2,
    seed=0,
) -> MonitorReport:
    """Sampled check of the max-V decrease conditions along a trajectory.

    At each checked sample: (a) the Dini derivative of max V is <= 0; (b) an
    argmax agent with a differing neighbor has strictly negative dV/dt; (c) an
    argmax agent without one has a zero field at the current and at sampled
    reset-clock values.
    """
    mg = margins or Margins()
    rng = np.random.default_rng(seed)
    idx = _sample_indices(traj, stride)
    report = monitor(traj, v_cert=cert)
    nbr_table = _neighbor_table(sys)
    sig = sys.signal
    dini = np.empty(len(idx))
    argmaxes = []
    for row, n_idx in enumerate(idx):
        t = float(traj.times[n_idx])
        x = traj.states[n_idx]
        k = int(traj.mode_ids[n_idx])
        field_fn = sys.mode_set.mode(k).field
        s = t - sig.gamma(t)
        f = field_fn(s, x)
        vals = cert.value(x)
        top = float(np.max(vals))
        tops = np.flatnonzero(vals >= top - tie_tolerance(vals, mg.tie_rtol))
        rates = agent_rates(cert, x, f)
        dini[row] = float(np.max(rates[tops]))
        argmaxes.append(tuple(int(i) + 1 for i in tops))
        if dini[row] > mg.tol_decrease:
            report.violations.append(Violation(t, "dini-positive", {"dini": dini[row]}))
        for i in tops:
            agent = int(i) + 1
            if _differs(x, i, nbr_table[k][i], mg.tol_state):
                if rates[i] >= 0:
                    report.violations.append(Violation(t, "not-strict", {"agent": agent, "rate": float(rates[i])}))
                elif rates[i] > -mg.margin_strict:
                    report.warnings.append(Violation(t, "borderline", {"agent": agent, "rate": float(rates[i])}))
            else:
                for s_k in _clock_samples(sys, k, s, rng, s_samples):
                    norm = float(np.linalg.norm(field_fn(s_k, x)[i]))
                    if norm > mg.tol_zero:
                        report.violations.append(Violation(t, "nonzero-field", {"agent": agent, "s": s_k, "norm": norm}))
                        break
    report.dini_v = np.full(len(traj), np.nan)
    report.dini_v[idx] = dini
    report.argmax_v = [None] * len(traj)
    for n_idx, ids in zip(idx, argmaxes):
        report.argmax_v[n_idx] = ids
    return report


def check_assumption_w(
    cert: PairCertificate,
    sys: SwitchedSystem,
    traj: Trajectory,
    margins: Margins | None = None,
    stride: int = 1,
    s_samples: int = 2,
    seed=0,
) -> MonitorReport:
    """Pair analogue of :func:`check_assumption_v`, including the "only if"
    condition: a strictly decreasing extremal pair must have a differing
    neighbor on one side."""
    mg = margins or Margins()
    rng = np.random.default_rng(seed)
    idx = _sample_indices(traj, stride)
    report = monitor(traj, w_cert=cert)
    nbr_table = _neighbor_table(sys)
    sig = sys.signal
    dini = np.empty(len(idx))
    argmaxes = []
    for row, n_idx in enumerate(idx):
        t = float(traj.times[n_idx])
        x = traj.states[n_idx]
        k = int(traj.mode_ids[n_idx])
        field_fn = sys.mode_set.mode(k).field
        s = t - sig.gamma(t)
        f = field_fn(s, x)
        vals = pair_values(cert, x)
        top = float(np.max(vals))
        pairs = list(zip(*np.nonzero(vals >= top - tie_tolerance(vals, mg.tie_rtol))))
        rates = pair_rates(cert, x, f)
        dini[row] = float(max(rates[i, j] for i, j in pairs))
        argmaxes.append(tuple((int(i) + 1, int(j) + 1) for i, j in pairs))
        if dini[row] > mg.tol_decrease:
            report.violations.append(Violation(t, "dini-positive", {"dini": dini[row]}))
        differs = {}
        for i, j in pairs:
            for a in (i, j):
                if a not in differs:
                    differs[a] = _differs(x, a, nbr_table[k][a], mg.tol_state)
            pair = (int(i) + 1, int(j) + 1)
            rate = float(rates[i, j])
            if differs[i] or differs[j]:
                if rate >= 0:
                    report.violations.append(Violation(t, "not-strict", {"pair": pair, "rate": rate}))
                elif rate > -mg.margin_strict:
                    report.warnings.append(Violation(t, "borderline", {"pair": pair, "rate": rate}))
                continue
            if rate < -mg.margin_strict:
                report.violations.append(Violation(t, "only-if", {"pair": pair, "rate": rate}))
            for s_k in _clock_samples(sys, k, s, rng, s_samples):
                fk = field_fn(s_k, x)
                norm = float(max(np.linalg.norm(fk[i]), np.linalg.norm(fk[j])))
                if norm > mg.tol_zero:
                    report.violations.append(Violation(t, "nonzero-field", {"pair": pair, "s": s_k, "norm": norm}))
                    break
    report.dini_w = np.full(len(traj), np.nan)
    report.dini_w[idx] = dini
    report.argmax_w = [None] * len(traj)
    for n_idx, ids in zip(idx, argmaxes):
        report.argmax_w[n_idx] = ids
    return report


@dataclass
class DecreaseVerdict:
    status: str  # "pass", "fail" or "insufficient horizon"
    checked: int
    failures: list  # (switch time, value at switch, value after window)
    min_decrease: float | None
    decreases: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def strict_decrease_window(
    report: MonitorReport,
    sys: SwitchedSystem,
    T_window: float,
    which: str = "v",
    tol_consensus: float = 1e-6,
    margin: float = 0.0,
) -> DecreaseVerdict:
    """At each switch time outside consensus, the max certificate value one
    window later must be strictly below its value at the switch.

    ``T_window`` is n (T + 2 tau_D) for a certified connectivity window T.
    States already within ``tol_consensus`` of consensus pass vacuously.
    """
    series = report.max_v if which == "v" else report.max_w
    if series is None:
        raise ValueError(f"report has no max_{which} series")
    times = report.times
    t_first, t_last = float(times[0]), float(times[-1])
    decreases, failures = [], []
    checkable = 0
    for tau in sys.signal.switch_times:
        if tau < t_first or tau + T_window > t_last:
            continue
        checkable += 1
        a = int(np.searchsorted(times, tau))
        if report.dist[a] <= tol_consensus:
            continue
        b = int(np.searchsorted(times, tau + T_window))
        drop = float(series[a] - series[b])
        decreases.append((tau, drop))
        if not drop > margin:
            failures.append((tau, float(series[a]), float(series[b])))
    if checkable == 0:
        return DecreaseVerdict("insufficient horizon", 0, [], None)
    min_drop = min((d for _, d in decreases), default=None)
    status = "fail" if failures else "pass"
    return DecreaseVerdict(status, len(decreases), failures, min_drop, decreases)
