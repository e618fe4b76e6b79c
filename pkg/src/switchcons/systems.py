"""Ready-made mode sets: linear and nonlinearly scaled consensus, axis-angle
attitude consensus, the epipole camera network, transition smoothing and the
stabilization embedding."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import BallDomain, BoxDomain, Mode, ModeSet
from .graph import Digraph
from .signal import SwitchingSignal


@dataclass
class WeightProfile:
    """Edge weights a_ij(s) of the reset clock.

    ``weights`` maps ``(j, i)`` (j a neighbor of i) to a constant or a
    callable of ``s``; unlisted edges get ``default``.  ``w_min``/``w_max``
    bound every weight on the clock range in use.
    """

    default: float | Callable = 1.0
    weights: dict = field(default_factory=dict)
    w_min: float | None = None
    w_max: float | None = None

    @classmethod
    def constant(cls, value: float = 1.0) -> "WeightProfile":
        return cls(default=float(value), w_min=float(value), w_max=float(value))

    @property
    def is_constant(self) -> bool:
        return not callable(self.default) and not any(callable(w) for w in self.weights.values())

    def weight(self, j: int, i: int, s=0.0) -> float:
        w = self.weights.get((j, i), self.default)
        return float(w(s)) if callable(w) else float(w)

    def matrix(self, graph: Digraph, s=0.0) -> np.ndarray:
        """``W[i-1, j-1] = a_ij(s)`` for neighbor edges j -> i, j != i."""
        w = np.zeros((graph.n, graph.n))
        for j, i in graph.edges:
            if i != j:
                w[i - 1, j - 1] = self.weight(j, i, s)
        return w

    def check_bounds(self, graph: Digraph, s_values) -> bool:
        lo = 0.0 if self.w_min is None else self.w_min
        hi = np.inf if self.w_max is None else self.w_max
        for s in s_values:
            w = self.matrix(graph, s)
            vals = w[w != 0]
            if np.any(vals <= 0) or np.any(vals < lo) or np.any(vals > hi):
                return False
        return True


def _laplacian_field(weights: WeightProfile, graph: Digraph):
    """Returns (field, matrix-or-None) for sum_j a_ij(s) (x_j - x_i)."""
    # difference form keeps the field exactly zero on the consensus set
    if weights.is_constant:
        w = weights.matrix(graph)
        a = w - np.diag(w.sum(axis=1))
        return (lambda s, x: np.einsum("ij,ijk->ik", w, x[None, :, :] - x[:, None, :])), a

    def f(s, x):
        return np.einsum("ij,ijk->ik", weights.matrix(graph, s), x[None, :, :] - x[:, None, :])

    return f, None


def make_linear_consensus(n: int, m: int, graphs, weights: WeightProfile | None = None, domain=None) -> ModeSet:
    """x_i' = sum over neighbors of a_ij(s) (x_j - x_i), one mode per graph."""
    weights = weights or WeightProfile.constant()
    modes = []
    for g in graphs:
        f, a = _laplacian_field(weights, g)
        modes.append(Mode(f, g, time_invariant=weights.is_constant, matrix=a))
    return ModeSet(m, n, modes, domain, "linear", {"weights": weights})


@dataclass
class ScaleMap:
    """h(y) = g(|y|) / |y| * y on the open ball of radius ``eta``."""

    g: Callable
    eta: float
    g_inv: Callable | None = None

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, self.g(safe) / safe * y, 0.0)

    def inverse(self, z):
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        if self.g_inv is not None:
            rr = self.g_inv(r)
        else:
            rr = np.vectorize(self._invert_radius)(r)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, rr / safe * z, 0.0)

    def _invert_radius(self, target):
        lo, hi = 0.0, self.eta
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.g(mid) < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def square_scale(eta: float = 1.0) -> ScaleMap:
    return ScaleMap(g=lambda r: r * r, eta=eta, g_inv=np.sqrt)


def identity_scale(eta: float = 1.0) -> ScaleMap:
    return ScaleMap(g=lambda r: r, eta=eta, g_inv=lambda r: r)


SCALE_DIFFERENCES = "scale-differences"
SCALE_STATES = "scale-states"


def make_scaled_consensus(
    n: int, m: int, graphs, weights: WeightProfile | None = None, scale: ScaleMap | None = None,
    variant: str = SCALE_STATES, domain=None,
) -> ModeSet:
    """Nonlinearly scaled consensus.

    ``scale-differences``: x_i' = sum a_ij(s) h(x_j - x_i)
    ``scale-states``:      x_i' = sum a_ij(s) (h(x_j) - h(x_i))
    """
    weights = weights or WeightProfile.constant()
    scale = scale or square_scale()
    if variant not in (SCALE_DIFFERENCES, SCALE_STATES):
        raise ValueError(f"unknown variant {variant!r}")
    domain = domain or BallDomain(scale.eta)
    modes = []
    for g in graphs:
        const_w = weights.matrix(g) if weights.is_constant else None

        def f(s, x, g=g, const_w=const_w):
            w = const_w if const_w is not None else weights.matrix(g, s)
            if variant == SCALE_STATES:
                hx = scale(x)
                return w @ hx - w.sum(axis=1)[:, None] * hx
            diffs = scale(x[None, :, :] - x[:, None, :])  # [i, j] = h(x_j - x_i)
            return np.einsum("ij,ijk->ik", w, diffs)

        modes.append(Mode(f, g, time_invariant=weights.is_constant))
    return ModeSet(m, n, modes, domain, variant, {"weights": weights, "scale": scale})


def skew(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.array([[0.0, -y[2], y[1]], [y[2], 0.0, -y[0]], [-y[1], y[0], 0.0]])


def _sinc(t):
    return np.sin(t) / t


def l_coefficient(theta):
    """(1 - sinc(t) / sinc(t/2)^2) / t^2, with its series below 1e-4."""
    theta = np.asarray(theta, dtype=float)
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    exact = (1 - _sinc(t) / _sinc(t / 2) ** 2) / t**2
    series = 1.0 / 12 + theta**2 / 720
    return np.where(small, series, exact)


def axis_angle_L(y) -> np.ndarray:
    """Kinematic matrix with x' = L_x omega for the axis-angle vector x."""
    y = np.asarray(y, dtype=float)
    yh = skew(y)
    return np.eye(3) + yh / 2 + l_coefficient(np.linalg.norm(y)) * (yh @ yh)


def make_so3_axis_angle(n: int, graphs, weights: WeightProfile | None = None, r: float = 0.9 * math.pi) -> ModeSet:
    """x_i' = L_{x_i} omega_i with omega_i = sum a_ij(s) (x_j - x_i)."""
    if not 0 < r < math.pi:
        raise ValueError("radius must lie in (0, pi)")
    weights = weights or WeightProfile.constant()
    modes = []
    for g in graphs:
        lin, _ = _laplacian_field(weights, g)

        def f(s, x, lin=lin):
            w = lin(s, x)
            c = l_coefficient(np.linalg.norm(x, axis=1))[:, None]
            xw = np.cross(x, w)
            return w + xw / 2 + c * np.cross(x, xw)

        modes.append(Mode(f, g, time_invariant=weights.is_constant))
    return ModeSet(3, n, modes, BallDomain(r), "so3", {"weights": weights, "radius": r})


def line_positions(n: int, spacing: float = 1.0) -> np.ndarray:
    """Robots on a line at 45 degrees, so every x_ij has equal components."""
    d = np.array([1.0, 1.0]) / math.sqrt(2)
    return spacing * np.arange(n)[:, None] * d


def epipole_terms(theta, positions, alpha_cal: float = 1.0, beta: float = 1.0):
    """Return ``(e, omega)`` with ``e[i, j] = e_ij`` and ``omega[i, j] = omega_ij``.

    Diagonal entries are zero.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    p = np.asarray(positions, dtype=float)
    d = p[None, :, :] - p[:, None, :]  # [i, j] = p_j - p_i
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    xx = c * d[..., 0] - s * d[..., 1]
    xy = s * d[..., 0] + c * d[..., 1]
    off = ~np.eye(len(theta), dtype=bool)
    psi = np.zeros_like(xx)
    psi[off] = np.arctan(xx[off] / xy[off])
    theta_ij = theta[None, :] - theta[:, None]  # theta_j - theta_i
    e_ij = np.where(off, alpha_cal * np.tan(psi), 0.0)
    e_ji = np.where(off, alpha_cal * np.tan(psi - theta_ij), 0.0)
    omega = np.where(off, np.arctan(e_ij / beta) - np.arctan(e_ji / beta), 0.0)
    return e_ij, omega


def make_epipole_network(
    n: int, graphs, weights: WeightProfile | None = None, positions=None,
    theta_M: float = 0.1, alpha_cal: float = 1.0, beta: float = 1.0,
) -> ModeSet:
    """Scalar heading consensus driven by epipole x-components.

    theta_i' = sum a_ij(s) omega_ij, omega_ij = atan(e_ij / beta) - atan(e_ji / beta).
    Positions default to a 45-degree line at unit spacing; any layout must
    give x_ij components with ratio 1 at zero heading.
    """
    if not 0 < theta_M < math.pi / 2:
        raise ValueError("theta_M must lie in (0, pi/2)")
    p = line_positions(n) if positions is None else np.asarray(positions, dtype=float)
    if p.shape != (n, 2):
        raise ValueError("positions must have shape (n, 2)")
    d = p[None, :, :] - p[:, None, :]
    off = ~np.eye(n, dtype=bool)
    if np.any(np.linalg.norm(d, axis=-1)[off] == 0):
        raise ValueError("robot positions must be distinct")
    if not np.allclose(d[off][:, 0], d[off][:, 1], rtol=1e-12, atol=1e-12):
        raise ValueError("robots must sit on a line with x_ij components in ratio 1")
    weights = weights or WeightProfile.constant()
    modes = []
    for g in graphs:
        const_w = weights.matrix(g) if weights.is_constant else None

        def f(s, x, g=g, const_w=const_w):
            w = const_w if const_w is not None else weights.matrix(g, s)
            _, omega = epipole_terms(x[:, 0], p, alpha_cal, beta)
            return np.sum(w * omega, axis=1)[:, None]

        modes.append(Mode(f, g, time_invariant=weights.is_constant))
    meta = {"positions": p, "alpha_cal": alpha_cal, "beta": beta, "theta_M": theta_M}
    return ModeSet(1, n, modes, BoxDomain([-theta_M], [theta_M]), "epipole", meta)


def cosine_blend(s, tau_blend):
    return 0.5 + 0.5 * np.cos(s * math.pi / tau_blend)


def linear_blend(s, tau_blend):
    return 1.0 - s / tau_blend


BLENDS = {"cosine": cosine_blend, "linear": linear_blend}


def smooth_transitions(ms: ModeSet, signal: SwitchingSignal, tau_blend: float, blend: str = "cosine"):
    """Insert a blend interval of length ``tau_blend`` at every switch.

    On the blend interval after a switch from mode a to mode b the field is
    alpha(s) f_a + (1 - alpha(s)) f_b with alpha(0) = 1, alpha(tau_blend) = 0,
    and the graph is the union of both graphs.  Only blend pairs that occur in
    the signal are added; their ids follow the original ones.
    """
    if not ms.time_invariant:
        raise ValueError("smoothing needs time-invariant modes")
    if not 0 < tau_blend < signal.tau_d:
        raise ValueError("need 0 < tau_blend < tau_d")
    alpha = BLENDS[blend]
    modes = list(ms.modes)
    pair_ids = {}
    times, ids = [signal.switch_times[0]], [signal.mode_ids[0]]
    for t, prev, nxt in zip(signal.switch_times[1:], signal.mode_ids, signal.mode_ids[1:]):
        if (prev, nxt) not in pair_ids:
            fa, fb = ms.mode(prev).field, ms.mode(nxt).field

            def f(s, x, fa=fa, fb=fb):
                a = alpha(s, tau_blend)
                return a * fa(s, x) + (1 - a) * fb(s, x)

            graph = ms.mode(prev).graph.union(ms.mode(nxt).graph)
            modes.append(Mode(f, graph, time_invariant=False))
            pair_ids[(prev, nxt)] = len(modes)
        blend_end = t + tau_blend
        times.extend([t, blend_end])
        ids.extend([pair_ids[(prev, nxt)], nxt])
    # a blend running past the horizon is clipped
    keep = [k for k, t in enumerate(times) if t <= signal.horizon_end]
    times = [times[k] for k in keep]
    ids = [ids[k] for k in keep]
    tau_d = min(tau_blend, signal.tau_d - tau_blend)
    out_sig = SwitchingSignal(signal.horizon_start, signal.horizon_end, times, ids, tau_d, signal.tau_u)
    meta = dict(ms.meta, blend=blend, tau_blend=tau_blend, blend_pairs=pair_ids)
    return ModeSet(ms.m, ms.n, modes, ms.domain, ms.name + "+smooth", meta), out_sig


def stabilization_embed(fields, m: int = 1, domain=None, s_max: float = 1.0, seed=0) -> ModeSet:
    """Two-agent consensus form of y' = f_k(s, y).

    Agent 1 follows f_k(s, y_1 - y_2) with neighbors {1, 2}; agent 2 is
    fixed.  Started with y_2 = 0, agent 1 reproduces the original solution.
    Each f_k must vanish at the origin.
    """
    rng = np.random.default_rng(seed)
    zero = np.zeros(m)
    for k, fk in enumerate(fields, start=1):
        for s in np.concatenate([[0.0], rng.uniform(0, s_max, 16)]):
            if np.any(np.abs(np.asarray(fk(s, zero), dtype=float)) > 1e-12):
                raise ValueError(f"field {k} does not vanish at the origin")
    graph = Digraph(2, frozenset({(2, 1)}))
    modes = []
    for fk in fields:
        def f(s, x, fk=fk):
            out = np.zeros_like(x)
            out[0] = fk(s, x[0] - x[1])
            return out

        modes.append(Mode(f, graph, time_invariant=False))
    if domain is None:
        domain = BoxDomain(-np.ones(m), np.ones(m))
    return ModeSet(m, 2, modes, domain, "stabilization")
