"""The first-return map on the post-spike section and its local structure.

The section B is the set of states with at least one coordinate exactly zero
(the neuron that just fired). The return map sends a section point to the
state right after the next spike. It is continuous, and contracting, on each
piece where a single neuron fires first; where two or more neurons tie it
jumps by more than three times the expansivity constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import NetworkParams, StateError, check_state, margins_batch, step_batch


class ProbeError(RuntimeError):
    """Raised when a discontinuity probe cannot straddle a tie."""


@dataclass(frozen=True)
class SpikeOutcome:
    tbar: float
    winners: tuple[int, ...]
    pre_jump: np.ndarray
    margin: float
    clamped: tuple[int, ...] = ()


@dataclass(frozen=True)
class Itinerary:
    """Winner sets of consecutive returns; each letter is a sorted tuple."""

    word: tuple[tuple[int, ...], ...]

    @property
    def singleton(self) -> bool:
        return all(len(letter) == 1 for letter in self.word)

    def letters(self) -> tuple[int, ...]:
        """The word as plain neuron indices (only valid for singleton words)."""
        if not self.singleton:
            raise ValueError("itinerary has simultaneous spikes")
        return tuple(letter[0] for letter in self.word)


@dataclass(frozen=True)
class SystemConstants:
    """Constants of the contraction and expansivity estimates.

    Attributes:
        alpha: expansivity constant, min |theta - h_ij| / 4.
        eps0: smallest off-diagonal inhibition.
        t0: lower bound of the inter-spike time on the image of the map.
        lam: per-step contraction bound exp(-gamma_min * t0).
        gamma_min: smallest |dF_i/dV_i| over the cube.
        f_max: largest F_i over the cube.
        k_diam: max-norm diameter of the section, 2 * theta.
    """

    alpha: float
    eps0: float
    t0: float
    lam: float
    gamma_min: float
    f_max: float
    k_diam: float


def zero_set(v) -> tuple[int, ...]:
    return tuple(int(k) for k in np.flatnonzero(np.asarray(v) == 0.0))


def check_section_point(p: NetworkParams, v) -> np.ndarray:
    v = check_state(p, v)
    if not np.any(v == 0.0):
        raise StateError("section points need at least one coordinate equal to zero")
    return v


def _winners(mask_row) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(mask_row))


def first_spike(p: NetworkParams, v) -> SpikeOutcome:
    """Next spike time, the neurons that fire then, and the pre-reset state."""
    v = check_state(p, v)
    if np.any(v >= p.theta):
        raise StateError("all potentials must be strictly below threshold")
    X = v[None, :]
    _, win, tbar, margin, _ = step_batch(p, X)
    pre = np.where(win, p.theta, p.flow.phi(X, tbar[:, None]))[0]
    return SpikeOutcome(float(tbar[0]), _winners(win[0]), pre, float(margin[0]))


def return_map(p: NetworkParams, v) -> tuple[np.ndarray, SpikeOutcome]:
    """One application of the return map to a section point."""
    v = check_section_point(p, v)
    if np.any(v >= p.theta):
        raise StateError("all potentials must be strictly below threshold")
    X = v[None, :]
    out, win, tbar, margin, clamped = step_batch(p, X)
    pre = np.where(win, p.theta, p.flow.phi(X, tbar[:, None]))[0]
    outcome = SpikeOutcome(
        float(tbar[0]), _winners(win[0]), pre, float(margin[0]), _winners(clamped[0])
    )
    return out[0], outcome


def iterate_map(p: NetworkParams, v, steps: int) -> np.ndarray:
    """``steps`` applications of the return map, no bookkeeping."""
    X = np.asarray(v, dtype=float)[None, :]
    for _ in range(steps):
        X = step_batch(p, X)[0]
    return X[0]


def itinerary(p: NetworkParams, v, steps: int) -> Itinerary:
    """Winner sets of the first ``steps`` returns starting from ``v``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X = check_section_point(p, v)[None, :]
    word = []
    for _ in range(steps):
        X, win, *_ = step_batch(p, X)
        word.append(_winners(win[0]))
    return Itinerary(tuple(word))


def time_gap_margin(p: NetworkParams, v) -> float:
    """Gap between the two earliest spike times; zero exactly on a tie."""
    v = check_state(p, v)
    return float(margins_batch(p, v[None, :])[0])


def margin_lipschitz(p: NetworkParams) -> float:
    """Max-norm Lipschitz constant of the time-gap margin on Q.

    Each spike time depends on one coordinate with slope -1/F_i, so the gap
    between two order statistics moves by at most twice the largest 1/F_i.
    """
    fmin, _ = p.flow.rate_bounds(p.theta)
    return float(2.0 / fmin.min())


def margin_threshold(p: NetworkParams, delta: float) -> float:
    """Margin that guarantees a delta/2 max-norm ball avoids every tie."""
    return margin_lipschitz(p) * delta / 2.0


def jacobian(p: NetworkParams, v) -> np.ndarray:
    """Derivative of the return map at ``v`` (rows are output coordinates).

    Valid inside a continuity piece: a single winner i and a positive margin.
    Row i is zero (the winner is reset). For j != i the diagonal term is
    F_j(phi_j) / F_j(v_j) (= exp(-gamma_j tbar) for the leaky flow) and the
    column-i term is F_j(phi_j) * dtbar/dv_i with dtbar/dv_i = -1 / F_i(v_i).
    Clamped coordinates have zero rows.
    """
    v = check_state(p, v)
    X = v[None, :]
    _, win, tbar, margin, clamped = step_batch(p, X)
    winners = _winners(win[0])
    if len(winners) != 1 or margin[0] < p.tol.tie:
        raise StateError("jacobian undefined on a discontinuity (tied spike times)")
    (i,) = winners
    pre = p.flow.phi(v, tbar[0])
    f_pre = p.flow.rate(pre)
    f_v = p.flow.rate(v)
    J = np.zeros((p.n, p.n))
    others = [j for j in range(p.n) if j != i and not clamped[0, j]]
    for j in others:
        J[j, j] = f_pre[j] / f_v[j]
        J[j, i] = -f_pre[j] / f_v[i]
    return J


def section_jacobian(p: NetworkParams, v, zero_index: int | None = None) -> np.ndarray:
    """Jacobian in section charts: drop output row of the winner and input
    column of the zero coordinate ``zero_index`` (defaults to the first zero).
    """
    v = check_section_point(p, v)
    k = zero_set(v)[0] if zero_index is None else zero_index
    if v[k] != 0.0:
        raise StateError(f"coordinate {k} is not zero")
    J = jacobian(p, v)
    i = winner_of(p, v)
    rows = [r for r in range(p.n) if r != i]
    cols = [c for c in range(p.n) if c != k]
    return J[np.ix_(rows, cols)]


def winner_of(p: NetworkParams, v) -> int:
    """The unique first neuron to fire from ``v`` (raises on a tie)."""
    win = step_batch(p, np.asarray(v, dtype=float)[None, :])[1]
    winners = _winners(win[0])
    if len(winners) != 1:
        raise StateError("tied spike times")
    return winners[0]


def system_constants(p: NetworkParams) -> SystemConstants:
    off = ~np.eye(p.n, dtype=bool)
    alpha = float(np.min(np.abs(p.theta - p.h[off])) / 4.0)
    eps0 = float(np.min(p.h[off]))
    _, fmax = p.flow.rate_bounds(p.theta)
    f_max = float(fmax.max())
    gamma_min = float(p.flow.contraction_rate(p.theta).min())
    # the neuron that just fired sits at 0, so it is at most theta below threshold
    t0 = min(eps0, p.theta) / f_max
    lam = math.exp(-gamma_min * t0)
    return SystemConstants(alpha, eps0, t0, lam, gamma_min, f_max, 2.0 * p.theta)


def locate_tie(p: NetworkParams, a, b, iters: int = 200):
    """Bisect the segment [a, b] for the point where the first winner changes.

    ``a`` and ``b`` must share a zero coordinate and have different single
    winners. Returns (tie point, unit max-norm direction from a to b).
    """
    a = check_section_point(p, a)
    b = check_section_point(p, b)
    if not np.any((a == 0.0) & (b == 0.0)):
        raise StateError("segment endpoints must share a zero coordinate")
    wa = winner_of(p, a)
    if winner_of(p, b) == wa:
        raise ProbeError("segment endpoints have the same winner")
    lo, hi = 0.0, 1.0
    d = b - a
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        X = (a + mid * d)[None, :]
        _, win, *_ = step_batch(p, X)
        if win[0, wa] and win[0].sum() == 1:
            lo = mid
        else:
            hi = mid
    v = a + 0.5 * (lo + hi) * d
    v[(a == 0.0) & (b == 0.0)] = 0.0
    return v, d / np.max(np.abs(d))


def _probe_direction(p, v):
    t = p.flow.spike_times(v[None, :], p.theta)[0]
    i, j = (int(x) for x in np.argsort(t, kind="stable")[:2])
    zeros = set(zero_set(v))
    for c in (i, j):
        if c not in zeros or len(zeros) > 1:
            d = np.zeros(p.n)
            d[c] = 1.0
            return d
    raise ProbeError("no admissible probe direction")


def discontinuity_jump_probe(
    p: NetworkParams, v, delta: float, direction=None, require_straddle: bool = True, n_radii: int = 5
) -> float:
    """Largest max-norm jump of the map across ``v`` at radius <= delta.

    Pairs U = v - r d, W = v + r d for r = delta, delta/2, ... With
    ``require_straddle`` only pairs whose winners differ count, and a probe
    that never straddles raises ProbeError.
    """
    v = check_section_point(p, v)
    d = _probe_direction(p, v) if direction is None else np.asarray(direction, dtype=float)
    if not np.any((v == 0.0) & (d == 0.0)):
        raise ProbeError("probe direction leaves the section")
    radii = delta * 0.5 ** np.arange(n_radii)
    U = v[None, :] - radii[:, None] * d
    W = v[None, :] + radii[:, None] * d
    keep = np.all(np.abs(U) <= p.theta, axis=1) & np.all(np.abs(W) <= p.theta, axis=1)
    U, W = U[keep], W[keep]
    rU, winU, *_ = step_batch(p, U)
    rW, winW, *_ = step_batch(p, W)
    jumps = np.max(np.abs(rU - rW), axis=1)
    straddle = np.any(winU != winW, axis=1)
    if require_straddle:
        if not np.any(straddle):
            raise ProbeError("probe pairs do not straddle a tie")
        jumps = jumps[straddle]
    return float(jumps.max()) if len(jumps) else 0.0


# -- sampling ----------------------------------------------------------------


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index``; never depends on batching."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def draw_section_point(p: NetworkParams, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on a uniformly chosen slab {v_k = 0}."""
    k = int(rng.integers(p.n))
    v = rng.uniform(-p.theta, p.theta, p.n)
    v[k] = 0.0
    return v


def section_samples(p: NetworkParams, count: int, seed: int, start: int = 0) -> np.ndarray:
    return np.array([draw_section_point(p, sample_rng(seed, start + i)) for i in range(count)])


# -- contraction checks ----------------------------------------------------


def same_itinerary_pairs(p: NetworkParams, count: int, steps: int, rng: np.random.Generator,
                         scale=(1e-6, 1e-2)):
    """Random nearby pairs (V, U) in the image of the map, iterated together.

    Preimages are a section sample and a perturbation of it along the section;
    V, U are their images. Returns (V, U, trajectories of V and U with shape
    (steps + 1, count, n), mask of pairs whose winners agreed at every step).
    """
    V0 = np.array([draw_section_point(p, rng) for _ in range(count)])
    radius = np.exp(rng.uniform(np.log(scale[0]), np.log(scale[1]), count)) * p.theta
    dU = rng.uniform(-1.0, 1.0, (count, p.n)) * radius[:, None]
    dU[V0 == 0.0] = 0.0
    U0 = np.clip(V0 + dU, -p.theta, p.theta)
    V, winV, *_ = step_batch(p, V0)
    U, winU, *_ = step_batch(p, U0)
    same = np.all(winV == winU, axis=1)
    trajV, trajU = [V], [U]
    X, Y = V, U
    for _ in range(steps):
        X, wx, *_ = step_batch(p, X)
        Y, wy, *_ = step_batch(p, Y)
        same &= np.all(wx == wy, axis=1) & (wx.sum(axis=1) == 1)
        trajV.append(X)
        trajU.append(Y)
    return V, U, np.array(trajV), np.array(trajU), same


def norm_equivalence_probe(p: NetworkParams, count: int = 2000, horizon: int = 40, seed: int = 0) -> float:
    """Empirical K with ||rho^k V - rho^k U|| <= K^2 lam^k ||V - U||.

    The worst ratio over same-itinerary pairs and k <= horizon; never below 1.
    """
    lam = system_constants(p).lam
    rng = np.random.default_rng(seed)
    V, U, tv, tu, same = same_itinerary_pairs(p, count, horizon, rng)
    d0 = np.max(np.abs(V - U), axis=1)
    ok = same & (d0 > 0)
    if not np.any(ok):
        return 1.0
    dk = np.max(np.abs(tv[:, ok] - tu[:, ok]), axis=2)
    ratio = dk / (lam ** np.arange(horizon + 1)[:, None] * d0[ok][None, :])
    return float(math.sqrt(max(1.0, ratio.max())))


def contraction_iterate(lam: float, K: float) -> int:
    """Smallest p0 with K^2 lam^p0 <= 1/2."""
    return max(1, math.ceil(math.log(0.5 / K**2) / math.log(lam)))
