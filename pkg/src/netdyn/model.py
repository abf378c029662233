"""Network parameters, the inter-spike flow, spike times and the reset rule.

Potentials live in the cube Q = [-theta, theta]^n. Between spikes every
neuron follows its own autonomous ODE dV_i/dt = F_i(V_i) with F_i > 0 and
dF_i/dV_i < 0. When a neuron reaches theta it is reset to zero and every
other neuron j drops by h[i, j].

Neuron indices are 0-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParamError(ValueError):
    """Raised when network parameters violate the model hypotheses."""


class StateError(ValueError):
    """Raised when a potential vector is outside the phase space."""


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by all analyses.

    Attributes:
        root: accuracy of iterative spike-time solves and threshold checks.
        simultaneity: relative tolerance deciding that two spike times tie.
        recurrence: max-norm distance at which an orbit is said to recur.
        tie: time-gap margin below which a point counts as on a discontinuity.
        refine: successive-iterate difference that ends cycle refinement.
        h_theta: minimum allowed |h_ij - theta|.
    """

    root: float = 1e-12
    simultaneity: float = 1e-12
    recurrence: float = 1e-9
    tie: float = 1e-10
    refine: float = 1e-12
    h_theta: float = 1e-9


class Flow:
    """Contract for a decoupled inter-spike flow.

    Subclasses provide ``phi``, ``rate`` and ``drate``; all act elementwise on
    the trailing neuron axis. Spike times default to a safeguarded Newton
    solve, which only needs ``phi`` and ``rate``.
    """

    n: int

    def phi(self, v, t):
        """Flow of each coordinate after time ``t`` (broadcast against ``v``)."""
        raise NotImplementedError

    def rate(self, v):
        """Vector field F_i(v_i)."""
        raise NotImplementedError

    def drate(self, v):
        """Derivative dF_i/dV_i at v_i."""
        raise NotImplementedError

    def rate_bounds(self, theta):
        """(min, max) of each F_i over [-theta, theta], as two arrays."""
        grid = np.linspace(-theta, theta, 2049)[:, None] * np.ones(self.n)
        f = self.rate(grid)
        return f.min(axis=0), f.max(axis=0)

    def contraction_rate(self, theta):
        """Smallest |dF_i/dV_i| over [-theta, theta], per neuron."""
        grid = np.linspace(-theta, theta, 2049)[:, None] * np.ones(self.n)
        return np.abs(self.drate(grid)).min(axis=0)

    def spike_times(self, v, theta, tol=1e-14, max_iter=200):
        """Time for each coordinate of ``v`` to reach ``theta``.

        Newton on g(t) = phi(v, t) - theta. Since g is increasing and concave,
        Newton from t = 0 approaches the root from below; the bracket guards
        against a misbehaving user flow.
        """
        v = np.asarray(v, dtype=float)
        fmin, _ = self.rate_bounds(theta)
        lo = np.zeros_like(v)
        hi = (theta - v) / fmin * (1.0 + 1e-9) + 1e-300
        t = lo.copy()
        for _ in range(max_iter):
            g = self.phi(v, t) - theta
            lo = np.where(g < 0, t, lo)
            hi = np.where(g >= 0, t, hi)
            step = g / self.rate(self.phi(v, t))
            t_new = t - step
            bad = ~((t_new > lo) & (t_new < hi)) | ~np.isfinite(t_new)
            t_new = np.where(bad, 0.5 * (lo + hi), t_new)
            done = np.all(np.abs(t_new - t) <= tol * np.maximum(1.0, t_new))
            t = t_new
            if done:
                break
        return t


@dataclass(frozen=True, eq=False)
class LeakyFlow(Flow):
    """Leaky integrator F_i(V) = -gamma_i (V - beta_i), solved in closed form."""

    gamma: np.ndarray
    beta: np.ndarray

    @property
    def n(self):
        return len(self.gamma)

    def phi(self, v, t):
        return self.beta + (v - self.beta) * np.exp(-self.gamma * t)

    def rate(self, v):
        return -self.gamma * (v - self.beta)

    def drate(self, v):
        return -self.gamma * np.ones_like(np.asarray(v, dtype=float))

    def rate_bounds(self, theta):
        return self.gamma * (self.beta - theta), self.gamma * (self.beta + theta)

    def contraction_rate(self, theta):
        return self.gamma.copy()

    def spike_times(self, v, theta, tol=None, max_iter=None):
        # log1p keeps the result accurate as v approaches theta
        return np.log1p((theta - v) / (self.beta - theta)) / self.gamma

    def newton_spike_times(self, v, theta, tol=1e-14, max_iter=200):
        """Generic root-finding path, kept for cross-checking the closed form."""
        return Flow.spike_times(self, v, theta, tol=tol, max_iter=max_iter)


def _frozen_array(x, ndim):
    a = np.array(x, dtype=float)
    if a.ndim != ndim:
        raise ParamError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Parameters of an inhibitory pacemaker network.

    ``h[i, j]`` is the (positive) drop in neuron j's potential when neuron i
    fires; the diagonal is ignored. ``flow`` defaults to the leaky integrator
    built from ``gamma`` and ``beta``.
    """

    n: int
    theta: float
    gamma: np.ndarray
    beta: np.ndarray
    h: np.ndarray
    tol: Tolerances = field(default_factory=Tolerances)
    flow: Flow | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "gamma", _frozen_array(self.gamma, 1))
        object.__setattr__(self, "beta", _frozen_array(self.beta, 1))
        h = np.array(self.h, dtype=float)
        if h.ndim == 2 and h.shape[0] == h.shape[1]:
            h = h.copy()
            np.fill_diagonal(h, 0.0)
        object.__setattr__(self, "h", _frozen_array(h, 2))
        if self.flow is None:
            object.__setattr__(self, "flow", LeakyFlow(self.gamma, self.beta))

    @classmethod
    def symmetric(cls, n=2, theta=1.0, gamma=1.0, beta=2.0, h=0.2, tol=None):
        """Identical neurons with all-to-all uniform inhibition."""
        return cls(
            n=n,
            theta=theta,
            gamma=np.full(n, gamma),
            beta=np.full(n, beta),
            h=np.full((n, n), h),
            tol=tol or Tolerances(),
        )


def validate_params(p: NetworkParams) -> NetworkParams:
    """Check every model hypothesis and return ``p`` unchanged.

    Raises:
        ParamError: with a message naming the first violated condition.
    """
    if int(p.n) != p.n or p.n < 2:
        raise ParamError(f"n must be an integer >= 2, got {p.n}")
    if not (np.isfinite(p.theta) and p.theta > 0):
        raise ParamError(f"theta must be positive, got {p.theta}")
    if p.gamma.shape != (p.n,):
        raise ParamError(f"gamma must have length n={p.n}, got {p.gamma.shape}")
    if p.beta.shape != (p.n,):
        raise ParamError(f"beta must have length n={p.n}, got {p.beta.shape}")
    if p.h.shape != (p.n, p.n):
        raise ParamError(f"h must be {p.n}x{p.n}, got {p.h.shape}")
    for name, arr in (("gamma", p.gamma), ("beta", p.beta), ("h", p.h)):
        if not np.all(np.isfinite(arr)):
            raise ParamError(f"{name} has non-finite entries")
    if np.any(p.gamma <= 0):
        raise ParamError("gamma must be positive for every neuron")
    if np.any(p.beta <= p.theta):
        raise ParamError("beta must exceed theta for every neuron")
    off = ~np.eye(p.n, dtype=bool)
    if np.any(p.h[off] <= 0):
        raise ParamError("h must be positive off the diagonal")
    if np.any(np.abs(p.h[off] - p.theta) < p.tol.h_theta):
        raise ParamError("h equals theta for some pair (non-generic parameters)")
    if not isinstance(p.flow, LeakyFlow):
        fmin, _ = p.flow.rate_bounds(p.theta)
        if np.any(fmin <= 0):
            raise ParamError("flow rate must be positive on [-theta, theta]")
        if np.any(p.flow.contraction_rate(p.theta) <= 0):
            raise ParamError("flow derivative must be negative on [-theta, theta]")
    return p


def random_params(n, rng, theta=1.0, tol=None):
    """Draw a generic parameter set.

    gamma ~ U(0.5, 2), beta - theta ~ U(0.2, 2), h_ij / theta ~ U(0.05, 0.5).
    """
    gamma = rng.uniform(0.5, 2.0, n)
    beta = theta + rng.uniform(0.2, 2.0, n)
    h = rng.uniform(0.05, 0.5, (n, n)) * theta
    return validate_params(
        NetworkParams(n=n, theta=theta, gamma=gamma, beta=beta, h=h, tol=tol or Tolerances())
    )


def check_state(p: NetworkParams, v) -> np.ndarray:
    """Return ``v`` as a float array after checking it lies in Q."""
    v = np.asarray(v, dtype=float)
    if v.shape != (p.n,):
        raise StateError(f"state must have shape ({p.n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise StateError("state has non-finite entries")
    if np.any(v < -p.theta) or np.any(v > p.theta):
        raise StateError(f"state {v} is outside [-theta, theta]^n")
    return v


def flow_at(p: NetworkParams, v, t: float) -> np.ndarray:
    """Free evolution of the state ``v`` for a time ``t`` >= 0."""
    if t < 0:
        raise ValueError(f"flow time must be non-negative, got {t}")
    v = check_state(p, v)
    if t == 0:
        return v.copy()
    out = p.flow.phi(v, t)
    if np.any(out > p.theta + p.tol.root):
        raise StateError("flow time exceeds the next spike; result leaves Q")
    # rounding at the spike time can overshoot theta by an ulp
    return np.minimum(out, p.theta, out=out)


def spike_time(p: NetworkParams, i: int, vi: float) -> float:
    """Time for neuron ``i`` starting at ``vi`` < theta to reach the threshold."""
    if not -p.theta <= vi <= p.theta:
        raise StateError(f"potential {vi} is outside [-theta, theta]")
    if vi >= p.theta:
        raise StateError("neuron is already at threshold; spike time is not positive")
    v = np.full(p.n, -p.theta)
    v[i] = vi
    return float(p.flow.spike_times(v, p.theta)[i])


def apply_spike(p: NetworkParams, pre, winners) -> np.ndarray:
    """Reset the winners to zero and inhibit everyone else.

    Non-winners drop by the summed inhibition from all winners and are clamped
    at -theta so the result stays in Q.
    """
    pre = np.asarray(pre, dtype=float)
    winners = sorted(set(int(i) for i in winners))
    if not winners:
        raise ValueError("winner set must be nonempty")
    if np.any(np.abs(pre[winners] - p.theta) > 1e-9 * max(1.0, p.theta)):
        raise StateError("every winner must sit at the threshold")
    mask = np.zeros(p.n, dtype=bool)
    mask[winners] = True
    out, _ = _jump(p, pre[None, :], mask[None, :])
    return out[0]


# -- batch kernels ---------------------------------------------------------
# Arrays of shape (m, n); one row per state. Everything above and in the
# analysis modules is built on these so single-point and batch paths agree.


def _jump(p, pre, win):
    inhibition = win.astype(float) @ p.h
    dropped = pre - inhibition
    clamped = (~win) & (dropped < -p.theta)
    out = np.where(win, 0.0, np.maximum(dropped, -p.theta))
    return out, clamped


def step_batch(p: NetworkParams, X: np.ndarray):
    """Apply the return map to every row of ``X``.

    Returns:
        (next states, winner mask, spike time, time-gap margin, clamp mask)
    """
    t = p.flow.spike_times(X, p.theta)
    tbar = t.min(axis=1)
    part = np.partition(t, 1, axis=1)
    margin = part[:, 1] - part[:, 0]
    win = t <= tbar[:, None] * (1.0 + p.tol.simultaneity)
    pre = p.flow.phi(X, tbar[:, None])
    pre = np.where(win, p.theta, pre)
    out, clamped = _jump(p, pre, win)
    return out, win, tbar, margin, clamped


def margins_batch(p: NetworkParams, X: np.ndarray) -> np.ndarray:
    """Gap between the two smallest spike times of each row."""
    t = p.flow.spike_times(X, p.theta)
    part = np.partition(t, 1, axis=1)
    return part[:, 1] - part[:, 0]
