"""Orbits of the return map: cycle detection, refinement and classification.

A section point is classified by following its orbit. If the orbit converges
to a periodic orbit whose states stay a calibrated margin away from every
tie, and small perturbations of that orbit do not separate by more than
alpha, the point is stable. If the orbit touches a tie, or a perturbation
separates, it is chaotic. Anything else is reported as undecided.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import NetworkParams, step_batch
from .poincare import (
    Itinerary,
    check_section_point,
    draw_section_point,
    margin_threshold,
    sample_rng,
    system_constants,
)

DEFAULT_BUDGET = 10_000
DEFAULT_DELTA_FRACTION = 1e-6
PROBE_STEPS = 200
CYCLE_MATCH_TOL = 1e-8
CHUNK = 256


class CycleRejected(RuntimeError):
    """Raised when cycle refinement leaves the candidate's itinerary."""


class Verdict(enum.Enum):
    STABLE = "stable"
    CHAOTIC = "chaotic"
    UNDECIDED = "undecided"


class SystemClass(enum.Enum):
    AE_STABLE = "ae-stable"
    AE_CHAOTIC = "ae-chaotic"
    COMBINED = "combined"
    INDETERMINATE = "indeterminate"


@dataclass
class OrbitRecord:
    """A finite orbit. ``margins``, ``isi`` and ``itinerary`` describe the
    transition out of ``states[k]``; ``halted_at`` is the step whose margin
    fell inside the tie band, if any."""

    start: np.ndarray
    states: np.ndarray
    itinerary: Itinerary
    margins: np.ndarray
    isi: np.ndarray
    clamp_events: int
    halted_at: int | None = None


@dataclass(frozen=True)
class CycleCandidate:
    period: int
    anchor: np.ndarray
    anchor_index: int = 0
    word: tuple = ()


@dataclass
class Cycle:
    """A periodic orbit, rotated to a canonical starting state."""

    period: int
    states: np.ndarray
    word: tuple[tuple[int, ...], ...]
    residual: float
    floquet_bound: float
    min_margin: float
    isi: np.ndarray
    probe_divergence: float = float("nan")

    def distance(self, v) -> float:
        """Max-norm distance from ``v`` to the nearest cycle state."""
        return float(np.min(np.max(np.abs(self.states - np.asarray(v)), axis=1)))

    def matches(self, other: "Cycle", tol: float = CYCLE_MATCH_TOL) -> bool:
        if self.period != other.period or sorted(self.word) != sorted(other.word):
            return False
        return all(self.distance(s) <= tol for s in other.states)


@dataclass
class PointVerdict:
    kind: Verdict
    cycle_id: int | None = None
    cycle: Cycle | None = None
    min_margin: float = float("inf")
    post_margin: float = float("inf")
    convergence_step: int = -1
    residual: float = float("nan")
    tie_step: int = -1
    steps: int = 0


@dataclass
class MeasureReport:
    samples: int
    frac_stable: float
    frac_chaotic: float
    frac_undecided: float
    cycles: list[Cycle]
    basin_counts: list[int]
    system_class: SystemClass
    tie_contact_fraction: float
    delta: float
    threshold: float
    verdicts: list[PointVerdict] = field(repr=False, default_factory=list)
    starts: np.ndarray | None = field(repr=False, default=None)


# -- single orbits -----------------------------------------------------------


def iterate_orbit(p: NetworkParams, v, max_steps: int, halt_on_tie: bool = True) -> OrbitRecord:
    """Follow the return map for up to ``max_steps`` spikes."""
    x = check_section_point(p, v)[None, :]
    states, words, margins, isi = [x[0]], [], [], []
    clamps = 0
    halted = None
    for k in range(max_steps):
        y, win, tbar, margin, clamped = step_batch(p, x)
        if halt_on_tie and margin[0] < p.tol.tie:
            halted = k
            break
        words.append(tuple(int(i) for i in np.flatnonzero(win[0])))
        margins.append(margin[0])
        isi.append(tbar[0])
        clamps += int(clamped.sum())
        x = y
        states.append(x[0])
    return OrbitRecord(
        start=states[0],
        states=np.array(states),
        itinerary=Itinerary(tuple(words)),
        margins=np.array(margins),
        isi=np.array(isi),
        clamp_events=clamps,
        halted_at=halted,
    )


def detect_cycle(orbit: OrbitRecord, tol: float = 1e-9, max_period: int | None = None):
    """Smallest period r at which the end of the orbit recurs within ``tol``.

    The anchor is the latest state k with states[k + r] the final state, and
    the r letters before the anchor must equal the r letters after it.
    Returns a CycleCandidate or None.
    """
    S = orbit.states
    L = len(S)
    rmax = (L - 1) // 2 if max_period is None else min(max_period, (L - 1) // 2)
    if rmax < 1:
        return None
    word = orbit.itinerary.word
    dist = np.max(np.abs(S[L - 2 : L - 2 - rmax : -1] - S[-1]), axis=1)
    for r in np.flatnonzero(dist <= tol) + 1:
        k = L - 1 - r
        if word[k - r : k] == word[k : k + r]:
            return CycleCandidate(int(r), S[k].copy(), int(k), tuple(word[k : k + r]))
    return None


def _trajectory(p, x, steps):
    """States, letters, margins, spike times and diagonal factors of ``steps`` returns."""
    X = np.asarray(x, dtype=float)[None, :]
    states, word, margins, isi, factors = [X[0]], [], [], [], []
    for _ in range(steps):
        Y, win, tbar, margin, clamped = step_batch(p, X)
        pre = p.flow.phi(X, tbar[:, None])
        diag = p.flow.rate(pre) / p.flow.rate(X)
        diag = np.where(win | clamped, 0.0, diag)
        word.append(tuple(int(i) for i in np.flatnonzero(win[0])))
        margins.append(margin[0])
        isi.append(tbar[0])
        factors.append(diag.max())
        X = Y
        states.append(X[0])
    return np.array(states), tuple(word), np.array(margins), np.array(isi), np.array(factors)


def _canonical_rotation(states, word):
    r = len(word)
    keys = [(word[s:] + word[:s], tuple(states[s])) for s in range(r)]
    return min(range(r), key=keys.__getitem__)


def refine_cycle(p: NetworkParams, candidate: CycleCandidate, tol: float | None = None,
                 max_rounds: int = 10_000) -> Cycle:
    """Converge the candidate to a fixed point of the r-th iterate.

    Iterates x -> rho^r(x) until successive iterates differ by less than
    ``tol``; the itinerary word must not change along the way. The period is
    then reduced to the smallest divisor that reproduces the states.

    Raises:
        CycleRejected: if the itinerary changes (a tie was crossed) or the
            iteration does not settle within ``max_rounds``.
    """
    tol = p.tol.refine if tol is None else tol
    r = candidate.period
    x = np.asarray(candidate.anchor, dtype=float)
    word = None
    prev = np.inf
    converged = False
    for _ in range(max_rounds):
        states, w, *_ = _trajectory(p, x, r)
        if word is None:
            word = w
        elif w != word:
            raise CycleRejected("refinement crossed a discontinuity")
        y = states[-1]
        diff = np.max(np.abs(y - x))
        # Past tol, keep polishing until rounding noise stops the decrease.
        if converged and (diff >= prev or diff == 0.0):
            break
        x = y
        prev = diff
        converged = converged or diff < tol
    if not converged:
        raise CycleRejected(f"no convergence within {max_rounds} rounds")

    for d in range(1, r):
        if r % d:
            continue
        states, w, *_ = _trajectory(p, x, d)
        if np.max(np.abs(states[-1] - x)) <= tol and word == w * (r // d):
            r = d
            break

    states, word, margins, isi, factors = _trajectory(p, x, r)
    residual = float(np.max(np.abs(states[-1] - states[0])))
    s = _canonical_rotation(states[:-1], word)
    roll = lambda a: np.concatenate([a[s:], a[:s]])  # noqa: E731
    return Cycle(
        period=r,
        states=roll(states[:-1]),
        word=word[s:] + word[:s],
        residual=residual,
        floquet_bound=float(np.prod(factors)),
        min_margin=float(margins.min()),
        isi=roll(isi),
    )


# -- batch engine ------------------------------------------------------------


@dataclass
class _ChunkResult:
    status: np.ndarray  # 0 undecided, 1 converged, 2 tie contact
    period: np.ndarray
    final: np.ndarray
    conv_step: np.ndarray
    tie_step: np.ndarray
    min_margin: np.ndarray
    post_margin: np.ndarray
    steps: np.ndarray


def _run_chunk(p: NetworkParams, X0: np.ndarray, budget: int, window0: int = 64,
               max_rounds: int = 10_000) -> _ChunkResult:
    """Follow every row of ``X0`` until it converges, touches a tie, or runs out.

    Recurrence is searched against an anchor state that jumps forward in
    doubling windows (Brent style); once the orbit recurs within the
    recurrence tolerance the anchor is advanced one period at a time until
    successive period-returns agree to the refinement tolerance.
    """
    tol = p.tol
    m = len(X0)
    res = _ChunkResult(
        status=np.zeros(m, np.int8),
        period=np.zeros(m, int),
        final=X0.copy(),
        conv_step=np.full(m, -1),
        tie_step=np.full(m, -1),
        min_margin=np.full(m, np.inf),
        post_margin=np.full(m, np.inf),
        steps=np.full(m, budget),
    )
    idx = np.arange(m)
    X = X0.copy()
    anchor = X.copy()
    anchor_step = np.zeros(m, int)
    window = np.full(m, window0)
    period = np.zeros(m, int)
    rounds = np.zeros(m, int)

    for k in range(budget):
        if len(idx) == 0:
            break
        Y, _, _, margin, _ = step_batch(p, X)
        refining = period > 0
        res.min_margin[idx] = np.minimum(res.min_margin[idx], margin)
        res.post_margin[idx[refining]] = np.minimum(res.post_margin[idx[refining]], margin[refining])

        tie = margin < tol.tie
        res.status[idx[tie]] = 2
        res.tie_step[idx[tie]] = k
        res.steps[idx[tie]] = k
        res.final[idx[tie]] = X[tie]

        X = Y
        s = k + 1
        lag = s - anchor_step
        dist = np.max(np.abs(X - anchor), axis=1)

        found = ~refining & ~tie & (dist <= tol.recurrence)
        check = refining & ~tie & (lag == period)
        done = check & (dist < tol.refine)
        again = check & ~done
        lost = again & (dist > 1e3 * tol.recurrence)
        again &= ~lost
        move = ~refining & ~tie & ~found & (lag >= window)

        res.conv_step[idx[found]] = anchor_step[found]
        period[found] = lag[found]
        rounds[found] = 0
        rounds[again] += 1
        period[lost] = 0
        window[lost] = window0
        window[move] *= 2
        reset = found | again | lost | move
        anchor[reset] = X[reset]
        anchor_step[reset] = s

        giveup = again & (rounds > max_rounds)
        res.status[idx[done]] = 1
        res.period[idx[done]] = period[done]
        res.final[idx[done | giveup]] = X[done | giveup]
        res.steps[idx[done | giveup]] = s

        keep = ~(tie | done | giveup)
        idx, X, anchor = idx[keep], X[keep], anchor[keep]
        anchor_step, window, period, rounds = anchor_step[keep], window[keep], period[keep], rounds[keep]

    res.final[idx] = X
    return res


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit argument, else NETDYN_THREADS, else 1."""
    if workers is None:
        raw = os.environ.get("NETDYN_THREADS", "").strip() or "1"
        if not raw.isdigit() or int(raw) < 1:
            raise ValueError(f"NETDYN_THREADS must be a positive integer, got {raw!r}")
        workers = int(raw)
    return max(1, int(workers))


def _map_chunks(fn, chunks, workers):
    if workers == 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, chunks))


def _probe_cycle(p: NetworkParams, cycle: Cycle, delta: float, steps: int) -> float:
    """Largest max-norm separation of axis probes of size ``delta`` placed
    around each cycle state, followed for ``steps`` returns."""
    base, probes = [], []
    for s in cycle.states:
        k = int(np.flatnonzero(s == 0.0)[0])
        for c in range(p.n):
            if c == k:
                continue
            for sign in (1.0, -1.0):
                w = s.copy()
                w[c] = np.clip(w[c] + sign * delta, -p.theta, p.theta)
                base.append(s)
                probes.append(w)
    A, B = np.array(base), np.array(probes)
    worst = 0.0
    for _ in range(steps):
        A = step_batch(p, A)[0]
        B = step_batch(p, B)[0]
        worst = max(worst, float(np.max(np.abs(A - B))))
    return worst


def _assign_cycles(p, results, delta, probe_steps):
    """Attach converged samples to deduplicated, refined cycles (in index order)."""
    cycles: list[Cycle] = []
    bank_states = np.empty((0, p.n))
    bank_ids = np.empty(0, int)
    ids = np.full(len(results.status), -1)
    for i in np.flatnonzero(results.status == 1):
        x = results.final[i]
        if len(bank_ids):
            d = np.max(np.abs(bank_states - x), axis=1)
            j = int(np.argmin(d))
            if d[j] <= CYCLE_MATCH_TOL:
                ids[i] = bank_ids[j]
                continue
        try:
            cyc = refine_cycle(p, CycleCandidate(int(results.period[i]), x))
        except CycleRejected:
            continue
        match = next((c for c, old in enumerate(cycles) if old.matches(cyc)), None)
        if match is None:
            cyc.probe_divergence = _probe_cycle(p, cyc, delta, probe_steps)
            cycles.append(cyc)
            match = len(cycles) - 1
            bank_states = np.vstack([bank_states, cyc.states])
            bank_ids = np.concatenate([bank_ids, np.full(cyc.period, match)])
        if cycles[match].distance(x) <= CYCLE_MATCH_TOL:
            ids[i] = match
    return cycles, ids


def _verdicts(p, results, cycles, ids, threshold, alpha):
    out = []
    for i in range(len(results.status)):
        common = dict(
            min_margin=float(results.min_margin[i]),
            post_margin=float(results.post_margin[i]),
            convergence_step=int(results.conv_step[i]),
            tie_step=int(results.tie_step[i]),
            steps=int(results.steps[i]),
        )
        if results.status[i] == 2:
            out.append(PointVerdict(Verdict.CHAOTIC, **common))
            continue
        c = int(ids[i])
        if c < 0:
            out.append(PointVerdict(Verdict.UNDECIDED, **common))
            continue
        cyc = cycles[c]
        common.update(cycle_id=c, cycle=cyc, residual=cyc.residual)
        if cyc.probe_divergence > alpha:
            kind = Verdict.CHAOTIC
        elif min(results.post_margin[i], cyc.min_margin) >= threshold:
            kind = Verdict.STABLE
        else:
            kind = Verdict.UNDECIDED
        out.append(PointVerdict(kind, **common))
    return out


def _concat(parts):
    return _ChunkResult(*(np.concatenate([getattr(r, f) for r in parts]) for f in _ChunkResult.__dataclass_fields__))


def default_delta(p: NetworkParams) -> float:
    return DEFAULT_DELTA_FRACTION * system_constants(p).alpha


def classify_batch(p: NetworkParams, X, budget: int = DEFAULT_BUDGET, delta: float | None = None,
                   workers: int | None = None):
    """Classify every row of ``X``. Returns (verdicts, cycles)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    for x in X:
        check_section_point(p, x)
    delta = default_delta(p) if delta is None else delta
    consts = system_constants(p)
    if not delta < consts.alpha:
        raise ValueError("delta must be smaller than alpha")
    chunks = [X[i : i + CHUNK] for i in range(0, len(X), CHUNK)]
    parts = _map_chunks(lambda c: _run_chunk(p, c, budget), chunks, resolve_workers(workers))
    results = _concat(parts)
    cycles, ids = _assign_cycles(p, results, delta, min(budget, PROBE_STEPS))
    verdicts = _verdicts(p, results, cycles, ids, margin_threshold(p, delta), consts.alpha)
    return verdicts, cycles


def classify_point(p: NetworkParams, v, budget: int = DEFAULT_BUDGET, delta: float | None = None) -> PointVerdict:
    """Stable / chaotic / undecided verdict for a single section point."""
    verdicts, _ = classify_batch(p, np.asarray(v, dtype=float)[None, :], budget, delta, workers=1)
    return verdicts[0]


def system_class(frac_stable: float, frac_chaotic: float, frac_undecided: float) -> SystemClass:
    if frac_chaotic == 0 and frac_undecided < 0.01:
        return SystemClass.AE_STABLE
    if frac_stable == 0 and frac_undecided < 0.01:
        return SystemClass.AE_CHAOTIC
    if frac_stable > 0 and frac_chaotic > 0:
        return SystemClass.COMBINED
    return SystemClass.INDETERMINATE


def estimate_measures(p: NetworkParams, n_samples: int, seed: int, budget: int = DEFAULT_BUDGET,
                      delta: float | None = None, workers: int | None = None) -> MeasureReport:
    """Monte-Carlo estimate of the stable and chaotic fractions of the section.

    Sample i is drawn from its own stream derived from (seed, i) and chunks
    have a fixed size, so the report does not depend on the worker count.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    delta = default_delta(p) if delta is None else delta
    consts = system_constants(p)
    if not delta < consts.alpha:
        raise ValueError("delta must be smaller than alpha")

    def work(start):
        stop = min(start + CHUNK, n_samples)
        X = np.array([draw_section_point(p, sample_rng(seed, i)) for i in range(start, stop)])
        return X, _run_chunk(p, X, budget)

    out = _map_chunks(work, list(range(0, n_samples, CHUNK)), resolve_workers(workers))
    starts = np.concatenate([x for x, _ in out])
    results = _concat([r for _, r in out])
    cycles, ids = _assign_cycles(p, results, delta, min(budget, PROBE_STEPS))
    threshold = margin_threshold(p, delta)
    verdicts = _verdicts(p, results, cycles, ids, threshold, consts.alpha)

    kinds = np.array([v.kind.value for v in verdicts])
    fs = float(np.mean(kinds == Verdict.STABLE.value))
    fc = float(np.mean(kinds == Verdict.CHAOTIC.value))
    fu = float(np.mean(kinds == Verdict.UNDECIDED.value))
    basin = [int(sum(1 for v in verdicts if v.kind is Verdict.STABLE and v.cycle_id == c))
             for c in range(len(cycles))]
    return MeasureReport(
        samples=n_samples,
        frac_stable=fs,
        frac_chaotic=fc,
        frac_undecided=fu,
        cycles=cycles,
        basin_counts=basin,
        system_class=system_class(fs, fc, fu),
        tie_contact_fraction=float(np.mean(results.status == 2)),
        delta=delta,
        threshold=threshold,
        verdicts=verdicts,
        starts=starts,
    )


def cycle_validity(p: NetworkParams, cycle: Cycle) -> float:
    """max_k ||rho(states[k]) - states[k+1 mod r]||."""
    nxt = step_batch(p, cycle.states)[0]
    return float(np.max(np.abs(nxt - np.roll(cycle.states, -1, axis=0))))


def residual_ratios(p: NetworkParams, anchor, period: int, rounds: int = 30) -> np.ndarray:
    """Successive ratios of ||rho^{r}(x_k) - x_k|| along the r-th iterate."""
    x = np.asarray(anchor, dtype=float)
    res = []
    for _ in range(rounds):
        y = _trajectory(p, x, period)[0][-1]
        res.append(np.max(np.abs(y - x)))
        x = y
    res = np.array(res)
    ok = (res[:-1] > 1e-14) & (res[1:] > 1e-14)
    return res[1:][ok] / res[:-1][ok]


__all__ = [
    "Cycle",
    "CycleCandidate",
    "CycleRejected",
    "MeasureReport",
    "OrbitRecord",
    "PointVerdict",
    "SystemClass",
    "Verdict",
    "classify_batch",
    "classify_point",
    "cycle_validity",
    "default_delta",
    "detect_cycle",
    "estimate_measures",
    "iterate_orbit",
    "refine_cycle",
    "residual_ratios",
    "system_class",
]
