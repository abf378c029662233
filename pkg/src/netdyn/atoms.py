"""Point-cloud atoms: samples grouped by the itinerary word of their first p returns.

An atom of generation p holds the p-th images of all samples that followed
the same word (i_1, ..., i_p). Because the map contracts on each continuity
piece, atom diameters shrink geometrically; once they are small compared
with the distance to the nearest tie every atom maps whole into another atom
and the successor graph closes into loops, one per limit cycle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import NetworkParams, margins_batch, step_batch
from .orbits import Cycle, CycleCandidate, CycleRejected, refine_cycle
from .poincare import draw_section_point, margin_threshold, sample_rng, system_constants

log = logging.getLogger(__name__)

DEFAULT_ATOM_DELTA_FRACTION = 0.1
STRAY_FRACTION = 0.01


class AtomizationError(RuntimeError):
    """Raised when no sample survives, or the atom successor map is ill-defined."""


@dataclass
class Atom:
    word: tuple[int, ...]
    members: np.ndarray
    diameter: float
    generation: int
    min_margin: float
    sample_ids: np.ndarray = field(repr=False, default=None)


@dataclass
class Atomization:
    """Atoms of one generation plus the count of samples lost to ties."""

    generation: int
    atoms: list[Atom]
    discarded: int
    total: int

    def __iter__(self):
        return iter(self.atoms)

    def __len__(self):
        return len(self.atoms)

    def by_word(self) -> dict[tuple[int, ...], Atom]:
        return {a.word: a for a in self.atoms}


@dataclass
class AtomChain:
    """A walk A^1 -> A^2 -> ... that enters a loop at ``entry`` of length ``loop``."""

    words: list[tuple[int, ...]]
    entry: int
    loop: int

    @property
    def loop_words(self):
        return self.words[self.entry : self.entry + self.loop]


@dataclass
class ChainReport:
    chains: list[AtomChain]
    loops: list[list[tuple[int, ...]]]
    cycles: list[Cycle]
    successor: dict[tuple[int, ...], tuple[int, ...]]
    stray_members: int = 0
    spawned: int = 0


@dataclass
class DiameterReport:
    diameters: np.ndarray
    bound: np.ndarray
    survivors: np.ndarray
    slack: float = 0.05

    @property
    def within_bound(self) -> np.ndarray:
        return self.diameters <= self.bound * (1.0 + self.slack)


def sample_section(p: NetworkParams, n_points: int, seed: int, max_reject: float = 0.5):
    """Uniform section samples whose margin is outside the tie band.

    Near-tie draws are redrawn from the same per-sample stream.

    Returns:
        (points of shape (n_points, n), number of redraws)
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    pts = np.empty((n_points, p.n))
    redraws = 0
    for i in range(n_points):
        rng = sample_rng(seed, i)
        while True:
            v = draw_section_point(p, rng)
            if margins_batch(p, v[None, :])[0] > p.tol.tie:
                break
            redraws += 1
            if redraws > max_reject * n_points:
                raise AtomizationError("more than half of the draws sit on ties; degenerate parameters")
        pts[i] = v
    return pts, redraws


def _evolve(p, cloud, generations, keep_letters=True):
    """Yield (generation, sample ids, images, word ids, letters) for 1..generations.

    Samples whose margin falls in the tie band before a return are dropped.
    Word ids are compact integers labelling the word so far.
    """
    cloud = np.asarray(cloud, dtype=float)
    m = len(cloud)
    X = cloud.copy()
    ids = np.arange(m)
    wid = np.zeros(m, np.int64)
    letters = np.zeros((m, generations), np.int64) if keep_letters else None
    for g in range(1, generations + 1):
        Y, win, _, margin, _ = step_batch(p, X)
        ok = margin >= p.tol.tie
        letter = np.argmax(win, axis=1)
        X, ids, wid, letter = Y[ok], ids[ok], wid[ok], letter[ok]
        if keep_letters:
            letters = letters[ok]
            letters[:, g - 1] = letter
        _, wid = np.unique(wid * p.n + letter, return_inverse=True)
        wid = wid.reshape(-1)
        yield g, ids, X, wid, letters


def _group_diameters(X, wid):
    """Max-norm diameter of each word group (max over coordinates of the range)."""
    order = np.argsort(wid, kind="stable")
    w = wid[order]
    starts = np.flatnonzero(np.r_[True, w[1:] != w[:-1]])
    Xs = X[order]
    hi = np.maximum.reduceat(Xs, starts, axis=0)
    lo = np.minimum.reduceat(Xs, starts, axis=0)
    return w[starts], np.max(hi - lo, axis=1), order, starts


def _atomization(p, g, ids, X, wid, letters, total) -> Atomization:
    if len(ids) == 0:
        raise AtomizationError("every sample touched a tie; no atoms survive")
    _, diam, order, starts = _group_diameters(X, wid)
    margins = margins_batch(p, X)
    bounds = np.r_[starts, len(order)]
    atoms = []
    for a in range(len(starts)):
        rows = order[bounds[a] : bounds[a + 1]]
        atoms.append(
            Atom(
                word=tuple(int(x) for x in letters[rows[0], :g]),
                members=X[rows],
                diameter=float(diam[a]),
                generation=g,
                min_margin=float(margins[rows].min()),
                sample_ids=ids[rows],
            )
        )
    atoms.sort(key=lambda a: a.word)
    return Atomization(g, atoms, discarded=total - len(ids), total=total)


def iter_atomizations(p: NetworkParams, cloud, p_max: int):
    """Yield the Atomization of every generation 1..p_max."""
    cloud = np.asarray(cloud, dtype=float)
    for g, ids, X, wid, letters in _evolve(p, cloud, p_max):
        yield _atomization(p, g, ids, X, wid, letters, len(cloud))


def refine_atoms(p: NetworkParams, cloud, p_gen: int) -> Atomization:
    """Atoms of generation ``p_gen`` built from the sample cloud."""
    if p_gen < 1:
        raise ValueError("generation must be >= 1")
    cloud = np.asarray(cloud, dtype=float)
    for g, ids, X, wid, letters in _evolve(p, cloud, p_gen):
        pass
    return _atomization(p, g, ids, X, wid, letters, len(cloud))


def diameter_sequence(p: NetworkParams, cloud, p_max: int) -> DiameterReport:
    """d_p = largest atom diameter for p = 1..p_max, with the bound K lam^(p-1)."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    consts = system_constants(p)
    d = np.zeros(p_max)
    alive = np.zeros(p_max, int)
    for g, ids, X, wid, _ in _evolve(p, cloud, p_max, keep_letters=False):
        alive[g - 1] = len(ids)
        if len(ids):
            d[g - 1] = _group_diameters(X, wid)[1].max()
    bound = consts.k_diam * consts.lam ** np.arange(p_max)
    return DiameterReport(d, bound, alive)


def indivisible_generation(p: NetworkParams, cloud, delta: float, p_max: int):
    """First generation whose atoms are all smaller than delta/2, or None."""
    for g, ids, X, wid, _ in _evolve(p, cloud, p_max, keep_letters=False):
        if len(ids) and _group_diameters(X, wid)[1].max() < delta / 2:
            return g
    return None


def indivisibility_check(p: NetworkParams, atom: Atom, delta: float) -> bool:
    """All members fire the same neuron next and keep a margin above the
    threshold matching a delta/2 ball."""
    if len(atom.members) == 0:
        raise ValueError("atom is empty")
    win = step_batch(p, atom.members)[1]
    same = np.all(win == win[0]) and win[0].sum() == 1
    return bool(same and atom.min_margin > margin_threshold(p, delta))


def extract_chains(p: NetworkParams, atomization: Atomization, max_new_factor: int = 10) -> ChainReport:
    """Successor graph of indivisible atoms, its loops and their limit cycles.

    The successor of atom w is the atom labelled by the shifted word
    w[1:] + (next winner,). When no sample of the cloud carries that history,
    the image members seed a new atom with it, so the graph always closes on
    the images actually reached.

    Raises:
        AtomizationError: when image members split across winners beyond the
            stray allowance, or new atoms keep appearing past
            ``max_new_factor`` times the original atom count.
    """
    atoms = list(atomization.atoms)
    by_word = atomization.by_word()
    succ: dict[tuple[int, ...], tuple[int, ...]] = {}
    strays = 0
    queue = list(atoms)
    cap = max_new_factor * len(atoms)
    while queue:
        a = queue.pop(0)
        img, win, _, _, _ = step_batch(p, a.members)
        letters = np.argmax(win, axis=1)
        counts = np.bincount(letters, minlength=p.n)
        nxt = int(np.argmax(counts))
        stray = len(letters) - counts[nxt]
        if stray > STRAY_FRACTION * len(letters):
            raise AtomizationError(f"atom {a.word} splits across winners; not indivisible")
        if stray:
            log.warning("atom %s: %d stray members resolved by majority", a.word, stray)
            strays += int(stray)
        target = a.word[1:] + (nxt,)
        if target not in by_word:
            # No sample reached this history inside the cloud; the images do.
            if len(atoms) - len(atomization.atoms) >= cap:
                raise AtomizationError("successor graph does not close; atoms are not indivisible")
            pts = img[letters == nxt]
            span = pts.max(axis=0) - pts.min(axis=0)
            new = Atom(target, pts, float(span.max()), a.generation,
                       float(margins_batch(p, pts).min()), a.sample_ids[letters == nxt])
            atoms.append(new)
            by_word[target] = new
            queue.append(new)
        succ[a.word] = target

    chains, loops = [], []
    seen_loops = set()
    for a in atomization.atoms:
        path = [a.word]
        pos = {a.word: 0}
        while True:
            nxt = succ[path[-1]]
            if nxt in pos:
                entry = pos[nxt]
                break
            pos[nxt] = len(path)
            path.append(nxt)
        chain = AtomChain(path, entry, len(path) - entry)
        chains.append(chain)
        loop = chain.loop_words
        s = loop.index(min(loop))
        key = tuple(loop[s:] + loop[:s])
        if key not in seen_loops:
            seen_loops.add(key)
            loops.append(list(key))

    cycles: list[Cycle] = []
    for loop in loops:
        anchor = by_word[loop[0]].members[0]
        try:
            cyc = refine_cycle(p, CycleCandidate(len(loop), anchor))
        except CycleRejected as exc:
            raise AtomizationError(f"loop {loop} does not refine to a cycle: {exc}") from exc
        if not any(c.matches(cyc) for c in cycles):
            cycles.append(cyc)
    return ChainReport(chains, loops, cycles, succ, strays, len(atoms) - len(atomization.atoms))


def loop_inclusion_gap(p: NetworkParams, atomization: Atomization, loop) -> float:
    """Largest distance by which rho(A^j) sticks out of the bounding box of A^(j+1)."""
    by_word = atomization.by_word()
    worst = 0.0
    for j, w in enumerate(loop):
        img = step_batch(p, by_word[w].members)[0]
        nxt = by_word[loop[(j + 1) % len(loop)]].members
        lo, hi = nxt.min(axis=0), nxt.max(axis=0)
        out = np.maximum(lo - img, 0) + np.maximum(img - hi, 0)
        worst = max(worst, float(out.max()))
    return worst
