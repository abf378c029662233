"""Every documented invariant, checked on each of the three fixed seeds.

Each test builds its systems and points from ``np.random.default_rng(seed)``
so a failure reproduces exactly.
"""

import numpy as np
import pytest

from netdyn.atoms import (
    extract_chains,
    indivisible_generation,
    loop_inclusion_gap,
    refine_atoms,
    sample_section,
    diameter_sequence,
)
from netdyn.cli import main
from netdyn.config import ConfigError, parse_config
from netdyn.model import apply_spike, flow_at, random_params, spike_time, step_batch
from netdyn.orbits import (
    Verdict,
    classify_batch,
    cycle_validity,
    estimate_measures,
    iterate_orbit,
)
from netdyn.poincare import (
    contraction_iterate,
    discontinuity_jump_probe,
    first_spike,
    iterate_map,
    jacobian,
    locate_tie,
    margin_threshold,
    norm_equivalence_probe,
    same_itinerary_pairs,
    section_samples,
    system_constants,
    winner_of,
    zero_set,
)
from netdyn.model import StateError

from conftest import SEEDS

pytestmark = pytest.mark.parametrize("seed", SEEDS)


def system(seed, n=3):
    return random_params(n, np.random.default_rng(seed))


def below_threshold(p, rng, m):
    return rng.uniform(-p.theta, p.theta * 0.99, (m, p.n))


# -- net-model ----------------------------------------------------------------


def test_flow_monotone(seed):
    p, rng = system(seed), np.random.default_rng(seed)
    for v in below_threshold(p, rng, 50):
        ts = np.linspace(0, p.flow.spike_times(v, p.theta).min(), 33)
        traj = np.array([flow_at(p, v, t) for t in ts])
        assert np.all(np.diff(traj, axis=0) > 0)


def test_flow_concave(seed):
    p, rng = system(seed), np.random.default_rng(seed)
    for v in below_threshold(p, rng, 50):
        ts = np.linspace(0, p.flow.spike_times(v, p.theta).min(), 33)
        traj = np.array([flow_at(p, v, t) for t in ts])
        assert np.all(np.diff(traj, 2, axis=0) < 0)


def test_flow_semigroup(seed):
    p, rng = system(seed), np.random.default_rng(seed)
    for v in below_threshold(p, rng, 200):
        total = p.flow.spike_times(v, p.theta).min()
        s = rng.uniform(0, total)
        assert np.max(np.abs(flow_at(p, flow_at(p, v, s), total - s) - flow_at(p, v, total))) < 1e-12


def test_spike_time_consistency(seed):
    p, rng = system(seed), np.random.default_rng(seed)
    for v in below_threshold(p, rng, 200):
        i = int(rng.integers(p.n))
        t = spike_time(p, i, v[i])
        assert abs(p.flow.phi(v, t)[i] - p.theta) < p.tol.root


def test_spike_outcome_and_reset(seed):
    p, rng = system(seed, 4), np.random.default_rng(seed)
    for v in below_threshold(p, rng, 300):
        out = first_spike(p, v)
        t = p.flow.spike_times(v, p.theta)
        assert out.tbar == t.min()
        assert set(out.winners) == set(np.flatnonzero(t <= out.tbar * (1 + p.tol.simultaneity)))
        assert all(out.pre_jump[i] == p.theta for i in out.winners)
        w = apply_spike(p, out.pre_jump, out.winners)
        assert np.all(np.abs(w) <= p.theta) and all(w[i] == 0.0 for i in out.winners)


# -- poincare-map ---------------------------------------------------------------


def test_piecewise_contraction(seed):
    p = system(seed)
    lam = system_constants(p).lam
    K = norm_equivalence_probe(p, count=1000, horizon=40, seed=seed + 100)
    p0 = contraction_iterate(lam, K)
    V, U, tv, tu, same = same_itinerary_pairs(p, 1500, p0, np.random.default_rng(seed))
    d0 = np.max(np.abs(V - U), axis=1)[same]
    dp = np.max(np.abs(tv[-1] - tu[-1]), axis=1)[same]
    assert same.sum() >= 1000
    assert np.mean(dp <= 0.5 * d0) >= 0.995


def test_isi_lower_bound_on_image(seed):
    p = system(seed)
    t0 = system_constants(p).t0
    for v in section_samples(p, 50, seed):
        assert np.all(iterate_orbit(p, v, 100).isi[1:] >= t0)


def test_section_closure(seed):
    p = system(seed, 4)
    X = section_samples(p, 2000, seed)
    Y, win, *_ = step_batch(p, X)
    assert np.all(np.abs(Y) <= p.theta)
    assert np.all(Y[win] == 0.0)


def _tie_points(p, rng, count):
    out = []
    while len(out) < count:
        a, b = section_samples(p, 2, int(rng.integers(2**62)))
        b[zero_set(a)[0]] = 0.0
        try:
            if winner_of(p, a) != winner_of(p, b):
                out.append(locate_tie(p, a, b)[0])
        except StateError:
            continue
    return out


def test_jump_dichotomy(seed):
    p, rng = system(seed), np.random.default_rng(seed)
    alpha = system_constants(p).alpha
    for v in _tie_points(p, rng, 30):
        assert discontinuity_jump_probe(p, v, 1e-6) > 3 * alpha
    for v in section_samples(p, 30, seed):
        if step_batch(p, v[None, :])[3][0] > 1e-3:
            small = discontinuity_jump_probe(p, v, 1e-7, require_straddle=False)
            assert small < 1e-5


def test_jacobian_row_structure(seed):
    p = system(seed, 4)
    lam = system_constants(p).lam
    images = step_batch(p, section_samples(p, 300, seed))[0]
    checked = 0
    for w in images:
        _, win, tbar, gap, clamped = step_batch(p, w[None, :])
        if gap[0] < 1e-8 or clamped.any():
            continue
        J = jacobian(p, w)
        i = int(np.argmax(win[0]))
        assert np.all(J[i] == 0.0)
        d = np.delete(np.diag(J), i)
        assert np.all((d > 0) & (d <= lam))
        checked += 1
    assert checked > 200


# -- orbit-dynamics ------------------------------------------------------------


def test_orbit_record_consistency(seed):
    p = system(seed)
    for v in section_samples(p, 10, seed):
        orbit = iterate_orbit(p, v, 200)
        nxt = step_batch(p, orbit.states[:-1])[0]
        assert np.max(np.abs(nxt - orbit.states[1:])) <= p.tol.root


def test_forward_invariance(seed):
    p = system(seed)
    X = section_samples(p, 60, seed)
    verdicts, _ = classify_batch(p, X)
    thr = margin_threshold(p, 1e-6 * system_constants(p).alpha)
    keep = [i for i, v in enumerate(verdicts) if v.kind is Verdict.STABLE and v.min_margin >= 2 * thr]
    assert keep
    after, _ = classify_batch(p, step_batch(p, X[keep])[0])
    for i, w in zip(keep, after):
        assert w.kind is Verdict.STABLE and w.cycle.matches(verdicts[i].cycle)


def test_cycle_validity_and_minimality(seed):
    p = system(seed)
    rep = estimate_measures(p, 1000, seed)
    for c in rep.cycles:
        assert cycle_validity(p, c) <= 1e-10
        assert c.residual <= p.tol.recurrence
        for d in range(1, c.period):
            if c.period % d == 0:
                assert np.max(np.abs(iterate_map(p, c.states[0], d) - c.states[0])) > 1e-8


def test_disjoint_basins(seed):
    p = system(seed)
    rep = estimate_measures(p, 1000, seed)
    stable = [v for v in rep.verdicts if v.kind is Verdict.STABLE]
    assert sum(rep.basin_counts) == len(stable)
    for i, a in enumerate(rep.cycles):
        assert not any(a.matches(b) for b in rep.cycles[i + 1 :])
        for v in stable:
            if v.cycle_id != i:
                assert not v.cycle.matches(a)


def test_cycle_count_stable_under_doubling(seed):
    p = system(seed, 2 + seed)
    assert len(estimate_measures(p, 1500, seed).cycles) == len(estimate_measures(p, 3000, seed).cycles)


def test_omega_limit_consistency(seed):
    p = system(seed)
    for v in section_samples(p, 5, seed):
        verdicts, cycles = classify_batch(p, iterate_orbit(p, v, 40).states)
        assert len({w.cycle_id for w in verdicts}) == 1


# -- atomizer ----------------------------------------------------------------------


def test_atom_image_partition(seed):
    p = system(seed)
    cloud, _ = sample_section(p, 500, seed)
    at = refine_atoms(p, cloud, 8)
    ids = np.concatenate([a.sample_ids for a in at])
    members = np.vstack([a.members for a in at])
    assert len(np.unique(ids)) == len(ids) == at.total - at.discarded
    brute = np.array([iterate_map(p, cloud[i], 8) for i in ids])
    assert np.array_equal(members, brute)
    assert all(a.diameter >= 0 for a in at)


def test_atom_nesting(seed):
    p = system(seed)
    base, _ = sample_section(p, 400, seed)
    older = refine_atoms(p, np.vstack([base, step_batch(p, base)[0]]), 6).by_word()
    for a in refine_atoms(p, base, 7):
        rows = {tuple(m) for m in older[a.word[1:]].members}
        assert all(tuple(m) in rows for m in a.members)


def test_diameter_decay_bound(seed):
    p = system(seed)
    cloud, _ = sample_section(p, 1000, seed)
    assert np.all(diameter_sequence(p, cloud, 80).within_bound[1:])


def _chains(p, seed, samples=2000):
    cloud, _ = sample_section(p, samples, seed)
    delta = 0.1 * system_constants(p).alpha
    g = indivisible_generation(p, cloud, delta, 400)
    at = refine_atoms(p, cloud, g)
    return at, extract_chains(p, at), delta


def test_chain_cycles_match_orbit_cycles(seed):
    p = system(seed)
    _, rep, _ = _chains(p, seed)
    orbit_cycles = estimate_measures(p, 2000, seed).cycles
    assert len(rep.cycles) == len(orbit_cycles)
    for c in rep.cycles:
        assert any(c.matches(o, tol=1e-8) for o in orbit_cycles)


def test_loop_inclusion(seed):
    p = system(seed)
    at, rep, delta = _chains(p, seed)
    for chain in rep.chains:
        assert chain.loop >= 1
    for loop in rep.loops:
        if all(w in at.by_word() for w in loop):
            assert loop_inclusion_gap(p, at, loop) <= delta / 2


# -- netdyn-cli -------------------------------------------------------------------------

CONFIG = """\
[network]
n = 3
theta = 1.0
gamma = {gamma}
beta = {beta}
h = {h}

[run]
seed = {seed}
steps = 1000
samples = 800
generations = 400
"""


def _config_text(p, seed):
    j = lambda a: " ".join("%.17g" % x for x in np.ravel(a))  # noqa: E731
    return CONFIG.format(gamma=j(p.gamma), beta=j(p.beta), h=j(p.h), seed=seed)


def test_cli_determinism_across_threads(seed, tmp_path, monkeypatch):
    p = system(seed)
    cfg = tmp_path / "net.ini"
    cfg.write_text(_config_text(p, seed))
    outputs = []
    for threads in ("1", "4", "16"):
        monkeypatch.setenv("NETDYN_THREADS", threads)
        blob = {}
        for cmd in ("constants", "simulate", "cycles", "classify", "atoms"):
            prefix = tmp_path / f"{threads}-{cmd}"
            assert main([cmd, "--config", str(cfg), "--out", str(prefix)]) == 0
            for f in sorted(tmp_path.glob(f"{threads}-{cmd}.*")):
                blob[f.name.split("-", 1)[1]] = f.read_bytes()
        outputs.append(blob)
    assert outputs[0] == outputs[1] == outputs[2]


def test_cli_outputs_self_describing(seed, tmp_path):
    p = system(seed)
    cfg = tmp_path / "net.ini"
    cfg.write_text(_config_text(p, seed))
    for cmd in ("simulate", "classify", "atoms"):
        assert main([cmd, "--config", str(cfg), "--out", str(tmp_path / cmd)]) == 0
    for table in tmp_path.glob("*.tsv"):
        header = table.read_text().splitlines()[0].split("\t")
        assert all(h.isidentifier() for h in header)
    for summary in tmp_path.glob("*.summary.txt"):
        assert all(":" in line for line in summary.read_text().splitlines())


def test_run_config_invariants(seed):
    text = _config_text(system(seed), seed)
    cfg = parse_config(text).with_overrides(command="classify")
    cfg.require_runnable()
    assert min(cfg.steps, cfg.samples, cfg.generations) > 0
    with pytest.raises(ConfigError):
        parse_config(text.replace(f"seed = {seed}\n", "")).with_overrides(command="atoms").require_runnable()
