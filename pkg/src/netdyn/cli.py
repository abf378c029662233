"""``netdyn <command> --config <path> [--seed N] [--out <prefix>]``.

Exit status: 0 on success, 1 on a configuration error, 2 on a numerical
failure. Diagnostics go to stderr; results go to ``<prefix>.*`` files.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .atoms import (
    DEFAULT_ATOM_DELTA_FRACTION,
    AtomizationError,
    extract_chains,
    indivisibility_check,
    iter_atomizations,
    sample_section,
)
from .config import COMMANDS, ConfigError, RunConfig, load_config
from .model import StateError
from .orbits import CycleRejected, detect_cycle, estimate_measures, iterate_orbit, resolve_workers
from .poincare import ProbeError, draw_section_point, margin_lipschitz, sample_rng, system_constants

log = logging.getLogger("netdyn")


def fmt(x) -> str:
    """Round-trip exact text for floats, plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return str(x)


def letters(word) -> str:
    """(0, 1, 0) -> '0-1-0'; simultaneous winners are joined with '+'."""
    return "-".join("+".join(map(str, w)) if isinstance(w, tuple) else str(w) for w in word) or "-"


def write_rows(path: str, columns: list[str], rows, style: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if style == "table":
            fh.write("\t".join(columns) + "\n")
            for row in rows:
                fh.write("\t".join(fmt(x) for x in row) + "\n")
        else:
            for row in rows:
                fh.write("\t".join(f"{c}:{fmt(x)}" for c, x in zip(columns, row)) + "\n")


def write_summary(path: str, items: list[tuple[str, object]]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, val in items:
            fh.write(f"{key}:{fmt(val)}\n")


def _state_cols(n):
    return [f"v{i}" for i in range(n)]


def _cycle_rows(cycles, n):
    cols = ["cycle", "period", "step", "word", "residual", "floquet_bound", "min_margin", "isi"] + _state_cols(n)
    rows = []
    for c, cyc in enumerate(cycles):
        for k in range(cyc.period):
            rows.append([c, cyc.period, k, letters(cyc.word), cyc.residual, cyc.floquet_bound,
                         cyc.min_margin, float(cyc.isi[k]), *map(float, cyc.states[k])])
    return cols, rows


def run_constants(cfg: RunConfig):
    p = cfg.params
    c = system_constants(p)
    items = [("command", "constants"), ("n", p.n), ("alpha", c.alpha), ("eps0", c.eps0), ("t0", c.t0),
             ("lambda", c.lam), ("gamma_min", c.gamma_min), ("f_max", c.f_max), ("k_diam", c.k_diam),
             ("margin_lipschitz", margin_lipschitz(p))]
    write_summary(f"{cfg.out}.summary.txt", items)
    return items


def run_simulate(cfg: RunConfig):
    p = cfg.params
    start = cfg.start if cfg.start is not None else draw_section_point(p, sample_rng(cfg.seed, 0))
    orbit = iterate_orbit(p, start, cfg.steps)
    rows = []
    for k, state in enumerate(orbit.states):
        if k < len(orbit.itinerary.word):
            head = [k, letters(orbit.itinerary.word[k : k + 1]), float(orbit.isi[k]), float(orbit.margins[k])]
        else:
            head = [k, "-", float("nan"), float("nan")]
        rows.append(head + list(map(float, state)))
    write_rows(f"{cfg.out}.orbit.tsv", ["step", "winners", "tbar", "margin"] + _state_cols(p.n), rows, cfg.out_format)
    cand = detect_cycle(orbit, p.tol.recurrence)
    items = [("command", "simulate"), ("steps", len(orbit.states) - 1),
             ("halted_at", -1 if orbit.halted_at is None else orbit.halted_at),
             ("clamp_events", orbit.clamp_events), ("cycle_period", cand.period if cand else 0),
             ("cycle_anchor_step", cand.anchor_index if cand else -1)]
    write_summary(f"{cfg.out}.summary.txt", items)
    return items


def _measure(cfg: RunConfig):
    return estimate_measures(cfg.params, cfg.samples, cfg.seed, budget=cfg.steps, delta=cfg.delta)


def _measure_items(report):
    return [("samples", report.samples), ("frac_stable", report.frac_stable),
            ("frac_chaotic", report.frac_chaotic), ("frac_undecided", report.frac_undecided),
            ("tie_contact_fraction", report.tie_contact_fraction), ("system_class", report.system_class.value),
            ("cycles", len(report.cycles)), ("basin_counts", ",".join(map(str, report.basin_counts)) or "-"),
            ("delta", report.delta), ("margin_threshold", report.threshold)]


def run_cycles(cfg: RunConfig):
    report = _measure(cfg)
    cols, rows = _cycle_rows(report.cycles, cfg.params.n)
    write_rows(f"{cfg.out}.cycles.tsv", cols, rows, cfg.out_format)
    items = [("command", "cycles")] + _measure_items(report)
    write_summary(f"{cfg.out}.summary.txt", items)
    return items


def run_classify(cfg: RunConfig):
    p = cfg.params
    report = _measure(cfg)
    cols = ["sample", "verdict", "cycle", "convergence_step", "tie_step", "min_margin", "post_margin"] + _state_cols(p.n)
    rows = []
    for i, (v, x) in enumerate(zip(report.verdicts, report.starts)):
        rows.append([i, v.kind.value, -1 if v.cycle_id is None else v.cycle_id, v.convergence_step,
                     v.tie_step, float(v.min_margin), float(v.post_margin), *map(float, x)])
    write_rows(f"{cfg.out}.classify.tsv", cols, rows, cfg.out_format)
    ccols, crows = _cycle_rows(report.cycles, p.n)
    write_rows(f"{cfg.out}.cycles.tsv", ccols, crows, cfg.out_format)
    items = [("command", "classify")] + _measure_items(report)
    write_summary(f"{cfg.out}.summary.txt", items)
    return items


def run_atoms(cfg: RunConfig):
    p = cfg.params
    delta = cfg.delta if cfg.delta is not None else DEFAULT_ATOM_DELTA_FRACTION * system_constants(p).alpha
    cloud, redraws = sample_section(p, cfg.samples, cfg.seed)
    rows, final, reached = [], None, 0
    for at in iter_atomizations(p, cloud, cfg.generations):
        final = at
        for a in at:
            rows.append([at.generation, letters(a.word), len(a.members), a.diameter, a.min_margin,
                         indivisibility_check(p, a, delta)])
        if max(a.diameter for a in at) < delta / 2:
            reached = at.generation
            break
    write_rows(f"{cfg.out}.atoms.tsv", ["generation", "word", "members", "diameter", "min_margin", "indivisible"],
               rows, cfg.out_format)
    items = [("command", "atoms"), ("samples", cfg.samples), ("redraws", redraws), ("delta", delta),
             ("generation", final.generation), ("discarded", final.discarded),
             ("indivisible_generation", reached or -1)]
    if not reached:
        write_summary(f"{cfg.out}.summary.txt", items + [("loops", 0)])
        raise AtomizationError(
            f"atoms did not shrink below delta/2 within {cfg.generations} generations; raise 'generations'")
    chains = extract_chains(p, final)
    cols, crows = _cycle_rows(chains.cycles, p.n)
    write_rows(f"{cfg.out}.cycles.tsv", cols, crows, cfg.out_format)
    items += [("spawned_atoms", chains.spawned), ("stray_members", chains.stray_members),
              ("loops", len(chains.loops)), ("cycles", len(chains.cycles))]
    for j, loop in enumerate(chains.loops):
        items.append((f"loop{j}", letters(tuple(w[-1] for w in loop))))
    entries = sorted({(c.entry, c.loop) for c in chains.chains})
    items.append(("chain_entries", ",".join(f"{k}/{r}" for k, r in entries)))
    write_summary(f"{cfg.out}.summary.txt", items)
    return items


RUNNERS = {
    "constants": run_constants,
    "simulate": run_simulate,
    "cycles": run_cycles,
    "classify": run_classify,
    "atoms": run_atoms,
}


def run(cfg: RunConfig) -> list[tuple[str, object]]:
    cfg.require_runnable()
    return RUNNERS[cfg.command](cfg)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netdyn", description="Return-map analysis of inhibitory pacemaker networks.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="path to the run configuration")
    ap.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    ap.add_argument("--out", default=None, help="output path prefix (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="netdyn: %(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(command=args.command, seed=args.seed, out=args.out)
        try:
            resolve_workers()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        items = run(cfg)
    except (ConfigError, StateError) as exc:
        print(f"netdyn: config error: {exc}", file=sys.stderr)
        return 1
    except (AtomizationError, CycleRejected, ProbeError, FloatingPointError, ValueError) as exc:
        print(f"netdyn: numerical failure: {exc}", file=sys.stderr)
        return 2
    for key, val in items:
        print(f"{key}:{fmt(val)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
