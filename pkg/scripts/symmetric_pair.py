"""Symmetric two-neuron pair: anti-phase cycle, atom diameters and the tie jump.

Usage: python scripts/symmetric_pair.py [--samples 10000] [--seed 6]
"""

import argparse
import math

import numpy as np

from netdyn import NetworkParams
from netdyn.atoms import diameter_sequence, extract_chains, indivisible_generation, refine_atoms, sample_section
from netdyn.orbits import estimate_measures
from netdyn.poincare import discontinuity_jump_probe, return_map, system_constants


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=6)
    ap.add_argument("--generations", type=int, default=120)
    args = ap.parse_args()

    p = NetworkParams.symmetric()
    c = system_constants(p)
    print(f"alpha={c.alpha:.4f} t0={c.t0:.4f} lambda={c.lam:.6f} k_diam={c.k_diam:.3f}")

    x = (3.8 - math.sqrt(8.04)) / 2
    print(f"anti-phase point (0, {x:.12f}); return residual of rho^2: "
          f"{abs(return_map(p, return_map(p, [0.0, x])[0])[0][1] - x):.2e}")

    r = 1e-6
    two_sided = np.max(np.abs(return_map(p, [0.0, -r])[0] - return_map(p, [0.0, r])[0]))
    probe = discontinuity_jump_probe(p, np.zeros(2), r, direction=[0.0, 1.0])
    print(f"jump across the tie at the origin: two-sided {two_sided:.8f}, probe {probe:.8f}, 3 alpha {3 * c.alpha:.3f}")

    cloud, _ = sample_section(p, args.samples, args.seed)
    rep = diameter_sequence(p, cloud, args.generations)
    for g in (1, 5, 10, 20, 40, 80, args.generations):
        if g <= args.generations:
            print(f"p={g:4d} d_p={rep.diameters[g - 1]:.3e} bound={rep.bound[g - 1]:.3e}")
    slope = np.polyfit(np.arange(5, 31), np.log(rep.diameters[4:30]), 1)[0]
    print(f"log-diameter slope over p=5..30: {slope:.4f} (log lambda {math.log(c.lam):.4f})")

    delta = 0.02
    g = indivisible_generation(p, cloud, delta, args.generations)
    print(f"indivisible generation at delta={delta}: {g}")
    if g is not None:
        chains = extract_chains(p, refine_atoms(p, cloud, g))
        for cyc in chains.cycles:
            print(f"cycle period={cyc.period} residual={cyc.residual:.1e} states={cyc.states.tolist()}")

    m = estimate_measures(p, 2000, args.seed)
    print(f"frac_stable={m.frac_stable:.4f} frac_chaotic={m.frac_chaotic:.4f} class={m.system_class.value}")


if __name__ == "__main__":
    main()
