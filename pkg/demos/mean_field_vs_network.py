"""Mean-field spike rate against finite networks of growing size.

Solves the fixed-point problem for the expected spike count h(t) on the
built-in benchmark, then simulates networks with N = 50, 200 and 800
neurons and reports how far their empirical rates stray from h. One
network per size, so expect noise; ``cablemf study`` averages replications.
Run: python3 demos/mean_field_vs_network.py  (about 15 s)
"""

import numpy as np

from cablemf import diagnostics, model, particle, solver
from cablemf.config import RunConfig

cfg = RunConfig.load()
cs, grid, law = cfg.coefficients(), cfg.grid(), cfg.initial_law()
kt = cfg.kernel_table(cs, grid)

h, diag = solver.picard_solve(cs, law, grid, n_mc=20_000, seed=cfg.seed, kt=kt, crossing="bridge")
print("\n".join(diag.lines()))

print(f"\n{'N':>5} {'sup |rate - h|':>15} {'E[M_T] network':>15} {'h(T)':>8}")
for N in (50, 200, 800):
    w = model.uniform_weights(N)
    traj, spikes = particle.simulate_network(cs, kt, w, law, grid, cfg.seed + N, crossing="bridge")
    rate = diagnostics.empirical_rate(spikes, w, 0, grid)
    print(f"{N:5d} {np.max(np.abs(rate - h.values)):15.4f} {traj.M[:, -1].mean():15.4f} "
          f"{h.values[-1]:8.4f}")
