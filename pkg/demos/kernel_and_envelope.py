"""Cable kernel for the hex-gauss synapse density and the a-priori envelope.

Prints G, its antiderivative and the envelope g(t) on a coarse time grid.
Run: python3 demos/kernel_and_envelope.py
"""

import numpy as np

from cablemf import solver
from cablemf.config import RunConfig

cfg = RunConfig.load()
cs = cfg.coefficients()
grid = cfg.grid()
kt = cfg.kernel_table(cs, grid)
env = solver.stability_envelope(cs, cfg.initial_law().R, grid.T, kt=kt)

print(f"sup |G| = {kt.sup_norm:.6f}, restart time T0 = {env.T0:.4f}")
print(f"{'t':>6} {'G(t)':>12} {'Ghat(t)':>12} {'g(t)':>14}")
for m in range(0, grid.n_steps + 1, 20):
    t = grid.t[m]
    print(f"{t:6.2f} {kt.G[m]:12.6f} {kt.Ghat[m]:12.6f} {env(t):14.4f}")

# the kernel starts flat: G(d) / d^2 settles near 45 as d shrinks
for d in 2.0 ** -np.arange(4, 9):
    print(f"G({d:.5f}) / d^2 = {float(cs.G(d)) / d**2:.3f}")
