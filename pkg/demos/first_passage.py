"""First-passage law of a forced Ornstein-Uhlenbeck neuron.

Compares the exact-simulation estimator (Bessel bridge plus Girsanov
weight) with a plain Euler scheme for the crossing probability, and shows
the density curve with its standard errors.
Run: python3 demos/first_passage.py  (about 20 s)
"""

import numpy as np

from cablemf import hitting, model

fd = hitting.ForcedDiffusion(model.linear(0.0, -1.0), model.constant(1.0), model.sine(), 0.0, 1.0)

ts = np.array([0.1, 0.25, 0.5, 0.75, 1.0])
dens = hitting.hitting_density_bridge(fd, ts, n_mc=20_000, n_times=64, seed=1)
print(f"{'t':>5} {'density':>10} {'s.e.':>9} {'ESS/n':>7}")
for t, e in zip(ts, dens):
    print(f"{t:5.2f} {e.value:10.5f} {e.std_error:9.2e} {e.ess:7.3f}")

euler = hitting.hitting_cdf_mc(fd, [0.25, 1.0], 50_000, seed=2, dt=1e-3)
print(f"\n{'t':>5} {'bridge CDF':>12} {'Euler CDF':>12}")
for j, t in enumerate((0.25, 1.0)):
    b = hitting.bridge_cdf(fd, t, 20_000, 64, seed=3)
    print(f"{t:5.2f} {b.value:8.5f}+-{b.std_error:.0e} {euler.cdf[j]:8.5f}+-{euler.std_error[j]:.0e}")
