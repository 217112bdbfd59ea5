"""How the variance of a log fold change depends on signal strength.

At high signal the background term washes out and the variance flattens to a
floor set by the signal noise alone; at low signal it grows like 1/gamma2**2.
"""

import math

import numpy as np

from probelevel.background import fit_plugins
from probelevel.model import variance_profile
from probelevel.sim import SimConfig, generate, two_group_design

ds, truth = generate(two_group_design([1.0] * 5, [1.0] * 5), SimConfig(), seed=0)
fit = fit_plugins(ds)
print(f"plug-ins: sigma_N={fit.sigma_N:.3f} rho_N={fit.rho_N:.3f} "
      f"sigma_S={fit.sigma_S:.3f} rho_S={fit.rho_S:.3f}")

gamma1 = float(np.mean(np.exp(fit.mu_pm + fit.sigma_N ** 2 / 2)))
floor = math.exp(fit.sigma_S ** 2) - math.exp(fit.rho_S * fit.sigma_S ** 2)
print(f"mean background gamma1 = {gamma1:.1f}, high-signal floor = {floor:.4f}")
print(f"{'gamma2 / gamma1':>16} {'profile':>12} {'SD(beta1), 11 probes':>22}")
for ratio in (0.01, 0.1, 0.5, 1, 2, 10, 100):
    g2 = ratio * gamma1
    prof = variance_profile(fit, 3, g2, gamma1=gamma1)
    sd = math.sqrt(variance_profile(fit, 3, g2, gamma1=gamma1, n_probes=11))
    print(f"{ratio:16g} {prof:12.4g} {sd:22.4f}")
