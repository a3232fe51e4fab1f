"""The resolution limit: how far can sigma shrink before loss wins?

Sharper focusing needs a darker dark state (smaller epsilon/beta at fixed
width), which raises the spontaneous-emission loss rate B_n ~ 1/sigma^3.
At fixed single-run SNR the smallest usable resolution therefore scales as
sigma_min ~ C^(-1/4) with the cavity cooperativity.  This script sweeps C,
finds sigma_min from the loss-corrected SNR optimum, and fits the exponent.

Run:  python3 demos/05_resolution_limit.py
"""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from scipy.optimize import brentq

from atomscope import (BasisSpec, MicroscopeParams, build_scan_operators,
                       btilde_over_gamma, design_for_targets, fit_power_law,
                       snr_analytic)

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

K0, LENGTH, VNA = 0.4, 8.0, 0.1
basis = BasisSpec(10)
SNR_TARGET = 3.0


def max_snr(sigma, C):
    """Best achievable SNR over the scan time, for |1> read out at z0 = -l0."""
    fc = design_for_targets(sigma, VNA, K0, window=14.0)
    params = MicroscopeParams(gamma=1.0, cooperativity=C, kappa_over_omega=0.1,
                              focus=fc)
    so = build_scan_operators(params, basis, -LENGTH / 2, LENGTH / 2, n_grid=129)
    a = snr_analytic(1, -1.0, 1.0, sigma, LENGTH)   # slope in gamma T
    b = btilde_over_gamma(so, 1)                    # loss per gamma T^2 ... (b * x^2)
    return 0.5 * np.sqrt(a / b)                     # max of a x / (1 + a b x^2)


cs = np.array([50.0, 100.0, 200.0, 400.0, 800.0])
sigmins = []
for C in cs:
    s = brentq(lambda s_: max_snr(s_, C) - SNR_TARGET, 0.12, 0.9, xtol=1e-4)
    sigmins.append(s)
    print(f"C = {C:5.0f}: sigma_min = {s:.3f} l0")

slope, intercept = fit_power_law(cs, sigmins)
print(f"\nfitted exponent: {slope:.3f}  (quarter-power law predicts -0.25)")

fig, ax = plt.subplots(figsize=(5, 4))
ax.loglog(cs, sigmins, "o")
ax.loglog(cs, np.exp(intercept) * cs**slope, "--", label=f"fit: C^{slope:.3f}")
ax.set_xlabel("cooperativity C")
ax.set_ylabel("sigma_min / l0")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(OUT, "resolution_limit.png"), dpi=120)
print(f"wrote {OUT}/resolution_limit.png")
