"""Derived quantities: Wigner functions, eigenstate density profiles, the
closed-form SNR of an ideal scan, and the resolution-limit scaling law.

The scan of a collapsed eigenstate |n> is shot-noise limited; averaging the
current over tau = T sigma / L gives

    SNR(z0, T) ~= 4 gamma T (sigma/L) |psi_n(z0)|^4            (no loss)

and, once spontaneous-emission loss at spatially averaged rate B~_n is
folded in,

    SNR_full = SNR / (1 + SNR * B~_n T).

Optimizing SNR_full over the scan time and trading resolution against the
surviving cooperativity budget yields the quarter-power law

    (sigma/lambda0)_min ~ [SNR^2 / C * (E_r/V_na^max) * (l0/lambda0)^2]^{1/4},

implemented here with unit prefactor; only the exponent is load-bearing.
"""

from __future__ import annotations

import numpy as np

from .hilbert import BasisSpec, DensityOperator, hermite_functions, trace_distance
from .model import ScanOperators

__all__ = [
    "PhaseSpaceGrid",
    "wigner",
    "eqnd_profile",
    "snr_analytic",
    "snr_analytic_full",
    "btilde_over_gamma",
    "resolution_limit",
    "optimal_scan_time",
    "ensemble_average_state",
    "compare_to_lindblad",
    "fit_power_law",
]


class PhaseSpaceGrid:
    """Uniform (z, p) grid for Wigner maps, in oscillator units."""

    def __init__(self, z_max: float = 5.0, p_max: float = 5.0, nz: int = 128, np_: int = 128):
        if nz < 64 or np_ < 64:
            raise ValueError("grids below 64 points fail the normalization check")
        self.z = np.linspace(-z_max, z_max, nz)
        self.p = np.linspace(-p_max, p_max, np_)

    def check_covers(self, dim: int) -> None:
        need = np.sqrt(2.0 * dim)
        if self.z.max() < need or self.p.max() < need:
            raise ValueError(f"grid must reach +-sqrt(2*dim) = {need:.2f}")


def wigner(rho: DensityOperator | np.ndarray, grid: PhaseSpaceGrid,
           check_norm: bool = True) -> np.ndarray:
    """Wigner function W(z, p) of a motional state, shape (nz, np).

    Direct discretization of W = (1/pi) int dy <z+y| rho |z-y> e^{-2ipy}
    on the grid's own z spacing; the returned map satisfies
    int W dz dp = Tr rho within 1e-3 (raises otherwise -- grid too coarse).
    """
    mat = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    d = mat.shape[0]
    z = grid.z
    h = z[1] - z[0]
    psi = hermite_functions(d, z)
    # position representation rho(z_i, z_j)
    R = psi.T @ mat @ psi

    nz = len(z)
    K = nz - 1
    y = np.arange(-K, K + 1) * h
    phase = np.exp(-2j * np.outer(y, grid.p))          # (2K+1, np)
    W = np.zeros((nz, len(grid.p)))
    for i in range(nz):
        m = min(i, nz - 1 - i, K)
        ks = np.arange(-m, m + 1)
        vals = R[i + ks, i - ks]
        W[i] = np.real(vals @ phase[ks + K]) * h / np.pi
    if check_norm:
        total = np.trapezoid(np.trapezoid(W, grid.p, axis=1), z)
        target = float(np.real(np.trace(mat)))
        if abs(total - target) > 1e-3 * max(1.0, abs(target)):
            raise ValueError(
                f"Wigner normalization check failed: integral {total:.6f} vs trace {target:.6f}; "
                "enlarge or refine the grid"
            )
    return W


def eqnd_profile(scan_ops: ScanOperators, n: int) -> np.ndarray:
    """<n| f^(0)(z0) |n> over the scan grid: the density profile the
    scanning mode traces for an atom collapsed to |n>."""
    return scan_ops.f0[:, n].copy()


def dimensionless_wavefunction(n: int, x) -> np.ndarray:
    """psi~_n(x) = sqrt(l0) <n|z=x*l0>: the HO eigenfunction in trap units."""
    return hermite_functions(n + 1, np.atleast_1d(np.asarray(x, dtype=float)))[n]


def snr_analytic(n: int, z0: float, gamma_t: float, sigma: float, length: float) -> float:
    """Shot-noise-limited scan SNR: 4 gamma T (sigma/L) |psi~_n(z0)|^4."""
    psi2 = float(dimensionless_wavefunction(n, z0)[0] ** 2)
    return 4.0 * gamma_t * (sigma / length) * psi2**2


def btilde_over_gamma(scan_ops: ScanOperators, n: int) -> float:
    """Spatially averaged loss rate B~_n / gamma = (1/L gamma) int B_n(z0) dz0."""
    z = scan_ops.z0_grid
    if len(z) < 2:
        return float(scan_ops.B[0, n] / scan_ops.params.gamma)
    span = z[-1] - z[0]
    return float(np.trapezoid(scan_ops.B[:, n], z) / span / scan_ops.params.gamma)


def snr_analytic_full(n: int, z0: float, gamma_t: float, sigma: float, length: float,
                      btilde_t: float) -> float:
    """Loss-corrected scan SNR: SNR / (1 + SNR * B~_n T)."""
    s = snr_analytic(n, z0, gamma_t, sigma, length)
    return s / (1.0 + s * btilde_t)


def optimal_scan_time(sigma_over_lambda0: float, length: float, cooperativity: float,
                      vna_over_recoil: float) -> float:
    """gamma T at the SNR optimum: ~ k0 sigma (L/l0) sqrt(C V_na^max / E_r)."""
    return 2 * np.pi * sigma_over_lambda0 * length * np.sqrt(cooperativity * vna_over_recoil)


def resolution_limit(cooperativity: float, snr_target: float, vna_over_recoil: float,
                     l0_over_lambda0: float) -> float:
    """Smallest usable sigma/lambda0 at fixed single-run SNR (unit prefactor).

    Order-of-magnitude law: only the exponents are meaningful; in
    particular sigma_min scales as C^(-1/4) at fixed SNR.
    """
    if min(cooperativity, snr_target, vna_over_recoil, l0_over_lambda0) <= 0:
        raise ValueError("all inputs must be positive")
    return (snr_target**2 / cooperativity / vna_over_recoil * l0_over_lambda0**2) ** 0.25


def ensemble_average_state(trajs, t: float) -> np.ndarray:
    """Average the stored snapshots nearest to time t over the ensemble.

    Snapshots carry the survival weight, so the average is the unconditional
    (ensemble) state including loss.
    """
    out = None
    count = 0
    for tr in trajs:
        if not tr.snapshots:
            raise ValueError("trajectories carry no snapshots; set snapshot_stride")
        times = np.array([s[0] for s in tr.snapshots])
        k = int(np.argmin(np.abs(times - t)))
        m = tr.snapshots[k][1]
        out = m.copy() if out is None else out + m
        count += 1
    return out / count


def compare_to_lindblad(avg_state: np.ndarray, lindblad_times: np.ndarray,
                        lindblad_states: list, t: float) -> float:
    """Trace distance between a trajectory average and the deterministic
    master-equation solution at the nearest stored time."""
    k = int(np.argmin(np.abs(lindblad_times - t)))
    return trace_distance(avg_state, lindblad_states[k])


def fit_power_law(x, y):
    """Least-squares slope and intercept of log y vs log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(slope), float(intercept)
