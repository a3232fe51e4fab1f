"""Engineering of the subwavelength focusing function.

Two phase-coherent Raman beams drive a three-level Lambda system with Rabi
frequencies

    Omega_g        = epsilon * Omega_c                    (weak, constant)
    Omega_r(z)     = Omega_c * [1 + beta - cos k0 (z - z0)]   (standing wave)

The resulting position-dependent dark state populates the cavity-coupled
ground level only near the standing-wave minimum at z0.  The dispersive
coupling is proportional to cos^2(alpha(z)) with mixing angle
tan(alpha) = Omega_r / Omega_g, which defines a focusing function

    f(z) = N cos^2(alpha(z)),      normalized so  int_window f dz = l0.

Its FWHM sigma is the microscope resolution and can be made deeply
subwavelength for epsilon ~ beta << 1.  The price is a residual mechanical
potential V_na = (hbar^2 / 2m) (d alpha / dz)^2 from the spatial variation
of the dark state; it is suppressed by lowering epsilon/beta.

Units: lengths in l0, energies in hbar*omega; k0*l0 is supplied by the
configuration and the recoil energy is E_r = (k0 l0)^2 / 2.  The overall
Rabi scale Omega_c never appears in a dimensionless output.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize_scalar

__all__ = [
    "FocusConfig",
    "FocusProfile",
    "mixing_angle",
    "cos2_alpha",
    "dalpha_dz",
    "focusing_function",
    "resolution_analytic",
    "nonadiabatic_potential",
    "design_for_targets",
    "design_for_sigma",
    "quadrature_nodes",
]

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class FocusConfig:
    """Raman-beam parameters of a single focal region.

    ``window`` is the half-width of the spatial domain around z0 over which
    the focusing function is defined and normalized.  It must be small
    enough that only the focal point at z0 (one minimum of Omega_r) lies
    inside: window * k0_l0 < 2*pi.
    """

    epsilon: float
    beta: float
    k0_l0: float
    z0: float = 0.0
    window: float = 7.0

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.k0_l0 <= 0:
            raise ValueError("k0_l0 must be positive")
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.window * self.k0_l0 >= TWO_PI:
            raise ValueError(
                f"window {self.window} admits a second focal point: "
                f"window * k0_l0 = {self.window * self.k0_l0:.3f} >= 2*pi"
            )

    @property
    def lambda0(self) -> float:
        """Optical wavelength in units l0."""
        return TWO_PI / self.k0_l0

    @property
    def recoil_energy(self) -> float:
        """E_r = (k0 l0)^2 / 2 in units hbar*omega."""
        return 0.5 * self.k0_l0**2


def _rabi_ratio(cfg: FocusConfig, z) -> np.ndarray:
    """Omega_r(z)/Omega_c = 1 + beta - cos k0 (z - z0); always > 0."""
    return 1.0 + cfg.beta - np.cos(cfg.k0_l0 * (np.asarray(z, dtype=float) - cfg.z0))


def mixing_angle(cfg: FocusConfig, z) -> np.ndarray:
    """alpha(z) = arctan(Omega_r / Omega_g), in (0, pi/2)."""
    return np.arctan(_rabi_ratio(cfg, z) / cfg.epsilon)


def cos2_alpha(cfg: FocusConfig, z) -> np.ndarray:
    """cos^2 alpha = eps^2 / (eps^2 + (1 + beta - cos k0(z-z0))^2)."""
    r = _rabi_ratio(cfg, z)
    return cfg.epsilon**2 / (cfg.epsilon**2 + r**2)


def dalpha_dz(cfg: FocusConfig, z) -> np.ndarray:
    """Analytic derivative of the mixing angle."""
    z = np.asarray(z, dtype=float)
    x = cfg.k0_l0 * (z - cfg.z0)
    r = 1.0 + cfg.beta - np.cos(x)
    return cfg.k0_l0 * cfg.epsilon * np.sin(x) / (cfg.epsilon**2 + r**2)


def resolution_analytic(cfg: FocusConfig) -> float:
    """FWHM of the focusing function in units lambda0.

    sigma/lambda0 = sqrt(2 beta)/pi * [sqrt(2 + (eps/beta)^2) - 1]^(1/2),
    valid to O((k0 sigma)^2) since the derivation linearizes 1 - cos.
    """
    r = cfg.epsilon / cfg.beta
    return np.sqrt(2 * cfg.beta) / np.pi * np.sqrt(np.sqrt(2 + r**2) - 1)


def nonadiabatic_potential(cfg: FocusConfig, z, form: str = "exact") -> np.ndarray:
    """Residual dark-state potential V_na(z) in units hbar*omega.

    ``form="exact"`` evaluates (1/2)(d alpha/dz)^2 from the analytic
    derivative; ``form="expansion"`` uses the small-(z - z0) closed form
    E_r * {4 eps k0 dz / ([k0^2 dz^2 + 2 beta]^2 + 4 eps^2)}^2.
    """
    z = np.asarray(z, dtype=float)
    if form == "exact":
        return 0.5 * dalpha_dz(cfg, z) ** 2
    if form == "expansion":
        x = cfg.k0_l0 * (z - cfg.z0)
        h = 4 * cfg.epsilon * x / ((x**2 + 2 * cfg.beta) ** 2 + 4 * cfg.epsilon**2)
        return cfg.recoil_energy * h**2
    raise ValueError(f"unknown form {form!r}")


@lru_cache(maxsize=32)
def _panel_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def quadrature_nodes(a: float, b: float, n: int = 2048, panels: int = 64):
    """Composite Gauss-Legendre rule with ``n`` total nodes on [a, b].

    Splitting into panels keeps the rule accurate for the sharply peaked
    integrands encountered here (features down to ~0.1 l0).
    """
    if n % panels:
        raise ValueError("n must be a multiple of panels")
    x0, w0 = _panel_rule(n // panels)
    edges = np.linspace(a, b, panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    nodes = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    weights = (half[:, None] * w0[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class FocusProfile:
    """Normalized focusing function plus its engineering diagnostics.

    sigma_* values are FWHM resolutions; ``vna_max`` is the peak of the
    exact non-adiabatic potential over the window (units hbar*omega);
    ``overlap_max`` is the peak dark-state population of the cavity-coupled
    level, (1 + beta^2/eps^2)^{-1}.
    """

    config: FocusConfig
    norm_constant: float
    sigma_analytic_lambda0: float
    sigma_analytic: float
    sigma_numeric: float
    vna_max: float
    vna_max_recoil: float
    overlap_max: float

    def __call__(self, z) -> np.ndarray:
        return self.norm_constant * cos2_alpha(self.config, z)

    def alpha(self, z) -> np.ndarray:
        return mixing_angle(self.config, z)

    def vna(self, z, form: str = "exact") -> np.ndarray:
        return nonadiabatic_potential(self.config, z, form=form)

    @property
    def peak_value(self) -> float:
        return float(self(np.array([self.config.z0]))[0])

    @staticmethod
    def constant(window: float, k0_l0: float = 1.0, z0: float = 0.0) -> "ConstantProfile":
        return ConstantProfile(window=window, k0_l0=k0_l0, z0=z0)


@dataclass(frozen=True)
class ConstantProfile:
    """Degenerate flat profile f = l0/(2 window); useful as a null test case
    (the matrix of a constant function is proportional to the identity)."""

    window: float
    k0_l0: float = 1.0
    z0: float = 0.0

    @property
    def config(self):
        return self

    @property
    def value(self) -> float:
        return 1.0 / (2 * self.window)

    def __call__(self, z) -> np.ndarray:
        return np.full(np.shape(np.asarray(z, dtype=float)), self.value)

    def alpha(self, z) -> np.ndarray:
        # constant mixing angle pi/4: tan^2 = sin^2/|...| = harmless defaults
        return np.full(np.shape(np.asarray(z, dtype=float)), np.pi / 4)


def _numeric_fwhm(cfg: FocusConfig) -> float:
    """Locate the FWHM of cos^2 alpha by bisection on each side of z0."""
    peak = cos2_alpha(cfg, np.array([cfg.z0]))[0]
    half = peak / 2

    def g(dz):
        return cos2_alpha(cfg, np.array([cfg.z0 + dz]))[0] - half

    hi = cfg.window
    # cos^2 alpha decreases monotonically until k0 dz = pi
    hi = min(hi, np.pi / cfg.k0_l0 * 0.999)
    if g(hi) > 0:
        raise ValueError("half maximum not reached inside the window")
    right = brentq(g, 1e-12, hi, xtol=1e-10)
    return 2 * right  # even about z0


def focusing_function(cfg: FocusConfig) -> FocusProfile:
    """Build the normalized focusing profile and its diagnostics.

    Normalization is over the single-focal window [z0 - w, z0 + w], by
    composite Gauss-Legendre quadrature (2048 nodes, relative accuracy
    better than 1e-8 for the smooth integrand).
    """
    z, w = quadrature_nodes(cfg.z0 - cfg.window, cfg.z0 + cfg.window)
    integral = float(np.dot(w, cos2_alpha(cfg, z)))
    norm = 1.0 / integral

    sigma_num = _numeric_fwhm(cfg)
    sig_l0 = resolution_analytic(cfg)
    sigma_an = sig_l0 * cfg.lambda0

    # global max of the exact V_na over the window: coarse grid then polish
    vna = nonadiabatic_potential(cfg, z, form="exact")
    k = int(np.argmax(vna))
    lo = z[max(k - 2, 0)]
    hi = z[min(k + 2, len(z) - 1)]
    res = minimize_scalar(
        lambda zz: -nonadiabatic_potential(cfg, np.array([zz]), form="exact")[0],
        bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-12},
    )
    vna_max = float(-res.fun)

    overlap = 1.0 / (1.0 + (cfg.beta / cfg.epsilon) ** 2)
    return FocusProfile(
        config=cfg,
        norm_constant=norm,
        sigma_analytic_lambda0=sig_l0,
        sigma_analytic=sigma_an,
        sigma_numeric=sigma_num,
        vna_max=vna_max,
        vna_max_recoil=vna_max / cfg.recoil_energy,
        overlap_max=overlap,
    )


def design_for_sigma(sigma_target: float, ratio: float, k0_l0: float,
                     window: float | None = None, z0: float = 0.0) -> FocusConfig:
    """Choose (epsilon, beta) at fixed ratio = epsilon/beta so the numeric
    FWHM equals ``sigma_target`` (units l0) within the root-finder tolerance.
    """
    lam = TWO_PI / k0_l0
    if window is None:
        window = min(0.98 * lam, 8.0)
    s_lam = sigma_target / lam
    g = np.sqrt(np.sqrt(2 + ratio**2) - 1)
    beta0 = 0.5 * (s_lam * np.pi / g) ** 2  # closed-form inversion of the FWHM law

    def mismatch(beta):
        cfg = FocusConfig(epsilon=ratio * beta, beta=beta, k0_l0=k0_l0,
                          z0=z0, window=window)
        return _numeric_fwhm(cfg) - sigma_target

    lo, hi = beta0 * 0.5, min(beta0 * 2.0, 1.0)
    if mismatch(lo) * mismatch(hi) > 0:
        lo, hi = beta0 * 0.2, min(beta0 * 5.0, 1.0)
    beta = brentq(mismatch, lo, hi, xtol=1e-12)
    return FocusConfig(epsilon=ratio * beta, beta=beta, k0_l0=k0_l0, z0=z0, window=window)


def design_for_targets(sigma_target: float, vna_budget: float, k0_l0: float,
                       window: float | None = None, z0: float = 0.0) -> FocusConfig:
    """Meet a resolution target (units l0) and a V_na^max budget (hbar*omega).

    The FWHM pins beta at fixed ratio = eps/beta; the budget is then met by
    root-finding on the ratio, since V_na^max grows monotonically with
    eps/beta at fixed resolution.  An infinite budget leaves the ratio free
    and returns the eps = beta design.
    """
    if sigma_target <= 0:
        raise ValueError("sigma_target must be positive")
    lam = TWO_PI / k0_l0
    if window is None:
        window = min(0.98 * lam, 8.0)
    if sigma_target >= window:
        raise ValueError(f"sigma_target {sigma_target} does not fit in window {window}")
    if not np.isfinite(vna_budget):
        return design_for_sigma(sigma_target, 1.0, k0_l0, window, z0)

    def vna_of_ratio(ratio):
        cfg = design_for_sigma(sigma_target, ratio, k0_l0, window, z0)
        return focusing_function(cfg).vna_max

    r_lo, r_hi = 1e-3, 1.0
    v_lo, v_hi = vna_of_ratio(r_lo), vna_of_ratio(r_hi)
    if not (v_lo <= vna_budget <= v_hi):
        raise ValueError(
            f"V_na budget {vna_budget} outside achievable range "
            f"[{v_lo:.3e}, {v_hi:.3e}] at sigma = {sigma_target}"
        )
    ratio = brentq(lambda r: vna_of_ratio(r) - vna_budget, r_lo, r_hi, rtol=1e-10)
    return design_for_sigma(sigma_target, ratio, k0_l0, window, z0)
