"""Assembly of the microscope operators in the motional eigenbasis.

From a focusing profile f(z) and the measurement parameters this module
builds everything the integrators consume:

  * F        -- matrix of f(z-hat) over the trap eigenstates |n>,
  * f^(l)    -- its sideband components (the l-th diagonal), which rotate
                at frequency l*omega in the interaction picture,
  * L_sp     -- the spontaneous-emission channels acting on the motion:
                jumps f, f sin(alpha), f tan(alpha) sin(alpha) plus a
                trace-decreasing loss operator
                f^2 [tan^2(alpha) (1 - P_ge sin^2 alpha) - P_re sin^2 alpha],
                all entering at overall rate gamma / 4C,
  * A_nl     -- sideband hopping rates
                [gamma/(1 + (2 l omega/kappa)^2) + gamma/4C] |f_{n,n+l}|^2,
  * B_n      -- loss rates (gamma/4C) <n| f^2 (Omega_r/Omega_g)^2 |n>.

The measurement rate gamma is a direct dimensionless input (units omega);
the microscopic chain (coupling, drive, detuning) only enters through the
optional helper ``measurement_rate``.  Momentum-recoil phases are dropped:
in the subwavelength limit the emitted-photon phase factor is constant
across the focal region.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .focus import FocusConfig, FocusProfile, focusing_function, quadrature_nodes
from .hilbert import BasisSpec, Operator, hermite_functions

__all__ = [
    "MicroscopeParams",
    "ModelOperators",
    "ScanOperators",
    "build_f_matrix",
    "build_sidebands",
    "build_lsp",
    "build_rates",
    "assemble_model",
    "build_scan_operators",
    "measurement_rate",
]


@dataclass(frozen=True)
class MicroscopeParams:
    """Dimensionless operating point of the microscope.

    gamma            measurement rate, units omega
    cooperativity    cavity cooperativity C; inf disables spontaneous emission
    kappa_over_omega cavity linewidth kappa/omega (>> 1: movie regime,
                     << 1: scanning regime)
    p_ge, p_re       branching ratios of the auxiliary decay channels
    homodyne_phase   local-oscillator phase, -pi/2 maximizes the signal
    """

    gamma: float
    kappa_over_omega: float
    focus: FocusConfig
    cooperativity: float = np.inf
    p_ge: float = 0.0
    p_re: float = 0.0
    homodyne_phase: float = -np.pi / 2

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not (self.cooperativity > 0):
            raise ValueError("cooperativity must be positive (or inf)")
        if self.kappa_over_omega <= 0:
            raise ValueError("kappa_over_omega must be positive")
        if self.p_ge < 0 or self.p_re < 0 or self.p_ge + self.p_re > 1:
            raise ValueError("branching ratios must satisfy p_ge, p_re >= 0, p_ge + p_re <= 1")

    @property
    def gamma_sp(self) -> float:
        """Spontaneous-emission prefactor gamma / 4C."""
        return 0.0 if np.isinf(self.cooperativity) else self.gamma / (4 * self.cooperativity)


def measurement_rate(coupling: float, drive: float, kappa: float) -> float:
    """gamma = (4 A E / kappa)^2 from the microscopic chain (hbar = 1).

    Provided for documentation; the simulators take gamma directly.
    """
    return (4 * coupling * drive / kappa) ** 2


def _sideband_rate(params: MicroscopeParams, ell: int) -> float:
    """Cavity-filtered rate for sideband l: gamma / (1 + (2 l omega/kappa)^2)."""
    return params.gamma / (1.0 + (2.0 * ell / params.kappa_over_omega) ** 2)


@dataclass
class ModelOperators:
    """Immutable-after-assembly operator bundle shared by trajectory workers."""

    basis: BasisSpec
    params: MicroscopeParams
    profile: FocusProfile
    z0: float
    F: Operator
    sidebands: dict[int, Operator]
    lsp_jumps: list[tuple[float, np.ndarray]]
    lsp_loss: np.ndarray
    rates_A: np.ndarray          # shape (d, 2d-1); column j is l = j - (d-1)
    rates_B: np.ndarray          # shape (d,)
    h_atom: np.ndarray = field(default=None)  # diagonal entries n + 1/2

    def __post_init__(self):
        if self.h_atom is None:
            self.h_atom = np.arange(self.basis.motional_dim) + 0.5

    @property
    def f0_diag(self) -> np.ndarray:
        """Diagonal of the secular component f^(0) (the eQND observable)."""
        return np.real(np.diag(self.F.matrix))

    def sideband_index(self, ell: int) -> int:
        return ell + self.basis.motional_dim - 1


def _quad_grid(basis: BasisSpec, domain: tuple[float, float]):
    z, w = quadrature_nodes(domain[0], domain[1])
    psi = hermite_functions(basis.motional_dim, z)
    return z, w, psi


def _check_coverage(w: np.ndarray, psi: np.ndarray, domain) -> None:
    mass = float(np.dot(w, psi[-1] ** 2))
    if mass < 1 - 1e-6:
        raise ValueError(
            f"quadrature domain {domain} too small: top retained eigenfunction "
            f"carries {1 - mass:.2e} probability outside it"
        )


def _matrix_of(values: np.ndarray, w: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Matrix elements <m| g(z) |n> by quadrature; real symmetric."""
    weighted = psi * (w * values)[None, :]
    m = weighted @ psi.T
    return (m + m.T) / 2


def build_f_matrix(profile, basis: BasisSpec,
                   domain: tuple[float, float] | None = None) -> Operator:
    """Matrix of the focusing function over the retained trap eigenstates.

    The quadrature domain defaults to the profile's own window; it must
    carry all but 1e-6 of the top eigenfunction's probability.
    """
    if domain is None:
        cfg = profile.config
        domain = (cfg.z0 - cfg.window, cfg.z0 + cfg.window)
    z, w, psi = _quad_grid(basis, domain)
    _check_coverage(w, psi, domain)
    mat = _matrix_of(profile(z), w, psi)
    return Operator(mat.astype(complex), BasisSpec(basis.motional_dim), "F")


def build_sidebands(F: Operator, basis: BasisSpec) -> dict[int, Operator]:
    """Split F into its diagonals: f^(l) = sum_n f_{n,n+l} |n><n+l|."""
    d = basis.motional_dim
    mat = F.matrix
    out = {}
    for ell in range(-(d - 1), d):
        m = np.zeros_like(mat)
        idx = np.arange(max(0, -ell), min(d, d - ell))
        m[idx, idx + ell] = mat[idx, idx + ell]
        out[ell] = Operator(m, BasisSpec(d), f"f^({ell})")
    return out


def build_lsp(profile, params: MicroscopeParams, basis: BasisSpec,
              domain: tuple[float, float] | None = None):
    """Spontaneous-emission channels in the motional basis.

    Returns (jumps, loss): ``jumps`` is a list of (weight, matrix) with
    weights (1, P_re, P_ge) for the channels f, f sin(alpha),
    f tan(alpha) sin(alpha); ``loss`` is the positive operator entering
    -1/2 {loss, rho}.  The overall rate gamma/4C is applied by the caller.
    For large P_re the loss integrand can go negative; its negative
    eigenvalues are clamped at zero with a warning (the physical regime
    keeps P_re sin^2(alpha) well below tan^2(alpha)).
    """
    if params.gamma_sp == 0.0:
        d = basis.motional_dim
        return [], np.zeros((d, d))
    if domain is None:
        cfg = profile.config
        domain = (cfg.z0 - cfg.window, cfg.z0 + cfg.window)
    z, w, psi = _quad_grid(basis, domain)
    _check_coverage(w, psi, domain)

    f = profile(z)
    alpha = profile.alpha(z)
    s, t = np.sin(alpha), np.tan(alpha)
    jumps = [(1.0, _matrix_of(f, w, psi))]
    if params.p_re > 0:
        jumps.append((params.p_re, _matrix_of(f * s, w, psi)))
    if params.p_ge > 0:
        jumps.append((params.p_ge, _matrix_of(f * t * s, w, psi)))

    bracket = t**2 * (1 - params.p_ge * s**2) - params.p_re * s**2
    loss = _matrix_of(f**2 * bracket, w, psi)
    evals, evecs = np.linalg.eigh(loss)
    if evals.min() < -1e-12:
        warnings.warn(
            f"loss operator has negative eigenvalues (min {evals.min():.3e}); "
            "clamping at zero -- branching ratios are outside the perturbative regime",
            stacklevel=2,
        )
        loss = (evecs * np.clip(evals, 0, None)) @ evecs.T
    return jumps, loss


def build_rates(F: Operator, profile, params: MicroscopeParams, basis: BasisSpec,
                domain: tuple[float, float] | None = None):
    """Sideband hopping rates A_nl and loss rates B_n.

    A_nl multiplies |f_{n,n+l}|^2 by the cavity Lorentzian plus the
    spontaneous floor gamma/4C; B_n is (gamma/4C) <n| f^2 tan^2(alpha) |n>
    (tan(alpha) = Omega_r/Omega_g).
    """
    d = basis.motional_dim
    mat = F.matrix
    A = np.zeros((d, 2 * d - 1))
    n = np.arange(d)
    for ell in range(-(d - 1), d):
        col = ell + d - 1
        valid = (n + ell >= 0) & (n + ell < d)
        rate = _sideband_rate(params, ell) + params.gamma_sp
        A[valid, col] = rate * np.abs(mat[n[valid], n[valid] + ell]) ** 2

    if params.gamma_sp == 0.0:
        B = np.zeros(d)
    else:
        if domain is None:
            cfg = profile.config
            domain = (cfg.z0 - cfg.window, cfg.z0 + cfg.window)
        z, w, psi = _quad_grid(basis, domain)
        f = profile(z)
        t = np.tan(profile.alpha(z))
        B = params.gamma_sp * np.dot(psi**2, w * f**2 * t**2)
    return A, B


def assemble_model(params: MicroscopeParams, basis: BasisSpec,
                   z0: float | None = None,
                   domain: tuple[float, float] | None = None) -> ModelOperators:
    """Build all operators for a (possibly re-focused) configuration."""
    cfg = params.focus if z0 is None else replace(params.focus, z0=z0)
    profile = focusing_function(cfg)
    mb = BasisSpec(basis.motional_dim)
    F = build_f_matrix(profile, mb, domain)
    sidebands = build_sidebands(F, mb)
    jumps, loss = build_lsp(profile, params, mb, domain)
    A, B = build_rates(F, profile, params, mb, domain)
    return ModelOperators(
        basis=mb, params=params, profile=profile, z0=cfg.z0,
        F=F, sidebands=sidebands, lsp_jumps=jumps, lsp_loss=loss,
        rates_A=A, rates_B=B,
    )


@dataclass
class ScanOperators:
    """Operators precomputed on a uniform grid of focal points.

    Time-dependent scans use the grid point nearest to z0(t)
    (piecewise-constant interpolation).  ``F`` has shape (G, d, d),
    ``A`` is reshaped into hop generators R (G, d, d) with
    R[g, n, m] = rate of |m> -> |n| population flow, plus its row sums.
    """

    params: MicroscopeParams
    basis: BasisSpec
    z0_grid: np.ndarray
    F: np.ndarray                # (G, d, d) real
    f0: np.ndarray               # (G, d)
    B: np.ndarray                # (G, d)
    hop: np.ndarray              # (G, d, d)  A_nl arranged as n <- n+l
    hop_out: np.ndarray          # (G, d)     sum_l A_nl
    lsp_jumps: list[tuple[float, np.ndarray]]   # weights, (G, d, d)
    lsp_loss: np.ndarray         # (G, d, d)
    sideband_rates: np.ndarray   # (2d-1,) cavity Lorentzian incl. gamma_sp
    sideband_diag: np.ndarray    # (G, d) sum_l!=0 r_l |f_{m-l,m}|^2

    def index_of(self, z0) -> np.ndarray:
        g = len(self.z0_grid)
        if g == 1:
            return np.zeros(np.shape(z0), dtype=int)
        lo, hi = self.z0_grid[0], self.z0_grid[-1]
        frac = (np.asarray(z0) - lo) / (hi - lo)
        return np.clip(np.rint(frac * (g - 1)).astype(int), 0, g - 1)


def build_scan_operators(params: MicroscopeParams, basis: BasisSpec,
                         z_min: float, z_max: float, n_grid: int = 256,
                         domain: tuple[float, float] | None = None) -> ScanOperators:
    """Precompute model operators on a z0 grid for time-dependent scans.

    The quadrature domain is fixed (it must cover the retained
    eigenfunctions); a guard rejects configurations where a second focal
    point of the periodic standing wave would enter the domain.
    """
    d = basis.motional_dim
    if domain is None:
        half = np.sqrt(2.0 * d) + 2.5
        domain = (-half, half)
    lam = params.focus.lambda0
    worst = max(abs(z_min), abs(z_max))
    if worst + max(abs(domain[0]), abs(domain[1])) >= lam:
        raise ValueError(
            "scan range plus eigenfunction support exceeds one optical period: "
            "a second focal point would enter the quadrature domain; "
            "use a smaller k0_l0 (longer wavelength) or a narrower scan"
        )

    z, w, psi = _quad_grid(BasisSpec(d), domain)
    _check_coverage(w, psi, domain)
    if n_grid < 1:
        raise ValueError("n_grid must be >= 1")
    grid = np.linspace(z_min, z_max, n_grid) if n_grid > 1 else np.array([(z_min + z_max) / 2])

    G = len(grid)
    F = np.zeros((G, d, d))
    B = np.zeros((G, d))
    with_sp = params.gamma_sp > 0
    jump_specs = [(1.0, lambda f, s, t: f)]
    if with_sp and params.p_re > 0:
        jump_specs.append((params.p_re, lambda f, s, t: f * s))
    if with_sp and params.p_ge > 0:
        jump_specs.append((params.p_ge, lambda f, s, t: f * t * s))
    jump_mats = [np.zeros((G, d, d)) for _ in jump_specs] if with_sp else []
    loss_mats = np.zeros((G, d, d)) if with_sp else np.zeros((1, d, d))

    for g, z0 in enumerate(grid):
        cfg = replace(params.focus, z0=float(z0))
        prof = focusing_function(cfg)
        f = prof(z)
        F[g] = _matrix_of(f, w, psi)
        if with_sp:
            alpha = prof.alpha(z)
            s, t = np.sin(alpha), np.tan(alpha)
            B[g] = params.gamma_sp * np.dot(psi**2, w * f**2 * t**2)
            for k, (_, gfun) in enumerate(jump_specs):
                jump_mats[k][g] = _matrix_of(gfun(f, s, t), w, psi)
            bracket = t**2 * (1 - params.p_ge * s**2) - params.p_re * s**2
            loss = _matrix_of(f**2 * bracket, w, psi)
            evals, evecs = np.linalg.eigh(loss)
            loss_mats[g] = (evecs * np.clip(evals, 0, None)) @ evecs.T

    f0 = np.einsum("gnn->gn", F).copy()

    ells = np.arange(-(d - 1), d)
    rates = np.array([_sideband_rate(params, l) + params.gamma_sp for l in ells])

    # population-hop generator: A_nl arranged as flow n <- n+l
    hop = np.zeros((G, d, d))
    n = np.arange(d)
    for ell in ells:
        if ell == 0:
            continue
        valid = (n + ell >= 0) & (n + ell < d)
        r = rates[ell + d - 1]
        hop[:, n[valid], n[valid] + ell] += r * np.abs(F[:, n[valid], n[valid] + ell]) ** 2
    hop_out = hop.sum(axis=2)

    # sum_{l!=0} r_l f^(l)dag f^(l) is diagonal: entry m gets |f_{m-l,m}|^2
    sdiag = np.zeros((G, d))
    m = np.arange(d)
    for ell in ells:
        if ell == 0:
            continue
        valid = (m - ell >= 0) & (m - ell < d)
        sdiag[:, m[valid]] += rates[ell + d - 1] * np.abs(F[:, m[valid] - ell, m[valid]]) ** 2

    jumps = [(jump_specs[k][0], jump_mats[k]) for k in range(len(jump_mats))]
    return ScanOperators(
        params=params, basis=BasisSpec(d), z0_grid=grid,
        F=F, f0=f0, B=B, hop=hop, hop_out=hop_out,
        lsp_jumps=jumps, lsp_loss=loss_mats,
        sideband_rates=rates, sideband_diag=sdiag,
    )
