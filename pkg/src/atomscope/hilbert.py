"""Dense operator algebra over truncated oscillator / Fock spaces.

All quantities are expressed in trap units: hbar = m = omega = 1.  Lengths
are measured in the oscillator length l0 = sqrt(hbar / m omega), energies in
hbar*omega, times in 1/omega.  The total Hilbert space is a truncated tensor
product

    (motional HO levels) x (cavity Fock levels) x (auxiliary-filter Fock levels)

stored as dense complex matrices; factor dimensions of zero mean the factor
is absent (eliminated).  At the scales used here (<= 64 x 4 x 4) dense
algebra beats any sparse representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BasisSpec",
    "Operator",
    "DensityOperator",
    "destroy",
    "ho_hamiltonian",
    "position_operator",
    "momentum_operator",
    "cavity_destroy",
    "aux_destroy",
    "embed_motional",
    "embed_cavity",
    "embed_aux",
    "lindblad_apply",
    "homodyne_apply",
    "fock_state",
    "coherent_state",
    "thermal_populations",
    "thermal_state",
    "coherent_density",
    "fock_density",
    "tensor_with_vacuum",
    "hermite_functions",
    "trace_distance",
]

HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = 1e-8
TRACE_TOL = 1e-10


@dataclass(frozen=True)
class BasisSpec:
    """Truncation bookkeeping for the tensor-product Hilbert space.

    ``cavity_dim == 0`` means the cavity has been eliminated; likewise
    ``aux_dim == 0`` unless an auxiliary filter cavity is cascaded on.
    """

    motional_dim: int
    cavity_dim: int = 0
    aux_dim: int = 0

    def __post_init__(self):
        if self.motional_dim < 2:
            raise ValueError(f"motional_dim must be >= 2, got {self.motional_dim}")
        if self.cavity_dim < 0 or self.aux_dim < 0:
            raise ValueError("cavity_dim and aux_dim must be >= 0")

    @property
    def factor_dims(self) -> tuple[int, int, int]:
        return (self.motional_dim, max(self.cavity_dim, 1), max(self.aux_dim, 1))

    @property
    def total_dim(self) -> int:
        dm, dc, da = self.factor_dims
        return dm * dc * da


@dataclass(frozen=True)
class Operator:
    """A dense operator tagged with its basis."""

    matrix: np.ndarray
    basis: BasisSpec
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.basis.total_dim, self.basis.total_dim):
            raise ValueError(
                f"operator shape {m.shape} inconsistent with basis dimension "
                f"{self.basis.total_dim}"
            )
        object.__setattr__(self, "matrix", m)

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.basis, self.label + "^dag")

    def expect(self, rho: "DensityOperator") -> complex:
        """Normalized conditional expectation Tr(O rho)/Tr(rho)."""
        tr = np.trace(rho.matrix).real
        if tr <= 1e-12:
            raise ValueError("state has (numerically) zero trace: lost atom")
        return np.trace(self.matrix @ rho.matrix) / tr


@dataclass
class DensityOperator:
    """Conditional density matrix; trace < 1 records accumulated loss."""

    matrix: np.ndarray
    basis: BasisSpec

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.shape != (self.basis.total_dim, self.basis.total_dim):
            raise ValueError(
                f"density matrix shape {self.matrix.shape} inconsistent with "
                f"basis dimension {self.basis.total_dim}"
            )

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def validate(self) -> None:
        """Check Hermiticity, positivity and trace within tolerances."""
        m = self.matrix
        herm = np.max(np.abs(m - m.conj().T))
        if herm > HERMITICITY_TOL:
            raise ValueError(f"density matrix not Hermitian: max |rho-rho^dag| = {herm:.3e}")
        w = np.linalg.eigvalsh((m + m.conj().T) / 2)
        if w.min() < -POSITIVITY_TOL:
            raise ValueError(f"density matrix not positive: min eigenvalue = {w.min():.3e}")
        tr = self.trace
        if tr < -TRACE_TOL or tr > 1 + TRACE_TOL:
            raise ValueError(f"trace out of range [0, 1]: {tr}")

    def normalized(self) -> "DensityOperator":
        return DensityOperator(self.matrix / self.trace, self.basis)


def destroy(dim: int) -> np.ndarray:
    """Annihilation operator on a single truncated factor."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def _kron3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.kron(np.kron(a, b), c)


def embed_motional(mat: np.ndarray, basis: BasisSpec) -> np.ndarray:
    dm, dc, da = basis.factor_dims
    return _kron3(np.asarray(mat, dtype=complex), np.eye(dc), np.eye(da))


def embed_cavity(mat: np.ndarray, basis: BasisSpec) -> np.ndarray:
    dm, dc, da = basis.factor_dims
    return _kron3(np.eye(dm), np.asarray(mat, dtype=complex), np.eye(da))


def embed_aux(mat: np.ndarray, basis: BasisSpec) -> np.ndarray:
    dm, dc, da = basis.factor_dims
    return _kron3(np.eye(dm), np.eye(dc), np.asarray(mat, dtype=complex))


def ho_hamiltonian(basis: BasisSpec) -> Operator:
    """Trap Hamiltonian, diag(n + 1/2) in units hbar*omega; identity on the
    cavity/aux factors (their free evolution is handled separately)."""
    h = np.diag(np.arange(basis.motional_dim) + 0.5).astype(complex)
    return Operator(embed_motional(h, basis), basis, "H_atom")


def position_operator(basis: BasisSpec) -> Operator:
    """z in units l0: (a + a^dag)/sqrt(2)."""
    a = destroy(basis.motional_dim)
    z = (a + a.conj().T) / np.sqrt(2)
    return Operator(embed_motional(z, basis), basis, "z")


def momentum_operator(basis: BasisSpec) -> Operator:
    """p in units hbar/l0: i (a^dag - a)/sqrt(2), so [z, p] = i."""
    a = destroy(basis.motional_dim)
    p = 1j * (a.conj().T - a) / np.sqrt(2)
    return Operator(embed_motional(p, basis), basis, "p")


def cavity_destroy(basis: BasisSpec) -> Operator:
    if basis.cavity_dim < 2:
        raise ValueError("no cavity factor in this basis")
    return Operator(embed_cavity(destroy(basis.cavity_dim), basis), basis, "c")


def aux_destroy(basis: BasisSpec) -> Operator:
    if basis.aux_dim < 2:
        raise ValueError("no auxiliary factor in this basis")
    return Operator(embed_aux(destroy(basis.aux_dim), basis), basis, "c_a")


def _hermitize(m: np.ndarray) -> np.ndarray:
    return (m + m.conj().T) / 2


def _check_same_basis(a, b) -> None:
    if a.basis != b.basis:
        raise ValueError(f"basis mismatch: {a.basis} vs {b.basis}")


def lindblad_apply(L: Operator, rho: DensityOperator) -> DensityOperator:
    """Dissipator D[L]rho = L rho L^dag - (L^dag L rho + rho L^dag L)/2.

    The result is exactly traceless and is symmetrized to keep Hermiticity
    at machine precision.
    """
    _check_same_basis(L, rho)
    Lm = L.matrix
    LdL = Lm.conj().T @ Lm
    out = Lm @ rho.matrix @ Lm.conj().T - 0.5 * (LdL @ rho.matrix + rho.matrix @ LdL)
    return DensityOperator(_hermitize(out), rho.basis)


def homodyne_apply(L: Operator, rho: DensityOperator) -> DensityOperator:
    """Measurement superoperator H[L]rho = L rho - <L> rho + h.c.

    The expectation <L> is trace-normalized, Tr(L rho)/Tr(rho), so that
    states carrying loss (trace < 1) keep a consistent conditional update.
    A state with trace below 1e-12 means the atom is gone; callers must
    branch to the loss path instead.
    """
    _check_same_basis(L, rho)
    tr = rho.trace
    if tr <= 1e-12:
        raise ValueError("state has (numerically) zero trace: lost atom")
    Lm = L.matrix
    expect = np.trace(Lm @ rho.matrix) / tr
    out = Lm @ rho.matrix - expect * rho.matrix
    out = out + out.conj().T
    return DensityOperator(_hermitize(out), rho.basis)


# ---------------------------------------------------------------------------
# state constructors (motional factor unless stated otherwise)

def fock_state(n: int, dim: int) -> np.ndarray:
    if not 0 <= n < dim:
        raise ValueError(f"Fock index {n} outside truncation {dim}")
    v = np.zeros(dim, dtype=complex)
    v[n] = 1.0
    return v


def coherent_state(alpha: complex, dim: int) -> np.ndarray:
    """Truncated coherent state, renormalized on the retained levels."""
    n = np.arange(dim)
    from scipy.special import gammaln

    log_fact = gammaln(n + 1)
    amps = np.exp(n * np.log(np.abs(alpha) + 1e-300) - 0.5 * log_fact)
    v = amps * np.exp(1j * n * np.angle(alpha)) * np.exp(-0.5 * np.abs(alpha) ** 2)
    return v / np.linalg.norm(v)


def thermal_populations(n_th: float, dim: int) -> np.ndarray:
    """Truncated thermal occupation p_n ~ exp(-n/n_th), renormalized."""
    if n_th <= 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    p = np.exp(-np.arange(dim) / n_th)
    return p / p.sum()


def _motional_only(basis: BasisSpec, what: str) -> None:
    if basis.total_dim != basis.motional_dim:
        raise ValueError(f"{what} is motional-only; tensor with vacuum factors explicitly")


def fock_density(n: int, basis: BasisSpec) -> DensityOperator:
    _motional_only(basis, "fock_density")
    v = fock_state(n, basis.motional_dim)
    return DensityOperator(np.outer(v, v.conj()), basis)


def coherent_density(alpha: complex, basis: BasisSpec) -> DensityOperator:
    _motional_only(basis, "coherent_density")
    v = coherent_state(alpha, basis.motional_dim)
    return DensityOperator(np.outer(v, v.conj()), basis)


def thermal_state(n_th: float, basis: BasisSpec) -> DensityOperator:
    _motional_only(basis, "thermal_state")
    return DensityOperator(np.diag(thermal_populations(n_th, basis.motional_dim)).astype(complex), basis)


def tensor_with_vacuum(rho_motional: DensityOperator, basis: BasisSpec) -> DensityOperator:
    """Embed a motional state as rho (x) |0><0|_cavity (x) |0><0|_aux."""
    dm, dc, da = basis.factor_dims
    if rho_motional.matrix.shape != (dm, dm):
        raise ValueError("motional state dimension does not match target basis")
    out = rho_motional.matrix
    for d in (dc, da):
        if d > 1:
            vac = np.zeros((d, d), dtype=complex)
            vac[0, 0] = 1.0
            out = np.kron(out, vac)
    return DensityOperator(out, basis)


def hermite_functions(n_max: int, z: np.ndarray) -> np.ndarray:
    """Harmonic-oscillator eigenfunctions psi_n(z), n = 0..n_max-1.

    Uses the normalized three-term recurrence
        psi_{n+1} = sqrt(2/(n+1)) z psi_n - sqrt(n/(n+1)) psi_{n-1},
    which stays accurate well past n = 30 where naive Hermite polynomials
    overflow.  Returns an array of shape (n_max, len(z)).
    """
    z = np.asarray(z, dtype=float)
    out = np.empty((n_max, z.size))
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * z**2)
    if n_max > 1:
        out[1] = np.sqrt(2.0) * z * out[0]
    for n in range(1, n_max - 1):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * z * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def trace_distance(a: DensityOperator | np.ndarray, b: DensityOperator | np.ndarray) -> float:
    """T(a, b) = ||a - b||_1 / 2 (sum of singular values over two)."""
    ma = a.matrix if isinstance(a, DensityOperator) else np.asarray(a)
    mb = b.matrix if isinstance(b, DensityOperator) else np.asarray(b)
    diff = _hermitize(ma - mb)
    return float(np.sum(np.abs(np.linalg.eigvalsh(diff)))) / 2
