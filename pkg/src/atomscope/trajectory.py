"""Stochastic integrators producing homodyne records.

Four conditional evolutions share one noise convention (the Wiener
increment that drives the state update is the same one that appears in the
recorded current):

  * movie SME   -- bad-cavity reduced model: measurement of f(z-hat),
                   d rho = -i[H, rho] dt + gamma D[F] rho dt
                          + sqrt(gamma) H[F] rho dW + (gamma/4C) L_sp rho dt,
                   dq = 2 sqrt(gamma) <F> dt + dW
  * scan SME    -- good-cavity reduced model: measurement of the secular
                   component f^(0), sidebands f^(l) entering as pure
                   dissipation at rate gamma/(1 + (2 l omega/kappa)^2)
  * full SME    -- displaced-frame atom (x) cavity model used to validate
                   both reductions: coupling sqrt(gamma kappa)/2 F (c + c^dag),
                   cavity dissipator kappa D[c], homodyne of c at phase phi
  * SRE         -- nonlinear stochastic rate equation for the eigenstate
                   populations p_n with hop rates A_nl and loss rates B_n

States are evolved normalized; the trace-decreasing spontaneous-emission
channel is split off into a survival weight.  By default loss is unraveled
as a Poisson-type jump (hazard = instantaneous loss rate), which reproduces
the observed sudden drop of the current to shot noise while preserving
ensemble means; a smooth-decay variant is available for ensemble-level
checks (``loss_mode="decay"``).

Reproducibility: each trajectory draws from its own PCG64 stream seeded by
SeedSequence((root_seed, trajectory_index)), so ensembles are independent
of scheduling and chunking.
"""

from __future__ import annotations

import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .hilbert import BasisSpec, DensityOperator, destroy
from .model import MicroscopeParams, ModelOperators, ScanOperators, build_scan_operators

__all__ = [
    "IntegratorConfig",
    "ScanProtocol",
    "Trajectory",
    "NumericalError",
    "trajectory_rng",
    "run_movie_sme",
    "run_scan_sme",
    "run_full_sme",
    "run_sre",
    "movie_ensemble",
    "scan_ensemble",
    "full_ensemble",
    "sre_ensemble",
    "run_lindblad",
]

CHUNK = 256  # trajectories per batched integration; fixed so threading cannot affect results


class NumericalError(RuntimeError):
    """Integration produced non-finite values or violated a guard."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size, duration and bookkeeping for a stochastic run.

    Guards: dt*omega <= 0.02 and dt*gamma_eff <= 0.05 where gamma_eff
    accounts for the scale of the measured operator (its square enters the
    diffusion).  ``record_stride`` thins the stored populations;
    ``snapshot_stride`` > 0 additionally stores full density matrices.
    """

    dt: float
    t_end: float
    seed: int = 0
    record_stride: int = 1
    snapshot_stride: int = 0
    scheme: str = "euler_maruyama"
    loss_mode: str = "jump"

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.scheme not in ("euler_maruyama", "heun_predictor_corrector"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.loss_mode not in ("jump", "decay"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if self.dt > 0.02:
            raise ValueError(f"dt = {self.dt} violates the guard dt*omega <= 0.02")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def effective_record_stride(self) -> int:
        return max(1, min(self.record_stride, self.n_steps))


def _check_gamma_guard(gamma: float, dt: float, f_scale: float) -> None:
    eff = gamma * dt * max(f_scale, 1.0) ** 2
    if eff > 0.05 + 1e-12:
        raise ValueError(
            f"dt = {dt} violates the measurement guard: gamma*dt*f_scale^2 = "
            f"{eff:.3f} > 0.05 (f_scale = {f_scale:.3f})"
        )


@dataclass(frozen=True)
class ScanProtocol:
    """Focal-point drive z0(t): ``repeats`` consecutive sweeps from z_start
    to z_end, each of length ``duration`` (sawtooth; restarts at z_start)."""

    z_start: float
    z_end: float
    duration: float
    repeats: int = 1

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @property
    def total_time(self) -> float:
        return self.duration * self.repeats

    def z0_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        frac = np.mod(t / self.duration, 1.0)
        # the final instant belongs to the last sweep, not a new one
        frac = np.where((t >= self.total_time - 1e-12) & (frac < 1e-12), 1.0, frac)
        return self.z_start + (self.z_end - self.z_start) * frac


@dataclass
class Trajectory:
    """One stochastic record.

    ``dq`` holds the raw homodyne increments (units sqrt(dt) noise plus
    signal*dt), one per step.  Populations and survival are recorded every
    ``record_stride`` steps at the times in ``pop_times``.  ``survival`` is
    {1, 0} under jump unraveling and the smooth trace under decay mode.
    """

    times: np.ndarray
    dq: np.ndarray
    pop_times: np.ndarray
    populations: np.ndarray
    survival: np.ndarray
    lost_at: float | None = None
    snapshots: list | None = None
    filtered: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def to_text(self, path) -> None:
        """Delimited-text serialization: header line with config and seed,
        then one record per stored step (time, dq, survival, p_0..p_{N-1}).
        dq is aggregated over each record stride."""
        stride = max(1, len(self.dq) // max(1, len(self.pop_times) - 1))
        n_rec = len(self.pop_times)
        dq_agg = np.zeros(n_rec)
        for k in range(1, n_rec):
            dq_agg[k] = self.dq[(k - 1) * stride: k * stride].sum()
        cols = [self.pop_times, dq_agg, self.survival]
        header_meta = " ".join(f"{k}={v}" for k, v in sorted(self.meta.items()))
        names = ["time", "dq", "survival"] + [f"p{n}" for n in range(self.populations.shape[1])]
        if self.filtered is not None:
            idx = np.clip((self.pop_times / (self.times[1] - self.times[0])).round().astype(int),
                          0, len(self.filtered) - 1)
            cols.append(self.filtered[idx])
            names.append("filtered")
        data = np.column_stack(cols[:3] + [self.populations] + cols[3:])
        buf = io.StringIO()
        buf.write(f"# {header_meta}\n")
        buf.write("# " + "\t".join(names) + "\n")
        np.savetxt(buf, data, fmt="%.12g", delimiter="\t")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """The documented stream-splitting rule: PCG64(SeedSequence((seed, index)))."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), int(index)))))


def _draw_noise(icfg: IntegratorConfig, indices: np.ndarray, with_jump: bool):
    """Per-trajectory noise, pregenerated so chunking cannot reorder it.

    Returns (dW, dU): dW ~ N(0, dt) of shape (M, n_steps); dU uniform in
    [0,1) for the loss-jump clock, or None in decay mode.
    """
    n = icfg.n_steps
    sq = np.sqrt(icfg.dt)
    dW = np.empty((len(indices), n))
    dU = np.empty((len(indices), n)) if with_jump else None
    for k, idx in enumerate(indices):
        g = trajectory_rng(icfg.seed, idx)
        dW[k] = g.standard_normal(n) * sq
        if with_jump:
            dU[k] = g.random(n)
    return dW, dU


# ---------------------------------------------------------------------------
# batched matrix helpers: states are stacked (M, d, d)

def _rmul(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, d, _ = x.shape
    return (x.reshape(m * d, d) @ b).reshape(m, d, d)


def _lmul(b: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _rmul(x.conj().transpose(0, 2, 1), b.conj().T).conj().transpose(0, 2, 1)


def _dag(x: np.ndarray) -> np.ndarray:
    return x.conj().transpose(0, 2, 1)


def _btrace(x: np.ndarray) -> np.ndarray:
    return np.einsum("mii->m", x)


def _hermitize_b(x: np.ndarray) -> np.ndarray:
    return (x + _dag(x)) / 2


# ---------------------------------------------------------------------------
# movie-mode SME (also used with a diagonal measured operator for QND checks)

def _movie_drift(rho, F, F2, h_gap, jump_ops, anticomm, loss_op, gamma, gamma_sp):
    rF = _rmul(rho, F)
    Fr = _dag(rF)
    out = np.zeros_like(rho)
    if h_gap is not None:
        out += -1j * h_gap[None, :, :] * rho
    rF2 = _rmul(rho, F2)
    out += gamma * (_rmul(Fr, F) - 0.5 * (rF2 + _dag(rF2)))
    if gamma_sp > 0:
        for w, J in jump_ops:
            rJ = _rmul(rho, J)
            out += gamma_sp * w * _rmul(_dag(rJ), J)
        rA = _rmul(rho, anticomm)           # anticomm = (sum w J^2 + loss)/2
        out += -gamma_sp * (rA + _dag(rA))
        lam = np.real(_btrace(_rmul(rho, loss_op)))
        out += gamma_sp * lam[:, None, None] * rho
    return out, rF, Fr


def _movie_core(rho0, ops: ModelOperators, params: MicroscopeParams,
                icfg: IntegratorConfig, indices, with_hamiltonian=True):
    d = ops.basis.motional_dim
    M = len(indices)
    F = ops.F.matrix
    f_scale = float(np.max(np.abs(np.linalg.eigvalsh(F)))) if params.gamma > 0 else 1.0
    _check_gamma_guard(params.gamma, icfg.dt, f_scale)
    F2 = F @ F
    gamma, gamma_sp = params.gamma, params.gamma_sp
    sqg = np.sqrt(gamma)
    h = ops.h_atom
    h_gap = (h[:, None] - h[None, :]).astype(complex) if with_hamiltonian else None
    jump_ops = [(w, J.astype(complex)) for w, J in ops.lsp_jumps]
    if gamma_sp > 0:
        anticomm = sum(w * (J @ J) for w, J in jump_ops) + ops.lsp_loss
        anticomm = 0.5 * anticomm.astype(complex)
        loss_op = ops.lsp_loss.astype(complex)
    else:
        anticomm = loss_op = np.zeros((d, d), dtype=complex)

    dW, dU = _draw_noise(icfg, indices, gamma_sp > 0 and icfg.loss_mode == "jump")
    n = icfg.n_steps
    dt = icfg.dt

    rho = np.broadcast_to(rho0.matrix, (M, d, d)).astype(complex).copy()
    tr0 = np.real(_btrace(rho))
    rho /= tr0[:, None, None]
    S = np.ones(M)
    alive = np.ones(M, dtype=bool)
    lost_at = np.full(M, np.nan)

    rec_stride = icfg.effective_record_stride
    n_rec = n // rec_stride + 1
    pops = np.zeros((M, n_rec, d))
    surv = np.zeros((M, n_rec))
    dq = np.zeros((M, n))
    snaps = [] if icfg.snapshot_stride else None

    def record(k_rec):
        w = S if icfg.loss_mode == "decay" else alive.astype(float)
        pops[:, k_rec] = np.real(np.einsum("mii->mi", rho)) * w[:, None]
        surv[:, k_rec] = w

    record(0)
    if snaps is not None:
        w = S if icfg.loss_mode == "decay" else alive.astype(float)
        snaps.append((0.0, rho * w[:, None, None]))

    for k in range(n):
        drift, rF, Fr = _movie_drift(rho, F, F2, h_gap, jump_ops, anticomm,
                                     loss_op, gamma, gamma_sp)
        m = np.real(_btrace(rF))
        hterm = Fr + rF - 2 * m[:, None, None] * rho
        if icfg.scheme == "heun_predictor_corrector":
            pred = rho + drift * dt + sqg * hterm * dW[:, k, None, None]
            drift2, _, _ = _movie_drift(pred, F, F2, h_gap, jump_ops, anticomm,
                                        loss_op, gamma, gamma_sp)
            new = rho + 0.5 * (drift + drift2) * dt + sqg * hterm * dW[:, k, None, None]
        else:
            new = rho + drift * dt + sqg * hterm * dW[:, k, None, None]
        new = _hermitize_b(new)
        tr = np.real(_btrace(new))
        if not np.all(np.isfinite(tr)):
            raise NumericalError(f"non-finite state at step {k} (t = {k * dt:.4g})")
        rho = new / tr[:, None, None]

        if gamma_sp > 0:
            lam = gamma_sp * np.real(_btrace(_rmul(rho, loss_op)))
            if icfg.loss_mode == "jump":
                dying = alive & (dU[:, k] < lam * dt)
                alive &= ~dying
                lost_at[dying] = (k + 1) * dt
            else:
                S *= 1.0 - lam * dt

        w = S if icfg.loss_mode == "decay" else alive.astype(float)
        dq[:, k] = 2 * sqg * m * w * dt + dW[:, k]
        if (k + 1) % rec_stride == 0:
            record((k + 1) // rec_stride)
        if snaps is not None and (k + 1) % icfg.snapshot_stride == 0:
            snaps.append(((k + 1) * dt, rho * w[:, None, None]))

    return _package(icfg, indices, dq, pops, surv, lost_at, snaps, d,
                    mode="movie", gamma=gamma)


def _package(icfg, indices, dq, pops, surv, lost_at, snaps, d, **meta):
    n = icfg.n_steps
    times = np.arange(n + 1) * icfg.dt
    pop_times = times[::icfg.effective_record_stride][: pops.shape[1]]
    out = []
    for k, idx in enumerate(indices):
        tr_snaps = None
        if snaps is not None:
            tr_snaps = [(t, s[k].copy()) for t, s in snaps]
        out.append(Trajectory(
            times=times, dq=dq[k], pop_times=pop_times,
            populations=pops[k], survival=surv[k],
            lost_at=None if np.isnan(lost_at[k]) else float(lost_at[k]),
            snapshots=tr_snaps,
            meta=dict(seed=icfg.seed, index=int(idx), dt=icfg.dt,
                      scheme=icfg.scheme, loss_mode=icfg.loss_mode, **meta),
        ))
    return out


# ---------------------------------------------------------------------------
# scanning-mode SME

def _sideband_gain(rho, Fg, rates, d):
    """sum_{l != 0} r_l f^(l) rho f^(l)dag, exploiting the single-diagonal
    structure of the sideband components (F is real symmetric here)."""
    out = np.zeros_like(rho)
    for ell in range(1, d):
        diag = Fg[np.arange(d - ell), np.arange(ell, d)]
        a = (diag[:, None] * diag[None, :]).astype(complex)
        out[:, : d - ell, : d - ell] += rates[ell + d - 1] * a[None] * rho[:, ell:, ell:]
        out[:, ell:, ell:] += rates[-ell + d - 1] * a[None] * rho[:, : d - ell, : d - ell]
    return out


def _scan_core(rho0, scan_ops: ScanOperators, protocol: ScanProtocol,
               icfg: IntegratorConfig, indices, with_hamiltonian=True):
    so = scan_ops
    params = so.params
    d = so.basis.motional_dim
    M = len(indices)
    gamma, gamma_sp = params.gamma, params.gamma_sp
    sqg = np.sqrt(gamma)
    f_scale = float(np.max(np.abs(so.f0)))
    _check_gamma_guard(gamma, icfg.dt, f_scale)

    h = np.arange(d) + 0.5
    h_gap = (h[:, None] - h[None, :]).astype(complex) if with_hamiltonian else None

    n = icfg.n_steps
    dt = icfg.dt
    t_grid = np.arange(n) * dt
    gidx = so.index_of(protocol.z0_at(t_grid))

    with_sp = gamma_sp > 0
    dW, dU = _draw_noise(icfg, indices, with_sp and icfg.loss_mode == "jump")

    rho = np.broadcast_to(rho0.matrix, (M, d, d)).astype(complex).copy()
    rho /= np.real(_btrace(rho))[:, None, None]
    S = np.ones(M)
    alive = np.ones(M, dtype=bool)
    lost_at = np.full(M, np.nan)

    rec_stride = icfg.effective_record_stride
    n_rec = n // rec_stride + 1
    pops = np.zeros((M, n_rec, d))
    surv = np.zeros((M, n_rec))
    dq = np.zeros((M, n))
    snaps = [] if icfg.snapshot_stride else None

    if with_sp:
        anticomms = np.zeros_like(so.lsp_loss)
        for g in range(len(so.z0_grid)):
            acc = so.lsp_loss[g].copy()
            for w_j, Jg in so.lsp_jumps:
                acc += w_j * (Jg[g] @ Jg[g])
            anticomms[g] = 0.5 * acc

    def record(k_rec):
        w = S if icfg.loss_mode == "decay" else alive.astype(float)
        pops[:, k_rec] = np.real(np.einsum("mii->mi", rho)) * w[:, None]
        surv[:, k_rec] = w

    record(0)

    def drift_of(rho_b, g):
        f0 = so.f0[g]
        out = np.zeros_like(rho_b)
        if h_gap is not None:
            out += -1j * h_gap[None] * rho_b
        # secular dissipator D[f^(0)] (diagonal operator): elementwise
        gain0 = f0[:, None] * f0[None, :]
        half0 = 0.5 * (f0**2)[:, None] + 0.5 * (f0**2)[None, :]
        out += gamma * (gain0 - half0)[None] * rho_b
        # sideband dissipators
        out += _sideband_gain(rho_b, so.F[g], so.sideband_rates, d)
        out -= 0.5 * (so.sideband_diag[g][:, None] + so.sideband_diag[g][None, :])[None] * rho_b
        if with_sp:
            for w_j, Jg in so.lsp_jumps:
                rJ = _rmul(rho_b, Jg[g].astype(complex))
                out += gamma_sp * w_j * _rmul(_dag(rJ), Jg[g].astype(complex))
            rA = _rmul(rho_b, anticomms[g].astype(complex))
            out += -gamma_sp * (rA + _dag(rA))
            lam = np.real(_btrace(_rmul(rho_b, so.lsp_loss[g].astype(complex))))
            out += gamma_sp * lam[:, None, None] * rho_b
        return out

    for k in range(n):
        g = gidx[k]
        f0 = so.f0[g]
        diag = np.real(np.einsum("mii->mi", rho))
        m = diag @ f0
        drift = drift_of(rho, g)
        hterm = (f0[None, :, None] + f0[None, None, :]) * rho - 2 * m[:, None, None] * rho
        if icfg.scheme == "heun_predictor_corrector":
            pred = rho + drift * dt + sqg * hterm * dW[:, k, None, None]
            new = rho + 0.5 * (drift + drift_of(pred, g)) * dt + sqg * hterm * dW[:, k, None, None]
        else:
            new = rho + drift * dt + sqg * hterm * dW[:, k, None, None]
        new = _hermitize_b(new)
        tr = np.real(_btrace(new))
        if not np.all(np.isfinite(tr)):
            raise NumericalError(f"non-finite state at step {k} (t = {k * dt:.4g})")
        rho = new / tr[:, None, None]

        if with_sp:
            lam = gamma_sp * np.real(_btrace(_rmul(rho, so.lsp_loss[g].astype(complex))))
            if icfg.loss_mode == "jump":
                dying = alive & (dU[:, k] < lam * dt)
                alive &= ~dying
                lost_at[dying] = (k + 1) * dt
            else:
                S *= 1.0 - lam * dt

        w = S if icfg.loss_mode == "decay" else alive.astype(float)
        dq[:, k] = 2 * sqg * m * w * dt + dW[:, k]
        if (k + 1) % rec_stride == 0:
            record((k + 1) // rec_stride)
        if snaps is not None and (k + 1) % icfg.snapshot_stride == 0:
            snaps.append(((k + 1) * dt, rho * w[:, None, None]))

    return _package(icfg, indices, dq, pops, surv, lost_at, snaps, d,
                    mode="scan", gamma=gamma,
                    z_start=protocol.z_start, z_end=protocol.z_end,
                    duration=protocol.duration, repeats=protocol.repeats)


# ---------------------------------------------------------------------------
# full displaced atom (x) cavity SME

def _full_core(rho0, ops: ModelOperators, params: MicroscopeParams,
               icfg: IntegratorConfig, indices, basis: BasisSpec,
               with_hamiltonian=True):
    dm = basis.motional_dim
    dc = basis.cavity_dim
    if dc < 3:
        raise ValueError("full model needs cavity_dim >= 3")
    D = dm * dc
    M = len(indices)
    kappa = params.kappa_over_omega
    gamma, gamma_sp = params.gamma, params.gamma_sp
    if kappa * icfg.dt > 0.1:
        raise ValueError(f"dt = {icfg.dt} too large for cavity decay: kappa*dt = {kappa * icfg.dt:.3f} > 0.1")
    coupling = np.sqrt(gamma * kappa) / 2  # calibrated so the reduced models share gamma

    a = destroy(dc)
    x_c = a + a.conj().T
    eye_m, eye_c = np.eye(dm), np.eye(dc)
    H = coupling * np.kron(ops.F.matrix.real, x_c).astype(complex)
    if with_hamiltonian:
        H += np.kron(np.diag(ops.h_atom), eye_c)
    c_full = np.kron(eye_m, a).astype(complex)
    phase = np.exp(-1j * params.homodyne_phase)
    L_meas = np.sqrt(kappa) * phase * c_full

    jump_ops = [(w, np.kron(J, eye_c).astype(complex)) for w, J in ops.lsp_jumps]
    loss_op = np.kron(ops.lsp_loss, eye_c).astype(complex)
    K = 0.5 * kappa * (c_full.conj().T @ c_full)
    if gamma_sp > 0:
        K = K + 0.5 * gamma_sp * (sum(w * (J @ J) for w, J in jump_ops) + loss_op)

    dW, dU = _draw_noise(icfg, indices, gamma_sp > 0 and icfg.loss_mode == "jump")
    n, dt = icfg.n_steps, icfg.dt

    rho = np.broadcast_to(rho0.matrix, (M, D, D)).astype(complex).copy()
    rho /= np.real(_btrace(rho))[:, None, None]
    S = np.ones(M)
    alive = np.ones(M, dtype=bool)
    lost_at = np.full(M, np.nan)

    rec_stride = icfg.effective_record_stride
    n_rec = n // rec_stride + 1
    pops = np.zeros((M, n_rec, dm))
    surv = np.zeros((M, n_rec))
    dq = np.zeros((M, n))
    snaps = [] if icfg.snapshot_stride else None
    top_fock_seen = 0.0

    def motional_pops(rho_b):
        r = rho_b.reshape(M, dm, dc, dm, dc)
        return np.real(np.einsum("mnjnj->mn", r))

    def record(k_rec, w):
        pops[:, k_rec] = motional_pops(rho) * w[:, None]
        surv[:, k_rec] = w

    record(0, np.ones(M))

    def drift_of(rho_b):
        rH = _rmul(rho_b, H)
        out = -1j * (_dag(rH) - rH)
        out += kappa * _lmul(c_full, _rmul(rho_b, c_full.conj().T))
        rK = _rmul(rho_b, K)
        out += -(rK + _dag(rK))
        if gamma_sp > 0:
            for w_j, J in jump_ops:
                rJ = _rmul(rho_b, J)
                out += gamma_sp * w_j * _rmul(_dag(rJ), J)
            lam = np.real(_btrace(_rmul(rho_b, loss_op)))
            out += gamma_sp * lam[:, None, None] * rho_b
        return out

    for k in range(n):
        rL = _rmul(rho, L_meas.conj().T)   # rho L^dag
        Lr = _dag(rL)                       # L rho
        m = np.real(_btrace(Lr))
        drift = drift_of(rho)
        hterm = Lr + rL - 2 * m[:, None, None] * rho
        if icfg.scheme == "heun_predictor_corrector":
            pred = rho + drift * dt + hterm * dW[:, k, None, None]
            new = rho + 0.5 * (drift + drift_of(pred)) * dt + hterm * dW[:, k, None, None]
        else:
            new = rho + drift * dt + hterm * dW[:, k, None, None]
        new = _hermitize_b(new)
        tr = np.real(_btrace(new))
        if not np.all(np.isfinite(tr)):
            raise NumericalError(f"non-finite state at step {k} (t = {k * dt:.4g})")
        rho = new / tr[:, None, None]

        if gamma_sp > 0:
            lam = gamma_sp * np.real(_btrace(_rmul(rho, loss_op)))
            if icfg.loss_mode == "jump":
                dying = alive & (dU[:, k] < lam * dt)
                alive &= ~dying
                lost_at[dying] = (k + 1) * dt
            else:
                S *= 1.0 - lam * dt

        w = S if icfg.loss_mode == "decay" else alive.astype(float)
        dq[:, k] = 2 * m * w * dt + dW[:, k]
        if (k + 1) % rec_stride == 0:
            record((k + 1) // rec_stride, w)
            r5 = rho.reshape(M, dm, dc, dm, dc)
            top_fock_seen = max(top_fock_seen, float(np.max(np.einsum("mnjnj->mj", np.real(r5))[:, -1])))
        if snaps is not None and (k + 1) % icfg.snapshot_stride == 0:
            snaps.append(((k + 1) * dt, rho * w[:, None, None]))

    if top_fock_seen > 1e-4:
        warnings.warn(
            f"cavity truncation suspect: top Fock level reached population {top_fock_seen:.2e}",
            stacklevel=2,
        )
    return _package(icfg, indices, dq, pops, surv, lost_at, snaps, D,
                    mode="full", gamma=gamma, kappa=kappa)


# ---------------------------------------------------------------------------
# stochastic rate equation

def _sre_core(p0, scan_ops: ScanOperators, protocol: ScanProtocol,
              icfg: IntegratorConfig, indices):
    so = scan_ops
    params = so.params
    d = so.basis.motional_dim
    M = len(indices)
    gamma, gamma_sp = params.gamma, params.gamma_sp
    sqg = np.sqrt(gamma)
    _check_gamma_guard(gamma, icfg.dt, float(np.max(np.abs(so.f0))))

    p0 = np.asarray(p0, dtype=float)
    if p0.min() < 0 or p0.sum() > 1 + 1e-9:
        raise ValueError("initial populations must be nonnegative with sum <= 1")

    n, dt = icfg.n_steps, icfg.dt
    t_grid = np.arange(n) * dt
    gidx = so.index_of(protocol.z0_at(t_grid))
    with_jump = icfg.loss_mode == "jump"
    dW, dU = _draw_noise(icfg, indices, with_jump)

    p = np.broadcast_to(p0 / p0.sum(), (M, d)).copy() if with_jump else np.broadcast_to(p0, (M, d)).copy()
    alive = np.ones(M, dtype=bool)
    lost_at = np.full(M, np.nan)

    rec_stride = icfg.effective_record_stride
    n_rec = n // rec_stride + 1
    pops = np.zeros((M, n_rec, d))
    surv = np.zeros((M, n_rec))
    dq = np.zeros((M, n))

    def report_p():
        return p * alive[:, None] if with_jump else p

    pops[:, 0] = report_p()
    surv[:, 0] = alive.astype(float) if with_jump else p.sum(axis=1)

    for k in range(n):
        g = gidx[k]
        f0 = so.f0[g]
        hop, hop_out, B = so.hop[g], so.hop_out[g], so.B[g]
        flow = p @ hop.T - hop_out[None, :] * p
        mean_f = p @ f0 if with_jump else (p @ f0) / np.maximum(p.sum(axis=1), 1e-300)
        if with_jump:
            bdot = p @ B
            drift = flow - B[None, :] * p + bdot[:, None] * p
        else:
            drift = flow - B[None, :] * p
        noise = 2 * sqg * p * (f0[None, :] - mean_f[:, None])
        p_new = p + drift * dt + noise * dW[:, k, None]

        if p_new.min() < -1e-6:
            raise NumericalError(
                f"negative population excursion {p_new.min():.2e} at step {k}; reduce dt"
            )
        mass = p_new.sum(axis=1)
        p_new = np.clip(p_new, 0.0, None)
        clipped = p_new.sum(axis=1)
        scale = np.where(clipped > 0, mass / np.maximum(clipped, 1e-300), 0.0)
        p = p_new * np.clip(scale, 0.0, None)[:, None]
        if with_jump:
            tot = p.sum(axis=1)
            p = p / np.maximum(tot, 1e-300)[:, None]
            hazard = (p @ B) * dt
            dying = alive & (dU[:, k] < hazard)
            alive &= ~dying
            lost_at[dying] = (k + 1) * dt

        rep = report_p()
        dq[:, k] = 2 * sqg * (rep @ f0) * dt + dW[:, k]
        if (k + 1) % rec_stride == 0:
            kr = (k + 1) // rec_stride
            pops[:, kr] = rep
            surv[:, kr] = alive.astype(float) if with_jump else p.sum(axis=1)

    return _package(icfg, indices, dq, pops, surv, lost_at, None, d,
                    mode="sre", gamma=gamma,
                    z_start=protocol.z_start, z_end=protocol.z_end,
                    duration=protocol.duration, repeats=protocol.repeats)


# ---------------------------------------------------------------------------
# public entry points

def _run_chunked(core, n_traj: int, threads: int):
    """Run the batched core over fixed-size chunks of trajectory indices.

    The chunk size is a constant, so results are bit-identical for any
    thread count; threads only consume chunks concurrently.
    """
    chunks = [np.arange(i, min(i + CHUNK, n_traj)) for i in range(0, n_traj, CHUNK)]
    if threads <= 1 or len(chunks) == 1:
        parts = [core(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(core, chunks))
    out = []
    for part in parts:
        out.extend(part)
    return out


def movie_ensemble(rho0: DensityOperator, ops: ModelOperators, params: MicroscopeParams,
                   icfg: IntegratorConfig, n_traj: int, threads: int = 1,
                   with_hamiltonian: bool = True) -> list[Trajectory]:
    return _run_chunked(
        lambda idx: _movie_core(rho0, ops, params, icfg, idx, with_hamiltonian),
        n_traj, threads)


def run_movie_sme(rho0: DensityOperator, ops: ModelOperators, params: MicroscopeParams,
                  icfg: IntegratorConfig, with_hamiltonian: bool = True) -> Trajectory:
    return movie_ensemble(rho0, ops, params, icfg, 1, 1, with_hamiltonian)[0]


def scan_ensemble(rho0: DensityOperator, params: MicroscopeParams, protocol: ScanProtocol,
                  icfg: IntegratorConfig, n_traj: int, threads: int = 1,
                  scan_ops: ScanOperators | None = None, n_grid: int = 256,
                  with_hamiltonian: bool = True) -> list[Trajectory]:
    if scan_ops is None:
        basis = BasisSpec(rho0.matrix.shape[0])
        scan_ops = build_scan_operators(params, basis, min(protocol.z_start, protocol.z_end),
                                        max(protocol.z_start, protocol.z_end), n_grid)
    return _run_chunked(
        lambda idx: _scan_core(rho0, scan_ops, protocol, icfg, idx, with_hamiltonian),
        n_traj, threads)


def run_scan_sme(rho0: DensityOperator, params: MicroscopeParams, protocol: ScanProtocol,
                 icfg: IntegratorConfig, **kw) -> Trajectory:
    return scan_ensemble(rho0, params, protocol, icfg, 1, 1, **kw)[0]


def full_ensemble(rho0_joint: DensityOperator, ops: ModelOperators, params: MicroscopeParams,
                  icfg: IntegratorConfig, n_traj: int, threads: int = 1,
                  with_hamiltonian: bool = True) -> list[Trajectory]:
    basis = rho0_joint.basis
    return _run_chunked(
        lambda idx: _full_core(rho0_joint, ops, params, icfg, idx, basis, with_hamiltonian),
        n_traj, threads)


def run_full_sme(rho0_joint: DensityOperator, ops: ModelOperators, params: MicroscopeParams,
                 icfg: IntegratorConfig, with_hamiltonian: bool = True) -> Trajectory:
    return full_ensemble(rho0_joint, ops, params, icfg, 1, 1, with_hamiltonian)[0]


def sre_ensemble(p0, params: MicroscopeParams, protocol: ScanProtocol,
                 icfg: IntegratorConfig, n_traj: int, threads: int = 1,
                 scan_ops: ScanOperators | None = None, n_grid: int = 256) -> list[Trajectory]:
    if scan_ops is None:
        basis = BasisSpec(len(p0))
        scan_ops = build_scan_operators(params, basis, min(protocol.z_start, protocol.z_end),
                                        max(protocol.z_start, protocol.z_end), n_grid)
    return _run_chunked(
        lambda idx: _sre_core(p0, scan_ops, protocol, icfg, idx),
        n_traj, threads)


def run_sre(p0, params: MicroscopeParams, protocol: ScanProtocol,
            icfg: IntegratorConfig, **kw) -> Trajectory:
    return sre_ensemble(p0, params, protocol, icfg, 1, 1, **kw)[0]


def run_lindblad(rho0: DensityOperator, ops: ModelOperators, params: MicroscopeParams,
                 icfg: IntegratorConfig, with_hamiltonian: bool = True):
    """Deterministic (unconditional) master equation matching the movie SME
    with the measurement term dropped; the trace decays under loss.  RK4.
    Returns (times, list of state matrices) sampled every record_stride."""
    d = ops.basis.motional_dim
    F = ops.F.matrix
    F2 = F @ F
    gamma, gamma_sp = params.gamma, params.gamma_sp
    h = ops.h_atom
    gap = (h[:, None] - h[None, :]).astype(complex) if with_hamiltonian else None
    jump_ops = [(w, J.astype(complex)) for w, J in ops.lsp_jumps]
    loss_half = 0.5 * (sum(w * (J @ J) for w, J in jump_ops) + ops.lsp_loss) if gamma_sp > 0 else None

    def rhs(r):
        out = np.zeros_like(r)
        if gap is not None:
            out += -1j * gap * r
        out += gamma * (F @ r @ F - 0.5 * (F2 @ r + r @ F2))
        if gamma_sp > 0:
            for w, J in jump_ops:
                out += gamma_sp * w * (J @ r @ J)
            out += -gamma_sp * (loss_half @ r + r @ loss_half)
        return out

    rho = rho0.matrix.astype(complex).copy()
    n, dt = icfg.n_steps, icfg.dt
    rec_stride = icfg.effective_record_stride
    times = [0.0]
    states = [rho.copy()]
    for k in range(n):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (k + 1) % rec_stride == 0:
            times.append((k + 1) * dt)
            states.append(rho.copy())
    return np.array(times), states
