import dataclasses

import numpy as np
import pytest

from atomscope.focus import design_for_sigma
from atomscope.hilbert import BasisSpec, coherent_density, fock_density, thermal_populations, thermal_state, tensor_with_vacuum
from atomscope.model import MicroscopeParams, assemble_model, build_scan_operators
from atomscope.trajectory import (IntegratorConfig, ScanProtocol, movie_ensemble,
                                  run_full_sme, run_lindblad, run_movie_sme,
                                  run_scan_sme, run_sre, scan_ensemble,
                                  sre_ensemble, trajectory_rng)

K0 = 0.5


def make_setup(gamma=1.0, C=np.inf, kok=50.0, dim=10, sigma=0.5, ratio=1.0 / 3,
               z0=0.0, window=11.0):
    fc = design_for_sigma(sigma, ratio, K0, window=window, z0=z0)
    params = MicroscopeParams(gamma=gamma, cooperativity=C, kappa_over_omega=kok,
                              focus=fc)
    basis = BasisSpec(dim)
    ops = assemble_model(params, basis, domain=(-9, 9))
    return params, basis, ops


def test_guards():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.05, t_end=1.0)  # omega guard
    params, basis, ops = make_setup(gamma=100.0)
    rho0 = fock_density(0, basis)
    with pytest.raises(ValueError, match="guard"):
        run_movie_sme(rho0, ops, params, IntegratorConfig(dt=0.01, t_end=0.1))


def test_free_evolution_of_eigenstate():
    params, basis, ops = make_setup(gamma=0.0)
    icfg = IntegratorConfig(dt=0.01, t_end=4.0, seed=5)
    tr = run_movie_sme(fock_density(0, basis), ops, params, icfg)
    assert np.abs(tr.populations - tr.populations[0]).max() < 1e-12
    g = trajectory_rng(5, 0)
    dW = g.standard_normal(icfg.n_steps) * np.sqrt(icfg.dt)
    assert np.array_equal(tr.dq, dW)
    assert np.all(tr.survival == 1.0)


def test_determinism_and_stream_independence():
    params, basis, ops = make_setup(gamma=2.0)
    icfg = IntegratorConfig(dt=0.005, t_end=1.0, seed=9)
    a = run_movie_sme(coherent_density(1.5, basis), ops, params, icfg)
    b = run_movie_sme(coherent_density(1.5, basis), ops, params, icfg)
    assert np.array_equal(a.dq, b.dq)
    assert np.array_equal(a.populations, b.populations)
    ens = movie_ensemble(coherent_density(1.5, basis), ops, params, icfg, 3)
    assert np.array_equal(ens[0].dq, a.dq)
    assert not np.array_equal(ens[1].dq, ens[2].dq)


def test_thread_count_independence():
    params, basis, ops = make_setup(gamma=1.0, dim=6)
    icfg = IntegratorConfig(dt=0.01, t_end=0.5, seed=3)
    rho0 = thermal_state(1.0, basis)
    import atomscope.trajectory as tj
    old = tj.CHUNK
    try:
        tj.CHUNK = 2  # force multiple chunks
        one = movie_ensemble(rho0, ops, params, icfg, 5, threads=1)
        four = movie_ensemble(rho0, ops, params, icfg, 5, threads=4)
    finally:
        tj.CHUNK = old
    for t1, t4 in zip(one, four):
        assert np.array_equal(t1.dq, t4.dq)
        assert np.array_equal(t1.populations, t4.populations)


def test_innovation_consistency():
    # dq minus the recorded signal reproduces the raw normal stream
    params, basis, ops = make_setup(gamma=2.0)
    icfg = IntegratorConfig(dt=0.004, t_end=1.0, seed=21)
    tr = run_movie_sme(coherent_density(1.0, basis), ops, params, icfg)
    g = trajectory_rng(21, 0)
    dW = g.standard_normal(icfg.n_steps) * np.sqrt(icfg.dt)
    signal = tr.dq - dW
    assert np.abs(signal).max() < 2 * np.sqrt(params.gamma) * 2.0 * icfg.dt
    assert np.abs(signal).max() > 0  # there is a signal
    # and the signal is exactly 2 sqrt(gamma) <F> dt at each step
    assert np.all(signal > -1e-12)


def test_trace_preserved_without_loss():
    params, basis, ops = make_setup(gamma=2.0, C=np.inf)
    icfg = IntegratorConfig(dt=0.005, t_end=5.0, seed=2)
    tr = run_movie_sme(thermal_state(1.0, basis), ops, params, icfg)
    sums = tr.populations.sum(axis=1)
    assert np.abs(sums - 1.0).max() < 1e-8 * icfg.t_end
    assert np.all(tr.survival == 1.0)


def test_martingale_of_secular_expectation():
    # with measurement only (H commutes with f^(0)), E[<f0>] is conserved
    params, basis, ops = make_setup(gamma=4.0, kok=1e-6, dim=8)
    so = build_scan_operators(params, basis, 0.7, 0.7, n_grid=1)
    protocol = ScanProtocol(0.7, 0.7, 6.0)
    icfg = IntegratorConfig(dt=0.004, t_end=6.0, seed=13, record_stride=25)
    trajs = scan_ensemble(thermal_state(1.0, basis), params, protocol, icfg, 128,
                          scan_ops=so)
    f0 = so.f0[0]
    start = np.array([t.populations[0] @ f0 for t in trajs])
    end = np.array([t.populations[-1] @ f0 for t in trajs])
    diff = end.mean() - start.mean()
    stderr = end.std(ddof=1) / np.sqrt(len(end))
    assert abs(diff) < 3 * stderr


def test_scan_static_eigenstate_frozen():
    params, basis, ops = make_setup(gamma=5.0, kok=1e-6, dim=10, ratio=1.0)
    so = build_scan_operators(params, basis, 1.0, 1.0, n_grid=1)
    protocol = ScanProtocol(1.0, 1.0, 10.0)
    icfg = IntegratorConfig(dt=0.002, t_end=10.0, seed=3)
    tr = run_scan_sme(fock_density(1, basis), params, protocol, icfg, scan_ops=so)
    assert np.abs(tr.populations[:, 1] - 1.0).max() < 1e-3
    mean_current = tr.dq.sum() / icfg.t_end
    expected = 2 * np.sqrt(params.gamma) * so.f0[0, 1]
    # time-averaged shot noise has std 1/sqrt(T)
    assert abs(mean_current - expected) < 3 / np.sqrt(icfg.t_end)


def test_sre_frozen_when_diagonal_equal():
    params, basis, ops = make_setup(gamma=5.0, kok=0.1, dim=6)
    so = build_scan_operators(params, basis, 0.0, 0.0, n_grid=1)
    so.f0[:] = 0.3
    so.hop[:] = 0.0
    so.hop_out[:] = 0.0
    so.B[:] = 0.0
    protocol = ScanProtocol(0.0, 0.0, 5.0)
    p0 = thermal_populations(1.0, 6)
    tr = run_sre(p0, params, protocol, IntegratorConfig(dt=0.01, t_end=5.0, seed=1),
                 scan_ops=so)
    assert np.abs(tr.populations - p0).max() < 1e-12


def test_sre_born_rule_collapse():
    params, basis, ops = make_setup(gamma=20.0, kok=1e-6, dim=8, ratio=1.0)
    so = build_scan_operators(params, basis, 0.6, 0.6, n_grid=1)
    so.hop[:] = 0.0
    so.hop_out[:] = 0.0
    protocol = ScanProtocol(0.6, 0.6, 80.0)
    p0 = thermal_populations(1.0, 8)
    icfg = IntegratorConfig(dt=0.002, t_end=80.0, seed=17, record_stride=100)
    trajs = sre_ensemble(p0, params, protocol, icfg, 256, scan_ops=so)
    finals = np.stack([t.populations[-1] for t in trajs])
    # a static focus cannot distinguish states with (accidentally) equal
    # f_nn -- here (2, 4) -- so a few runs linger below full purity
    collapsed = finals.max(axis=1) > 0.9
    assert collapsed.mean() > 0.85
    assert (finals.max(axis=1) > 0.8).mean() == 1.0
    freq = np.bincount(finals.argmax(axis=1), minlength=8) / len(trajs)
    for n in range(4):
        se = np.sqrt(p0[n] * (1 - p0[n]) / len(trajs))
        assert abs(freq[n] - p0[n]) < 3.5 * se, f"n={n}"


def test_sre_purity_growth():
    params, basis, ops = make_setup(gamma=10.0, kok=1e-6, dim=6, ratio=1.0)
    so = build_scan_operators(params, basis, 0.6, 0.6, n_grid=1)
    so.hop[:] = 0.0
    so.hop_out[:] = 0.0
    protocol = ScanProtocol(0.6, 0.6, 8.0)
    p0 = thermal_populations(1.0, 6)
    icfg = IntegratorConfig(dt=0.004, t_end=8.0, seed=23, record_stride=50)
    trajs = sre_ensemble(p0, params, protocol, icfg, 128, scan_ops=so)
    purity = np.stack([np.sum(t.populations**2, axis=1) for t in trajs]).mean(axis=0)
    assert np.all(np.diff(purity) > -5e-3)
    assert purity[-1] > purity[0]


def test_loss_modes_agree_in_ensemble_mean():
    params, basis, ops = make_setup(gamma=4.0, C=3.0, kok=50.0, dim=8)
    icfg_j = IntegratorConfig(dt=0.004, t_end=3.0, seed=31, loss_mode="jump",
                              record_stride=50)
    icfg_d = dataclasses.replace(icfg_j, loss_mode="decay")
    rho0 = coherent_density(1.2, basis)
    jump = movie_ensemble(rho0, ops, params, icfg_j, 256)
    decay = movie_ensemble(rho0, ops, params, icfg_d, 256)
    sj = np.stack([t.survival for t in jump]).mean(axis=0)
    sd = np.stack([t.survival for t in decay]).mean(axis=0)
    se = np.stack([t.survival for t in jump]).std(axis=0, ddof=1)[-1] / 16
    assert sd[-1] < 1.0 - 3 * se  # loss actually happened
    assert abs(sj[-1] - sd[-1]) < 4 * max(se, 1e-3)
    assert tuple(t.lost_at is not None for t in jump).count(True) > 0


def test_survival_nonincreasing():
    params, basis, ops = make_setup(gamma=4.0, C=2.0, kok=50.0, dim=8)
    icfg = IntegratorConfig(dt=0.004, t_end=3.0, seed=7, loss_mode="decay")
    tr = run_movie_sme(coherent_density(1.0, basis), ops, params, icfg)
    assert np.all(np.diff(tr.survival) <= 1e-9)


def test_full_model_no_coupling_gives_vacuum():
    params, basis, ops = make_setup(gamma=0.0, kok=10.0, dim=4)
    bfull = BasisSpec(4, cavity_dim=3)
    rho0 = tensor_with_vacuum(fock_density(0, basis), bfull)
    icfg = IntegratorConfig(dt=0.005, t_end=1.0, seed=11)
    tr = run_full_sme(rho0, ops, params, icfg)
    g = trajectory_rng(11, 0)
    dW = g.standard_normal(icfg.n_steps) * np.sqrt(icfg.dt)
    assert np.allclose(tr.dq, dW, atol=1e-12)
    assert np.abs(tr.populations[-1] - tr.populations[0]).max() < 1e-10


def test_full_model_requires_cavity():
    params, basis, ops = make_setup(gamma=1.0, kok=10.0, dim=4)
    rho0 = fock_density(0, basis)
    with pytest.raises(ValueError, match="cavity"):
        run_full_sme(rho0, ops, params, IntegratorConfig(dt=0.005, t_end=0.1))


def test_heun_close_to_euler_mean():
    params, basis, ops = make_setup(gamma=2.0, dim=8)
    rho0 = coherent_density(1.0, basis)
    icfg_e = IntegratorConfig(dt=0.004, t_end=1.5, seed=41, record_stride=25)
    icfg_h = dataclasses.replace(icfg_e, scheme="heun_predictor_corrector")
    te = movie_ensemble(rho0, ops, params, icfg_e, 128)
    th = movie_ensemble(rho0, ops, params, icfg_h, 128)
    pe = np.stack([t.populations[-1] for t in te]).mean(axis=0)
    ph = np.stack([t.populations[-1] for t in th]).mean(axis=0)
    assert np.abs(pe - ph).max() < 0.02


def test_unconditional_mean_matches_lindblad_small():
    params, basis, ops = make_setup(gamma=2.0, dim=8)
    rho0 = coherent_density(1.0, basis)
    M = 128
    icfg = IntegratorConfig(dt=0.004, t_end=2.0, seed=51, record_stride=100,
                            snapshot_stride=500)
    trajs = movie_ensemble(rho0, ops, params, icfg, M)
    from atomscope.analysis import ensemble_average_state
    from atomscope.hilbert import trace_distance
    avg = ensemble_average_state(trajs, 2.0)
    times, states = run_lindblad(rho0, ops, params,
                                 IntegratorConfig(dt=0.004, t_end=2.0, record_stride=100))
    dist = trace_distance(avg, states[-1])
    assert dist < 4 / np.sqrt(M)


def test_scan_protocol_sawtooth():
    p = ScanProtocol(-4.0, 4.0, 10.0, repeats=3)
    assert np.isclose(p.z0_at(0.0), -4.0)
    assert np.isclose(p.z0_at(5.0), 0.0)
    assert np.isclose(p.z0_at(10.0 + 2.5), -2.0)
    assert np.isclose(p.z0_at(30.0), 4.0)


def test_serialization_round_trip(tmp_path):
    params, basis, ops = make_setup(gamma=1.0, dim=4)
    icfg = IntegratorConfig(dt=0.01, t_end=0.5, seed=1)
    tr = run_movie_sme(fock_density(0, basis), ops, params, icfg)
    path = tmp_path / "traj.tsv"
    tr.to_text(path)
    body = path.read_text().splitlines()
    assert body[0].startswith("#") and "seed=1" in body[0]
    data = np.loadtxt(path)
    assert data.shape == (51, 3 + 4)
    assert np.allclose(data[:, 0], tr.pop_times)
    assert np.allclose(data[1:, 1], tr.dq.reshape(-1))  # stride 1: raw increments
