import math

import numpy as np
import pytest

from eddyheat.eigen import principal_eigenvalue
from eddyheat.elliptic import DiffusivityTensor, assemble_diffusion
from eddyheat.grid import build_grid
from eddyheat.harness import cellular_fields
from eddyheat.spde import (
    ImplicitSolver,
    NoiseOperator,
    SpdeState,
    TimeStepConfig,
    drift_operator,
    energy_report,
    path_generator,
    simulate_paths,
    solve_effective,
    step,
)

KAPPA = 0.01


@pytest.fixture(scope="module")
def small():
    g = build_grid("square", 1 / 32)
    F = 0.05 * cellular_fields(g)
    T0 = np.sin(np.pi * g.x) * np.sin(2 * np.pi * g.y) + np.sin(np.pi * g.x) * np.sin(np.pi * g.y)
    T0 = np.where(g.interior, T0, 0.0)
    phi = np.where(g.interior, 1.0, 0.0)
    return g, F, T0, phi


def _run(small, ids, *, noise=True, T0=None, chunk=250, cfg=None, substeps=1):
    g, F, T0_, phi = small
    cfg = cfg or TimeStepConfig(dt=1e-3, t_end=0.02, seed=7, checkpoints=(0.01, 0.02))
    drift = drift_operator(g, KAPPA, F if noise else None)
    nz = NoiseOperator(g, F) if noise else None
    return simulate_paths(g, drift, nz, T0_ if T0 is None else T0, cfg, phi, ids, chunk=chunk, noise_substeps=substeps)


def test_timestep_config_validation():
    with pytest.raises(ValueError):
        TimeStepConfig(dt=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        TimeStepConfig(dt=0.1, t_end=1.0, checkpoints=(0.5, 0.25))
    with pytest.raises(ValueError):
        TimeStepConfig(dt=0.1, t_end=1.0, checkpoints=(0.55,))
    with pytest.raises(ValueError):
        TimeStepConfig(dt=0.1, t_end=1.0, seed=-1)
    assert TimeStepConfig(dt=0.1, t_end=1.0).refined(2).n_steps == 20


def test_zero_noise_matches_deterministic_solve(small):
    g, F, T0, phi = small
    cfg = TimeStepConfig(dt=1e-3, t_end=0.02, checkpoints=(0.02,))
    drift = drift_operator(g, KAPPA)
    solver = ImplicitSolver(drift, cfg.dt)
    state = SpdeState(0.0, g.restrict(T0))
    ref = g.restrict(T0)
    for _ in range(cfg.n_steps):
        state = step(state, solver, None, g)
        ref = solver.solve(ref)
    assert np.array_equal(state.T, ref)
    eff = solve_effective(g, drift, T0, cfg)
    assert np.array_equal(eff.states[-1], ref)
    ens = _run(small, [0, 1], noise=False, cfg=cfg)
    assert ens.phi_pairing[0, 0] == pytest.approx(eff.pairing(phi)[0], rel=1e-13)
    assert np.array_equal(ens.phi_pairing[0], ens.phi_pairing[1])


def test_single_step_on_eigenvector(small):
    g = small[0]
    op = assemble_diffusion(g, DiffusivityTensor(KAPPA))
    res = principal_eigenvalue(op)
    dt = 1e-2
    out = ImplicitSolver(op, dt).solve(res.eigenvector)
    assert np.allclose(out, res.eigenvector / (1 + dt * res.lam), rtol=1e-9, atol=1e-13)


def test_linearity_in_initial_data(small):
    g, F, T0, phi = small
    other = np.where(g.interior, g.x * (1 - g.x) * g.y * (1 - g.y), 0.0)
    a = _run(small, [3, 4]).phi_pairing
    b = _run(small, [3, 4], T0=other).phi_pairing
    c = _run(small, [3, 4], T0=2 * T0 - 3 * other).phi_pairing
    assert np.allclose(c, 2 * a - 3 * b, rtol=1e-10, atol=1e-13)


def test_reproducible_and_chunk_independent(small):
    a = _run(small, np.arange(6), chunk=6)
    b = _run(small, np.arange(6), chunk=2)
    c = _run(small, [4, 5])
    assert np.array_equal(a.phi_pairing, b.phi_pairing)
    assert np.array_equal(a.energy_integral, b.energy_integral)
    assert np.array_equal(a.phi_pairing[4:], c.phi_pairing)
    assert not np.array_equal(a.phi_pairing[0], a.phi_pairing[1])


def test_streams_keyed_by_seed_and_path():
    x = path_generator(1, 2).standard_normal(4)
    assert np.array_equal(x, path_generator(1, 2).standard_normal(4))
    assert not np.array_equal(x, path_generator(1, 3).standard_normal(4))
    assert not np.array_equal(x, path_generator(2, 2).standard_normal(4))


def test_velocity_vanishes_off_interior(small):
    g, F, _, _ = small
    v = NoiseOperator(g, F).velocity(np.ones((1, F.shape[1])))
    assert np.all(v[0][:, ~g.interior.reshape(g.shape)] == 0)


def test_energy_identity_without_noise(small):
    g, _, T0, _ = small
    ens = _run(small, [0], noise=False)
    n0 = g.h**2 * np.sum(T0**2)
    rep = energy_report(ens, n0, KAPPA)
    assert rep["violations"] == 0
    bal = ens.l2norm_sq[0, -1] + 2 * KAPPA * ens.energy_integral[0, -1]
    assert bal <= n0
    assert bal == pytest.approx(n0, rel=1e-2)


def test_mean_energy_balance_with_noise(small):
    g, _, T0, _ = small
    ens = _run(small, np.arange(200))
    n0 = g.h**2 * np.sum(T0**2)
    rep = energy_report(ens, n0, KAPPA)
    assert rep["violations"] == 0
    # the only loss is the implicit-Euler remainder, which is small at this dt
    assert abs(rep["balance_mean"][-1] - n0) < 5 * rep["balance_stderr"][-1] + 1e-2 * n0


def test_coupled_substeps_change_little(small):
    cfg = TimeStepConfig(dt=2e-3, t_end=0.02, seed=7, checkpoints=(0.02,))
    coarse = _run(small, np.arange(20), cfg=cfg, substeps=2)
    fine = _run(small, np.arange(20), cfg=cfg.refined(2))
    gap = np.abs(coarse.phi_pairing - fine.phi_pairing).max()
    assert gap < 0.05 * np.abs(fine.phi_pairing).max()


def test_effective_decay_of_first_mode():
    g = build_grid("square", 1 / 128)
    T0 = np.where(g.interior, np.sin(np.pi * g.x) * np.sin(np.pi * g.y), 0.0)
    cfg = TimeStepConfig(dt=1e-4, t_end=0.05, checkpoints=(0.05,))
    traj = solve_effective(g, DiffusivityTensor(KAPPA), T0, cfg)
    ratio = math.sqrt(traj.norm_sq()[-1] / (g.h**2 * np.sum(T0**2)))
    assert ratio == pytest.approx(math.exp(-KAPPA * 2 * math.pi**2 * 0.05), rel=2e-2)


def test_write_csv(tmp_path, small):
    ens = _run(small, [0, 1])
    ens.write_csv(tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "path_id,t,phi_pairing,l2norm_sq,energy_integral"
    assert len(lines) == 1 + 2 * 2
