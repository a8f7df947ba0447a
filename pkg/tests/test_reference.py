"""Direct nonlinear solver and the exact solitary-wave reference."""
import math

import numpy as np
import pytest

from nmshallow.errors import DomainError
from nmshallow.fourier_scale import (
    GridSpec,
    SpectralField,
    TrajectoryField,
    field_to_grid,
    random_field,
    sobolev_norm,
    zero_field,
)
from nmshallow.green_naghdi import GNState, PhysicalParams
from nmshallow.reference import manufactured_residual, mol_solve, serre_solitary_wave

MU = 0.1
EPS = math.sqrt(MU)
AMP = 0.2
# frozen closed-form constants of the amplitude-0.2 profile at mu = 0.1,
# eps = sqrt(mu)
C_WAVE = 1.0311379894094522
KAPPA = 0.66792675769115296
SPEED = 3.2607446284604497  # c / eps in the fast time variable


def _solitary_params(n=256, length=40.0, h0=0.5):
    grid = GridSpec(dimension=1, nodes_per_axis=n, domain_length=length)
    return PhysicalParams(mu=MU, eps=EPS, b=zero_field(grid), h0=h0)


# ------------------------------------------------------------ solitary wave


def test_solitary_closed_form_constants():
    assert math.sqrt(1.0 + EPS * AMP) == pytest.approx(C_WAVE, abs=1e-15)
    assert math.sqrt(3 * EPS * AMP / (4 * MU * (1 + EPS * AMP))) == pytest.approx(
        KAPPA, abs=1e-15
    )
    assert C_WAVE / EPS == pytest.approx(SPEED, abs=1e-14)


def test_solitary_profile_values():
    params = _solitary_params()
    state = serre_solitary_wave(params, AMP)
    grid = params.grid
    x = grid.axis_coordinates()
    zeta_want = AMP / np.cosh(KAPPA * (x - 20.0)) ** 2
    v_want = C_WAVE * zeta_want / (1.0 + EPS * zeta_want)
    assert np.max(np.abs(field_to_grid(state.zeta)[0] - zeta_want)) < 1e-13
    assert np.max(np.abs(field_to_grid(state.V)[0] - v_want)) < 1e-13


def test_solitary_rest_and_periodicity():
    params = _solitary_params()
    rest = serre_solitary_wave(params, 0.0)
    assert not np.any(rest.packed().coefficients)
    a = serre_solitary_wave(params, AMP, center=7.0)
    b = serre_solitary_wave(params, AMP, center=7.0 + params.grid.domain_length)
    assert np.max(np.abs(a.packed().coefficients - b.packed().coefficients)) < 1e-13
    # advancing time by one transit period returns the crest to its start
    period = params.grid.domain_length / SPEED
    c = serre_solitary_wave(params, AMP, t=period, center=7.0)
    assert np.max(np.abs(a.packed().coefficients - c.packed().coefficients)) < 1e-12


def test_solitary_domain_errors():
    params = _solitary_params()
    with pytest.raises(DomainError):
        serre_solitary_wave(params, -0.1)
    grid2 = GridSpec(dimension=2, nodes_per_axis=16, domain_length=40.0)
    p2 = PhysicalParams(mu=MU, eps=EPS, b=zero_field(grid2))
    with pytest.raises(DomainError):
        serre_solitary_wave(p2, AMP)
    grid = params.grid
    bumpy = PhysicalParams(
        mu=MU, eps=EPS, b=random_field(grid, 1, np.random.default_rng(0), amplitude=0.01)
    )
    with pytest.raises(DomainError):
        serre_solitary_wave(bumpy, AMP)


def test_solitary_is_manufactured_solution():
    # the traveling profile with its exact time derivative must annihilate
    # the slow-time residual rows to spectral accuracy
    params = _solitary_params(n=256)
    grid = params.grid
    times = np.array([0.0, 0.05, 0.1, 0.15])
    snaps, dsnaps = [], []
    ik = 1j * np.broadcast_to(grid.wavenumbers()[0], grid.shape)
    for t in times:
        u = serre_solitary_wave(params, AMP, t=float(t)).packed().coefficients
        snaps.append(u)
        dsnaps.append(-SPEED * ik * u)
    traj = TrajectoryField(grid, times, np.stack(snaps))
    dtraj = TrajectoryField(grid, times, np.stack(dsnaps))
    r1, r2 = manufactured_residual(params, traj, dudt=dtraj)
    worst = 0.0
    for i in range(4):
        worst = max(
            worst,
            sobolev_norm(SpectralField(grid, r1.snapshots[i]), 0.0),
            sobolev_norm(SpectralField(grid, r2.snapshots[i]), 0.0),
        )
    assert worst <= 1e-8


def test_manufactured_residual_validation(grid1d, params1d, rng):
    short = TrajectoryField(
        grid1d, np.array([0.0, 0.1, 0.2]), np.zeros((3, 2, 64), dtype=np.complex128)
    )
    with pytest.raises(DomainError):
        manufactured_residual(params1d, short)
    traj = TrajectoryField(
        grid1d, np.linspace(0.0, 0.3, 4), np.zeros((4, 2, 64), dtype=np.complex128)
    )
    bad_dudt = TrajectoryField(
        grid1d, np.linspace(0.0, 0.2, 3), np.zeros((3, 2, 64), dtype=np.complex128)
    )
    with pytest.raises(DomainError):
        manufactured_residual(params1d, traj, dudt=bad_dudt)


# --------------------------------------------------------- direct solver


def test_mol_rest_state_stays_zero(grid1d, params1d):
    params = PhysicalParams(mu=params1d.mu, eps=params1d.eps, b=zero_field(grid1d))
    rest = GNState(V=zero_field(grid1d, 1), zeta=zero_field(grid1d))
    sol = mol_solve(params, rest, 0.3, 0.03)
    assert not np.any(sol.snapshots)


def test_mol_conserves_mean_elevation(grid1d, params1d, state1d):
    sol, stats = mol_solve(params1d, state1d, 0.4, 0.02, return_stats=True)
    d = grid1d.dimension
    mean0 = sol.snapshots[0][d].flat[0]
    for i in range(sol.n_times):
        assert abs(sol.snapshots[i][d].flat[0] - mean0) < 1e-14
    assert stats["steps"] == 20
    assert stats["substeps_per_step"] >= 1
    assert stats["mass_solves"] > 0


def test_mol_rejects_non_divisor_dt(grid1d, params1d, state1d):
    with pytest.raises(DomainError):
        mol_solve(params1d, state1d, 0.4, 0.03)


def test_mol_depth_failure_carries_time(grid1d, params1d, rng):
    big = GNState(
        V=random_field(grid1d, 1, rng, amplitude=3.0, decay=4.0),
        zeta=random_field(grid1d, 1, rng, amplitude=3.0, decay=4.0),
    )
    with pytest.raises(DomainError) as exc:
        mol_solve(params1d, big, 0.4, 0.02)
    assert "t=" in str(exc.value)


def test_mol_fourth_order_self_convergence():
    grid = GridSpec(dimension=1, nodes_per_axis=32, domain_length=2 * math.pi)
    bathy = random_field(grid, 1, np.random.default_rng(5), amplitude=0.05, decay=5.0)
    params = PhysicalParams(mu=0.3, eps=0.5, b=bathy)
    data = GNState(
        V=random_field(grid, 1, np.random.default_rng(6), amplitude=0.08, decay=4.0),
        zeta=random_field(grid, 1, np.random.default_rng(7), amplitude=0.08, decay=4.0),
    )
    T = 0.4
    ref = mol_solve(params, data, T, 0.00125)
    errs = []
    for dtv in (0.02, 0.01):
        sol = mol_solve(params, data, T, dtv)
        errs.append(
            sobolev_norm(SpectralField(grid, sol.snapshots[-1] - ref.snapshots[-1]), 0.0)
        )
    assert 11.0 < errs[0] / errs[1] < 21.0


def test_mol_forcing_fn_matches_aligned_trajectory_at_low_order(grid1d, params1d, state1d, rng):
    # a forcing constant in time is represented exactly both ways
    f0 = random_field(grid1d, 2, rng, amplitude=0.05, decay=4.0).coefficients
    times = np.linspace(0.0, 0.2, 11)
    traj = TrajectoryField(grid1d, times, np.stack([f0] * 11))
    a = mol_solve(params1d, state1d, 0.2, 0.02, forcing=traj)
    b = mol_solve(params1d, state1d, 0.2, 0.02, forcing_fn=lambda t: f0)
    assert np.max(np.abs(a.snapshots - b.snapshots)) < 1e-12
