"""Schedule arithmetic and the smoothed-Newton engine on closed-form toys."""
import json
import math

import numpy as np
import pytest

from nmshallow.errors import InfeasibleScheduleError
from nmshallow.fourier_scale import (
    GridSpec,
    SpectralField,
    TrajectoryField,
    trajectory_norm,
)
from nmshallow.nash_moser import (
    IterationTrace,
    ProblemInterface,
    check_induction,
    compute_schedule,
    initial_iterate,
    nash_moser_solve,
    p_min_threshold,
    picard_solve,
    residual,
    smooth_trajectory,
)

# ----------------------------------------------------------------- schedule


def test_schedule_gn_exact_constants():
    sch = compute_schedule(m=2, d1=2, d1p=0, D=4, P=38.5, margin=0.5)
    assert sch.delta == 2.0
    assert sch.q == 2.0
    assert sch.alpha == 6.0
    assert sch.p_min == 38.0
    # r = (1/2) r_lo + (1/2) rbar with r_lo = 4/3 and rbar = 130/97
    assert abs(sch.r - 389 / 291) < 1e-15
    assert sch.s0 == 1.0 and sch.s == 3.0
    assert sch.norm_indices == {
        "s0+m": 3.0,
        "s+d1p": 3.0,
        "s+D-delta": 5.0,
        "s+D": 7.0,
        "s+P": 41.5,
    }


def test_schedule_threshold_with_irrational_root():
    d, q, p_min = p_min_threshold(0, 1, 0, 2)
    assert (d, q) == (1.0, 2.0)
    assert abs(p_min - (8 + 2 * math.sqrt(6))) < 1e-12


def test_schedule_degenerate_no_derivative_loss():
    sch = compute_schedule(m=0, d1=0, d1p=0, D=2, P=6.0)
    assert sch.degenerate_alpha
    assert sch.alpha == 0.0 and sch.delta == 0.0
    assert abs(sch.r - 7 / 6) < 1e-15  # r_lo = 1, rbar = 4/3, margin 1/2


def test_schedule_infeasible():
    with pytest.raises(InfeasibleScheduleError) as exc:
        compute_schedule(2, 2, 0, 4, 38.0)  # P must exceed the threshold
    assert "38" in str(exc.value)
    with pytest.raises(InfeasibleScheduleError):
        compute_schedule(2, 2, 0, 2, 50.0)  # q = D - m - d1p = 0


def test_schedule_parameter_validation():
    for margin in (0.0, 1.0, -0.2):
        with pytest.raises(InfeasibleScheduleError):
            compute_schedule(2, 2, 0, 4, 38.5, margin=margin)
    with pytest.raises(InfeasibleScheduleError):
        compute_schedule(2, 2, 0, 4, 38.5, theta0=1.0)


def test_schedule_json_round_trip(tmp_path):
    sch = compute_schedule(2, 2, 0, 4, 38.5, margin=0.5, theta0=10.0)
    p = sch.to_json(tmp_path / "sched.json")
    loaded = json.loads(p.read_text())
    assert loaded["r"] == sch.r
    assert loaded["p_min"] == 38.0
    assert loaded["theta0"] == 10.0


# -------------------------------------------------------------- toy problem
#
# du/dt + c du/dx = h on the circle: the tendency loses one derivative
# (m = 1) and the per-mode linearized flow is available in closed form, so
# the engine's bookkeeping can be audited against hand numbers.


class AdvectionProblem(ProblemInterface):
    def __init__(self, grid, c, g_coeffs):
        self.grid = grid
        self.c = c
        self._g = np.asarray(g_coeffs, dtype=np.complex128)
        self.ikx = 1j * np.broadcast_to(grid.wavenumbers()[0], grid.shape)

    def evaluate_G(self, t, u):
        return SpectralField(self.grid, self.c * self.ikx * u.coefficients)

    def linearize(self, uref):
        return None

    def solve_linearized(self, coeffs, forcing, initial, T, dt):
        # exact exponential-trapezoid rule per Fourier mode: integrates
        # piecewise-linear-in-time forcing with no quadrature error
        n = max(1, int(round(T / dt)))
        h = T / n
        z = -h * self.c * self.ikx[None]
        ez = np.exp(z)
        zs = np.where(z == 0, 1.0, z)
        small = np.abs(z) < 1e-4
        p1 = np.where(small, 1.0 + z / 2.0 + z * z / 6.0, (ez - 1.0) / zs)
        p2 = np.where(small, 0.5 + z / 6.0 + z * z / 24.0, (ez - 1.0 - z) / (zs * zs))
        out = np.empty((n + 1, *initial.coefficients.shape), dtype=np.complex128)
        out[0] = initial.coefficients
        f = forcing.snapshots if forcing is not None else np.zeros_like(out)
        for i in range(n):
            out[i + 1] = ez * out[i] + h * (p1 * f[i] + p2 * (f[i + 1] - f[i]))
        return TrajectoryField(self.grid, np.linspace(0.0, T, n + 1), out)

    def forcing(self, times):
        return None

    def initial_data(self):
        return SpectralField(self.grid, self._g)


class AdvectionForced(AdvectionProblem):
    """Forcing chosen so that u*(t) = g + t a + t^2 b solves the problem
    exactly, even through the second-order discrete time derivative."""

    def __init__(self, grid, c, g_coeffs, a, b):
        super().__init__(grid, c, g_coeffs)
        self.a = np.asarray(a, dtype=np.complex128)
        self.b = np.asarray(b, dtype=np.complex128)

    def forcing(self, times):
        snaps = np.stack(
            [
                self.a
                + 2.0 * t * self.b
                + self.c * self.ikx * (self._g + t * self.a + t * t * self.b)
                for t in times
            ]
        )
        return TrajectoryField(self.grid, np.asarray(times, float), snaps)


def _mode(grid, k, amp):
    c = np.zeros((1, grid.nodes_per_axis), dtype=np.complex128)
    c[0, k] = amp / 2
    c[0, -k] = amp / 2
    return c


@pytest.fixture(scope="module")
def toy_grid():
    return GridSpec(dimension=1, nodes_per_axis=64, domain_length=2 * math.pi)


@pytest.fixture(scope="module")
def toy_schedule():
    return compute_schedule(m=1, d1=1, d1p=0, D=3, P=20, margin=0.5, theta0=4.0)


def test_initial_iterate_starts_at_datum(toy_grid):
    gc = _mode(toy_grid, 12, 0.1)
    prob = AdvectionProblem(toy_grid, c=0.7, g_coeffs=gc)
    u0 = initial_iterate(prob, 1.0, 0.01)
    assert u0.n_times == 101
    assert np.array_equal(u0.snapshots[0], gc)
    # seed = g + integral of (h - G[g]); the integrand is constant here so
    # the trapezoid accumulation is exact: u0(t) = (1 - t c ik) g per mode
    assert u0.snapshots[-1][0, 12] == pytest.approx(0.05 * (1 - 8.4j), rel=1e-12)
    assert u0.snapshots[-1][0, -12] == pytest.approx(0.05 * (1 + 8.4j), rel=1e-12)


def test_residual_of_constant_iterate_frozen(toy_grid, toy_schedule):
    gc = _mode(toy_grid, 12, 0.1)
    prob = AdvectionProblem(toy_grid, c=0.7, g_coeffs=gc)
    u0 = initial_iterate(prob, 1.0, 0.01)
    _, phi2, norms = residual(prob, u0, [toy_schedule.s], m=toy_schedule.m)
    # single mode k=12, amplitude 0.1: |phi1|_{X^3 T} = 0.7 * 12 * <12>^3 * |g|_{L^2-ish}
    assert norms[toy_schedule.s] == pytest.approx(1813.4329839384495, rel=1e-13)
    assert not np.any(phi2.coefficients)


def test_engine_trace_and_first_step_bound(toy_grid, toy_schedule):
    sch = toy_schedule
    gc = _mode(toy_grid, 12, 0.1)
    prob = AdvectionProblem(toy_grid, c=0.7, g_coeffs=gc)
    u0 = initial_iterate(prob, 1.0, 0.01)
    phi1, _, norms0 = residual(prob, u0, [sch.s], m=sch.m)

    _, trace = nash_moser_solve(prob, sch, 1.0, 0.01, k_max=8, target_residual=1e-10)
    assert trace.stop_reason == "k_max"
    assert len(trace) == 9
    assert trace.residual_F[0] == pytest.approx(norms0[sch.s], rel=1e-13)

    # one corrective step must beat the tame first-step estimate
    bound = sch.theta0 ** (sch.m + sch.d1p - sch.D) * trajectory_norm(
        phi1, sch.s + sch.D - sch.m, mode="XsT"
    )
    assert bound == pytest.approx(1.643424e4, rel=1e-5)
    assert trace.residual_F[1] <= bound

    # theta schedule invariant: theta_k = theta0 ** (r ** k)
    for k in range(len(trace)):
        expect = sch.theta0 ** (sch.r**k)
        assert abs(trace.theta[k] - expect) <= 1e-12 * expect

    # this deliberately over-sized datum violates (i) and (iii) from the
    # start; the audit must say so rather than paper over it
    rep = check_induction(trace, sch)
    assert rep["first_failure"] == {"prop_i": 0, "prop_ii": None, "prop_iii": 0}


def test_engine_zero_residual_short_circuit(toy_grid, toy_schedule):
    gc = _mode(toy_grid, 12, 0.1)
    prob = AdvectionProblem(toy_grid, c=0.0, g_coeffs=gc)
    _, trace = nash_moser_solve(prob, toy_schedule, 1.0, 0.01, k_max=8, target_residual=1e-10)
    assert trace.stop_reason == "converged"
    assert len(trace) == 1
    assert math.isnan(trace.norm_v_EsD[0])
    rep = check_induction(trace, toy_schedule)
    assert rep["prop_iii"] == [True]


def test_engine_matches_unsmoothed_baseline_and_exact_solution(toy_grid, toy_schedule):
    g = _mode(toy_grid, 2, 0.3) + _mode(toy_grid, 3, 0.2)
    a = _mode(toy_grid, 1, 0.1) + _mode(toy_grid, 4, 0.05)
    b = _mode(toy_grid, 2, 0.07)
    prob = AdvectionForced(toy_grid, c=0.7, g_coeffs=g, a=a, b=b)
    T, dt = 1.0, 0.01

    u_nm, trace = nash_moser_solve(prob, toy_schedule, T, dt, k_max=20, target_residual=1e-11)
    assert trace.residual_F[0] == pytest.approx(7.325, rel=1e-3)
    assert min(trace.residual_F) <= 3e-6

    u_p, hist = picard_solve(
        prob, T, dt, k_max=20, target_residual=1e-11, s_index=toy_schedule.s, m=toy_schedule.m
    )
    assert float(np.max(np.abs(u_p.snapshots - u_nm.snapshots))) <= 1e-12

    times = np.linspace(0.0, T, int(T / dt) + 1)
    exact = np.stack([g + t * a + t * t * b for t in times])
    assert float(np.max(np.abs(u_nm.snapshots - exact))) <= 1e-8


def test_smooth_trajectory_is_snapshotwise_cutoff(toy_grid, rng):
    from nmshallow.fourier_scale import random_field, smooth

    snaps = np.stack(
        [random_field(toy_grid, 1, rng, amplitude=0.4, decay=1.5).coefficients for _ in range(3)]
    )
    traj = TrajectoryField(toy_grid, np.array([0.0, 0.5, 1.0]), snaps)
    out = smooth_trajectory(traj, 5.0)
    for i in range(3):
        ref = smooth(SpectralField(toy_grid, snaps[i]), 5.0)
        assert np.array_equal(out.snapshots[i], ref.coefficients)
    with pytest.raises(ValueError):
        smooth_trajectory(traj, 0.5)


# ------------------------------------------------------------ trace objects


def test_trace_csv_round_trip(tmp_path):
    tr = IterationTrace()
    tr.append_row(10.0, 1.5, 200.0, 0.25, True, True)
    tr.set_correction(0.01, True)
    tr.append_row(21.7, 1.6, 380.0, 0.03, True, True)
    tr.M_used = 2.0
    tr.stop_reason = "k_max"
    p = tr.to_csv(tmp_path / "trace.csv", header_comment="demo run")
    lines = p.read_text().splitlines()
    assert lines[0] == "# demo run"
    assert lines[1].startswith("k,theta_k,")
    assert len(lines) == 4
    row0 = lines[2].split(",")
    assert float(row0[1]) == 10.0 and float(row0[5]) == 0.25
    d = tr.to_dict()
    assert d["stop_reason"] == "k_max" and d["M_used"] == 2.0
    assert len(d["rows"]) == 2


def test_check_induction_planted_violation():
    sch = compute_schedule(2, 2, 0, 4, 38.5, theta0=10.0, M=2.0)
    tr = IterationTrace()
    tr.M_used = 2.0
    # k=0: all fine (theta=10, alpha=6 -> bound 1e6)
    tr.append_row(10.0, 1.0, 5.0e5, 1.0, True, True)
    tr.set_correction(1e-3, True)  # bound theta^-q = 1e-2
    # k=1: plant norm_u_EsD above M and a correction above theta^-q
    th1 = 10.0 ** sch.r
    tr.append_row(th1, 3.0, 1.0e6, 0.5, True, False)
    tr.set_correction(1.0, False)
    rep = check_induction(tr, sch)
    assert rep["prop_i"] == [True, True]
    assert rep["first_failure"]["prop_ii"] == 1
    assert rep["first_failure"]["prop_iii"] == 1
