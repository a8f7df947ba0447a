"""Generic smoothed-Newton (Nash-Moser) iteration over the Fourier scale.

The engine is problem-agnostic: a `ProblemInterface` supplies the filtered
tendency G[t, u], a linearized solver, forcing and initial data, an
admissibility predicate, and the snapshot norm of the underlying scale.
The engine owns the schedule algebra (exponent selection), the initial
iterate, residual evaluation, the smoothed update loop

    u_{k+1} = u_k + S_{theta_k} v_k,      theta_{k+1} = theta_k^r,

where v_k solves the linearized problem with forcing -Phi_1(u_k) and
initial value u0 - u_k(0), and the per-iteration bookkeeping: the three
induction properties

    (i)_k   |u_k|_{E^{s+P}} <= theta_k^alpha,
    (ii)_k  |u_k|_{E^{s+D}} <= M,
    (iii)_k |v_k|_{E^{s+D}} <= theta_k^{-q},

the residual trace, and the initial-condition telescoping diagnostic.
"""
from __future__ import annotations

import csv
import json
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, DomainError, InfeasibleScheduleError
from .fourier_scale import (
    GridSpec,
    SpectralField,
    TrajectoryField,
    time_derivative,
    trajectory_norm,
)

__all__ = [
    "ScheduleParams",
    "IterationTrace",
    "ProblemInterface",
    "compute_schedule",
    "initial_iterate",
    "residual",
    "nash_moser_solve",
    "check_induction",
    "picard_solve",
    "smooth_trajectory",
]


# ------------------------------------------------------------------ schedule


@dataclass
class ScheduleParams:
    """Exponent schedule driving the smoothed iteration.

    delta/q/alpha/r are derived from the loss orders (m, d1, d1p) and the
    two working regularity offsets D < P by `compute_schedule`; p_min is the
    feasibility threshold for P. M (the uniform bound checked by property
    (ii)) is measured from the initial iterate at run time when left None.
    degenerate_alpha marks the boundary case delta = 0, where alpha = 0 and
    the r-interval lower endpoint collapses to 1.
    """

    m: float
    d1: float
    d1p: float
    D: float
    P: float
    s0: float
    s: float
    delta: float
    q: float
    alpha: float
    r: float
    theta0: float = 10.0
    M: float | None = None
    p_min: float = float("nan")
    margin: float = 0.5
    degenerate_alpha: bool = False

    @property
    def norm_indices(self) -> dict[str, float]:
        """The finite set of scale indices the iteration actually uses."""
        return {
            "s0+m": self.s0 + self.m,
            "s+d1p": self.s + self.d1p,
            "s+D-delta": self.s + self.D - self.delta,
            "s+D": self.s + self.D,
            "s+P": self.s + self.P,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: str | Path) -> Path:
        p = Path(path)
        p.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return p


def p_min_threshold(m: float, d1: float, d1p: float, D: float) -> tuple[float, float, float]:
    """Return (delta, q, P_min) for the given loss orders.

    P_min = delta + (D/q) * (3*delta + 2*q + 2*sqrt(2*delta*(delta+q))),
    the expanded square of delta + (D/q)*(sqrt(delta) + sqrt(2(delta+q)))^2;
    the expanded form keeps perfect-square radicands exact in floating
    point (the reference shallow-water set gives exactly 38).
    """
    delta = max(d1, d1p + m)
    q = D - m - d1p
    if q <= 0.0:
        raise InfeasibleScheduleError(
            f"need D > m + d1p for a positive gain exponent; got q = {q:g}"
        )
    if D <= delta:
        raise InfeasibleScheduleError(f"need D > delta = {delta:g}; got D = {D:g}")
    p_min = delta + (D / q) * (3.0 * delta + 2.0 * q + 2.0 * math.sqrt(2.0 * delta * (delta + q)))
    return delta, q, p_min


def compute_schedule(
    m: float,
    d1: float,
    d1p: float,
    D: float,
    P: float,
    margin: float = 0.5,
    s0: float = 1.0,
    s: float | None = None,
    theta0: float = 10.0,
    M: float | None = None,
) -> ScheduleParams:
    """Derive the full exponent schedule from the loss orders.

    delta = max{d1, d1p + m}; q = D - m - d1p; alpha = delta +
    sqrt(2 delta (delta+q)). Feasibility requires P > P_min strictly;
    P = P_min is rejected (the contraction-rate interval for r is empty at
    the threshold). r is placed inside its open interval

        1 + delta/alpha  <  r  <  rbar = 2 mu q / (q + alpha (1 - mu)),

    mu = 1 - D/(P - delta), by convex combination with weight `margin`
    (0 = at the lower endpoint, 1 = at rbar; both endpoints excluded, so
    margin must lie strictly inside (0, 1)).
    """
    if not (0.0 < margin < 1.0):
        raise InfeasibleScheduleError(f"margin must lie in (0, 1), got {margin:g}")
    if theta0 <= 1.0:
        raise InfeasibleScheduleError(f"theta0 must exceed 1, got {theta0:g}")
    delta, q, p_min = p_min_threshold(m, d1, d1p, D)
    if not (P > p_min):
        raise InfeasibleScheduleError(
            f"P = {P:g} is infeasible: the schedule requires P > P_min = {p_min:.12g} "
            f"(delta = {delta:g}, q = {q:g})"
        )
    alpha = delta + math.sqrt(2.0 * delta * (delta + q))
    mu_hat = 1.0 - D / (P - delta)
    rbar = 2.0 * mu_hat * q / (q + alpha * (1.0 - mu_hat))
    degenerate = delta == 0.0
    r_lo = 1.0 if degenerate else 1.0 + delta / alpha
    assert r_lo < rbar, (
        f"empty contraction-rate interval ({r_lo}, {rbar}) despite P > P_min; "
        "schedule algebra violated"
    )
    r = (1.0 - margin) * r_lo + margin * rbar
    if s is None:
        s = s0 + m
    return ScheduleParams(
        m=m,
        d1=d1,
        d1p=d1p,
        D=D,
        P=P,
        s0=s0,
        s=s,
        delta=delta,
        q=q,
        alpha=alpha,
        r=r,
        theta0=theta0,
        M=M,
        p_min=p_min,
        margin=margin,
        degenerate_alpha=degenerate,
    )


# --------------------------------------------------------------------- trace


_CSV_COLUMNS = (
    "k",
    "theta_k",
    "norm_u_EsD",
    "norm_u_EsP",
    "norm_v_EsD",
    "residual_F",
    "prop_i",
    "prop_ii",
    "prop_iii",
)


@dataclass
class IterationTrace:
    """Per-iteration record of the smoothed Newton loop.

    The CSV export carries exactly the nine audit columns; everything else
    (the measured bound M, the initial-condition telescoping pairs, the
    schedule) travels in the JSON form only. norm_v_EsD is NaN on a row
    where no correction was computed (converged or aborted before the
    linear solve); property (iii) is vacuously true there.
    """

    theta: list[float] = field(default_factory=list)
    norm_u_EsD: list[float] = field(default_factory=list)
    norm_u_EsP: list[float] = field(default_factory=list)
    norm_v_EsD: list[float] = field(default_factory=list)
    residual_F: list[float] = field(default_factory=list)
    prop_i: list[bool] = field(default_factory=list)
    prop_ii: list[bool] = field(default_factory=list)
    prop_iii: list[bool] = field(default_factory=list)
    ic_lhs: list[float] = field(default_factory=list)
    ic_rhs: list[float] = field(default_factory=list)
    M_used: float | None = None
    schedule: dict | None = None
    stop_reason: str | None = None

    def __len__(self) -> int:
        return len(self.theta)

    def append_row(
        self,
        theta: float,
        norm_u_EsD: float,
        norm_u_EsP: float,
        residual_F: float,
        prop_i: bool,
        prop_ii: bool,
    ) -> None:
        self.theta.append(theta)
        self.norm_u_EsD.append(norm_u_EsD)
        self.norm_u_EsP.append(norm_u_EsP)
        self.residual_F.append(residual_F)
        self.prop_i.append(prop_i)
        self.prop_ii.append(prop_ii)
        self.norm_v_EsD.append(float("nan"))
        self.prop_iii.append(True)
        self.ic_lhs.append(float("nan"))
        self.ic_rhs.append(float("nan"))

    def set_correction(self, norm_v_EsD: float, prop_iii: bool) -> None:
        self.norm_v_EsD[-1] = norm_v_EsD
        self.prop_iii[-1] = prop_iii

    def set_ic_diagnostic(self, lhs: float, rhs: float) -> None:
        self.ic_lhs[-1] = lhs
        self.ic_rhs[-1] = rhs

    def rows(self) -> list[tuple]:
        return [
            (
                k,
                self.theta[k],
                self.norm_u_EsD[k],
                self.norm_u_EsP[k],
                self.norm_v_EsD[k],
                self.residual_F[k],
                int(self.prop_i[k]),
                int(self.prop_ii[k]),
                int(self.prop_iii[k]),
            )
            for k in range(len(self))
        ]

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> Path:
        p = Path(path)
        with p.open("w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            writer.writerows(self.rows())
        return p

    def to_dict(self) -> dict:
        return {
            "columns": list(_CSV_COLUMNS),
            "rows": [list(r) for r in self.rows()],
            "ic_lhs": self.ic_lhs,
            "ic_rhs": self.ic_rhs,
            "M_used": self.M_used,
            "schedule": self.schedule,
            "stop_reason": self.stop_reason,
        }

    def to_json(self, path: str | Path) -> Path:
        p = Path(path)
        p.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return p


# ----------------------------------------------------------------- interface


class ProblemInterface(ABC):
    """Capabilities the engine needs from a concrete evolution problem.

    States are packed spectral fields, trajectories are uniform-in-time
    stacks of them; both live in the problem's own working variables (for
    the shallow-water adapter these are the filtered variables, conjugated
    by the free wave group).
    """

    grid: GridSpec

    @abstractmethod
    def evaluate_G(self, t: float, u: SpectralField) -> SpectralField:
        """Filtered tendency G[t, u] so the equation reads du/dt + G = h."""

    @abstractmethod
    def linearize(self, uref: TrajectoryField) -> object:
        """Frozen coefficients of (an approximation of) the derivative of G
        along the reference trajectory; passed back to solve_linearized."""

    @abstractmethod
    def solve_linearized(
        self,
        coeffs: object,
        forcing: TrajectoryField | None,
        initial: SpectralField,
        T: float,
        dt: float,
    ) -> TrajectoryField:
        """Solve dv/dt + G_u[t] v = forcing, v(0) = initial, on [0, T]."""

    @abstractmethod
    def forcing(self, times: np.ndarray) -> TrajectoryField | None:
        """The filtered right-hand side sampled on `times`; None means 0."""

    @abstractmethod
    def initial_data(self) -> SpectralField:
        """The Cauchy datum the solution must attain at t = 0."""

    def admissible(self, u: TrajectoryField) -> tuple[bool, str]:
        """Domain restriction; default: everything admissible."""
        return True, ""

    def snapshot_norm(self, u: SpectralField, s: float) -> float:
        """Scale norm of one snapshot; defaults to the plain Sobolev norm."""
        from .fourier_scale import sobolev_norm

        return sobolev_norm(u, s)


# ----------------------------------------------------- iterate and residual


def _tendency_trajectory(problem: ProblemInterface, u: TrajectoryField) -> np.ndarray:
    out = np.empty_like(u.snapshots)
    for i in range(u.n_times):
        out[i] = problem.evaluate_G(float(u.times[i]), u.snapshot(i)).coefficients
    return out


def initial_iterate(problem: ProblemInterface, T: float, dt: float) -> TrajectoryField:
    """First iterate: the datum plus the time integral of the initial defect.

    u0(t) = g + int_0^t [h(t') - G(t', g)] dt', computed by the composite
    trapezoid rule on the storage grid, so u0(0) = g bit-for-bit and the
    residual's time derivative cancels the tendency at t = 0 up to
    quadrature error.
    """
    n_steps = max(1, int(round(T / dt)))
    if abs(n_steps * dt - T) > 1e-8 * max(T, 1.0):
        raise DomainError(f"dt={dt:g} does not divide the horizon T={T:g}")
    if n_steps < 2:
        raise DomainError("need at least 2 time steps (3 snapshots) on the horizon")
    times = np.linspace(0.0, T, n_steps + 1)
    g = problem.initial_data()
    h = problem.forcing(times)

    integrand = np.empty((n_steps + 1, *g.coefficients.shape), dtype=np.complex128)
    for i, t in enumerate(times):
        integrand[i] = -problem.evaluate_G(float(t), g).coefficients
    if h is not None:
        integrand += h.snapshots

    snaps = np.empty_like(integrand)
    snaps[0] = g.coefficients
    dt_out = T / n_steps
    acc = np.zeros_like(g.coefficients)
    for i in range(n_steps):
        acc = acc + 0.5 * dt_out * (integrand[i] + integrand[i + 1])
        snaps[i + 1] = g.coefficients + acc
    u0 = TrajectoryField(problem.grid, times, snaps)
    ok, why = problem.admissible(u0)
    if not ok:
        raise DomainError(f"initial iterate is inadmissible: {why}")
    return u0


def residual(
    problem: ProblemInterface,
    u: TrajectoryField,
    indices: Sequence[float],
    m: float = 0.0,
) -> tuple[TrajectoryField, SpectralField, dict[float, float]]:
    """Defect of a trajectory: (phi1, phi2, norm map).

    phi1(t) = du/dt + G[t, u] - h with the second-order discrete time
    derivative, phi2 = u(0) - g. The norm map sends each index sigma to
    the pair norm sup_t |phi1(t)|_{sigma} + |phi2|_{sigma + m}, where m is
    the problem's loss order (the datum part sits m higher on the scale).
    """
    h = problem.forcing(u.times)
    if h is not None and h.n_times != u.n_times:
        raise DomainError(
            f"forcing grid ({h.n_times}) does not match trajectory grid ({u.n_times})"
        )
    dudt = time_derivative(u)
    phi1_snaps = dudt.snapshots + _tendency_trajectory(problem, u)
    if h is not None:
        phi1_snaps = phi1_snaps - h.snapshots
    phi1 = TrajectoryField(u.grid, u.times.copy(), phi1_snaps)
    g = problem.initial_data()
    phi2 = SpectralField(u.grid, u.snapshots[0] - g.coefficients)
    norms: dict[float, float] = {}
    for sigma in indices:
        f_part = trajectory_norm(phi1, sigma, mode="XsT", snapshot_norm=problem.snapshot_norm)
        g_part = problem.snapshot_norm(phi2, sigma + m)
        norms[sigma] = f_part + g_part
    return phi1, phi2, norms


def smooth_trajectory(u: TrajectoryField, theta: float) -> TrajectoryField:
    """Sharp low-pass at scale theta applied to every snapshot in space."""
    if theta < 1.0:
        raise ValueError("smoothing scale theta must be >= 1")
    mask = u.grid.bracket_sq <= theta * theta
    return TrajectoryField(u.grid, u.times.copy(), u.snapshots * mask)


# ------------------------------------------------------------------- engine


def _norm_Es(
    problem: ProblemInterface, u: TrajectoryField, s: float, m: float
) -> float:
    return trajectory_norm(u, s, mode="Es", m=m, snapshot_norm=problem.snapshot_norm)


def _run_iteration(
    problem: ProblemInterface,
    schedule: ScheduleParams,
    theta0: float,
    u0: TrajectoryField,
    T: float,
    dt: float,
    k_max: int,
    target_residual: float,
) -> tuple[TrajectoryField, IterationTrace]:
    s, m = schedule.s, schedule.m
    sD = s + schedule.D
    sP = s + schedule.P
    res_index = s + schedule.d1p
    ic_index = s + schedule.d1p + m

    g = problem.initial_data()
    M = schedule.M
    if M is None:
        M = 2.0 * _norm_Es(problem, u0, sD, m) + 1.0

    trace = IterationTrace()
    trace.M_used = M
    sched_dict = schedule.to_dict()
    sched_dict["theta0"] = theta0
    sched_dict["M"] = M
    trace.schedule = sched_dict

    u = u0
    # theta grows doubly exponentially (theta_k = theta0^(r^k)); numpy
    # float64 semantics let late-k powers saturate to inf instead of raising,
    # and the induction comparisons stay meaningful (x <= inf, x <= 0.0).
    theta = np.float64(theta0)
    grow_count = 0
    prev_res = math.inf

    for k in range(k_max + 1):
        phi1, phi2, norms = residual(problem, u, [res_index], m)
        res = norms[res_index]
        nu_D = _norm_Es(problem, u, sD, m)
        nu_P = _norm_Es(problem, u, sP, m)
        with np.errstate(over="ignore"):
            theta_alpha = float(theta**np.float64(schedule.alpha))
        trace.append_row(
            theta=float(theta),
            norm_u_EsD=nu_D,
            norm_u_EsP=nu_P,
            residual_F=res,
            prop_i=nu_P <= theta_alpha,
            prop_ii=nu_D <= M,
        )

        if not math.isfinite(res) or (res > 10.0 * prev_res and math.isfinite(prev_res)):
            grow_count += 1
            if not math.isfinite(res) or grow_count >= 3:
                trace.stop_reason = "diverged"
                raise DivergenceError(
                    f"residual grew from {prev_res:.3e} to {res:.3e} at iteration {k} "
                    f"({grow_count} consecutive growth events)",
                    trace=trace,
                )
        else:
            grow_count = 0
        prev_res = res

        if res <= target_residual:
            trace.stop_reason = "converged"
            return u, trace
        if k == k_max:
            trace.stop_reason = "k_max"
            return u, trace

        coeffs = problem.linearize(u)
        v = problem.solve_linearized(
            coeffs,
            -1.0 * phi1,
            SpectralField(u.grid, g.coefficients - u.snapshots[0]),
            T,
            dt,
        )
        nv_D = _norm_Es(problem, v, sD, m)
        with np.errstate(over="ignore"):
            theta_mq = float(theta ** np.float64(-schedule.q))
        trace.set_correction(nv_D, prop_iii=nv_D <= theta_mq)

        u_next = TrajectoryField(
            u.grid, u.times.copy(), u.snapshots + smooth_trajectory(v, theta).snapshots
        )
        ok, why = problem.admissible(u_next)
        if not ok:
            trace.stop_reason = "inadmissible"
            raise DomainError(
                f"iterate k={k + 1} left the admissible set: {why} "
                "(domain restriction violated)"
            )

        ic_lhs = problem.snapshot_norm(
            SpectralField(u.grid, u_next.snapshots[0] - g.coefficients), ic_index
        )
        ic_rhs = theta ** (m + schedule.d1p - schedule.D) * problem.snapshot_norm(
            SpectralField(u.grid, v.snapshots[0]), sD
        )
        trace.set_ic_diagnostic(ic_lhs, ic_rhs)

        u = u_next
        with np.errstate(over="ignore"):
            theta = theta ** np.float64(schedule.r)

    raise AssertionError("unreachable")


def nash_moser_solve(
    problem: ProblemInterface,
    schedule: ScheduleParams,
    T: float,
    dt: float,
    k_max: int = 25,
    target_residual: float = 1e-8,
    max_retries: int = 3,
) -> tuple[TrajectoryField, IterationTrace]:
    """Run the smoothed iteration until the defect falls below the target.

    Starts from the trapezoid initial iterate; each pass solves the
    linearized problem with forcing -phi1(u_k) and initial defect
    g - u_k(0), applies the sharp low-pass at scale theta_k to the
    correction, and raises theta geometrically (theta_{k+1} = theta_k^r).
    On divergence (3 consecutive residual growths by more than 10x, or a
    non-finite residual) the run restarts with theta0 doubled, up to
    `max_retries` times, before the divergence error (trace attached)
    propagates.
    """
    u0 = initial_iterate(problem, T, dt)
    last_err: DivergenceError | None = None
    for attempt in range(max_retries + 1):
        theta0 = schedule.theta0 * 2.0**attempt
        try:
            return _run_iteration(
                problem, schedule, theta0, u0, T, dt, k_max, target_residual
            )
        except DivergenceError as err:
            last_err = err
    assert last_err is not None
    raise last_err


def check_induction(trace: IterationTrace, schedule: ScheduleParams) -> dict:
    """Re-evaluate the three induction inequalities from the logged numbers.

    Returns per-k boolean lists plus the first failing iteration for each
    property (None when it never fails). Rows without a correction are
    vacuously true for property (iii).
    """
    n = len(trace)
    with np.errstate(over="ignore"):
        prop_i = [
            trace.norm_u_EsP[k] <= float(np.float64(trace.theta[k]) ** schedule.alpha)
            for k in range(n)
        ]
        M = trace.M_used if trace.M_used is not None else math.inf
        prop_ii = [trace.norm_u_EsD[k] <= M for k in range(n)]
        prop_iii = [
            math.isnan(trace.norm_v_EsD[k])
            or trace.norm_v_EsD[k] <= float(np.float64(trace.theta[k]) ** (-schedule.q))
            for k in range(n)
        ]

    def first_failure(flags: list[bool]) -> int | None:
        for k, ok in enumerate(flags):
            if not ok:
                return k
        return None

    return {
        "prop_i": prop_i,
        "prop_ii": prop_ii,
        "prop_iii": prop_iii,
        "first_failure": {
            "prop_i": first_failure(prop_i),
            "prop_ii": first_failure(prop_ii),
            "prop_iii": first_failure(prop_iii),
        },
    }


def picard_solve(
    problem: ProblemInterface,
    T: float,
    dt: float,
    k_max: int = 25,
    target_residual: float = 1e-8,
    s_index: float | None = None,
    m: float = 0.0,
) -> tuple[TrajectoryField, list[float]]:
    """Unsmoothed fixed-point baseline: u_{k+1} = u_k + v_k.

    Identical plumbing to the smoothed loop but with no low-pass and no
    theta schedule, provided as a contrast baseline: with derivative loss
    in the tendency the correction's high modes are never tamed and the
    defect history need not decrease. Returns the last iterate and the
    residual history (measured at `s_index`, default the plain working
    index 2).
    """
    sigma = 2.0 if s_index is None else s_index
    u = initial_iterate(problem, T, dt)
    g = problem.initial_data()
    history: list[float] = []
    for k in range(k_max + 1):
        phi1, phi2, norms = residual(problem, u, [sigma], m)
        res = norms[sigma]
        history.append(res)
        if not math.isfinite(res) or (
            len(history) >= 4
            and all(
                history[-j] > 10.0 * history[-j - 1] and math.isfinite(history[-j - 1])
                for j in (1, 2, 3)
            )
        ):
            raise DivergenceError(
                f"unsmoothed iteration diverged at k={k} (residual {res:.3e})",
                trace=history,
            )
        if res <= target_residual or k == k_max:
            return u, history
        coeffs = problem.linearize(u)
        v = problem.solve_linearized(
            coeffs,
            -1.0 * phi1,
            SpectralField(u.grid, g.coefficients - u.snapshots[0]),
            T,
            dt,
        )
        u = TrajectoryField(u.grid, u.times.copy(), u.snapshots + v.snapshots)
        ok, why = problem.admissible(u)
        if not ok:
            raise DomainError(f"unsmoothed iterate k={k + 1} left the admissible set: {why}")
    raise AssertionError("unreachable")
