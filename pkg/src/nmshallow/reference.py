"""Independent reference solvers for cross-validation.

Three routes that do not go through the iterative scheme:

* `mol_solve` -- a direct method-of-lines integrator for the full
  nonlinear system in fast-time form,

      d/dt u + (1/eps) L u + F[u] = f(t),

  using the same integrating-factor RK4 machinery as the linear solver
  (exact free-wave conjugation, dispersive sub-step cap), so that the
  iterative solution can be checked against an entirely different
  solution path sharing only the spatial discretization.

* `serre_solitary_wave` -- the closed-form solitary wave of the fully
  nonlinear dispersive system over a flat bottom.  The profile constants
  are frozen from the symbolic derivation in
  ``scripts/derive_solitary_wave.py``; this module only evaluates them.

* `manufactured_residual` -- plugs an arbitrary discrete trajectory into
  the slow-time conservation form of the equations and returns both
  residual rows, for manufactured-solution and perturbation studies.
"""
from __future__ import annotations

import math

import numpy as np

from . import green_naghdi as gn
from ._accel import ACTIVE_BACKEND
from .errors import DomainError, StepSizeError
from .fourier_scale import (
    SpectralField,
    TrajectoryField,
    field_from_grid,
    time_derivative,
)
from .green_naghdi import GNState, PhysicalParams, depth_grid, nonlinear_F
from .linear_ivp import IVPData, _forcing_sampler, dispersive_dt_cap, evolve_packed

__all__ = [
    "mol_solve",
    "serre_solitary_wave",
    "manufactured_residual",
]


# ---------------------------------------------------------------- mol_solve


def mol_solve(
    params: PhysicalParams,
    u0: GNState,
    T: float,
    dt: float,
    forcing: TrajectoryField | None = None,
    forcing_fn=None,
    tol: float = 1e-12,
    return_stats: bool = False,
) -> TrajectoryField | tuple[TrajectoryField, dict]:
    """Direct nonlinear solve of d/dt u + (1/eps) L u + F[u] = f on [0, T].

    Integrates the filtered unknown w(t) = U(-t) u(t), for which

        d/dt w = U(-t) [ f(t) - F[U(t) w] ],

    by classical RK4 with the dispersive sub-step cap of the linear
    solver.  ``forcing`` is a trajectory aligned with the output grid
    (linearly interpolated at stages); ``forcing_fn`` is a callable
    t -> packed coefficient array evaluated exactly at each stage and
    takes precedence.  Output snapshots are in physical variables.

    The water depth is checked at every output step (and inside every
    elliptic solve); dropping to the admissibility floor aborts with a
    DomainError carrying the failure time.
    """
    grid = u0.grid
    d = grid.dimension
    eps = params.eps
    n_steps = max(1, int(round(T / dt)))
    dt_out = T / n_steps
    if abs(dt_out - dt) > 1e-8 * dt:
        raise DomainError(
            f"dt={dt:g} does not divide the horizon T={T:g} "
            f"(nearest uniform grid uses dt={dt_out:g})"
        )
    ivp = IVPData(initial=u0, horizon=T, dt=dt, forcing=forcing, forcing_fn=forcing_fn)
    sample_f = _forcing_sampler(ivp, grid, n_steps)

    cap = dispersive_dt_cap(params, grid)
    n_sub = max(1, int(math.ceil(dt_out / cap - 1e-12)))
    h = dt_out / n_sub

    solves0 = gn.CG_STATS["solves"]
    iters0 = gn.CG_STATS["iterations"]

    w = grid.project(u0.packed().coefficients)
    out = np.empty((n_steps + 1, d + 1, *grid.shape), dtype=np.complex128)
    out[0] = w

    def check_depth(phys_zeta: np.ndarray, t: float) -> None:
        hmin = float(np.min(depth_grid(params, phys_zeta)))
        if hmin <= params.h0:
            raise DomainError(
                f"water depth reached {hmin:.6g} at t={t:g}, at or below the "
                f"floor h0={params.h0:g}; the solution left the admissible set"
            )

    check_depth(w[d], 0.0)

    def rhs(t: float, w_arr: np.ndarray) -> np.ndarray:
        v_arr = evolve_packed(grid, eps, t, w_arr)
        state = GNState(
            V=SpectralField(grid, v_arr[:d]),
            zeta=SpectralField(grid, v_arr[d : d + 1]),
            t=t,
        )
        try:
            F = nonlinear_F(params, state, tol=tol)
        except DomainError as exc:
            raise DomainError(f"{exc} (while evaluating the tendency at t={t:g})") from exc
        phys = np.empty_like(w_arr)
        phys[:d] = -F.V.coefficients
        phys[d] = -F.zeta.coefficients[0]
        f_val = sample_f(t)
        if f_val is not None:
            phys += f_val
        return evolve_packed(grid, eps, -t, phys)

    norm_prev = float(np.linalg.norm(w))
    norm_floor = 1e-13 * (1.0 + norm_prev)
    for n in range(n_steps):
        t_n = n * dt_out
        for j in range(n_sub):
            t0 = t_n + j * h
            k1 = rhs(t0, w)
            k2 = rhs(t0 + 0.5 * h, w + (0.5 * h) * k1)
            k3 = rhs(t0 + 0.5 * h, w + (0.5 * h) * k2)
            k4 = rhs(t0 + h, w + h * k3)
            w = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_next = (n + 1) * dt_out
        norm_now = float(np.linalg.norm(w))
        if not math.isfinite(norm_now):
            raise StepSizeError(
                f"non-finite solution after step {n + 1} (t={t_next:g}); "
                f"reduce dt (current {dt_out:g}, {n_sub} internal sub-steps)"
            )
        if norm_prev > norm_floor and norm_now > 10.0 * norm_prev:
            raise StepSizeError(
                f"solution norm grew {norm_now / norm_prev:.2f}x in one step at "
                f"t={t_next:g}; the step size dt={dt_out:g} is unstable"
            )
        norm_prev = norm_now
        out[n + 1] = evolve_packed(grid, eps, t_next, w)
        check_depth(out[n + 1, d], t_next)

    times = np.linspace(0.0, T, n_steps + 1)
    solution = TrajectoryField(grid, times, out)
    if not return_stats:
        return solution
    stats = {
        "steps": n_steps,
        "substeps_per_step": n_sub,
        "dt_output": dt_out,
        "dt_internal": h,
        "mass_solves": gn.CG_STATS["solves"] - solves0,
        "mass_solve_iterations": gn.CG_STATS["iterations"] - iters0,
        "backend": ACTIVE_BACKEND,
    }
    return solution, stats


# ------------------------------------------------------- solitary reference


def serre_solitary_wave(
    params: PhysicalParams,
    amplitude: float,
    t: float = 0.0,
    center: float | None = None,
) -> GNState:
    """Exact solitary wave of the flat-bottom system, sampled on the grid.

    The traveling profile (certified symbolically by
    ``scripts/derive_solitary_wave.py``) is

        zeta(x, t) = a sech^2( kappa * (x - x_c(t)) ),
        V          = c zeta / (1 + eps zeta),
        c          = sqrt(1 + eps a),
        kappa      = sqrt( 3 eps a / (4 mu (1 + eps a)) ),

    moving at speed c/eps in the fast time variable used by the solvers
    here.  ``center`` is the crest position at t = 0 (default: middle of
    the box); the evaluation distance is wrapped periodically, so
    translation by the box period is exact.  ``amplitude = 0`` returns
    the rest state.

    Raises DomainError for a non-flat bottom, a non-1D grid, a negative
    amplitude (the profile family requires a > 0), or an amplitude whose
    depth violates the admissibility floor.
    """
    grid = params.grid
    if grid.dimension != 1:
        raise DomainError("the solitary-wave reference is one-dimensional")
    if np.any(params.b_grid != 0.0):
        raise DomainError("the solitary-wave reference requires a flat bottom")
    a = float(amplitude)
    if a < 0.0:
        raise DomainError("the solitary-wave family requires amplitude >= 0")
    eps, mu = params.eps, params.mu

    x = grid.axis_coordinates()
    L = grid.domain_length
    if a == 0.0:
        zeta_vals = np.zeros_like(x)
        v_vals = np.zeros_like(x)
    else:
        c = math.sqrt(1.0 + eps * a)
        kappa = math.sqrt(3.0 * eps * a / (4.0 * mu * (1.0 + eps * a)))
        x_c = (L / 2.0 if center is None else float(center)) + (c / eps) * t
        s = np.remainder(x - x_c + L / 2.0, L) - L / 2.0
        zeta_vals = a / np.cosh(kappa * s) ** 2
        v_vals = c * zeta_vals / (1.0 + eps * zeta_vals)
        if 1.0 + eps * np.min(zeta_vals) <= params.h0:
            raise DomainError(
                f"solitary wave of amplitude {a:g} drives the depth to "
                f"{1.0 + eps * float(np.min(zeta_vals)):.6g}, at or below h0={params.h0:g}"
            )
    return GNState(
        V=field_from_grid(grid, v_vals[None]),
        zeta=field_from_grid(grid, zeta_vals[None]),
        t=t,
    )


# -------------------------------------------------- manufactured residuals


def manufactured_residual(
    params: PhysicalParams,
    u_app: TrajectoryField,
    dudt: TrajectoryField | None = None,
    tol: float = 1e-12,
) -> tuple[TrajectoryField, TrajectoryField]:
    """Residual of a trajectory in the slow-time conservation form.

    For an approximate trajectory u = (V, zeta) of the fast-time system
    the defect f := du/dt + (1/eps) L u + F[u] is converted to the
    slow-time rows in which the equations are usually stated:

        R1 = M[h] (eps f_V)      (momentum row, M[h] = h + mu * T[h]),
        r2 = eps f_zeta          (mass row),

    so a trajectory solves the slow-time system exactly iff both vanish.
    The normalization matters when comparing residual sizes: R1 carries
    the elliptic mass operator, it is *not* the velocity-equation defect.

    du/dt is formed by centered differences (second-order one-sided at
    the ends, at least four snapshots required) unless an exact ``dudt``
    trajectory is supplied.
    """
    grid = u_app.grid
    d = grid.dimension
    if dudt is None:
        if u_app.n_times < 4:
            raise DomainError(
                "need at least 4 snapshots for a second-order discrete time "
                "derivative; pass dudt explicitly for shorter trajectories"
            )
        dudt = time_derivative(u_app)
    elif dudt.n_times != u_app.n_times or dudt.snapshots.shape != u_app.snapshots.shape:
        raise DomainError("dudt must match the trajectory in shape and length")

    eps = params.eps
    r1 = np.empty((u_app.n_times, d, *grid.shape), dtype=np.complex128)
    r2 = np.empty((u_app.n_times, 1, *grid.shape), dtype=np.complex128)
    for i in range(u_app.n_times):
        t = float(u_app.times[i])
        arr = u_app.snapshots[i]
        state = GNState(
            V=SpectralField(grid, arr[:d]),
            zeta=SpectralField(grid, arr[d : d + 1]),
            t=t,
        )
        F = nonlinear_F(params, state, tol=tol)
        f_V = dudt.snapshots[i][:d] + F.V.coefficients
        f_V += (1.0 / eps) * gn._grad_c(grid, arr[d])
        f_z = dudt.snapshots[i][d : d + 1] + F.zeta.coefficients
        f_z += (1.0 / eps) * gn._div_c(grid, arr[:d])[None]
        h_vals = depth_grid(params, arr[d])
        r1[i] = gn._apply_bigT_arrays(
            grid, params.mu, h_vals, params.grad_beta_grid, eps * f_V
        )
        r2[i] = eps * f_z
    times = u_app.times
    return (
        TrajectoryField(grid, times, r1),
        TrajectoryField(grid, times, r2),
    )
