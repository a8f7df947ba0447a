"""Adapter plugging the shallow-water system into the generic iteration.

The engine works in filtered variables: u_tilde(t) = U(-t) u(t), where U is
the free wave group. In these variables the evolution reads

    d/dt u_tilde + G[t, u_tilde] = h_tilde(t),
    G[t, w] = U(-t) F[U(t) w],      h_tilde(t) = U(-t) h(t),

with F the full nonlinear (plus dispersive-linear) tendency: the stiff
1/eps wave operator is absorbed into the conjugation, so stored filtered
trajectories vary on the slow time scale and their discrete time
derivatives are accurate. The adapter converts between the two pictures:
`linearize` rebuilds frozen physical coefficients from the filtered
iterate, `solve_linearized` conjugates the forcing into physical
variables, runs the integrating-factor solver, and filters the solution
back, and `admissible` checks the depth of the physical snapshots.
"""
from __future__ import annotations

import numpy as np

from .fourier_scale import GridSpec, SpectralField, TrajectoryField
from .green_naghdi import (
    GNState,
    LinearizedCoeffs,
    PhysicalParams,
    build_linearized_coeffs,
    depth_grid,
    nonlinear_F,
    x_norm_packed,
)
from .linear_ivp import IVPData, conjugate_trajectory, evolve_packed, solve_linearized
from .nash_moser import ProblemInterface

__all__ = ["GNProblem"]


class GNProblem(ProblemInterface):
    """Shallow-water Cauchy problem in filtered variables.

    initial: physical state at t = 0 (identical in filtered variables).
    forcing_fn: optional physical right-hand side sampler t -> packed
        coefficient array; the engine sees its filtered version.
    substituted: coefficient-assembly mode passed to the linearization
        (True = the reduced form whose time derivatives were eliminated
        through the equations; False = the exact derivative).
    """

    def __init__(
        self,
        params: PhysicalParams,
        initial: GNState,
        forcing_fn=None,
        tol: float = 1e-12,
        substituted: bool = True,
    ) -> None:
        self.params = params
        self.grid: GridSpec = initial.grid
        self._initial = initial.packed()
        self._forcing_fn = forcing_fn
        self.tol = tol
        self.substituted = substituted

    # -- engine capabilities ------------------------------------------------

    def evaluate_G(self, t: float, u: SpectralField) -> SpectralField:
        phys = evolve_packed(self.grid, self.params.eps, t, u.coefficients)
        state = GNState.from_packed(SpectralField(self.grid, phys), t=t)
        F = nonlinear_F(self.params, state, tol=self.tol)
        packed = np.concatenate([F.V.coefficients, F.zeta.coefficients])
        return SpectralField(
            self.grid, evolve_packed(self.grid, self.params.eps, -t, packed)
        )

    def linearize(self, uref: TrajectoryField) -> LinearizedCoeffs:
        phys = conjugate_trajectory(self.params, uref, direction=+1)
        return build_linearized_coeffs(
            self.params, phys, substituted=self.substituted, tol=self.tol
        )

    def solve_linearized(
        self,
        coeffs: LinearizedCoeffs,
        forcing: TrajectoryField | None,
        initial: SpectralField,
        T: float,
        dt: float,
    ) -> TrajectoryField:
        forcing_phys = (
            None if forcing is None else conjugate_trajectory(self.params, forcing, +1)
        )
        ivp = IVPData(
            initial=GNState.from_packed(initial, t=0.0),
            horizon=T,
            dt=dt,
            forcing=forcing_phys,
        )
        sol = solve_linearized(self.params, coeffs, ivp, tol=self.tol)
        assert isinstance(sol, TrajectoryField)
        return conjugate_trajectory(self.params, sol, direction=-1)

    def forcing(self, times: np.ndarray) -> TrajectoryField | None:
        if self._forcing_fn is None:
            return None
        snaps = np.stack(
            [
                evolve_packed(
                    self.grid,
                    self.params.eps,
                    -float(t),
                    np.asarray(self._forcing_fn(float(t)), dtype=np.complex128),
                )
                for t in times
            ]
        )
        return TrajectoryField(self.grid, np.asarray(times, dtype=np.float64), snaps)

    def initial_data(self) -> SpectralField:
        return SpectralField(self.grid, self._initial.coefficients.copy())

    def admissible(self, u: TrajectoryField) -> tuple[bool, str]:
        d = self.grid.dimension
        h0 = self.params.h0
        worst = np.inf
        worst_t = 0.0
        for i in range(u.n_times):
            t = float(u.times[i])
            phys = evolve_packed(self.grid, self.params.eps, t, u.snapshots[i])
            hmin = float(np.min(depth_grid(self.params, phys[d])))
            if hmin < worst:
                worst, worst_t = hmin, t
        if worst <= h0:
            return False, (
                f"water depth {worst:.6g} at t={worst_t:g} at or below the floor h0={h0:g}"
            )
        return True, ""

    def snapshot_norm(self, u: SpectralField, s: float) -> float:
        return x_norm_packed(self.params, u, s)
