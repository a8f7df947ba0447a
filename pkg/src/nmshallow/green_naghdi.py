"""Dispersive shallow-water operators on the periodic box.

Implements the spatial operators of the fully nonlinear dispersive
shallow-water family (Serre / Green-Naghdi): the bathymetric correction
operator T[h, beta], the quadratic bathymetry form Q[h, beta], the elliptic
momentum operator bigT = h + mu*T and its conjugate-gradient inversion, the
nonlinear tendency of the rescaled first-order system, and the
frozen-coefficient linearized operators N1..N4 used by the linearized solver.

Conventions
-----------
* State u = (V, zeta): velocity V (d components) and surface elevation zeta;
  depth h = 1 + eps*(zeta - b) with bathymetry b; admissibility means
  min h >= h0 on the grid.
* The evolution form integrated everywhere in this package is the rescaled
  system  d/dt u + (1/eps) L u + F[u] = 0  with L u = (grad zeta, div V).
  In unscaled time tau = t/eps this reads d/dtau u + L u + eps F[u] = 0, and
  multiplying the velocity row by bigT recovers the physical momentum form
      bigT d/dtau V + h grad zeta + eps h (V.grad)V
          + mu eps [ (1/3) grad(h^3 D_V div V) + Q[h, eps b](V) ] = 0,
      d/dtau zeta + div(h V) = 0.
  Consequently a forcing g = (g1, g2) added to the rescaled system corresponds
  to the residual (bigT eps g1, eps g2) of the physical form; `nonlinear_F`'s
  consistency test asserts exactly this round trip.
* Derivatives are exact in Fourier space. Nonlinear factors inside a single
  operator assembly are multiplied pointwise on the grid and each assembled
  term is projected back onto the dealiased band; this keeps every quadratic
  form symmetric and keeps the coercivity identity behind `energy_E` exact in
  grid quadrature (see tests).

Operators (beta denotes eps*b wherever the model equations use it):
    T[h, beta] V = -(1/3) grad(h^3 div V)
                   + (1/2)[ grad(h^2 grad(beta).V) - h^2 grad(beta) div V ]
                   + h grad(beta) (grad(beta).V)
    D_V f        = -(V.grad) f + (div V) f
    Q[h, beta](V)= (1/2) grad(h^2 (V.grad)^2 beta)
                   + h ( (h/2) D_V div V + (V.grad)^2 beta ) grad(beta)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConvergenceError, DomainError
from .fourier_scale import GridSpec, SpectralField, TrajectoryField, sobolev_norm

__all__ = [
    "PhysicalParams",
    "GNState",
    "LinearizedCoeffs",
    "apply_T",
    "apply_bigT",
    "energy_E",
    "invert_bigT",
    "apply_Q",
    "apply_Q_bilinear",
    "nonlinear_F",
    "singular_term",
    "build_linearized_coeffs",
    "apply_N",
    "apply_K",
    "frechet_F",
    "x_norm",
    "x_norm_packed",
    "depth_check",
    "depth_grid",
]

#: Running counters for the elliptic mass-matrix solves. Callers that report
#: solver statistics snapshot these before/after a run; they are never reset
#: here.
CG_STATS = {"solves": 0, "iterations": 0}


@dataclass
class PhysicalParams:
    """Model parameters: shallowness mu, nonlinearity eps, bathymetry, depth floor.

    eps = sqrt(mu) and eps = 1 are the two named scaling regimes; any
    eps in (0, 1] is accepted for experiments. The bathymetry enters the
    dispersive operators through beta = eps*b.
    """

    mu: float
    eps: float
    b: SpectralField
    h0: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.mu < 1.0):
            raise ValueError(f"mu must lie in (0,1), got {self.mu}")
        if not (0.0 < self.eps <= 1.0):
            raise ValueError(f"eps must lie in (0,1], got {self.eps}")
        if self.h0 <= 0.0:
            raise ValueError("h0 must be positive")
        if self.b.components != 1:
            raise ValueError("bathymetry must be a scalar field")
        self._cache: dict = {}

    @property
    def grid(self) -> GridSpec:
        return self.b.grid

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    def _cached(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def b_grid(self) -> np.ndarray:
        return self._cached("b_g", lambda: self.grid.to_grid(self.b.coefficients[0]))

    @property
    def grad_b_grid(self) -> np.ndarray:
        """Samples of grad b, shape (d, *grid.shape)."""
        return self._cached(
            "gb_g", lambda: self.grid.to_grid(_grad_c(self.grid, self.b.coefficients[0]))
        )

    @property
    def grad_beta_grid(self) -> np.ndarray:
        """Samples of grad(eps*b)."""
        return self._cached("gbeta_g", lambda: self.eps * self.grad_b_grid)


@dataclass
class GNState:
    """Velocity/elevation pair on one grid, optionally time-stamped."""

    V: SpectralField
    zeta: SpectralField
    t: float | None = None

    def __post_init__(self) -> None:
        d = self.V.grid.dimension
        if self.V.components != d:
            raise ValueError(f"velocity must have {d} components, got {self.V.components}")
        if self.zeta.components != 1:
            raise ValueError("elevation must be scalar")
        if self.zeta.grid != self.V.grid:
            raise ValueError("velocity and elevation live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.V.grid

    def packed(self) -> SpectralField:
        """Single stacked field (V components first, elevation last)."""
        return SpectralField(
            self.grid, np.concatenate([self.V.coefficients, self.zeta.coefficients])
        )

    @classmethod
    def from_packed(cls, u: SpectralField, t: float | None = None) -> "GNState":
        d = u.grid.dimension
        if u.components != d + 1:
            raise ValueError(f"packed state needs {d + 1} components, got {u.components}")
        return cls(
            V=SpectralField(u.grid, u.coefficients[:d].copy()),
            zeta=SpectralField(u.grid, u.coefficients[d:].copy()),
            t=t,
        )


# ------------------------------------------------------------- array helpers

def _grad_c(grid: GridSpec, c: np.ndarray) -> np.ndarray:
    """Spectral gradient of a scalar coefficient array -> (d, *shape)."""
    xi = grid.wavenumbers()
    return np.stack([1j * xi[ax] * c for ax in range(grid.dimension)])


def _div_c(grid: GridSpec, c: np.ndarray) -> np.ndarray:
    """Spectral divergence of a vector coefficient array (d, *shape) -> (*shape)."""
    xi = grid.wavenumbers()
    out = 1j * xi[0] * c[0]
    for ax in range(1, grid.dimension):
        out = out + 1j * xi[ax] * c[ax]
    return out


def _dot_g(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise dot product of two (d, *shape) grid stacks."""
    return np.einsum("i...,i...->...", a, b)


def depth_grid(params: PhysicalParams, zeta: SpectralField | np.ndarray) -> np.ndarray:
    """Grid samples of h = 1 + eps*(zeta - b)."""
    zc = zeta.coefficients[0] if isinstance(zeta, SpectralField) else zeta
    zg = params.grid.to_grid(zc)
    return 1.0 + params.eps * (zg - params.b_grid)


def depth_check(params: PhysicalParams, u: GNState) -> tuple[bool, float]:
    """(ok, min depth): ok iff the grid minimum of h stays above the floor h0."""
    hg = depth_grid(params, u.zeta)
    mn = float(np.min(hg))
    return mn >= params.h0, mn


def _require_admissible(params: PhysicalParams, hg: np.ndarray, where: str) -> None:
    mn = float(np.min(hg))
    if mn < params.h0 * (1.0 - 1e-12):
        raise DomainError(f"depth {mn:.6g} below floor {params.h0:.6g} in {where}")


# --------------------------------------------------------------- T and bigT

def _apply_T_arrays(
    grid: GridSpec, hg: np.ndarray, gbeta_g: np.ndarray, Vc: np.ndarray
) -> np.ndarray:
    """T[h, beta]V on coefficient arrays; hg, gbeta_g are grid samples."""
    Vg = grid.to_grid(Vc)
    Xg = grid.to_grid(_div_c(grid, Vc))
    Yg = _dot_g(gbeta_g, Vg)
    h2 = hg * hg
    h3 = h2 * hg
    out = -(1.0 / 3.0) * _grad_c(grid, grid.from_grid(h3 * Xg))
    out += 0.5 * _grad_c(grid, grid.from_grid(h2 * Yg))
    out += grid.from_grid((-0.5 * h2 * Xg + hg * Yg)[None] * gbeta_g)
    return grid.project(out)


def apply_T(h: SpectralField, beta: SpectralField, V: SpectralField) -> SpectralField:
    """Bathymetric correction operator T[h, beta] applied to a velocity field."""
    grid = V.grid
    if h.grid != grid or beta.grid != grid:
        raise ValueError("h, beta, V must share one grid")
    hg = grid.to_grid(h.coefficients[0])
    gbeta_g = grid.to_grid(_grad_c(grid, beta.coefficients[0]))
    return SpectralField(grid, _apply_T_arrays(grid, hg, gbeta_g, V.coefficients))


def _apply_bigT_arrays(
    grid: GridSpec, mu: float, hg: np.ndarray, gbeta_g: np.ndarray, Vc: np.ndarray
) -> np.ndarray:
    """(h + mu T[h, beta]) V on coefficient arrays."""
    Vg = grid.to_grid(Vc)
    Xg = grid.to_grid(_div_c(grid, Vc))
    Yg = _dot_g(gbeta_g, Vg)
    h2 = hg * hg
    h3 = h2 * hg
    out = grid.from_grid(hg[None] * Vg)
    out += mu * (
        -(1.0 / 3.0) * _grad_c(grid, grid.from_grid(h3 * Xg))
        + 0.5 * _grad_c(grid, grid.from_grid(h2 * Yg))
        + grid.from_grid((-0.5 * h2 * Xg + hg * Yg)[None] * gbeta_g)
    )
    return grid.project(out)


def apply_bigT(params: PhysicalParams, h: SpectralField, V: SpectralField) -> SpectralField:
    """Elliptic momentum operator bigT V = h V + mu T[h, eps*b] V."""
    grid = V.grid
    hg = grid.to_grid(h.coefficients[0])
    return SpectralField(
        grid, _apply_bigT_arrays(grid, params.mu, hg, params.grad_beta_grid, V.coefficients)
    )


def energy_E(params: PhysicalParams, h: SpectralField, V: SpectralField) -> float:
    """Coercivity energy: the bigT quadratic form dominates E^2 pointwise.

    E^2 = h0 |V|^2_{L2} + mu h0 | h div V / sqrt(3) - (sqrt(3)/2) grad(beta).V |^2_{L2}
          + (mu h0 / 4) | grad(beta).V |^2_{L2},   beta = eps*b.
    """
    grid = V.grid
    hg = grid.to_grid(h.coefficients[0])
    Vg = grid.to_grid(V.coefficients)
    Xg = grid.to_grid(_div_c(grid, V.coefficients))
    Yg = _dot_g(params.grad_beta_grid, Vg)
    sq = (Vg**2).sum(axis=0)
    sq = sq + params.mu * (hg * Xg / math.sqrt(3.0) - (math.sqrt(3.0) / 2.0) * Yg) ** 2
    sq = sq + 0.25 * params.mu * Yg**2
    return math.sqrt(params.h0 * grid.cell_volume * float(np.sum(sq)))


def bigT_pairing(params: PhysicalParams, h: SpectralField, V: SpectralField, W: SpectralField) -> float:
    """L2 pairing (bigT V, W) evaluated by grid quadrature."""
    grid = V.grid
    out = apply_bigT(params, h, V)
    og = grid.to_grid(out.coefficients)
    Wg = grid.to_grid(W.coefficients)
    return grid.cell_volume * float(np.sum(og * Wg))


def invert_bigT(
    params: PhysicalParams,
    h: SpectralField,
    V: SpectralField,
    tol: float = 1e-12,
    max_iter: int = 500,
    x0: np.ndarray | None = None,
    return_info: bool = False,
):
    """Solve bigT W = V by preconditioned conjugate gradients.

    The discrete operator is symmetric positive definite on the dealiased band
    (quadratic form bounded below by h0 |.|^2), so CG applies; the
    preconditioner is the constant-coefficient symbol (hbar + mu |xi|^2
    hbar^3/3)^{-1} at the mean depth hbar. Terminates when the L2 residual
    drops below tol * |V|_{L2}; raises ConvergenceError otherwise.
    """
    grid = V.grid
    hg = grid.to_grid(h.coefficients[0])
    _require_admissible(params, hg, "invert_bigT")
    gbeta_g = params.grad_beta_grid
    mu = params.mu
    d = grid.dimension
    shape = (d, *grid.shape)
    n = int(np.prod(shape))

    hbar = float(np.mean(hg))
    symbol = hbar + mu * grid.xi_sq * hbar**3 / 3.0
    inv_symbol = 1.0 / symbol

    def matvec(x: np.ndarray) -> np.ndarray:
        return _apply_bigT_arrays(grid, mu, hg, gbeta_g, x.reshape(shape)).reshape(-1)

    def precond(x: np.ndarray) -> np.ndarray:
        return (x.reshape(shape) * inv_symbol).reshape(-1)

    A = LinearOperator((n, n), matvec=matvec, dtype=np.complex128)
    M = LinearOperator((n, n), matvec=precond, dtype=np.complex128)
    b = V.coefficients.reshape(-1)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=M, callback=count)
    CG_STATS["solves"] += 1
    CG_STATS["iterations"] += iters
    if info != 0:
        res = float(np.linalg.norm(b - matvec(x)))
        raise ConvergenceError(
            f"bigT inversion did not reach tol={tol:g} in {max_iter} iterations "
            f"(residual {res:.3e}, |rhs| {float(np.linalg.norm(b)):.3e})"
        )
    W = SpectralField(grid, x.reshape(shape))
    if return_info:
        return W, {"iterations": iters}
    return W


# ----------------------------------------------------------------- Q forms

def _apply_Q_bilinear_arrays(
    grid: GridSpec,
    hg: np.ndarray,
    gbeta_g: np.ndarray,
    Vc: np.ndarray,
    Wc: np.ndarray,
) -> np.ndarray:
    """Symmetric bilinear form associated with Q[h, beta], on coefficient arrays."""
    Vg = grid.to_grid(Vc)
    Wg = grid.to_grid(Wc)
    Xv = grid.to_grid(_div_c(grid, Vc))
    Xw = grid.to_grid(_div_c(grid, Wc))

    # sym2 = (1/2)[(V.grad)(W.grad)beta + (W.grad)(V.grad)beta]
    wb = _dot_g(gbeta_g, Wg)
    vb = _dot_g(gbeta_g, Vg)
    grad_wb = grid.to_grid(_grad_c(grid, grid.from_grid(wb)))
    grad_vb = grid.to_grid(_grad_c(grid, grid.from_grid(vb)))
    sym2 = 0.5 * (_dot_g(Vg, grad_wb) + _dot_g(Wg, grad_vb))

    # Dsym = (1/2)[D_V(div W) + D_W(div V)],  D_V f = -(V.grad) f + (div V) f
    grad_Xw = grid.to_grid(_grad_c(grid, _div_c(grid, Wc)))
    grad_Xv = grid.to_grid(_grad_c(grid, _div_c(grid, Vc)))
    dsym = 0.5 * (-_dot_g(Vg, grad_Xw) - _dot_g(Wg, grad_Xv) + 2.0 * Xv * Xw)

    h2 = hg * hg
    out = 0.5 * _grad_c(grid, grid.from_grid(h2 * sym2))
    out += grid.from_grid((hg * (0.5 * hg * dsym + sym2))[None] * gbeta_g)
    return grid.project(out)


def apply_Q_bilinear(
    h: SpectralField, beta: SpectralField, V: SpectralField, W: SpectralField
) -> SpectralField:
    """Bilinear symmetric version of the bathymetry form: Q_bil(V, V) = Q(V)."""
    grid = V.grid
    hg = grid.to_grid(h.coefficients[0])
    gbeta_g = grid.to_grid(_grad_c(grid, beta.coefficients[0]))
    return SpectralField(
        grid, _apply_Q_bilinear_arrays(grid, hg, gbeta_g, V.coefficients, W.coefficients)
    )


def apply_Q(h: SpectralField, beta: SpectralField, V: SpectralField) -> SpectralField:
    """Quadratic bathymetry form Q[h, beta](V)."""
    return apply_Q_bilinear(h, beta, V, V)


# --------------------------------------------------------- nonlinear tendency

def singular_term(
    params: PhysicalParams,
    h: SpectralField,
    zeta: SpectralField,
    route: str = "stable",
    tol: float = 1e-12,
) -> SpectralField:
    """The O(1/eps) part of the velocity tendency, by either of two assemblies.

    route "stable":  -(mu/eps) bigT^{-1} (T grad zeta)   (no cancellation)
    route "direct":  (1/eps) (bigT^{-1}(h grad zeta) - grad zeta)
    The two agree to solver tolerance; the stable route is the default used by
    `nonlinear_F`, the direct one exists so tests can confirm the identity.
    """
    grid = zeta.grid
    gz = SpectralField(grid, _grad_c(grid, zeta.coefficients[0]))
    if route == "stable":
        hg = grid.to_grid(h.coefficients[0])
        tgz = SpectralField(
            grid, _apply_T_arrays(grid, hg, params.grad_beta_grid, gz.coefficients)
        )
        w = invert_bigT(params, h, tgz, tol=tol)
        return (-params.mu / params.eps) * w
    if route == "direct":
        hg = grid.to_grid(h.coefficients[0])
        hgz = SpectralField(grid, grid.project(grid.from_grid(hg[None] * grid.to_grid(gz.coefficients))))
        w = invert_bigT(params, h, hgz, tol=tol)
        return (1.0 / params.eps) * (w - gz)
    raise ValueError(f"unknown route {route!r}")


def nonlinear_F(params: PhysicalParams, u: GNState, tol: float = 1e-12) -> GNState:
    """Nonstiff tendency F[u] of the rescaled system d/dt u + (1/eps)Lu + F[u] = 0.

    Velocity row (single elliptic solve, cancellation-free):
        F1 = bigT^{-1}[ -(mu/eps) T grad zeta + h (V.grad)V
                        + mu ( (1/3) grad(h^3 D_V div V) + Q[h, eps b](V) ) ]
    Elevation row:
        F2 = div( (zeta - b) V )
    """
    grid = u.grid
    d = grid.dimension
    hg = depth_grid(params, u.zeta)
    _require_admissible(params, hg, "nonlinear_F")
    gbeta_g = params.grad_beta_grid
    mu = params.mu

    Vc = u.V.coefficients
    Vg = grid.to_grid(Vc)
    Xc = _div_c(grid, Vc)
    Xg = grid.to_grid(Xc)
    gz_c = _grad_c(grid, u.zeta.coefficients[0])

    # -(mu/eps) T[h, eps b] grad zeta
    rhs = (-mu / params.eps) * _apply_T_arrays(grid, hg, gbeta_g, gz_c)

    # h (V.grad) V
    grad_V_g = np.stack([grid.to_grid(_grad_c(grid, Vc[i])) for i in range(d)])
    advect = np.stack([_dot_g(Vg, grad_V_g[i]) for i in range(d)])
    rhs += grid.project(grid.from_grid(hg[None] * advect))

    # mu [ (1/3) grad(h^3 D_V div V) + Q(V) ]
    dv_x = -_dot_g(Vg, grid.to_grid(_grad_c(grid, Xc))) + Xg * Xg
    rhs += mu * (1.0 / 3.0) * grid.project(_grad_c(grid, grid.from_grid(hg**3 * dv_x)))
    rhs += mu * _apply_Q_bilinear_arrays(grid, hg, gbeta_g, Vc, Vc)

    h_field = SpectralField(grid, grid.project(grid.from_grid(hg)))
    F1 = invert_bigT(params, h_field, SpectralField(grid, rhs), tol=tol)

    zg = grid.to_grid(u.zeta.coefficients[0])
    flux = (zg - params.b_grid)[None] * Vg
    F2c = grid.project(_div_c(grid, grid.from_grid(flux)))
    return GNState(V=F1, zeta=SpectralField(grid, F2c[None]), t=u.t)


# ------------------------------------------------------ linearized operators

@dataclass
class LinearizedCoeffs:
    """Frozen-coefficient data for the linearized system around a reference.

    All entries are grid-sample trajectories (leading axis = time). The scaled
    bathymetry beta = eps*b enters every coefficient (same convention as the
    operators T[., eps b] and Q[., eps b] of the model; the finite-difference
    derivative tests pin this down). `abar` and `bbar` are built by default
    with the on-solution substitution grad(zetabar) + eps*F1[ubar] ->
    -eps*dtVbar (flag `substituted`); the exact assembly re-evaluates the
    nonlinear velocity tendency and is the true Frechet derivative, used by
    the derivative-consistency tests.
    """

    grid: GridSpec
    times: np.ndarray
    Vbar: np.ndarray        # (nt, d, *shape)
    zetabar: np.ndarray     # (nt, *shape)
    hbar: np.ndarray        # (nt, *shape)
    dtVbar: np.ndarray      # (nt, d, *shape)
    abar: np.ndarray        # (nt, *shape)
    bbar: np.ndarray        # (nt, d, *shape)
    divVbar: np.ndarray     # (nt, *shape)
    gradVbar: np.ndarray    # (nt, d, d, *shape) : gradVbar[t, i] = grad of component i
    graddivVbar: np.ndarray # (nt, d, *shape)
    grad_vbarbeta: np.ndarray  # (nt, d, *shape) : grad( grad(beta).Vbar )
    substituted: bool = True

    @property
    def n_times(self) -> int:
        return self.times.size

    def bracket(self, t: float) -> tuple[int, int, float]:
        """Bracketing snapshot indices and interpolation weight for time t."""
        times = self.times
        if t <= times[0]:
            return 0, 0, 0.0
        if t >= times[-1]:
            return self.n_times - 1, self.n_times - 1, 0.0
        dt = times[1] - times[0]
        i = min(int(t / dt), self.n_times - 2)
        w = (t - times[i]) / dt
        if w < 1e-12:
            return i, i, 0.0
        if w > 1.0 - 1e-12:
            return i + 1, i + 1, 0.0
        return i, i + 1, float(w)

    def at_time(self, t: float) -> dict[str, np.ndarray]:
        """Linear interpolation of every coefficient array at time t."""
        i, j, w = self.bracket(t)
        names = [
            "Vbar", "zetabar", "hbar", "dtVbar", "abar", "bbar",
            "divVbar", "gradVbar", "graddivVbar", "grad_vbarbeta",
        ]
        out = {}
        for name in names:
            arr = getattr(self, name)
            out[name] = arr[i] if j == i else (1.0 - w) * arr[i] + w * arr[j]
        return out


def _time_derivative_arrays(snaps: np.ndarray, dt: float) -> np.ndarray:
    """Second-order derivative along axis 0 (centered; one-sided at the ends)."""
    out = np.empty_like(snaps)
    if snaps.shape[0] == 2:
        out[0] = out[1] = (snaps[1] - snaps[0]) / dt
        return out
    out[1:-1] = (snaps[2:] - snaps[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * snaps[0] + 4.0 * snaps[1] - snaps[2]) / (2.0 * dt)
    out[-1] = (3.0 * snaps[-1] - 4.0 * snaps[-2] + snaps[-3]) / (2.0 * dt)
    return out


def build_linearized_coeffs(
    params: PhysicalParams,
    uref: TrajectoryField,
    substituted: bool = True,
    tol: float = 1e-12,
) -> LinearizedCoeffs:
    """Assemble the frozen coefficients of the linearized system along `uref`.

    `uref` is a packed (d+1)-component trajectory. With `substituted` (the
    default) the scalar/vector coefficient pair (abar, bbar) uses
        abar = eps hbar D_Vbar(div Vbar) + (Vbar.grad)^2 beta
               + eps grad(beta).dtVbar - eps hbar div(dtVbar),
        bbar = eps (Vbar.grad)Vbar + (eps dtVbar + grad zetabar)
               + mu abar grad(beta),
    with beta = eps*b; this agrees with the exact linearization on exact
    solutions. With `substituted=False` the generic assembly replaces
    -eps*dtVbar by grad(zetabar) + eps*F1[ubar], re-evaluating the nonlinear
    velocity tendency per snapshot (exact Frechet derivative, used by the
    consistency tests).
    """
    grid = uref.grid
    d = grid.dimension
    nt = uref.n_times
    eps = params.eps

    Vc = uref.snapshots[:, :d]
    zc = uref.snapshots[:, d]
    Vbar = grid.to_grid(Vc)
    zetabar = grid.to_grid(zc)
    hbar = 1.0 + eps * (zetabar - params.b_grid[None])
    for k in range(nt):
        _require_admissible(params, hbar[k], f"build_linearized_coeffs (snapshot {k})")

    dtVbar = _time_derivative_arrays(Vbar, uref.time_step)

    divVbar = np.empty((nt, *grid.shape))
    gradVbar = np.empty((nt, d, d, *grid.shape))
    graddivVbar = np.empty((nt, d, *grid.shape))
    grad_vbarbeta = np.empty((nt, d, *grid.shape))
    grad_zetabar = np.empty((nt, d, *grid.shape))
    gbeta = params.grad_beta_grid
    for k in range(nt):
        div_c = _div_c(grid, Vc[k])
        divVbar[k] = grid.to_grid(div_c)
        graddivVbar[k] = grid.to_grid(_grad_c(grid, div_c))
        for i in range(d):
            gradVbar[k, i] = grid.to_grid(_grad_c(grid, Vc[k, i]))
        grad_vbarbeta[k] = grid.to_grid(
            _grad_c(grid, grid.from_grid(_dot_g(gbeta, Vbar[k])))
        )
        grad_zetabar[k] = grid.to_grid(_grad_c(grid, zc[k]))

    # (Vbar.grad)^2 beta = (Vbar.grad)(Vbar.grad beta), assembled spectrally inside.
    vgrad2_beta = np.empty((nt, *grid.shape))
    for k in range(nt):
        grad_vb = grid.to_grid(_grad_c(grid, grid.from_grid(_dot_g(gbeta, Vbar[k]))))
        vgrad2_beta[k] = _dot_g(Vbar[k], grad_vb)

    # D_Vbar(div Vbar) = -(Vbar.grad)(div Vbar) + (div Vbar)^2
    d_vbar_div = np.empty((nt, *grid.shape))
    for k in range(nt):
        d_vbar_div[k] = -_dot_g(Vbar[k], graddivVbar[k]) + divVbar[k] ** 2

    advect = np.empty((nt, d, *grid.shape))
    for k in range(nt):
        for i in range(d):
            advect[k, i] = _dot_g(Vbar[k], gradVbar[k, i])

    abar = np.empty((nt, *grid.shape))
    bbar = np.empty((nt, d, *grid.shape))
    if substituted:
        for k in range(nt):
            abar[k] = (
                eps * hbar[k] * d_vbar_div[k]
                + vgrad2_beta[k]
                + eps * _dot_g(gbeta, dtVbar[k])
                - eps * hbar[k] * grid.to_grid(_div_c(grid, grid.from_grid(dtVbar[k])))
            )
            bbar[k] = (
                eps * advect[k]
                + (eps * dtVbar[k] + grad_zetabar[k])
                + params.mu * abar[k][None] * gbeta
            )
    else:
        for k in range(nt):
            state = GNState(
                V=SpectralField(grid, Vc[k].copy()),
                zeta=SpectralField(grid, zc[k][None].copy()),
            )
            F1 = nonlinear_F(params, state, tol=tol).V
            F1g = grid.to_grid(F1.coefficients)
            # w := grad(zetabar) + eps F1[ubar]; abar = eps hbar D(divVbar)
            #      + (Vbar.grad)^2 beta - grad(beta).w + hbar div(w)
            wg = grad_zetabar[k] + eps * F1g
            div_w = grid.to_grid(_div_c(grid, grid.from_grid(wg)))
            abar[k] = (
                eps * hbar[k] * d_vbar_div[k]
                + vgrad2_beta[k]
                - _dot_g(gbeta, wg)
                + hbar[k] * div_w
            )
            bbar[k] = eps * advect[k] - eps * F1g + params.mu * abar[k][None] * gbeta

    return LinearizedCoeffs(
        grid=grid,
        times=uref.times.copy(),
        Vbar=Vbar,
        zetabar=zetabar,
        hbar=hbar,
        dtVbar=dtVbar,
        abar=abar,
        bbar=bbar,
        divVbar=divVbar,
        gradVbar=gradVbar,
        graddivVbar=graddivVbar,
        grad_vbarbeta=grad_vbarbeta,
        substituted=substituted,
    )


def _apply_N_rows(
    coeffs_t: dict[str, np.ndarray],
    params: PhysicalParams,
    v: GNState,
) -> tuple[np.ndarray, np.ndarray]:
    """(N1 V + N2 zeta, N3 V + N4 zeta) on coefficient arrays, at one time."""
    grid = v.grid
    d = grid.dimension
    mu, eps = params.mu, params.eps
    gbeta = params.grad_beta_grid

    hbar = coeffs_t["hbar"]
    Vbar = coeffs_t["Vbar"]
    abar = coeffs_t["abar"]
    bbar = coeffs_t["bbar"]
    divVbar = coeffs_t["divVbar"]
    gradVbar = coeffs_t["gradVbar"]
    graddivVbar = coeffs_t["graddivVbar"]
    grad_vbarbeta = coeffs_t["grad_vbarbeta"]

    Vc = v.V.coefficients
    zc = v.zeta.coefficients[0]
    Vg = grid.to_grid(Vc)
    zg = grid.to_grid(zc)
    Xc = _div_c(grid, Vc)
    Xg = grid.to_grid(Xc)
    gz_g = grid.to_grid(_grad_c(grid, zc))
    grad_X_g = grid.to_grid(_grad_c(grid, Xc))
    grad_V_g = np.stack([grid.to_grid(_grad_c(grid, Vc[i])) for i in range(d)])

    # --- N1 V
    adv = np.stack(
        [_dot_g(Vbar, grad_V_g[i]) + _dot_g(Vg, gradVbar[i]) for i in range(d)]
    )
    row1 = grid.from_grid(hbar[None] * adv)
    # (mu/3) grad[hbar^3 (D_Vbar(div V) + D_V(div Vbar))]
    dsym2 = (
        -_dot_g(Vbar, grad_X_g)
        + divVbar * Xg
        - _dot_g(Vg, graddivVbar)
        + Xg * divVbar
    )
    row1 += (mu / 3.0) * _grad_c(grid, grid.from_grid(hbar**3 * dsym2))
    # 2 mu Q_bil[hbar, eps b](V, Vbar): the derivative of the quadratic form
    # mu Q coincides with twice the diagonal-normalized bilinear form.
    vb = _dot_g(gbeta, Vg)
    grad_vb = grid.to_grid(_grad_c(grid, grid.from_grid(vb)))
    sym2 = 0.5 * (_dot_g(Vg, grad_vbarbeta) + _dot_g(Vbar, grad_vb))
    row1 += mu * (
        _grad_c(grid, grid.from_grid(hbar**2 * sym2))
        + grid.from_grid((hbar * (0.5 * hbar * dsym2 + 2.0 * sym2))[None] * gbeta)
    )
    # --- N2 zeta
    row1 += grid.from_grid((hbar / eps)[None] * gz_g)
    row1 += grid.from_grid(zg[None] * bbar)
    row1 += mu * _grad_c(grid, grid.from_grid(hbar * abar * zg))
    row1 = grid.project(row1)

    # --- N3 V + N4 zeta
    row2 = (1.0 / eps) * _div_c(grid, grid.from_grid(hbar[None] * Vg))
    row2 += _div_c(grid, grid.from_grid(zg[None] * Vbar))
    row2 = grid.project(row2)
    return row1, row2


def apply_N(
    coeffs: LinearizedCoeffs,
    params: PhysicalParams,
    t: int | float,
    v: GNState,
) -> GNState:
    """Full frozen-coefficient operator (N1 V + N2 zeta, N3 V + N4 zeta).

    `t` is a snapshot index (int) or a time (float, linearly interpolating the
    coefficient snapshots). The mass term bigT d/dt V is *not* included.
    """
    if isinstance(t, (int, np.integer)):
        if not (0 <= t < coeffs.n_times):
            raise IndexError(f"snapshot index {t} out of range 0..{coeffs.n_times - 1}")
        coeffs_t = coeffs.at_time(float(coeffs.times[t]))
    else:
        coeffs_t = coeffs.at_time(float(t))
    row1, row2 = _apply_N_rows(coeffs_t, params, v)
    return GNState(
        V=SpectralField(v.grid, row1), zeta=SpectralField(v.grid, row2[None]), t=v.t
    )


def apply_K(
    coeffs: LinearizedCoeffs,
    params: PhysicalParams,
    t: float,
    v: GNState,
    tol: float = 1e-12,
    x0: np.ndarray | None = None,
) -> tuple[GNState, np.ndarray]:
    """Nonstiff part K(t) v of the linearized system, cancellation-free.

    The linearized system is equivalent to d/dt v + (1/eps) L v + K(t) v = f
    with
        K1 v = bigTbar^{-1}[ N1 V + bbar zeta + mu grad(hbar abar zeta)
                             - (mu/eps) Tbar grad zeta ]
        K2 v = div((zetabar - b) V) + div(zeta Vbar)
    (the 1/eps parts of N2/N3 reduce against L exactly, using
    (hbar-1)/eps = zetabar - b pointwise). One elliptic solve per call;
    returns (K v, raw CG solution vector) so callers can warm-start the next
    solve with the returned vector.
    """
    grid = v.grid
    d = grid.dimension
    mu, eps = params.mu, params.eps
    coeffs_t = coeffs.at_time(float(t))
    hbar = coeffs_t["hbar"]
    Vbar = coeffs_t["Vbar"]
    gbeta = params.grad_beta_grid

    Vc = v.V.coefficients
    zc = v.zeta.coefficients[0]
    Vg = grid.to_grid(Vc)
    zg = grid.to_grid(zc)
    Xc = _div_c(grid, Vc)
    Xg = grid.to_grid(Xc)
    gz_c = _grad_c(grid, zc)
    grad_X_g = grid.to_grid(_grad_c(grid, Xc))
    grad_V_g = np.stack([grid.to_grid(_grad_c(grid, Vc[i])) for i in range(d)])

    divVbar = coeffs_t["divVbar"]
    gradVbar = coeffs_t["gradVbar"]
    graddivVbar = coeffs_t["graddivVbar"]
    grad_vbarbeta = coeffs_t["grad_vbarbeta"]
    abar = coeffs_t["abar"]
    bbar = coeffs_t["bbar"]

    adv = np.stack(
        [_dot_g(Vbar, grad_V_g[i]) + _dot_g(Vg, gradVbar[i]) for i in range(d)]
    )
    rhs = grid.from_grid(hbar[None] * adv)
    dsym2 = (
        -_dot_g(Vbar, grad_X_g)
        + divVbar * Xg
        - _dot_g(Vg, graddivVbar)
        + Xg * divVbar
    )
    rhs += (mu / 3.0) * _grad_c(grid, grid.from_grid(hbar**3 * dsym2))
    vb = _dot_g(gbeta, Vg)
    grad_vb = grid.to_grid(_grad_c(grid, grid.from_grid(vb)))
    sym2 = 0.5 * (_dot_g(Vg, grad_vbarbeta) + _dot_g(Vbar, grad_vb))
    rhs += mu * (
        _grad_c(grid, grid.from_grid(hbar**2 * sym2))
        + grid.from_grid((hbar * (0.5 * hbar * dsym2 + 2.0 * sym2))[None] * gbeta)
    )
    rhs += grid.from_grid(zg[None] * bbar)
    rhs += mu * _grad_c(grid, grid.from_grid(hbar * abar * zg))
    rhs += -(mu / eps) * _apply_T_arrays(grid, hbar, gbeta, gz_c)
    rhs = grid.project(rhs)

    h_field = SpectralField(grid, grid.project(grid.from_grid(hbar)))
    K1 = invert_bigT(params, h_field, SpectralField(grid, rhs), tol=tol, x0=x0)

    flux = (coeffs_t["zetabar"] - params.b_grid)[None] * Vg
    row2 = _div_c(grid, grid.from_grid(flux))
    row2 += _div_c(grid, grid.from_grid(zg[None] * Vbar))
    row2 = grid.project(row2)
    out = GNState(V=K1, zeta=SpectralField(grid, row2[None]), t=v.t)
    return out, K1.coefficients.reshape(-1)


def frechet_F(
    coeffs: LinearizedCoeffs,
    params: PhysicalParams,
    t: int,
    v: GNState,
    tol: float = 1e-12,
) -> GNState:
    """Directional derivative of the nonstiff tendency F at the reference.

    DF[ubar] v = ( bigTbar^{-1}(N1 V + N2 zeta) - (1/eps) grad zeta,
                   N3 V + N4 zeta - (1/eps) div V ).
    Meaningful as the exact derivative only when `coeffs` was built with
    `substituted=False`.
    """
    grid = v.grid
    out, _ = apply_K(coeffs, params, float(coeffs.times[t]), v, tol=tol)
    return out


# ------------------------------------------------------------------- norms

def x_norm_packed(params: PhysicalParams, u: SpectralField, s: float) -> float:
    """Scale norm of a packed (d+1)-component state: ||V||_s + |zeta|_{H^s},
    with ||V||_s = |V|_{H^s} + sqrt(mu) |div V|_{H^s}."""
    grid = u.grid
    d = grid.dimension
    V = SpectralField(grid, u.coefficients[:d])
    zeta = SpectralField(grid, u.coefficients[d:])
    divV = SpectralField(grid, _div_c(grid, u.coefficients[:d])[None])
    return (
        sobolev_norm(V, s)
        + math.sqrt(params.mu) * sobolev_norm(divV, s)
        + sobolev_norm(zeta, s)
    )


def x_norm(params: PhysicalParams, u: GNState, s: float) -> float:
    """Scale norm |(V, zeta)|_{X^s} of a state."""
    return x_norm_packed(params, u.packed(), s)
