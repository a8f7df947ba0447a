#!/usr/bin/env python3
"""Symbolic derivation of the solitary-wave profile used by the reference module.

The fully nonlinear dispersive shallow-water system over a flat bottom, in
nondimensional slow-time variables (h = 1 + eps*zeta), reads

    d/dtau zeta + d/dx (h V) = 0
    d/dtau V + d/dx zeta + eps V d/dx V
        = (mu/(3 h)) d/dx [ h^3 ( V_x_tau + eps V V_xx - eps V_x^2 ) ].

This script substitutes the traveling ansatz

    zeta(x, tau) = a sech^2( kappa (x - c*tau) ),
    V = c * zeta / (1 + eps*zeta),
    c = sqrt(1 + eps*a),
    kappa = sqrt( 3*eps*a / (4*mu*(1 + eps*a)) ),

and reduces both residuals to zero *identically* (as polynomials in
S = sech^2 and T = tanh with T^2 = 1 - S), which certifies the closed-form
constants that `nmshallow.reference.serre_solitary_wave` hard-codes.  It
also prints the frozen numeric values used by the test-suite configuration
(a = 0.2, mu = 0.1, eps = sqrt(mu)).

Run:  python3 scripts/derive_solitary_wave.py
"""
from __future__ import annotations

import sympy as sp


def traveling_residuals():
    """Return (mass_residual, momentum_residual) reduced mod T^2 = 1 - S."""
    a, eps, mu, kappa, c = sp.symbols("a eps mu kappa c", positive=True)
    S, T = sp.symbols("S T")  # S = sech^2(kappa*s), T = tanh(kappa*s)

    # Derivatives with respect to the traveling variable s = x - c*tau:
    #   dS/ds = -2*kappa*S*T,  dT/ds = kappa*S.
    def ds(expr):
        return sp.expand(
            sp.diff(expr, S) * (-2 * kappa * S * T) + sp.diff(expr, T) * (kappa * S)
        )

    zeta = a * S
    h = 1 + eps * zeta
    V = c * zeta / h

    # x-derivative = d/ds, tau-derivative = -c * d/ds on traveling profiles.
    def dx(expr):
        return ds(expr)

    def dtau(expr):
        return -c * ds(expr)

    mass = dtau(zeta) + dx(h * V)

    Vx = dx(V)
    bracket = dtau(Vx) + eps * V * dx(Vx) - eps * Vx**2
    momentum = dtau(V) + dx(zeta) + eps * V * Vx - mu / (3 * h) * dx(h**3 * bracket)

    # Insert the dispersion relations c^2 = 1 + eps*a and
    # kappa^2 = 3*eps*a / (4*mu*c^2); then reduce modulo T^2 = 1 - S.
    subs = {c: sp.sqrt(1 + eps * a), kappa: sp.sqrt(3 * eps * a / (4 * mu * (1 + eps * a)))}

    def reduce_mod(expr):
        expr = sp.together(sp.expand(expr.subs(subs)))
        num, _den = sp.fraction(expr)
        poly = sp.Poly(sp.expand(num), T)
        rem = sp.rem(poly.as_expr(), T**2 - (1 - S), T)
        return sp.simplify(rem)

    return reduce_mod(mass), reduce_mod(momentum)


def main() -> None:
    mass, momentum = traveling_residuals()
    print("mass residual identically zero:    ", mass == 0)
    print("momentum residual identically zero:", momentum == 0)
    if mass != 0 or momentum != 0:
        raise SystemExit("ansatz does NOT satisfy the system -- do not freeze")

    # Frozen constants for the reference configuration.
    a_val = sp.Rational(1, 5)
    mu_val = sp.Rational(1, 10)
    eps_val = sp.sqrt(mu_val)
    c = sp.sqrt(1 + eps_val * a_val)
    kappa = sp.sqrt(3 * eps_val * a_val / (4 * mu_val * (1 + eps_val * a_val)))
    print()
    print("frozen configuration: a = 0.2, mu = 0.1, eps = sqrt(0.1)")
    print("  c     =", sp.nsimplify(c), "=", sp.N(c, 17))
    print("  kappa =", sp.N(kappa, 17))
    print("  fast-time propagation speed c/eps =", sp.N(c / eps_val, 17))
    # Half-width check on the default box (length 40): tail magnitude at the
    # periodic seam must sit far below the residual tolerance 1e-8.
    seam = sp.N(sp.sech(kappa * 20) ** 2, 5)
    print("  sech^2(kappa * 20) =", seam, " (periodization tail)")


if __name__ == "__main__":
    main()
