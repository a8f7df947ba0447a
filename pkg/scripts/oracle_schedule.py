"""Exact-arithmetic oracle for the iteration-schedule constants.

Recomputes delta, q, alpha, P_min and the contraction-rate interval with
`fractions.Fraction` plus exact radical handling, independently of the
floating-point implementation in `nmshallow.nash_moser`.  Frozen expected
values in the test suite were produced by this script.

Run:  python3 scripts/oracle_schedule.py
"""
from __future__ import annotations

import math
from fractions import Fraction


def radical(x: Fraction) -> tuple[Fraction | None, float]:
    """Return (exact sqrt if x is a perfect rational square else None, float sqrt)."""
    num, den = x.numerator, x.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return Fraction(rn, rd), math.sqrt(num / den)
    return None, math.sqrt(num / den)


def schedule(m, d1, d1p, D, P=None, margin=Fraction(1, 2)):
    m, d1, d1p, D = map(Fraction, (m, d1, d1p, D))
    delta = max(d1, d1p + m)
    q = D - m - d1p
    assert q > 0 and D > delta
    rad = 2 * delta * (delta + q)  # alpha = delta + sqrt(rad)
    rad_exact, rad_f = radical(rad)
    alpha = (delta + rad_exact) if rad_exact is not None else float(delta) + rad_f
    # P_min = delta + (D/q) * (3 delta + 2 q + 2 sqrt(rad))
    if rad_exact is not None:
        p_min = delta + (D / q) * (3 * delta + 2 * q + 2 * rad_exact)
    else:
        p_min = float(delta) + float(D / q) * float(3 * delta + 2 * q) + 2 * float(D / q) * rad_f
    out = {"delta": delta, "q": q, "alpha": alpha, "p_min": p_min}
    if P is not None:
        P = Fraction(P)
        mu_hat = 1 - D / (P - delta)
        if rad_exact is not None:
            rbar = 2 * mu_hat * q / (q + alpha * (1 - mu_hat))
            r_lo = Fraction(1) if delta == 0 else 1 + delta / alpha
            out.update(
                mu_hat=mu_hat,
                rbar=rbar,
                r_lo=r_lo,
                r=(1 - margin) * r_lo + margin * rbar,
            )
    return out


def show(tag, res):
    print(f"--- {tag} ---")
    for k, v in res.items():
        if isinstance(v, Fraction):
            print(f"  {k} = {v} = {float(v)!r}")
        else:
            print(f"  {k} = {v!r}")


if __name__ == "__main__":
    show("shallow-water set (2, 2, 0, 4), P = 38.5", schedule(2, 2, 0, 4, P=Fraction(77, 2)))
    show("second-order set (0, 1, 0, 2)", schedule(0, 1, 0, 2))
    show("degenerate set (0, 0, 0, 2), P = 6", schedule(0, 0, 0, 2, P=6))
