"""Ball arithmetic helpers and certified one-dimensional quadrature.

Every real quantity in the package is an ``flint.arb`` ball (midpoint plus
radius).  This module adds the pieces flint does not provide directly:
explicit failure on loss of rigor, a run-wide precision context, exact
decimal (de)serialization of balls, and a Gauss-Legendre integrator whose
truncation error is certified by bounding the integrand on Bernstein
ellipses.
"""

from __future__ import annotations

import contextlib
import math
from fractions import Fraction
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

from flint import acb, arb, ctx

BallReal = arb

DEFAULT_PREC = 128


class RigorError(ArithmeticError):
    """An operation could not produce a finite enclosure."""


class DomainError(RigorError):
    pass


class QuadratureError(RigorError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily set the working precision (in bits) for all ball ops."""
    old = ctx.prec
    ctx.prec = int(bits)
    try:
        yield
    finally:
        ctx.prec = old


def ball(mid, rad=0) -> arb:
    if isinstance(mid, Fraction):
        mid = arb(mid.numerator) / mid.denominator
    x = arb(mid)
    if rad:
        x = x + arb(0, rad)
    return x


def mid(x: arb) -> float:
    return float(x.mid())


def rad(x: arb) -> float:
    return float(x.rad())


def upper(x) -> float:
    """Float upper bound (rounded outward)."""
    u = x.upper() if isinstance(x, arb) else arb(x).upper()
    f = float(u)
    return math.nextafter(f, math.inf) if f < math.inf else f


def lower(x) -> float:
    lo = x.lower() if isinstance(x, arb) else arb(x).lower()
    f = float(lo)
    return math.nextafter(f, -math.inf) if f > -math.inf else f


def is_finite(x) -> bool:
    if isinstance(x, acb):
        return x.real.is_finite() and x.imag.is_finite()
    return x.is_finite()


def ball_arith(a: arb, b: arb, op: str) -> arb:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if arb(b).contains(0):
            raise RigorError(f"division by a ball containing zero: {b}")
        return a / b
    raise ValueError(f"unknown operation {op!r}")


_FUNCS = {
    "exp": lambda x: x.exp(),
    "log": lambda x: x.log(),
    "cosh": lambda x: x.cosh(),
    "sinh": lambda x: x.sinh(),
    "sqrt": lambda x: x.sqrt(),
    "cos": lambda x: x.cos(),
}


def ball_fn(x: arb, f: str) -> arb:
    try:
        fn = _FUNCS[f]
    except KeyError:
        raise ValueError(f"unknown function {f!r}") from None
    if f in ("log", "sqrt") and not x > 0:
        raise DomainError(f"{f} needs a strictly positive ball, got {x}")
    y = fn(x)
    if not y.is_finite():
        raise RigorError(f"{f}({x}) has no finite enclosure")
    return y


def union(*xs):
    out = xs[0]
    for x in xs[1:]:
        out = out.union(x)
    return out


# -- exact decimal serialization -------------------------------------------


def _dyadic_to_decimal(man: int, exp: int) -> str:
    if exp >= 0:
        return str(man << exp)
    k = -exp
    digits = str(abs(man) * 5**k)
    sign = "-" if man < 0 else ""
    if len(digits) <= k:
        digits = "0" * (k - len(digits) + 1) + digits
    intpart, frac = digits[:-k], digits[-k:].rstrip("0")
    return sign + intpart + ("." + frac if frac else "")


def to_decimal(x: arb) -> tuple[str, str]:
    """Exact decimal strings for the midpoint and radius of ``x``."""
    m = x.mid()
    man, exp = (int(v) for v in m.man_exp())
    r = x.rad()
    rman, rexp = (int(v) for v in r.man_exp())
    return _dyadic_to_decimal(man, exp), _dyadic_to_decimal(rman, rexp)


def _dyadic(q: Fraction):
    den = q.denominator
    if den & (den - 1):
        return None
    return arb((q.numerator, -(den.bit_length() - 1)))


def from_decimal(mid_s: str, rad_s: str = "0") -> arb:
    """Inverse of :func:`to_decimal`; the result always contains the value."""
    m, r = Fraction(mid_s), Fraction(rad_s)
    mb = _dyadic(m)
    if mb is None:
        mb = arb(m.numerator) / m.denominator
    rb = _dyadic(r)
    if rb is None:
        rb = (arb(r.numerator) / r.denominator).upper()
    if mb.rad() == 0:
        return _with_radius(mb, rb) if r else mb
    return mb + arb(0, rb)


def _with_radius(mb: arb, rb: arb) -> arb:
    # the mag conversion in arb(mid, rad) rounds up by one ulp even for
    # representable radii; step back one ulp and keep it only if the radius
    # comes out exactly rb, so serialized balls reload bit-identical
    x = arb(mb, rb)
    if x.rad() == rb:
        return x
    man, e = (int(v) for v in rb.man_exp())
    top = e + man.bit_length() - 30
    for k in range(3):  # at a power of two the ulp below is half as big
        y = arb(mb, rb - arb((1, top - k)))
        if y.rad() == rb:
            return y
    return x


# -- certified Gauss-Legendre quadrature ------------------------------------


@lru_cache(maxsize=64)
def _gl_rule(n: int, prec: int):
    with precision(prec + 20):
        pts = [arb.legendre_p_root(n, k, weight=True) for k in range(n)]
    return tuple(p[0] for p in pts), tuple(p[1] for p in pts)


class Heuristic(NamedTuple):
    """Integral estimate whose radius is NOT certified."""

    value: arb


_RHOS = (12.0, 6.0, 3.5, 2.2, 1.6, 1.3, 1.15)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _ellipse_sup(f, c: arb, r: arb, rho: float, ncover: int):
    """Upper bounds for sup |f| over the Bernstein ellipse E_rho mapped to
    [c-r, c+r], one per component.  The ellipse is covered by disks centred
    on the real axis; a finite enclosure on every disk also certifies that f
    is holomorphic there (no division by a ball containing zero)."""
    semi_a = r * arb((rho + 1 / rho) / 2)
    semi_b = r * arb((rho - 1 / rho) / 2)
    h = semi_a / ncover
    cover_rad = (h * h + semi_b * semi_b).sqrt().upper()
    sups = None
    for k in range(ncover):
        cx = c - semi_a + (2 * k + 1) * h
        z = acb(arb(cx.mid(), cover_rad), arb(0, cover_rad))
        vals = _as_list(f(z))
        bounds = []
        for v in vals:
            if not is_finite(v):
                return None
            bounds.append(abs(acb(v)).upper())
        sups = bounds if sups is None else [max(a, b) for a, b in zip(sups, bounds)]
    return sups


def _gl_panel(f, a: arb, b: arb, n: int, ncover: int):
    nodes, weights = _gl_rule(n, ctx.prec)
    c = (a + b) / 2
    r = (b - a) / 2
    total = None
    for x, w in zip(nodes, weights):
        vals = _as_list(f(c + r * x))
        if total is None:
            total = [w * v for v in vals]
        else:
            total = [t + w * v for t, v in zip(total, vals)]
    total = [r * t for t in total]
    best = None
    for rho in _RHOS:
        sups = _ellipse_sup(f, c, r, rho, ncover)
        if sups is None:
            continue
        factor = r * arb(64) / 15 * arb(rho) ** (-(2 * n - 2)) / (arb(rho) ** 2 - 1)
        errs = [(factor * s).upper() for s in sups]
        if best is None or max(errs) < max(best):
            best = errs
    return total, best


def _real_part(v):
    return v.real if isinstance(v, acb) else v


def quadrature(
    f: Callable,
    a,
    b,
    breakpoints: Sequence = (),
    tol: float = 1e-30,
    n: int = 24,
    ncover: int = 12,
    max_depth: int = 48,
):
    """Certified integral of ``f`` over ``[a, b]``.

    ``f`` must accept both ``arb`` and ``acb`` arguments and be holomorphic
    on a neighbourhood of every smooth piece; ``breakpoints`` lists the points
    where it is only piecewise smooth.  ``f`` may return a single ball or a
    list of balls (vector integrand).  The returned enclosure has radius at
    most ``tol`` plus the accumulated evaluation radius; otherwise
    :class:`QuadratureError` is raised carrying the radius achieved.
    """
    a, b = arb(a), arb(b)
    cuts = [a] + sorted((arb(p) for p in breakpoints if a < arb(p) < b), key=lambda p: float(p.mid())) + [b]
    length = b - a
    result = None
    worst = 0.0
    stack = [(cuts[i], cuts[i + 1], 0) for i in range(len(cuts) - 1)]
    while stack:
        lo, hi, depth = stack.pop()
        local_tol = arb(tol) * (hi - lo) / length
        vals, errs = _gl_panel(f, lo, hi, n, ncover)
        ok = errs is not None and all(e < local_tol.upper() for e in errs)
        if not ok and depth < max_depth:
            m = (lo + hi) / 2
            m = arb(m.mid())
            stack.append((lo, m, depth + 1))
            stack.append((m, hi, depth + 1))
            continue
        if errs is None:
            raise QuadratureError(f"integrand not holomorphic near [{lo}, {hi}]", achieved=math.inf)
        if not ok:
            worst = max(worst, max(float(e) for e in errs))
        vals = [_real_part(v) + arb(0, e) for v, e in zip(vals, errs)]
        result = vals if result is None else [s + v for s, v in zip(result, vals)]
    if worst > 0 and worst > 1e3 * tol:
        raise QuadratureError(f"tolerance {tol:g} not reached (panel error {worst:g})", achieved=worst)
    return result if len(result) > 1 else result[0]


def heuristic_quadrature(
    f: Callable,
    a,
    b,
    breakpoints: Sequence = (),
    tol: float = 1e-20,
    n: int = 20,
    max_depth: int = 24,
) -> Heuristic:
    """Composite Gauss-Legendre for integrands that are only evaluable on the
    real line.  Panels are refined until an n-point and a 2n-point rule
    agree; the radius is ten times the discrepancy and is not a proof."""
    a, b = arb(a), arb(b)
    cuts = [a] + sorted((arb(p) for p in breakpoints if a < arb(p) < b), key=lambda p: float(p.mid())) + [b]
    length = b - a

    def rule(lo, hi, k):
        nodes, weights = _gl_rule(k, ctx.prec)
        c, r = (lo + hi) / 2, (hi - lo) / 2
        s = arb(0)
        for x, w in zip(nodes, weights):
            s += w * f(c + r * x)
        return r * s

    total = arb(0)
    stack = [(cuts[i], cuts[i + 1], 0) for i in range(len(cuts) - 1)]
    while stack:
        lo, hi, depth = stack.pop()
        coarse, fine = rule(lo, hi, n), rule(lo, hi, 2 * n)
        diff = abs((fine - coarse).mid())
        # rounding noise floor: two rules cannot agree better than a few ulps
        noise = abs(fine.mid()) * arb(2) ** (8 - ctx.prec)
        local_tol = max((arb(tol) * (hi - lo) / length).upper(), fine.rad(), noise.upper())
        if diff * 10 > local_tol and depth < max_depth:
            m = arb(((lo + hi) / 2).mid())
            stack.append((lo, m, depth + 1))
            stack.append((m, hi, depth + 1))
            continue
        total += fine + arb(0, arb(10) * diff)
    return Heuristic(total)
