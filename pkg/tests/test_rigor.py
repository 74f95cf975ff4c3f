import math
import random

import mpmath
import pytest
from flint import acb, arb
from hypothesis import given, strategies as st

from maassverify import rigor
from maassverify.rigor import (
    DomainError,
    QuadratureError,
    RigorError,
    ball,
    ball_arith,
    ball_fn,
    from_decimal,
    heuristic_quadrature,
    precision,
    quadrature,
    to_decimal,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
radius = st.floats(min_value=0, max_value=1.0)


def test_exact_add():
    assert ball_arith(arb(1), arb(1), "add") == arb(2)


def test_absorbing_zero():
    z = ball_arith(ball(3.5, 0.25), arb(0), "mul")
    assert z.mid() == 0 and z.rad() == 0


def test_interval_product():
    x = ball(1, 0.1)
    y = ball_arith(x, x, "mul")
    assert y.lower() <= 0.81 and y.upper() >= 1.21


def test_div_by_zero_ball():
    with pytest.raises(RigorError):
        ball_arith(arb(1), ball(0, 1e-3), "div")


def test_fn_examples():
    assert ball_fn(arb(0), "exp") == arb(1)
    lg = ball_fn(arb(1), "log")
    assert lg.contains(0) and lg.rad() < 1e-15
    x = arb(7.9057).acosh()
    c = ball_fn(x, "cosh")
    assert abs(float(c.mid()) - 7.9057) < 1e-12


@pytest.mark.parametrize("f", ["log", "sqrt"])
def test_domain(f):
    with pytest.raises(DomainError):
        ball_fn(ball(0.5, 1.0), f)
    with pytest.raises(DomainError):
        ball_fn(arb(-2), f)


def test_unknown_op():
    with pytest.raises(ValueError):
        ball_arith(arb(1), arb(1), "pow")


_MP = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}
_MPF = {
    "exp": mpmath.exp,
    "log": mpmath.log,
    "cosh": mpmath.cosh,
    "sinh": mpmath.sinh,
    "sqrt": mpmath.sqrt,
    "cos": mpmath.cos,
}


def test_containment_fuzz():
    # 10^4 random point evaluations against 200-bit mpmath
    rng = random.Random(20240611)
    mpmath.mp.prec = 200
    for _ in range(10_000):
        op = rng.choice(list(_MP) + list(_MPF))
        a_mid, a_rad = rng.uniform(-20, 20), rng.choice([0.0, 1e-12, 1e-3, 0.5])
        b_mid, b_rad = rng.uniform(-20, 20), rng.choice([0.0, 1e-9, 0.1])
        if op in ("log", "sqrt"):
            a_mid = abs(a_mid) + a_rad + 0.01
        if op in ("exp", "cosh", "sinh"):
            a_mid /= 4
        a, b = ball(a_mid, a_rad), ball(b_mid, b_rad)
        # sample points inside the balls, formed without float rounding
        pa = mpmath.mpf(a_mid) + mpmath.mpf(rng.uniform(-1, 1)) * mpmath.mpf(a_rad)
        pb = mpmath.mpf(b_mid) + mpmath.mpf(rng.uniform(-1, 1)) * mpmath.mpf(b_rad)
        if op in _MP:
            if op == "div" and b.contains(0):
                continue
            out = ball_arith(a, b, op)
            exact = _MP[op](mpmath.mpf(pa), mpmath.mpf(pb))
        else:
            out = ball_fn(a, op)
            exact = _MPF[op](mpmath.mpf(pa))
        lo, hi = out.lower(), out.upper()
        assert mpmath.mpf(lo.str(40, radius=False)) - mpmath.mpf(10) ** -35 * (1 + abs(exact)) <= exact
        assert exact <= mpmath.mpf(hi.str(40, radius=False)) + mpmath.mpf(10) ** -35 * (1 + abs(exact))


@given(finite, radius, finite, radius)
def test_radius_never_shrinks_add(am, ar, bm, br):
    a, b = ball(am, ar), ball(bm, br)
    s = ball_arith(a, b, "add")
    assert float(s.rad()) >= max(float(a.rad()), float(b.rad())) * (1 - 1e-12)


@given(st.floats(0.5, 10), radius, st.floats(0.5, 10), radius)
def test_radius_mul_lipschitz(am, ar, bm, br):
    a, b = ball(am, ar), ball(bm, br)
    p = ball_arith(a, b, "mul")
    # |d(ab)| >= |b| da at the midpoint; the ball must account for it
    assert float(p.rad()) >= ar * (bm - br) * (1 - 1e-9)


@given(finite, st.floats(min_value=0, max_value=10.0))
def test_decimal_round_trip(m, r):
    x = ball(m, r)
    ms, rs = to_decimal(x)
    y = from_decimal(ms, rs)
    assert y.mid() == x.mid()
    assert y.contains(x)
    assert float(y.rad()) <= float(x.rad()) * (1 + 1e-8)


def test_decimal_exact_strings():
    assert to_decimal(arb(0.5)) == ("0.5", "0")
    assert to_decimal(arb(-3)) == ("-3", "0")
    assert from_decimal("0.1").contains(arb(1) / 10)


def test_quadrature_zero():
    v = quadrature(lambda x: x * 0, 0, 1)
    assert v.mid() == 0 and float(v.rad()) == 0


def test_quadrature_examples():
    with precision(128):
        v = quadrature(lambda x: x, 0, 1, tol=1e-30)
        assert v.contains(arb(1) / 2) and float(v.rad()) < 1e-30
        s = quadrature(lambda x: x.sin(), 0, arb.pi(), tol=1e-30)
        assert s.contains(2) and float(s.rad()) < 1e-29


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=48))
def test_quadrature_polynomial_exact(coeffs):
    # degree <= 2n-1 with n = 24
    def f(x):
        acc = 0 * x
        for c in reversed(coeffs):
            acc = acc * x + c
        return acc

    exact = sum(arb(c) * (1 - (-1) ** (k + 1)) / (k + 1) for k, c in enumerate(coeffs))
    with precision(128):
        v = quadrature(f, -1, 1, tol=1e-25)
    assert v.overlaps(exact)
    assert float(v.rad()) < 1e-20 * (1 + sum(abs(c) for c in coeffs))


def test_quadrature_breakpoints():
    with precision(100):
        v = quadrature(lambda x: x * x, -1, 2, breakpoints=[0, 1], tol=1e-25)
    assert v.overlaps(arb(3))


def test_quadrature_near_pole():
    with precision(128):
        v = quadrature(lambda x: 1 / (x * x + arb("1e-6")), -1, 1, tol=1e-20)
    exact = 2000 * arb(1000).atan()
    assert v.overlaps(exact) and float(v.rad()) < 1e-17


def test_quadrature_unreachable():
    # a genuine pole inside the interval cannot be certified
    with pytest.raises(QuadratureError) as ei:
        with precision(64):
            quadrature(lambda x: 1 / (x - arb("0.3")), 0, 1, tol=1e-10, max_depth=6)
    assert ei.value.achieved is not None


def test_vector_integrand():
    with precision(100):
        a, b = quadrature(lambda x: [x, x * x], 0, 1, tol=1e-25)
    assert a.overlaps(arb(1) / 2) and b.overlaps(arb(1) / 3)


def test_heuristic_flagged():
    h = heuristic_quadrature(lambda x: x.sin(), 0, math.pi)
    assert isinstance(h, rigor.Heuristic)
    assert abs(float(h.value.mid()) - 2) < 1e-12


@given(st.integers(-10**12, 10**12), st.integers(-80, 10), st.integers(1, 2**40), st.integers(-120, -1))
def test_decimal_round_trip_is_bit_exact(man, exp, rman, rexp):
    x = arb((man, exp)) + arb(0, arb((rman, rexp)))
    y = from_decimal(*to_decimal(x))
    assert y.mid() == x.mid() and y.rad() == x.rad()
    assert to_decimal(y) == to_decimal(x)
