import math
import random

import pytest
from flint import arb, ctx
from hypothesis import given, settings, strategies as st

from maassverify.numtheory import ArithContext, class_table
from maassverify.rigor import precision
from maassverify.testfunc import build_package, eval_h
from maassverify.traceformula import (
    TraceEngine,
    TraceTable,
    build_elliptic_table,
    elliptic_f_direct,
    elliptic_sum,
    hyperbolic_sum,
    identity_term,
    parabolic_terms,
    parity_traces,
    residual_term,
    silver,
    table_index,
    taylor_order,
    trace,
)
from oracles import FourierLambdaG, geometric_side_float


@pytest.fixture(autouse=True)
def _prec():
    with precision(128):
        yield


@pytest.fixture(scope="module")
def store():
    with precision(128):
        return class_table(3000, dmin=-300)


@pytest.fixture(scope="module")
def pkg():
    with precision(128):
        return build_package("4.5", 5, variants=("1", "lam"))


def engine(pkg, store, N=5, variants=("1", "lam"), n_max=12):
    return TraceEngine(ArithContext(N), pkg, store, variants, n_max=n_max)


@pytest.fixture(scope="module")
def eng5(pkg, store):
    with precision(128):
        e = engine(pkg, store)
        e.ensure_table()
        return e


def test_taylor_order():
    assert taylor_order(2.0**-64) == 51 == math.ceil(64 * math.log(2) / math.log(1 + math.sqrt(2)))
    c = silver()
    K = taylor_order(1e-20)
    assert ((c - 1) / (c + 1)) ** K < 1e-20 <= ((c - 1) / (c + 1)) ** (K - 1)


@given(st.floats(1e-6, 1.0))
def test_table_index_keeps_rho_small(x):
    j = table_index(x)
    xj = (1 + math.sqrt(2)) ** -j
    assert abs(x / xj - 1) <= math.sqrt(2) - 1 + 1e-12


def test_sample_count(pkg):
    tab = build_elliptic_table(pkg, 1e-12, 1e-3)
    assert len(tab.points) == table_index(1e-3) + 1
    assert abs(len(tab.points) - math.log(1e3) / math.log(1 + math.sqrt(2))) <= 2


def test_table_matches_quadrature(eng5, pkg):
    tab = eng5.etable
    rng = random.Random(7)
    for _ in range(40):
        x = arb(repr(rng.uniform(tab.x_min, 1)))
        a = tab.f(x)
        b = elliptic_f_direct(pkg, x)
        assert abs(a - b).upper() <= tab.eps + a.rad() + b.rad()


def test_table_exact_at_centre(eng5):
    tab = eng5.etable
    x = tab.points[3]
    assert tab.f(x).rad() < 1e-20


def test_f_positive_decreasing(eng5):
    vals = [eng5.etable.f(arb(k) / 20) for k in range(1, 21)]
    assert all(v > 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_granularity_agreement(pkg, store):
    e1 = engine(pkg, store, variants=("1",))
    e1.ensure_table(1e-12)
    e2 = engine(pkg, store, variants=("1",))
    e2.ensure_table(1e-13)
    a, b = trace(1, e1)["1"], trace(1, e2)["1"]
    assert a.overlaps(b)


def test_hyperbolic_empty_for_small_support(store):
    small = build_package("1.9", 5)
    e = engine(small, store, variants=("1",))
    assert hyperbolic_sum(1, e)[0] == 0


def test_hyperbolic_negative_n_finite(eng5):
    (v, _) = hyperbolic_sum(-1, eng5)
    assert v.is_finite() and v != 0


def test_parabolic_vanishes_composite(pkg, store):
    e = engine(pkg, store, N=6, variants=("1",))
    assert parabolic_terms(1, e)[0] == 0 and parabolic_terms(5, e)[0] == 0


def test_parabolic_N2_n1(pkg, store):
    e = engine(pkg, store, N=2, variants=("1",))
    got = parabolic_terms(1, e)[0]
    X = float(pkg.X.mid())
    L2 = arb(2).log()
    want = arb(0)
    r = 0
    while 2 * r * math.log(2) <= X + 1:
        want -= 2 * L2 * pkg.g(-2 * r * L2) / arb(2) ** r
        r += 1
    assert abs(got - want).upper() <= got.rad() + want.rad() + 1e-30


def test_identity_zero_off_squares(eng5):
    assert identity_term(2, eng5) == [0, 0]
    assert identity_term(-4, eng5) == [0, 0]


def test_identity_N6_prefactor(pkg, store):
    e = engine(pkg, store, N=6, variants=("1",))
    got = identity_term(1, e)[0]
    assert (got + e.identity_integral("1") / 6).contains(0)
    # the integral itself against scipy with g from the Fourier route
    from scipy.integrate import quad

    G = FourierLambdaG(4.5, 5, poly=(1.0,))
    I = 2 * quad(lambda u: 2 * G.second_at_zero() if u < 1e-6 else G.deriv(u) / math.sinh(u / 2), 0, 4.5,
                 limit=400, epsabs=1e-13)[0]
    assert abs(float(e.identity_integral("1").mid()) - I) < 1e-9


def test_residual_vanishes_for_lambda_variant(eng5):
    assert abs(residual_term(3, eng5)[1]).upper() < 1e-20


def test_trace_one_nonnegative(eng5):
    assert trace(1, eng5)["1"].upper() >= 0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_lambda_operator_vs_fourier_route(eng5, n):
    G = FourierLambdaG(4.5, 5)
    got = trace(n, eng5)["lam"]
    want = geometric_side_float(n, 5, G, lambda D: float(eng5.cN(D).mid()))
    assert abs(float(got.mid()) - want) <= 1e-9 + float(got.rad())


def test_parity_split(eng5):
    even, odd = parity_traces(3, eng5)
    t3 = trace(3, eng5)
    for v in ("1", "lam"):
        assert (even[v] + odd[v] - t3[v]).contains(0)


def test_square_identity_only_in_positive_n(eng5):
    assert identity_term(-9, eng5) == [0, 0] and identity_term(9, eng5) != [0, 0]


def test_support_cutoff_by_shrinking_X(store):
    # with X below 2 log((1+sqrt5)/2) no hyperbolic term for n = -1 survives
    tiny = build_package("0.9", 5)
    e = engine(tiny, store, variants=("1",))
    assert hyperbolic_sum(-1, e)[0] == 0


def test_g_at_ball_straddling_zero(pkg):
    # regression: a ball around 0 used to pick the last piece
    v = pkg.g(arb(0, 1e-12))
    assert v.contains(pkg.g(arb(0))) and v.rad() < 1e-9


def test_trace_table_round_trip(eng5, tmp_path):
    tt = TraceTable(5, "4.5", 5, "abc")
    for n in (1, -1, 2):
        tt.get_or_compute(n, eng5)
    p = tmp_path / "t.json"
    tt.save(p)
    back = TraceTable.load(p)
    for n in (1, -1, 2):
        for v in ("1", "lam"):
            x, y = tt.get(n, v), back.get(n, v)
            assert x.mid() == y.mid() and x.rad() == y.rad()
    with pytest.raises(KeyError):
        back.get(7)


def test_synthetic_two_form_parity():
    # two fake forms, one even and one odd: t(n) = h1 a1(n) + h2 a2(n), t(-n) = h1 a1(n) - h2 a2(n)
    h1, h2, a1, a2 = arb("0.7"), arb("0.2"), arb("-0.4"), arb("1.1")
    tt = TraceTable(1, "1", 5, "syn")
    tt.put(2, {"1": h1 * a1 + h2 * a2})
    tt.put(-2, {"1": h1 * a1 - h2 * a2})
    assert (tt.parity(2, "even") - h1 * a1).contains(0)
    assert (tt.parity(2, "odd") - h2 * a2).contains(0)
