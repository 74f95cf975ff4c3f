import math

import pytest
from flint import arb
from hypothesis import given, strategies as st

from maassverify import stats
from maassverify.spectral import VerifiedForm


def test_mu2_closed_form():
    for i in range(-400, 401):
        x = i / 200
        assert abs(stats.sato_tate_density(2, x) - stats.mu2_closed(x)) <= 1e-12


@pytest.mark.parametrize("p", [2, 3, 5, stats.INF])
def test_densities_integrate_to_one(p):
    assert abs(stats.density_curve(p).integral() - 1) <= 1e-9


def test_semicircle_centre():
    assert stats.sato_tate_density(stats.INF, 0) == pytest.approx(1 / math.pi, abs=1e-15)


@given(st.sampled_from([2, 3, 5, 7, 101, stats.INF]), st.floats(-2, 2))
def test_density_symmetric_nonnegative(p, x):
    v = stats.sato_tate_density(p, x)
    assert v >= 0 and v == pytest.approx(stats.sato_tate_density(p, -x), rel=1e-14, abs=1e-300)


def test_density_domain():
    with pytest.raises(ValueError):
        stats.sato_tate_density(2, 2.01)
    with pytest.raises(ValueError):
        stats.sato_tate_density(4, 0.0)


@given(st.lists(st.floats(-3, 3), max_size=200), st.integers(1, 50))
def test_histogram_conserves_counts(vals, bins):
    edges, counts = stats.histogram(vals, bins)
    assert sum(counts) == len(vals) and len(edges) == bins + 1


def _form(aps, lam="20"):
    return VerifiedForm(5, "even", arb(lam), 1e-3, 1.0, {1: arb(1), **aps})


def test_ramanujan_verdicts():
    ok = _form({2: arb("1.5", "0.1"), 3: arb("-1.99", "0.001"), 5: arb(-1) / arb(5).sqrt()})
    assert stats.ramanujan_row(ok)["verdict"] == "pass"
    und = _form({2: arb("1.999", "0.01")})
    assert stats.ramanujan_row(und)["verdict"] == "undecided"
    bad = _form({2: arb("2.5", "0.01"), 3: arb("1.999", "0.01")})
    r = stats.ramanujan_row(bad)
    assert r["verdict"] == "fail" and r["p"] == 2


def test_spacing_report():
    fs = [_form({}, lam) for lam in ("30", "31.5", "35")]
    rows = stats.spacing_report(fs)
    assert [r["nearest_gap"] for r in rows] == [1.5, 1.5, 3.5]
    assert stats.spacing_report([]) == []


def test_ap_values_skip_level_primes():
    f = _form({2: arb("0.5"), 4: arb("-0.75"), 5: arb("0.4")})
    assert stats.ap_values([f]) == [0.5]
    assert stats.ap_values([f], 3) == []
