"""Sato-Tate reference densities and simple reports over verified forms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from flint import arb

from .numtheory import factorize

INF = math.inf


def _is_prime(p) -> bool:
    return isinstance(p, int) and p >= 2 and factorize(p) == {p: 1}


def f_p(p, x: float) -> float:
    """Correction factor f_p(x); identically 1 at p = infinity."""
    if p == INF:
        return 1.0
    return (p + 1) / ((math.sqrt(p) + 1 / math.sqrt(p)) ** 2 - x * x)


def sato_tate_density(p, x: float) -> float:
    """Density of mu_p at x in [-2, 2]; p a prime or math.inf."""
    if abs(x) > 2:
        raise ValueError(f"x={x} outside [-2, 2]")
    if p != INF and not _is_prime(p):
        raise ValueError(f"p={p!r} must be a prime or inf")
    return f_p(p, x) * math.sqrt(max(1 - x * x / 4, 0.0)) / math.pi


def mu2_closed(x: float) -> float:
    return 3 * math.sqrt(4 - x * x) / ((9 - 2 * x * x) * math.pi)


@dataclass
class DensityCurve:
    p: object  # prime or inf
    samples: list  # (x, density)

    def integral(self) -> float:
        from scipy.integrate import quad

        return quad(lambda x: sato_tate_density(self.p, x), -2, 2, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def density_curve(p, n: int = 401) -> DensityCurve:
    xs = np.linspace(-2.0, 2.0, n)
    return DensityCurve(p, [(float(x), sato_tate_density(p, float(x))) for x in xs])


def histogram(values, bins: int, lo: float = -2.0, hi: float = 2.0):
    """(edges, counts); the range widens to cover stray values so counts always sum to len(values)."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size:
        lo, hi = min(lo, float(vals.min())), max(hi, float(vals.max()))
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    return edges.tolist(), counts.tolist()


def _primes_upto(n):
    return [p for p in range(2, n + 1) if factorize(p) == {p: 1}]


def ramanujan_row(form) -> dict:
    """Worst |a(p)| - 2 over the primes we have, with a verdict.

    pass: every |a(p)| <= 2 rigorously; fail: some |a(p)| > 2 rigorously.
    """
    worst, worst_p = None, None
    verdict = "pass"
    for p in _primes_upto(max(form.coeffs, default=1)):
        if p not in form.coeffs:
            continue
        excess = abs(form.coeffs[p]) - 2
        if worst is None or excess.upper() > worst.upper():
            worst, worst_p = excess, p
        if excess.lower() > 0:
            verdict = "fail"
        elif excess.upper() > 0 and verdict == "pass":
            verdict = "undecided"
    if worst is None:
        return {"verdict": "undecided", "p": None, "excess_mid": None, "excess_rad": None}
    return {
        "verdict": verdict,
        "p": worst_p,
        "excess_mid": float(worst.mid()),
        "excess_rad": float(worst.rad()),
    }


def ap_values(forms, p: int | None = None) -> list[float]:
    """Midpoints of a(p) for p coprime to the level; all primes or a fixed p."""
    out = []
    for f in forms:
        for q, v in sorted(f.coeffs.items()):
            if factorize(q) == {q: 1} and f.level % q and (p is None or q == p):
                out.append(float(v.mid()))
    return out


def spacing_report(forms) -> list[dict]:
    """Nearest-neighbour gaps between sorted eigenvalue midpoints."""
    lams = sorted((float(f.lam.mid()), f.parity) for f in forms)
    rows = []
    for i, (lam, par) in enumerate(lams):
        gaps = []
        if i > 0:
            gaps.append(lam - lams[i - 1][0])
        if i + 1 < len(lams):
            gaps.append(lams[i + 1][0] - lam)
        rows.append({"lambda": lam, "parity": par, "nearest_gap": min(gaps) if gaps else None})
    return rows

