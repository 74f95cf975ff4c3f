"""Atkin-Lehner signs and the Fricke eigenvalue from the functional
equation f(z) = w f(-1/Nz) restricted to the imaginary axis."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from flint import acb, arb

from .numtheory import factorize
from .rigor import DomainError, RigorError, quadrature
from .spectral import extend_hecke

THETA = 1.758  # bound for |a_n / sqrt(n)| from Kim-Sarnak
CASES = ("even-", "even+", "odd+", "odd-")


def _case(parity: str, w: int) -> str:
    return f"{parity}{'+' if w == 1 else '-'}"


@dataclass(frozen=True)
class SignHypothesis:
    signs: dict  # p | N -> +-1, the sign of a(p)
    parity: str = "even"

    @property
    def w(self) -> int:
        out = 1
        for s in self.signs.values():
            out *= -s
        return out

    @property
    def case(self) -> str:
        return _case(self.parity, self.w)


def hypotheses(N: int, parity: str = "even") -> list[SignHypothesis]:
    ps = sorted(factorize(N))
    return [SignHypothesis(dict(zip(ps, ss)), parity) for ss in itertools.product((1, -1), repeat=len(ps))]


# -- Bessel ------------------------------------------------------------------


def _truncation(y: arb, tol: float) -> float:
    """T with exp(-y cosh T) / (y sinh T) < tol."""
    yl = float(y.lower())
    T = 1.0
    while math.exp(-yl * math.cosh(T)) / (yl * math.sinh(T)) >= tol:
        T += 0.25
        if T > 60:
            raise DomainError(f"y={yl:g} too small for truncation at tol={tol:g}")
    return T


def K_imag_order(R, y, tol: float = 1e-30) -> arb:
    """K_{iR}(y) = int_0^inf exp(-y cosh t) cos(R t) dt, truncated at T with
    the tail bounded by exp(-y cosh T)/(y sinh T)."""
    R, y = arb(R), arb(y)
    if not y > 0:
        raise DomainError(f"need y > 0, got {y}")
    T = _truncation(y, tol / 4)

    def f(t):
        if isinstance(t, acb):
            return (-acb(y) * t.cosh()).exp() * (acb(R) * t).cos()
        return (-y * t.cosh()).exp() * (R * t).cos()

    # panels about one oscillation long keep the ellipse bounds tame
    npan = max(4, int(T * (float(R.upper()) + float(y.upper())) / 2) + 1)
    bps = [arb(T) * k / npan for k in range(1, npan)]
    body = quadrature(f, 0, T, breakpoints=bps, tol=tol / 2)
    Tb = arb(T)
    tail = (-y * Tb.cosh()).exp() / (y * Tb.sinh())
    return body + arb(0, tail.upper())


def envelope(y) -> arb:
    return arb.pi().sqrt() / arb(2).sqrt() * (-arb(y)).exp()


def eval_W(R, y, tol: float = 1e-30) -> arb:
    """W_{iR}(y) = sqrt(y) K_{iR}(y), checked against |W| <= sqrt(pi/2) e^{-y}."""
    y = arb(y)
    out = y.sqrt() * K_imag_order(R, y, tol)
    env = envelope(y)
    if out.lower() > env.upper() or out.upper() < -env.upper():
        raise RigorError(f"W_iR({y}) = {out} violates the envelope {env}")
    return out


class BesselEvaluator:
    """Memoized W for one spectral parameter."""

    def __init__(self, R, tol: float = 1e-30):
        self.R = arb(R)
        self.tol = tol
        self._cache: dict = {}

    def __call__(self, y) -> arb:
        key = arb(y).mid().str(40, radius=False)
        if key not in self._cache:
            self._cache[key] = eval_W(self.R, y, self.tol)
        return self._cache[key]


def W_case(case: str, W: BesselEvaluator, y: arb, N: int) -> arb:
    """The combination of W_{iR} whose weighted sum vanishes for the given (parity, w)."""
    s2 = arb(2).sqrt()
    if case == "even-":
        return W(y)
    if case == "even+":
        return W(y * s2) - W(y / s2)
    pref = y * arb(N).sqrt() / (2 * arb.pi())
    if case == "odd+":
        return pref * W(y)
    if case == "odd-":
        return pref * (W(y * s2) - W(y / s2) / 2)
    raise ValueError(f"unknown case {case!r}")


def tail_bound(case: str, M: int, N: int) -> arb:
    """Bound on |sum_{n > M} a_n/sqrt(n) W(2 pi n / sqrt N)|."""
    if M < 1 or N < 2:
        raise ValueError("need M >= 1 and N >= 2")
    th = arb(str(THETA))
    c = (arb.pi() / 2).sqrt()
    sN = arb(N).sqrt()
    a = 2 * arb.pi() / sN
    b = arb.pi() * arb(2).sqrt() / sN
    if case == "even-":
        return th * c * (-a * M).exp() / (a.exp() - 1)
    if case == "even+":
        return 2 * th * c * (-b * M).exp() / (b.exp() - 1)
    if case == "odd+":
        return th * c * ((M + 1) * a.exp() - M) / ((a * M).exp() * (a.exp() - 1) ** 2)
    if case == "odd-":
        return 3 * th / 2 * c * ((M + 1) * b.exp() - M) / ((b * M).exp() * (b.exp() - 1) ** 2)
    raise ValueError(f"unknown case {case!r}")


@dataclass
class SignResult:
    hypothesis: SignHypothesis | None
    rigorous: bool
    sums: dict = field(default_factory=dict)  # signs tuple -> (S, bound)
    margins: dict = field(default_factory=dict)  # signs tuple -> |S| - bound (lower estimate)


def functional_sum(a: dict, hyp: SignHypothesis, N: int, M: int, W: BesselEvaluator) -> arb:
    """sum_{n <= M} a_n/sqrt(n) W(2 pi n / sqrt N) for the hypothesis's case."""
    y0 = 2 * arb.pi() / arb(N).sqrt()
    S = arb(0)
    for n in range(1, M + 1):
        S += a[n] / arb(n).sqrt() * W_case(hyp.case, W, y0 * n, N)
    return S


def detect_signs(coprime_a: dict, R, N: int, parity: str, M: int, tol: float = 1e-30) -> SignResult:
    """Test every sign vector; the hypothesis is rigorous when exactly one sum
    is compatible with zero and every other one is bounded away from it.

    ``coprime_a`` holds a(n) for n coprime to N (at least all primes <= M).
    """
    W = BesselEvaluator(R, tol)
    res = SignResult(None, False)
    alive = []
    for hyp in hypotheses(N, parity):
        a = extend_hecke(coprime_a, N, hyp.signs, M)
        S = functional_sum(a, hyp, N, M, W)
        bound = tail_bound(hyp.case, M, N)
        key = tuple(sorted(hyp.signs.items()))
        res.sums[key] = (S, bound)
        margin = (abs(S) - bound).lower()
        res.margins[key] = float(margin)
        # compatible with zero: |S| could be within the tail bound
        if margin <= 0:
            alive.append(hyp)
    if len(alive) == 1:
        res.hypothesis = alive[0]
        res.rigorous = True
    return res


def detect_form_signs(form, M: int, tol: float = 1e-30) -> SignResult:
    """Run detect_signs on a VerifiedForm and record the outcome on it."""
    coprime = {n: v for n, v in form.coeffs.items() if math.gcd(n, form.level) == 1}
    res = detect_signs(coprime, form.R, form.level, form.parity, M, tol)
    if res.rigorous:
        form.signs = dict(res.hypothesis.signs)
        form.fricke_w = res.hypothesis.w
        form.signs_rigorous = True
    else:
        form.signs_rigorous = False
    return res


def synthetic_coeffs(R, N: int, signs: dict, parity: str, M: int, rad: float = 1e-25) -> dict:
    """Forward synthesis for testing: coprime a(p), p <= M, for which the
    planted hypothesis's sum vanishes.

    Every a(p) follows a fixed pattern except the smallest coprime prime p0,
    which is tuned by a secant iteration and returned as a ball of radius
    ``rad`` around the root.
    """
    hyp = SignHypothesis(dict(signs), parity)
    primes = [p for p in range(2, M + 1) if factorize(p) == {p: 1} and N % p]
    p0 = primes[0]
    base = {p: arb(str(round(math.cos(1.7 * p + float(arb(R).mid())), 12))) for p in primes}
    W = BesselEvaluator(R)

    def total(x):
        a = dict(base)
        a[p0] = arb(x)
        return functional_sum(extend_hecke(a, N, hyp.signs, M), hyp, N, M, W).mid()

    x0, x1 = arb(0), arb("0.5")
    f0, f1 = total(x0), total(x1)
    for _ in range(80):
        if f1 == f0:
            break
        x0, x1 = x1, (x1 - f1 * (x1 - x0) / (f1 - f0)).mid()
        f0, f1 = f1, total(x1)
        if abs(f1) < arb(rad) * 1e-6:
            break
    base[p0] = arb(x1.mid(), rad)
    return base
