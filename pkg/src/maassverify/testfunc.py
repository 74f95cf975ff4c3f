"""The compactly supported test-function pair (h, g).

``h_1`` is a combination of three shifted sinc^2 terms and ``h_d = h_1^d``.
Its Fourier transform ``g_d`` is supported on [-d, d] and on each unit
interval [j, j+1) is a sum of polynomials times e^{pi i m x}, m in {-1, 0, 1}.
Convention: g(x) = (1/2pi) * integral h(t) e^{itx} dt, h(t) = integral g(x) e^{-itx} dx,
so products of h's correspond to convolutions of g's.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from math import comb

from flint import acb, acb_poly, arb, arb_poly, ctx

from .rigor import DEFAULT_PREC, RigorError, from_decimal, precision, to_decimal

MODES = (-1, 0, 1)


class SmoothnessError(ValueError):
    """The requested derivative of g is not defined across piece boundaries."""


def _zero():
    return acb_poly([])


def _is_zero(p: acb_poly) -> bool:
    return p.degree() < 0


def _shift_integral(p: acb_poly, c0) -> acb_poly:
    """Antiderivative of p vanishing at c0."""
    q = p.integral()
    return q - acb_poly([q(acb(c0))])


@dataclass
class PiecewiseExpPoly:
    """g(x) = sum_m A_{m,j}(x - j - 1/2) e^{pi i m x} for x in [j, j+1), |x| < d."""

    d: int
    coeffs: dict = field(default_factory=dict)  # (m, j) -> acb_poly

    def piece(self, m: int, j: int) -> acb_poly:
        return self.coeffs.get((m, j), _zero())

    def __add__(self, other: "PiecewiseExpPoly") -> "PiecewiseExpPoly":
        out = dict(self.coeffs)
        for k, p in other.coeffs.items():
            out[k] = out[k] + p if k in out else p
        return PiecewiseExpPoly(max(self.d, other.d), out)

    def scale(self, c) -> "PiecewiseExpPoly":
        c = acb(c)
        return PiecewiseExpPoly(self.d, {k: p * c for k, p in self.coeffs.items()})

    def derivative(self) -> "PiecewiseExpPoly":
        out = {}
        for (m, j), p in self.coeffs.items():
            q = p.derivative()
            if m:
                q = q + p * (acb.pi() * acb(0, m))
            out[(m, j)] = q
        return PiecewiseExpPoly(self.d, out)

    # -- evaluation --------------------------------------------------------

    def eval_piece(self, j: int, z):
        """Holomorphic continuation of the j-th piece, evaluated at z (arb or acb)."""
        z = acb(z)
        s = z - (j + acb(1) / 2)
        out = acb(0)
        for m in MODES:
            p = self.coeffs.get((m, j))
            if p is None:
                continue
            v = p(s)
            if m:
                v = v * (acb.pi() * acb(0, m) * z).exp()
            out += v
        return out

    def __call__(self, x) -> arb:
        """Real value at a real ball x (pieces straddled by x are united)."""
        x = arb(x)
        lo = math.floor(float(x.lower()))
        hi = math.floor(float(x.upper()))
        vals = []
        for j in range(lo, hi + 1):
            if j < -self.d or j >= self.d:
                vals.append(arb(0))
            else:
                vals.append(self.eval_piece(j, x).real)
        out = vals[0]
        for v in vals[1:]:
            out = out.union(v)
        return out

    def real_form(self) -> "RealForm":
        return RealForm(self)

    def max_degree(self) -> int:
        return max((p.degree() for p in self.coeffs.values()), default=-1)


def build_g1() -> PiecewiseExpPoly:
    C = arb.pi() ** 2 / (arb.pi() ** 2 + 4)
    a00 = acb_poly([C / 2, -C])
    a10 = acb_poly([C / 4, -C / 2])
    coeffs = {}
    for m, p in ((0, a00), (1, a10), (-1, a10)):
        coeffs[(m, 0)] = p
        # A_{m,-1}(x) = A_{-m,0}(-x)
        q = p.coeffs()
        coeffs[(-m, -1)] = acb_poly([c * (-1) ** i for i, c in enumerate(q)])
    return PiecewiseExpPoly(1, coeffs)


def convolve(A: PiecewiseExpPoly, B: PiecewiseExpPoly) -> PiecewiseExpPoly:
    """Exact piecewise convolution (A * B)(x) = integral A(y) B(x - y) dy."""
    out: dict = {}

    def acc(key, p):
        out[key] = out[key] + p if key in out else p

    half = acb(1) / 2
    for (m, j), a in A.coeffs.items():
        if _is_zero(a):
            continue
        a_ders = [a]
        while a_ders[-1].degree() > 0:
            a_ders.append(a_ders[-1].derivative())
        for (n, k), b in B.coeffs.items():
            if _is_zero(b):
                continue
            b_ders = [b]
            while b_ders[-1].degree() > 0:
                b_ders.append(b_ders[-1].derivative())
            for delta in (0, 1):
                jj = j + k + delta
                c0 = acb(delta) - half
                sgn = -1 if delta else 1
                if m != n:
                    w = acb.pi() * acb(0, m - n)
                    inv = -1 / w  # 1 / (-w)
                    s1 = sgn * (-1) ** ((m - n) * (j + delta) % 2)
                    s2 = -sgn * (-1) ** ((m - n) * (k + delta) % 2)
                    t1 = _zero()
                    t2 = _zero()
                    for r, ar in enumerate(a_ders):
                        ar0 = ar(c0)
                        for s, bs in enumerate(b_ders):
                            coef = acb((-1) ** s * comb(r + s, s)) * inv ** (r + s + 1)
                            t1 = t1 + bs * (coef * ar0)
                            t2 = t2 + ar * (coef * bs(c0))
                    acc((n, jj), t1 * s1)
                    acc((m, jj), t2 * s2)
                else:
                    P = a
                    total = _zero()
                    for l in range(1, len(b_ders) + 1):
                        P = _shift_integral(P, c0)
                        total = total + P * b_ders[l - 1](c0)
                    acc((m, jj), total * sgn)
    return PiecewiseExpPoly(A.d + B.d, out)


def build_g(d: int) -> PiecewiseExpPoly:
    """g_d as the (d-1)-fold self-convolution of g_1."""
    if d < 1:
        raise ValueError("d must be >= 1")
    g1 = build_g1()
    g = g1
    for _ in range(d - 1):
        g = convolve(g, g1)
    return g


class RealForm:
    """Fast evaluator of a real piecewise exp-poly at nonnegative real balls.

    Uses G(x) = P0(s) + 2(Re P1(s) cos(pi x) - Im P1(s) sin(pi x)) on piece j,
    valid because A_{-1,j} is the coefficient-conjugate of A_{1,j}.
    """

    def __init__(self, g: PiecewiseExpPoly):
        self.d = g.d
        self.p0, self.p1r, self.p1i = [], [], []
        for j in range(g.d):
            p0 = g.piece(0, j).coeffs()
            p1 = g.piece(1, j).coeffs()
            self.p0.append(arb_poly([c.real for c in p0]))
            self.p1r.append(arb_poly([c.real for c in p1]))
            self.p1i.append(arb_poly([c.imag for c in p1]))

    def _piece(self, j, x, s, sn, cs):
        return self.p0[j](s) + 2 * (self.p1r[j](s) * cs - self.p1i[j](s) * sn)

    def __call__(self, x: arb) -> arb:
        x = abs(arb(x))
        lo = max(int(math.floor(float(x.lower()))), 0)
        hi = int(math.floor(float(x.upper())))
        if lo >= self.d:
            return arb(0)
        sn, cs = x.sin_cos_pi()
        out = None
        for j in range(lo, hi + 1):
            v = arb(0) if j >= self.d else self._piece(j, x, x - j - arb(0.5), sn, cs)
            out = v if out is None else out.union(v)
        return out


class MultiRealForm:
    """Evaluate several real forms of the same support at once."""

    def __init__(self, forms):
        self.forms = list(forms)
        self.d = self.forms[0].d

    def __call__(self, x: arb):
        x = abs(arb(x))
        lo = max(int(math.floor(float(x.lower()))), 0)
        hi = int(math.floor(float(x.upper())))
        if lo >= self.d:
            return [arb(0)] * len(self.forms)
        sn, cs = x.sin_cos_pi()
        outs = None
        for j in range(lo, hi + 1):
            if j >= self.d:
                vals = [arb(0)] * len(self.forms)
            else:
                s = x - j - arb(0.5)
                vals = [f._piece(j, x, s, sn, cs) for f in self.forms]
            outs = vals if outs is None else [a.union(b) for a, b in zip(outs, vals)]
        return outs


# -- h side --------------------------------------------------------------


def h1(t):
    """h_1 at a real ball (arb) or complex ball (acb)."""
    if isinstance(t, acb):
        C = acb.pi() ** 2 / (acb.pi() ** 2 + 4)
        pi = acb.pi()
        sq = lambda u: acb.sinc(u) ** 2
        return C * (sq(t / 2) + (sq((t - pi) / 2) + sq((t + pi) / 2)) / 2)
    t = arb(t)
    pi = arb.pi()
    C = pi**2 / (pi**2 + 4)
    return C * ((t / 2).sinc() ** 2 + (((t - pi) / 2).sinc() ** 2 + ((t + pi) / 2).sinc() ** 2) / 2)


def h_d(t, d: int):
    return h1(t) ** d


# lambda-polynomial variants: name -> coefficients of p(lambda) in increasing degree
VARIANTS = {"1": (1,), "lam": (0, 1), "lam2": (0, 0, 1)}


def _poly_eval(coeffs, lam):
    out = 0 * lam
    for c in reversed(coeffs):
        out = out * lam + c
    return out


@dataclass
class TestFunctionPackage:
    """Dilated pair h(r) = h_d(X r / d) and g(u) = (d/X) g_d(d u / X)."""

    __test__ = False  # not a pytest class

    X: arb
    d: int
    B: int
    base: PiecewiseExpPoly
    variants: dict = field(default_factory=dict)  # name -> (coeffs, PiecewiseExpPoly in base scale)
    _forms: dict = field(default_factory=dict, repr=False)
    _hihalf: arb | None = field(default=None, repr=False)

    @property
    def kappa(self) -> arb:
        return arb(self.d) / self.X

    @property
    def support(self) -> arb:
        return self.X

    def base_of(self, variant: str = "1") -> PiecewiseExpPoly:
        if variant == "1" and variant not in self.variants:
            return self.base
        return self.variants[variant][1]

    def form(self, variant: str = "1") -> RealForm:
        if variant not in self._forms:
            self._forms[variant] = self.base_of(variant).real_form()
        return self._forms[variant]

    def g(self, u, variant: str = "1") -> arb:
        """The dilated (Fourier side) function at a real ball u."""
        k = self.kappa
        return k * self.form(variant)(k * arb(u))

    def multi(self, variants=("1",)):
        """Callable u -> [g_v(u) for v in variants] sharing trigonometric work."""
        mf = MultiRealForm([self.form(v) for v in variants])
        k = self.kappa

        def f(u):
            return [k * v for v in mf(k * arb(u))]

        return f

    def g_piece(self, j: int, z, variant: str = "1"):
        """Holomorphic continuation of piece j of the dilated g (support j/kappa..(j+1)/kappa)."""
        k = self.kappa
        return acb(k) * self.base_of(variant).eval_piece(j, acb(k) * z)

    def breakpoints(self):
        k = self.kappa
        return [arb(j) / k for j in range(self.d + 1)]


def build_package(X, d: int, B: int = 0, variants=("1",)) -> TestFunctionPackage:
    X = X if isinstance(X, arb) else from_decimal(str(X))
    pkg = TestFunctionPackage(X=X, d=int(d), B=int(B), base=build_g(int(d)))
    for v in variants:
        if v != "1":
            apply_lambda_poly(pkg, VARIANTS[v], name=v)
    return pkg


def apply_lambda_poly(pkg: TestFunctionPackage, p, name: str | None = None) -> PiecewiseExpPoly:
    """Base-scale pieces of the Fourier transform of p(lambda) h(r).

    lambda = 1/4 + r^2 acts on the g side as 1/4 - d^2/du^2; in the base
    variable x = kappa u that is 1/4 - kappa^2 d^2/dx^2.
    """
    p = tuple(p)
    deg = len(p) - 1
    while deg > 0 and p[deg] == 0:
        deg -= 1
    if pkg.d < 2 * deg + 1:
        raise SmoothnessError(f"lambda-polynomial of degree {deg} needs d >= {2 * deg + 1}, got d={pkg.d}")
    k2 = pkg.kappa**2
    G = pkg.base
    # L G = G/4 - kappa^2 G''
    def L(F):
        return F.scale(acb(1) / 4) + F.derivative().derivative().scale(acb(-k2))

    out = G.scale(p[0])
    cur = G
    for c in p[1 : deg + 1]:
        cur = L(cur)
        if c:
            out = out + cur.scale(c)
    if name is not None:
        pkg.variants[name] = (p, out)
        pkg._forms.pop(name, None)
    return out


def eval_h(pkg: TestFunctionPackage, r=None, lam=None, variant: str = "1") -> arb:
    """h at spectral parameter r, or at Laplace eigenvalue lam = 1/4 + r^2.

    For lam < 1/4 (imaginary r) the value is computed at r = i sqrt(1/4 - lam).
    A lam ball straddling several regimes is handled by monotonicity of the
    base h (only allowed for the plain variant).
    """
    coeffs = VARIANTS[variant] if variant in VARIANTS else pkg.variants[variant][0]
    k = arb(pkg.d) / pkg.X
    if r is not None:
        r = arb(r)
        lam_v = arb(1) / 4 + r * r
        base = h_d(r / k, pkg.d)
        return base * _poly_eval(coeffs, lam_v) if variant != "1" else base
    lam = arb(lam)
    quarter = arb(1) / 4
    if lam.rad() > 0 and variant == "1":
        a, b = _h_lam_point(pkg, arb(lam.lower())), _h_lam_point(pkg, arb(lam.upper()))
        return b.union(a)
    base = _h_lam_point(pkg, lam)
    return base * _poly_eval(coeffs, lam) if variant != "1" else base


def _h_lam_point(pkg, lam: arb) -> arb:
    quarter = arb(1) / 4
    k = arb(pkg.d) / pkg.X
    if lam >= quarter:
        return h_d((lam - quarter).sqrt() / k, pkg.d)
    if lam < quarter:
        tau = (quarter - lam).sqrt()
        return h_d(acb(0, tau / k), pkg.d).real
    # straddles 1/4 with a tiny radius: both formulas agree at 1/4
    return h_d(arb(0), pkg.d).union(h_d(acb(0, (quarter - lam).abs_upper().sqrt() / k), pkg.d).real)


def _piece_moment(p: acb_poly, alpha: acb) -> acb:
    """integral over [-1/2, 1/2] of p(s) e^{alpha s} ds."""
    half = acb(1) / 2
    a = abs(alpha).upper()
    if a < 2:
        # e^{alpha s} = sum (alpha s)^k / k! + tail, |tail| <= (|alpha|/2)^K / K! * e^{|alpha|/2}
        target = arb(2) ** (-ctx.prec - 10)
        K, term = 0, arb(1)
        while term * (a / 2).exp() > target:
            K += 1
            term = term * a / (2 * K)
        total = acb(0)
        pk = p
        ak = acb(1)
        for k in range(K):
            q = pk.integral()
            total += ak * (q(half) - q(-half))
            pk = pk * acb_poly([0, 1])
            ak = ak * alpha / (k + 1)
        bound = arb(0)
        for c in p.coeffs():
            bound += abs(c)
        err = term * (a / 2).exp() * bound  # |p| <= sum |c_i| on |s| <= 1/2
        return total + acb(arb(0, err.upper()), arb(0, err.upper()))
    ders = [p]
    while ders[-1].degree() > 0:
        ders.append(ders[-1].derivative())

    def F(s):
        acc = acb(0)
        for kk, q in enumerate(ders):
            acc += (-1) ** kk * q(s) / alpha ** (kk + 1)
        return acc * (alpha * s).exp()

    return F(half) - F(-half)


def exp_moment(g: PiecewiseExpPoly, w) -> acb:
    """Closed form of integral G(x) e^{w x} dx over the support (w complex)."""
    w = acb(w)
    half = acb(1) / 2
    total = acb(0)
    for (m, j), p in g.coeffs.items():
        if _is_zero(p):
            continue
        alpha = acb.pi() * acb(0, m) + w
        total += (alpha * (j + half)).exp() * _piece_moment(p, alpha)
    return total


def h_at_i_half_closed(g: PiecewiseExpPoly, kappa: arb) -> arb:
    """integral of kappa G(kappa u) e^{u/2} du = integral G(x) e^{x/(2 kappa)} dx."""
    return exp_moment(g, acb(1) / (2 * acb(kappa))).real


def h_at_i_half(pkg: TestFunctionPackage, variant: str = "1") -> arb:
    """h(i/2) for the package; for lambda-variants p(0) h(i/2) since lambda(i/2) = 0."""
    if pkg._hihalf is None:
        pkg._hihalf = h_at_i_half_closed(pkg.base, pkg.kappa)
    if variant == "1":
        return pkg._hihalf
    coeffs = VARIANTS[variant] if variant in VARIANTS else pkg.variants[variant][0]
    return pkg._hihalf * coeffs[0]


def g_sup_bound(pkg: TestFunctionPackage, variant: str = "1", subdiv: int = 64) -> arb:
    """Certified upper bound for max |g| over the support."""
    form = pkg.form(variant)
    best = arb(0)
    for j in range(pkg.d):
        for i in range(subdiv):
            x = arb(j) + (arb(i) + arb(0.5)) / subdiv
            x = arb(x.mid(), arb(1) / (2 * subdiv))
            v = abs(form(x)).upper()
            if v > best:
                best = v
    return pkg.kappa * best


# -- parameter optimizer --------------------------------------------------


@dataclass(frozen=True)
class Params:
    R_max: float
    X: float
    d: int
    B: float  # 2B is the objective value

    @property
    def two_B(self) -> float:
        return 2 * self.B


def _h1_float(t: float) -> float:
    C = math.pi**2 / (math.pi**2 + 4)

    def s2(u):
        return 1.0 if u == 0 else (math.sin(u) / u) ** 2

    return C * (s2(t / 2) + 0.5 * s2((t - math.pi) / 2) + 0.5 * s2((t + math.pi) / 2))


def optimize_params(N: int, M: int, D_max: float, d_range=range(1, 101)) -> Params:
    """Choose R_max, X, d for given level, form count and discriminant bound."""
    if N <= 0 or M <= 0 or D_max <= 0:
        raise ValueError("N, M, D_max must be positive")
    R_max = math.sqrt(24 * M / N)
    c = math.sqrt(D_max) / (2 * M)
    if c < 1:
        raise ValueError(f"D_max={D_max} too small: need D_max > (2M)^2 = {(2 * M) ** 2}")
    X = 2 * math.acosh(c)
    best_d, best = None, -math.inf
    for d in d_range:
        v = -math.log2(_h1_float(X * R_max / d)) * d
        if v > best:
            best_d, best = d, v
    return Params(R_max=R_max, X=X, d=best_d, B=best / 2)


# -- serialization --------------------------------------------------------


def _ball_str(x: arb) -> str:
    m, r = to_decimal(x)
    return m if r == "0" else f"{m} +/- {r}"


def _parse_ball(s: str) -> arb:
    if "+/-" in s:
        m, r = s.split("+/-")
        return from_decimal(m.strip(), r.strip())
    return from_decimal(s.strip())


def save_package(pkg: TestFunctionPackage, path) -> None:
    pieces = []
    for (m, j), p in sorted(pkg.base.coeffs.items()):
        cs = p.coeffs()
        pieces.append(
            {
                "m": m,
                "j": j,
                "coeffs_re": [_ball_str(c.real) for c in cs],
                "coeffs_im": [_ball_str(c.imag) for c in cs],
            }
        )
    doc = {
        "X": _ball_str(pkg.X),
        "d": pkg.d,
        "B": pkg.B,
        "prec": ctx.prec,
        "variants": sorted(pkg.variants),
        "pieces": pieces,
    }
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_package(path) -> TestFunctionPackage:
    with open(path) as fh:
        doc = json.load(fh)
    coeffs = {}
    for pc in doc["pieces"]:
        cs = [acb(_parse_ball(a), _parse_ball(b)) for a, b in zip(pc["coeffs_re"], pc["coeffs_im"])]
        coeffs[(pc["m"], pc["j"])] = acb_poly(cs)
    pkg = TestFunctionPackage(X=_parse_ball(doc["X"]), d=doc["d"], B=doc["B"], base=PiecewiseExpPoly(doc["d"], coeffs))
    for v in doc.get("variants", []):
        apply_lambda_poly(pkg, VARIANTS[v], name=v)
    return pkg
