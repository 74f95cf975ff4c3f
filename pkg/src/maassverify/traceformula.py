"""Geometric side of the trace formula for Maass newforms of squarefree level.

``trace(n)`` returns the newform spectral sum sum_j a_j(n) h(r_j): the
geometric terms minus the mu(N) sigma_1(|n|)/sqrt|n| h(i/2) residual.
All variants of a package (h, lambda h, lambda^2 h) are computed together
because they share the expensive enumeration.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

from flint import acb, acb_poly, arb, ctx

from .numtheory import ArithContext, ClassDataStore, CNTable, divisors, sigma1
from .rigor import RigorError, quadrature
from .testfunc import TestFunctionPackage, g_sup_bound

SILVER = 1 + math.sqrt(2)  # c = 1 + sqrt 2


def silver() -> arb:
    return 1 + arb(2).sqrt()


def taylor_order(eps: float) -> int:
    """K = ceil(log_c(1/eps)) with c = 1 + sqrt 2."""
    c = silver()
    K = math.ceil(float((-arb(eps).log() / c.log()).mid()))
    # guard the ceiling against midpoint rounding
    while (1 / c) ** K >= arb(eps) * (1 + arb(2) ** -40):
        K += 1
    return K


def table_index(x: float) -> int:
    """j = ceil(log_c(2 / ((c+1) x))), so that |1 - x/x_j| <= sqrt 2 - 1."""
    return max(0, math.ceil(math.log(2 / ((SILVER + 1) * x)) / math.log(SILVER) - 1e-12))


# -- elliptic integrals -----------------------------------------------------


def _elliptic_integrand(pkg: TestFunctionPackage, j: int, xs, K: int, variants):
    """Vector integrand on piece j: for each variant and k <= K,
    g(u) cosh(u/2)/(s + x0) * (x0/(s + x0))^k with s = sinh^2(u/2)."""

    def f(z):
        z = acb(z)
        sh = (z / 2).sinh()
        ch = (z / 2).cosh()
        s = sh * sh
        out = []
        gvals = [pkg.g_piece(j, z, v) for v in variants]
        for x0 in xs:
            inv = 1 / (s + x0)
            q = x0 * inv
            base = ch * inv
            for gv in gvals:
                t = gv * base
                out.append(t)
                for _ in range(K):
                    t = t * q
                    out.append(t)
        return out

    return f


def elliptic_integrals(pkg, xs, K: int = 0, variants=("1",), tol: float = 1e-25):
    """Certified integrals int_0^X g(u) cosh(u/2)/(s + x0)^(k+1) x0^k du.

    Returns ``out[xi][variant] = [b_0, ..., b_K]`` (without the (-1)^k sign).
    """
    xs = [arb(x) for x in xs]
    total = None
    for j in range(pkg.d):
        a, b = arb(j) / pkg.kappa, arb(j + 1) / pkg.kappa
        vals = quadrature(_elliptic_integrand(pkg, j, xs, K, variants), a, b, tol=tol)
        vals = vals if isinstance(vals, list) else [vals]
        total = vals if total is None else [s + v for s, v in zip(total, vals)]
    out = []
    it = iter(total)
    for _ in xs:
        per = {}
        for v in variants:
            per[v] = [next(it) for _ in range(K + 1)]
        out.append(per)
    return out


def elliptic_f_direct(pkg, x, variant: str = "1", tol: float = 1e-25) -> arb:
    """f(x) = int_0^inf g(u) cosh(u/2)/(sinh^2(u/2) + x) du by adaptive quadrature."""
    return elliptic_integrals(pkg, [x], 0, (variant,), tol)[0][variant][0]


def _double_factorial_ratio(K: int) -> arb:
    out = arb(1)
    for k in range(1, K + 1):
        out = out * (2 * k - 1) / (2 * k)
    return out


@dataclass
class EllipticTaylorTable:
    """Taylor expansions of f around x_j = c^{-j}, c = 1 + sqrt 2.

    coefficients[v][j][k] = f^{(k)}(x_j)/k! * x_j^k so that
    f(x) = sum_k coefficients[v][j][k] rho^k, rho = x/x_j - 1.
    """

    K: int
    eps: float
    x_min: float
    points: list
    coefficients: dict
    Mg: dict

    @property
    def c(self) -> arb:
        return silver()

    def index(self, x) -> int:
        return table_index(float(arb(x).mid()))

    def remainder_bound(self, j: int, rho: arb, variant: str) -> arb:
        """Series tail bound pi M_g x_j^{-1/2} prod_{k<=K+1}(2k-1)/(2k) |rho|^{K+1}/(1-|rho|)."""
        r = abs(rho).upper()
        if not r < 1:
            raise RigorError(f"Taylor expansion point {j} too far from x (|rho|={float(r)})")
        x0 = self.points[j]
        return arb.pi() * self.Mg[variant] / x0.sqrt() * _double_factorial_ratio(self.K + 1) * r ** (self.K + 1) / (1 - r)

    def f(self, x, variant: str = "1") -> arb:
        x = arb(x)
        if x.upper() > 1 or x.lower() <= 0:
            raise RigorError(f"elliptic argument {x} outside (0, 1]")
        j = self.index(x)
        if j >= len(self.points):
            raise RigorError(f"x={float(x.mid()):.3g} below table coverage x_min={self.x_min:.3g}")
        x0 = self.points[j]
        rho = x / x0 - 1
        coeffs = self.coefficients[variant][j]
        acc = arb(0)
        for b in reversed(coeffs):
            acc = acc * rho + b
        if rho == 0:
            return acc
        err = self.remainder_bound(j, rho, variant)
        return acc + arb(0, err)


def build_elliptic_table(pkg, eps: float = 2.0**-64, x_min: float = 1e-4, variants=("1",), tol=None) -> EllipticTaylorTable:
    if not 0 < x_min <= 1:
        raise ValueError("x_min must lie in (0, 1]")
    K = taylor_order(eps)
    J = table_index(x_min)
    c = silver()
    points = [c ** (-j) for j in range(J + 1)]
    tol = eps / 16 if tol is None else tol
    raw = elliptic_integrals(pkg, points, K, variants, tol=tol)
    coefficients = {v: [] for v in variants}
    for per in raw:
        for v in variants:
            coefficients[v].append([b if k % 2 == 0 else -b for k, b in enumerate(per[v])])
    Mg = {v: g_sup_bound(pkg, v) for v in variants}
    return EllipticTaylorTable(K=K, eps=eps, x_min=x_min, points=points, coefficients=coefficients, Mg=Mg)


# -- identity term -----------------------------------------------------------


def _phi(w: acb) -> acb:
    """(e^w - 1)/w, entire; series with a tail bound so balls may contain 0."""
    a = abs(w).upper()
    if a > 8:
        return (w.exp() - 1) / w
    K = 8
    term = arb(1)
    fact = arb(1)
    while True:
        K += 4
        tail = a**K / arb(K + 1).gamma() / (1 - a / (K + 2))
        if tail < arb(2) ** (-ctx.prec - 8):
            break
    acc = acb(0)
    for k in reversed(range(K)):
        acc = acc * w / (k + 2) + 1
    # acc = sum_k w^k/(k+1)!
    return acc + acb(arb(0, tail.upper()), arb(0, tail.upper()))


def identity_integral(pkg: TestFunctionPackage, variant: str = "1", tol: float = 1e-25) -> arb:
    """2 int_0^X g'(u)/sinh(u/2) du, the u = 0 singularity removed analytically."""
    G = pkg.base_of(variant)
    Gp = G.derivative()
    k = pkg.kappa
    two_k = 2 * acb(k)
    # piece 0 in the variable x (base scale): G'(x)/x = S1(x) + sum_m B_m(x - 1/2) i pi m phi(i pi m x)
    shift = acb_poly([-acb(1) / 2, 1])
    B = {m: Gp.piece(m, 0) for m in (-1, 0, 1)}
    S = acb_poly([])
    for m in B:
        S = S + B[m](shift)
    S1 = acb_poly(S.coeffs()[1:])  # S(0) = G'(0) = 0 since G' is odd and continuous
    Bx = {m: B[m](shift) for m in (-1, 1)}

    def piece0(z):
        z = acb(z)
        val = S1(z)
        for m in (-1, 1):
            ipm = acb.pi() * acb(0, m)
            val += Bx[m](z) * ipm * _phi(ipm * z)
        return val * two_k / acb.sinc(acb(0, 1) * z / two_k)

    total = quadrature(piece0, 0, 1, tol=tol)
    for j in range(1, pkg.d):
        total += quadrature(lambda z, j=j: Gp.eval_piece(j, z) / (acb(z) / two_k).sinh(), j, j + 1, tol=tol)
    # int_0^X g'(u)/sinh(u/2) du = kappa int_0^d G'(x)/sinh(x/(2 kappa)) dx
    return 2 * k * total


# -- engine ------------------------------------------------------------------


@dataclass
class TraceEngine:
    """Bundles the level, package, class data and elliptic table."""

    ctx: ArithContext
    pkg: TestFunctionPackage
    classes: ClassDataStore
    variants: tuple = ("1",)
    etable: EllipticTaylorTable | None = None
    n_max: int = 1
    tol: float = 1e-25
    _cn: CNTable | None = field(default=None, repr=False)
    _id: dict = field(default_factory=dict, repr=False)
    _g: object = field(default=None, repr=False)

    def __post_init__(self):
        X = float(self.pkg.X.upper())
        self.D_max = int(math.ceil(4 * self.n_max * math.cosh(X / 2) ** 2)) + 4
        self._cn = CNTable(self.ctx, self.classes, self.D_max)
        self._g = self.pkg.multi(self.variants)

    @property
    def N(self):
        return self.ctx.N

    def cN(self, D: int) -> arb:
        return self._cn(D)

    def g_multi(self, u):
        return self._g(u)

    def ensure_table(self, eps: float = 2.0**-64):
        if self.etable is None:
            x_min = 3 / (4 * max(self.n_max, 1))
            self.etable = build_elliptic_table(self.pkg, eps, x_min, self.variants)
        return self.etable

    def identity_integral(self, variant):
        if variant not in self._id:
            self._id[variant] = identity_integral(self.pkg, variant, self.tol)
        return self._id[variant]


def _zeros(engine):
    return [arb(0) for _ in engine.variants]


def hyperbolic_sum(n: int, engine: TraceEngine):
    """sum over t with D = t^2 - 4n > 0 nonsquare of c_N(D) g(log((|t|+sqrt D)^2/(4|n|)))."""
    n = int(n)
    X = float(engine.pkg.X.upper())
    an = abs(n)
    if n > 0:
        t_max = int(2 * math.sqrt(an) * math.cosh(X / 2)) + 1
    else:
        t_max = int(2 * math.sqrt(an) * math.sinh(X / 2)) + 1
    if 4 * an * math.cosh(X / 2) ** 2 > engine.D_max + 1:
        raise RigorError(f"n={n} exceeds the engine's discriminant range")
    two_sqrt_n = 2 * arb(an).sqrt()
    out = _zeros(engine)
    for t in range(0, t_max + 1):
        D = t * t - 4 * n
        if D <= 0:
            continue
        r = math.isqrt(D)
        if r * r == D:
            continue
        c = engine.cN(D)
        if c == 0:
            continue
        arg = 2 * ((t + arb(D).sqrt()) / two_sqrt_n).log()
        if arg.lower() > engine.pkg.X.upper():
            continue
        vals = engine.g_multi(arg)
        w = c if t == 0 else 2 * c
        out = [o + w * v for o, v in zip(out, vals)]
    return out


def elliptic_term(n: int, t: int, engine: TraceEngine):
    """c_N(D) sqrt(x)/pi f(x) with x = |D/4n|, per variant (the full-line integral is 2 f)."""
    D = t * t - 4 * n
    if n <= 0 or D >= 0:
        raise ValueError("elliptic terms need n > 0 and t^2 < 4n")
    c = engine.cN(D)
    if c == 0:
        return _zeros(engine)
    table = engine.ensure_table()
    x = arb(-D) / (4 * n)
    pref = c * x.sqrt() / arb.pi()
    return [pref * table.f(x, v) for v in engine.variants]


def elliptic_sum(n: int, engine: TraceEngine):
    out = _zeros(engine)
    if n <= 0:
        return out
    t = 0
    while t * t < 4 * n:
        vals = elliptic_term(n, t, engine)
        w = 1 if t == 0 else 2
        out = [o + w * v for o, v in zip(out, vals)]
        t += 1
    return out


def parabolic_terms(n: int, engine: TraceEngine):
    lam = engine.ctx.von_mangoldt()
    out = _zeros(engine)
    if lam == 0:
        return out
    N = engine.N
    logN = arb(N).log()
    X = float(engine.pkg.X.upper())
    for a in divisors(abs(n)):
        d = n // a
        la = (arb(a) / abs(d)).log()
        if a != d:
            w = arb(1) / engine.ctx.inf_part(a - d)
            vals = engine.g_multi(la)
            out = [o + lam * w * v for o, v in zip(out, vals)]
        r_max = math.ceil((X + abs(math.log(a / abs(d)))) / (2 * math.log(N)))
        for r in range(r_max + 1):
            vals = engine.g_multi(la - 2 * r * logN)
            w = -2 * lam / arb(N) ** r
            out = [o + w * v for o, v in zip(out, vals)]
    return out


def identity_term(n: int, engine: TraceEngine):
    if n <= 0 or math.isqrt(n) ** 2 != n:
        return _zeros(engine)
    prod = 1
    for p in engine.ctx.primes:
        prod *= p - 1
    pref = -arb(prod) / (12 * math.isqrt(n))
    return [pref * engine.identity_integral(v) for v in engine.variants]


def residual_term(n: int, engine: TraceEngine):
    from .testfunc import h_at_i_half

    an = abs(n)
    pref = engine.ctx.mu * sigma1(an) / arb(an).sqrt()
    return [pref * h_at_i_half(engine.pkg, v) for v in engine.variants]


def geometric_side(n: int, engine: TraceEngine):
    if math.gcd(abs(n), engine.N) != 1 or n == 0:
        raise ValueError(f"need gcd(n, N) = 1 and n != 0, got n={n}, N={engine.N}")
    parts = [hyperbolic_sum(n, engine), elliptic_sum(n, engine), parabolic_terms(n, engine), identity_term(n, engine)]
    return [sum(vals, arb(0)) for vals in zip(*parts)]


def trace(n: int, engine: TraceEngine) -> dict:
    """Spectral sum sum_j a_j(n) h(r_j) for each variant."""
    geo = geometric_side(n, engine)
    res = residual_term(n, engine)
    return {v: g - r for v, g, r in zip(engine.variants, geo, res)}


def parity_traces(n: int, engine: TraceEngine, cache: "TraceTable | None" = None):
    """(even, odd) spectral sums: half-sum and half-difference of t(n) and t(-n)."""
    if n <= 0:
        raise ValueError("parity traces take n > 0")
    tp = cache.get_or_compute(n, engine) if cache is not None else trace(n, engine)
    tm = cache.get_or_compute(-n, engine) if cache is not None else trace(-n, engine)
    even = {v: (tp[v] + tm[v]) / 2 for v in tp}
    odd = {v: (tp[v] - tm[v]) / 2 for v in tp}
    return even, odd


# -- trace table ---------------------------------------------------------------


@dataclass
class TraceTable:
    """Cache of t(n) per variant; JSON {N, X, d, package_id, entries: [{n, mid, rad}]}."""

    N: int
    X: str
    d: int
    package_id: str
    entries: dict = field(default_factory=dict)  # variant -> {n: arb}

    def get(self, n: int, variant: str = "1") -> arb:
        try:
            return self.entries[variant][n]
        except KeyError:
            raise KeyError(f"missing trace t({n}) for variant {variant!r}") from None

    def has(self, n: int, variants) -> bool:
        return all(n in self.entries.get(v, {}) for v in variants)

    def put(self, n: int, vals: dict):
        for v, x in vals.items():
            self.entries.setdefault(v, {})[n] = x

    def get_or_compute(self, n: int, engine: TraceEngine) -> dict:
        if not self.has(n, engine.variants):
            self.put(n, trace(n, engine))
        return {v: self.entries[v][n] for v in engine.variants}

    def parity(self, n: int, parity: str, variant: str = "1") -> arb:
        a, b = self.get(n, variant), self.get(-n, variant)
        return (a + b) / 2 if parity == "even" else (a - b) / 2

    def save(self, path):
        from .rigor import to_decimal

        doc = {
            "N": self.N,
            "X": self.X,
            "d": self.d,
            "package_id": self.package_id,
            "variants": {
                v: [{"n": n, "mid": to_decimal(x)[0], "rad": to_decimal(x)[1]} for n, x in sorted(es.items())]
                for v, es in self.entries.items()
            },
        }
        # flat view for the plain variant, the table's primary content
        doc["entries"] = doc["variants"].get("1", [])
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "TraceTable":
        from .rigor import from_decimal

        with open(path) as fh:
            doc = json.load(fh)
        t = cls(doc["N"], doc["X"], doc["d"], doc["package_id"])
        variants = doc.get("variants") or {"1": doc["entries"]}
        for v, es in variants.items():
            t.entries[v] = {e["n"]: from_decimal(e["mid"], e["rad"]) for e in es}
        return t
