"""Arithmetic functions and quadratic-field data for the trace formula."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable

import numpy as np
from flint import arb

from . import _kernels
from .rigor import RigorError, from_decimal, to_decimal


class ArithmeticInputError(ValueError):
    pass


class MissingClassData(KeyError):
    def __init__(self, d):
        super().__init__(d)
        self.d = d

    def __str__(self):
        return f"no class data for fundamental discriminant d={self.d}"


# -- elementary functions ----------------------------------------------------


def factorize(n: int) -> dict[int, int]:
    n = abs(int(n))
    out: dict[int, int] = {}
    p = 2
    while p * p <= n:
        while n % p == 0:
            out[p] = out.get(p, 0) + 1
            n //= p
        p += 1 if p == 2 else 2
    if n > 1:
        out[n] = out.get(n, 0) + 1
    return out


def is_squarefree(n: int) -> bool:
    return all(e == 1 for e in factorize(n).values())


def kronecker(d: int, m: int) -> int:
    """Kronecker symbol (d/m)."""
    d, m = int(d), int(m)
    if m == 0:
        return 1 if abs(d) == 1 else 0
    res = 1
    if m < 0:
        m = -m
        if d < 0:
            res = -1
    v = 0
    while m % 2 == 0:
        m //= 2
        v += 1
    if v:
        if d % 2 == 0:
            return 0
        if v % 2 and d % 8 in (3, 5):
            res = -res
    # Jacobi symbol (d/m), m odd positive
    a = d % m if m > 1 else 0
    if m == 1:
        return res
    while a:
        while a % 2 == 0:
            a //= 2
            if m % 8 in (3, 5):
                res = -res
        a, m = m, a
        if a % 4 == 3 and m % 4 == 3:
            res = -res
        a %= m
    return res if m == 1 else 0


def is_fundamental(d: int) -> bool:
    if d == 1:
        return True
    if d % 4 == 1:
        return is_squarefree(d)
    if d % 4 == 0:
        m = d // 4
        return m % 4 in (2, 3) and is_squarefree(m)
    return False


@dataclass(frozen=True)
class Discriminant:
    D: int
    d: int
    l: int


def decompose_discriminant(D: int) -> Discriminant:
    """Write D = d*l^2 with d fundamental and l > 0."""
    D = int(D)
    if D % 4 not in (0, 1):
        raise ArithmeticInputError(f"{D} is not a discriminant (D mod 4 = {D % 4})")
    if D >= 0 and math.isqrt(D) ** 2 == D:
        raise ArithmeticInputError(f"{D} is a perfect square")
    core, f = (-1 if D < 0 else 1), 1
    for p, e in factorize(D).items():
        core *= p ** (e % 2)
        f *= p ** (e // 2)
    if core % 4 == 1:
        return Discriminant(D, core, f)
    # core = 2,3 mod 4: need a factor 4 out of f^2
    return Discriminant(D, 4 * core, f // 2)


@dataclass(frozen=True)
class ArithContext:
    N: int
    primes: tuple[int, ...] = field(init=False)
    mu: int = field(init=False)

    def __post_init__(self):
        N = int(self.N)
        if N < 1 or not is_squarefree(N):
            raise ArithmeticInputError(f"level {N} must be a squarefree positive integer")
        ps = tuple(sorted(factorize(N)))
        object.__setattr__(self, "primes", ps)
        object.__setattr__(self, "mu", (-1) ** len(ps))

    def von_mangoldt(self) -> arb:
        if len(self.primes) == 1:
            return arb(self.primes[0]).log()
        return arb(0)

    def inf_part(self, m: int) -> int:
        """Largest divisor of m built from primes dividing N."""
        m = abs(int(m))
        out = 1
        for p in self.primes:
            while m and m % p == 0:
                m //= p
                out *= p
        return out

    def coprime(self, n: int) -> bool:
        return math.gcd(int(n), self.N) == 1


def sigma1(n: int) -> int:
    out = 1
    for p, e in factorize(n).items():
        out *= (p ** (e + 1) - 1) // (p - 1)
    return out


def divisors(n: int) -> list[int]:
    ds = [1]
    for p, e in factorize(n).items():
        ds = [x * p**k for x in ds for k in range(e + 1)]
    return sorted(ds)


@dataclass(frozen=True)
class ArithBasics:
    sigma1: int
    von_mangoldt: arb
    mu: int
    inf_parts: dict
    divisor_pairs: tuple


def arith_basics(n: int, ctx: ArithContext, ms: Iterable[int] = ()) -> ArithBasics:
    n = int(n)
    if n == 0:
        raise ArithmeticInputError("n must be nonzero")
    pairs = tuple((a, n // a) for a in divisors(abs(n)))
    return ArithBasics(
        sigma1=sigma1(abs(n)),
        von_mangoldt=ctx.von_mangoldt(),
        mu=ctx.mu,
        inf_parts={m: ctx.inf_part(m) for m in ms},
        divisor_pairs=pairs,
    )


# -- class numbers, regulators, L(1, psi_d) ------------------------------------


@dataclass(frozen=True)
class QuadClassRecord:
    d: int
    h: int
    reg: arb | None
    w: int | None
    L1: arb

    def check(self) -> bool:
        """Class number formula consistency."""
        if self.d > 0:
            expect = 2 * self.h * self.reg / arb(self.d).sqrt()
        else:
            expect = 2 * arb.pi() * self.h / (self.w * arb(-self.d).sqrt())
        return self.L1.overlaps(expect)


def _units(d: int) -> int:
    return {-3: 6, -4: 4}.get(d, 2)


def fundamental_unit(d: int) -> tuple[tuple[int, int, int], int]:
    """Fundamental unit of Q(sqrt d) as (x, y, den) with eps = (x + y sqrt d)/den,
    and its period length (norm is (-1)^period).

    theta = (P + sqrt d)/Q, the first complete quotient of (P0 + sqrt d)/2, is
    purely periodic with partial quotients a_1..a_k, and eps = q_k theta + q_{k-1}
    where q are the convergent denominators of [a_1; a_2, ..., a_k].
    """
    s = math.isqrt(d)
    P, Q = (1, 2) if d % 4 == 1 else (0, 2)
    a = (P + s) // Q
    P = a * Q - P
    Q = (d - P * P) // Q
    P1, Q1 = P, Q
    q0, q1 = 0, 1
    period = 0
    while True:
        a = (P + s) // Q
        if period:  # q_k does not involve a_1
            q0, q1 = q1, a * q1 + q0
        P = a * Q - P
        Q = (d - P * P) // Q
        period += 1
        if P == P1 and Q == Q1:
            break
    x, y, den = q1 * P1 + q0 * Q1, q1, Q1
    g = math.gcd(math.gcd(x, y), den)
    return (x // g, y // g, den // g), period


def regulator(d: int) -> tuple[arb, int]:
    (x, y, den), period = fundamental_unit(d)
    eps = (arb(x) + arb(y) * arb(d).sqrt()) / den
    if not eps > 1:
        raise RigorError(f"fundamental unit for d={d} not resolved; raise precision")
    return eps.log(), period


def _record(d: int, h: int, reg, w) -> QuadClassRecord:
    if d > 0:
        L1 = 2 * h * reg / arb(d).sqrt()
    else:
        L1 = 2 * arb.pi() * h / (w * arb(-d).sqrt())
    return QuadClassRecord(d, int(h), reg, w, L1)


def quad_class_data(d: int, prec: int | None = None) -> QuadClassRecord:
    """Class number, regulator or unit count, and L(1, psi_d) for one d."""
    from .rigor import precision

    d = int(d)
    if d == 1 or not is_fundamental(d):
        raise ArithmeticInputError(f"{d} is not a fundamental discriminant != 1")
    with precision(prec) if prec else _nullctx():
        if d < 0:
            h = int(_kernels.negative_class_number(d))
            return _record(d, h, None, _units(d))
        spf = _kernels.spf_sieve(max(d // 4, 2))
        hp, nf, per = _kernels.positive_class_data(np.array([d], dtype=np.int64), spf)
        reg, period = regulator(d)
        if period != per[0]:
            raise RigorError(f"period mismatch for d={d}")
        return _record(d, _narrow_to_wide(int(hp[0]), period, d), reg, None)


def _narrow_to_wide(hplus: int, period: int, d: int) -> int:
    if hplus <= 0:
        raise RigorError(f"reduced-form cycle walk failed for d={d}")
    if period % 2:
        return hplus
    if hplus % 2:
        raise RigorError(f"odd narrow class number with norm +1 unit for d={d}")
    return hplus // 2


class _nullctx:
    def __enter__(self):
        return self

    def __exit__(self, *a):
        return False


def fundamental_discriminants(dmin: int, dmax: int) -> list[int]:
    """All fundamental discriminants in [dmin, dmax] other than 1 (and 0)."""
    lo, hi = int(dmin), int(dmax)
    top = max(abs(lo), abs(hi)) + 1
    # squarefree sieve over |m| <= top
    sqf = np.ones(top + 1, dtype=bool)
    r = 2
    while r * r <= top:
        sqf[r * r :: r * r] = False
        r += 1
    out = []
    for D in range(lo, hi + 1):
        if D in (0, 1):
            continue
        m = D % 4
        if m == 1:
            if sqf[abs(D)]:
                out.append(D)
        elif m == 0:
            q = D // 4
            if q % 4 in (2, 3) and sqf[abs(q)]:
                out.append(D)
    return out


class ClassDataStore:
    """Class records keyed by fundamental discriminant, with CSV persistence."""

    HEADER = ["d", "h", "reg_mid", "reg_rad", "w", "L1_mid", "L1_rad"]

    def __init__(self, records: Iterable[QuadClassRecord] = ()):
        self._recs = {r.d: r for r in records}

    def __getitem__(self, d: int) -> QuadClassRecord:
        try:
            return self._recs[d]
        except KeyError:
            raise MissingClassData(d) from None

    def __contains__(self, d):
        return d in self._recs

    def __len__(self):
        return len(self._recs)

    def __iter__(self):
        return iter(sorted(self._recs))

    def add(self, rec: QuadClassRecord):
        self._recs[rec.d] = rec

    def update(self, other: "ClassDataStore"):
        for d in other:
            self._recs[d] = other[d]

    @property
    def range(self) -> tuple[int, int]:
        if not self._recs:
            return (0, 0)
        return min(self._recs), max(self._recs)

    def write_csv(self, path):
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.HEADER)
            for d in self:
                r = self._recs[d]
                reg = to_decimal(r.reg) if r.reg is not None else ("", "")
                L1 = to_decimal(r.L1)
                wr.writerow([r.d, r.h, reg[0], reg[1], r.w if r.w is not None else "", L1[0], L1[1]])
        os.replace(tmp, path)

    @classmethod
    def read_csv(cls, path) -> "ClassDataStore":
        recs = []
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            if rd.fieldnames != cls.HEADER:
                raise ValueError(f"{path}: unexpected header {rd.fieldnames}")
            for row in rd:
                d = int(row["d"])
                reg = from_decimal(row["reg_mid"], row["reg_rad"]) if row["reg_mid"] else None
                w = int(row["w"]) if row["w"] else None
                recs.append(QuadClassRecord(d, int(row["h"]), reg, w, from_decimal(row["L1_mid"], row["L1_rad"])))
        return cls(recs)


def class_table(dmax: int, dmin: int | None = None) -> ClassDataStore:
    """Class data for every fundamental discriminant in [dmin, dmax].

    ``dmin`` defaults to ``-dmax``.  Class numbers come from the numba
    kernels; regulators from exact continued-fraction units.
    """
    dmin = -int(dmax) if dmin is None else int(dmin)
    ds = fundamental_discriminants(dmin, int(dmax))
    neg = np.array([d for d in ds if d < 0], dtype=np.int64)
    pos = np.array([d for d in ds if d > 0], dtype=np.int64)
    store = ClassDataStore()
    if neg.size:
        hs = _kernels.negative_class_numbers(neg)
        for d, h in zip(neg.tolist(), hs.tolist()):
            store.add(_record(d, h, None, _units(d)))
    if pos.size:
        spf = _kernels.spf_sieve(max(int(pos.max()) // 4, 2))
        hp, _, per = _kernels.positive_class_data(pos, spf)
        for d, h_plus, p in zip(pos.tolist(), hp.tolist(), per.tolist()):
            reg, period = regulator(d)
            if period != p:
                raise RigorError(f"period mismatch for d={d}")
            store.add(_record(d, _narrow_to_wide(h_plus, period, d), reg, None))
    return store


# -- c_N(D) -----------------------------------------------------------------


def newform_local_weight(p: int, D: int, f: int) -> int:
    """Weight at p | N of the scale-f part of the discriminant-D terms.

    Counts fixed points of Gamma_0(p) through x^2 - t x + n = 0 mod p
    (mod p^2 when p | f, with the index p + 1 in front), then subtracts
    the two oldform copies.  Depends on (t, n) only through D.
    """
    t = D % 2
    n = (t * t - D) // 4
    if f % p == 0:
        cnt = sum(1 for x in range(p) if (x * x - t * x + n) % (p * p) == 0)
        return (p + 1) * cnt - 2
    return sum(1 for x in range(p) if (x * x - t * x + n) % p == 0) - 2


def uniform_local_factor(d: int, l: int, lfac: dict, primes) -> Fraction:
    """(1/l) prod_{p|N} (psi_d(p) - 1) prod_{p|l} [1 + (p - psi_d(p))((l, p^inf) - 1)/(p - 1)].

    Exact when gcd(l, N) = 1; see ``cn_rational`` for the general case.
    """
    q = Fraction(1, l)
    for p in primes:
        q *= kronecker(d, p) - 1
        if q == 0:
            return q
    for p, e in lfac.items():
        chi = kronecker(d, p)
        q *= 1 + Fraction((p - chi) * (p**e - 1), p - 1)
    return q


def cn_rational(D: int, d: int, l: int, lfac: dict, primes) -> Fraction:
    """Rational factor q with c_N(D) = L(1, psi_d) q.

    Sum over scales f | l of (1/f) prod_{p | l/f} (1 - psi_d(p)/p) times
    the newform local weights at p | N.  Reduces to the uniform closed form
    when no prime of N divides l.
    """
    if all(l % p for p in primes):
        return uniform_local_factor(d, l, lfac, primes)
    chi = {p: kronecker(d, p) for p in lfac}
    q = Fraction(0)
    for f in divisors(l):
        w = Fraction(1, f)
        for p in primes:
            w *= newform_local_weight(p, D, f)
            if w == 0:
                break
        if w == 0:
            continue
        m = l // f
        for p in lfac:
            if m % p == 0:
                w *= 1 - Fraction(chi[p], p)
        q += w
    return q


@lru_cache(maxsize=1 << 16)
def _local_factor(D: int, N: int) -> tuple[int, int, Fraction]:
    """(d, l, rational factor) so that c_N(D) = L(1, psi_d) * factor."""
    disc = decompose_discriminant(D)
    d, l = disc.d, disc.l
    return d, l, cn_rational(D, d, l, factorize(l), tuple(factorize(N)))


def c_N(D: int, ctx: ArithContext, table: ClassDataStore) -> arb:
    d, _, q = _local_factor(int(D), ctx.N)
    if q == 0:
        return arb(0)
    return table[d].L1 * q.numerator / q.denominator


def c_N_factor(D: int, N: int) -> tuple[int, Fraction]:
    """Rational part of c_N(D) and the fundamental d it attaches to."""
    d, _, q = _local_factor(int(D), int(N))
    return d, q


class CNTable:
    """Memoized c_N(D) for |D| <= D_max, factorizing through a prime sieve."""

    def __init__(self, ctx: ArithContext, store: ClassDataStore, D_max: int):
        self.ctx = ctx
        self.store = store
        self.D_max = int(D_max)
        self._spf = _kernels.spf_sieve(max(self.D_max, 2))
        self._cache: dict[int, arb] = {}

    def _factor(self, n: int) -> dict[int, int]:
        n = abs(n)
        if n > self.D_max:
            return factorize(n)
        out: dict[int, int] = {}
        spf = self._spf
        while n > 1:
            p = int(spf[n])
            n //= p
            out[p] = out.get(p, 0) + 1
        return out

    def rational(self, D: int) -> tuple[int, Fraction]:
        fac = self._factor(D)
        core, f = (-1 if D < 0 else 1), 1
        for p, e in fac.items():
            core *= p ** (e % 2)
            f *= p ** (e // 2)
        if core % 4 == 1:
            d, l = core, f
        else:
            d, l = 4 * core, f // 2
        lfac = self._factor(l) if l > 1 else {}
        return d, cn_rational(D, d, l, lfac, self.ctx.primes)

    def __call__(self, D: int) -> arb:
        v = self._cache.get(D)
        if v is None:
            d, q = self.rational(D)
            v = arb(0) if q == 0 else self.store[d].L1 * q.numerator / q.denominator
            self._cache[D] = v
        return v
