"""Quadratic forms in Hecke eigenvalues, the generalised eigenproblem, and
certification of eigenvalues (epsilon, completeness, delta) and Hecke
eigenvalues (eta bounds)."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable

import mpmath
from flint import arb

from .numtheory import divisors, factorize
from .rigor import RigorError, from_decimal, to_decimal


class NotPositiveDefinite(RigorError):
    def __init__(self, message, suggested_dim=None):
        super().__init__(message)
        self.suggested_dim = suggested_dim


class VerificationInconclusive(RigorError):
    pass


def index_set(M: int, N: int) -> list[int]:
    """Admissible indices m <= M with gcd(m, N) = 1."""
    return [m for m in range(1, M + 1) if math.gcd(m, N) == 1]


def needed_traces(ms, hecke_ns=()) -> set[int]:
    out = set()
    for a in ms:
        for b in ms:
            g = math.gcd(a, b)
            for d in divisors(g):
                out.add(a * b // (d * d))
    for n in hecke_ns:
        for m in ms:
            for d in divisors(math.gcd(m, n)):
                out.add(m * n // (d * d))
        for d in divisors(n):
            out.add(n * n // (d * d))
    return out


def hecke_sum(a: int, b: int, t: Callable[[int], arb]) -> arb:
    """sum_{d | (a,b)} t(ab/d^2)."""
    out = arb(0)
    for d in divisors(math.gcd(a, b)):
        out += t(a * b // (d * d))
    return out


def assemble_Q(ms, t: Callable[[int], arb]) -> list[list[arb]]:
    """Ball matrix Q[i][k] = sum_{d | (m_i, m_k)} t(m_i m_k / d^2)."""
    n = len(ms)
    Q = [[arb(0)] * n for _ in range(n)]
    for i in range(n):
        for k in range(i, n):
            v = hecke_sum(ms[i], ms[k], t)
            Q[i][k] = v
            Q[k][i] = v
    return Q


def quad_form(c, Q) -> arb:
    """c^T Q c with c exact (arb points) and Q a ball matrix."""
    n = len(c)
    out = arb(0)
    for i in range(n):
        if c[i] == 0:
            continue
        row = arb(0)
        for k in range(n):
            row += Q[i][k] * c[k]
        out += c[i] * row
    return out


def ball_cholesky(Q) -> list[arb]:
    """Certify positive definiteness: every Cholesky pivot must be a
    strictly positive ball.  Returns the pivots; raises otherwise."""
    n = len(Q)
    L = [[arb(0)] * n for _ in range(n)]
    pivots = []
    for j in range(n):
        s = Q[j][j]
        for k in range(j):
            s -= L[j][k] * L[j][k]
        if not s > 0:
            raise NotPositiveDefinite(f"pivot {j} not certified positive: {s}", suggested_dim=max(j, 1))
        pivots.append(s)
        r = s.sqrt()
        L[j][j] = r
        for i in range(j + 1, n):
            s2 = Q[i][j]
            for k in range(j):
                s2 -= L[i][k] * L[j][k]
            L[i][j] = s2 / r
    return pivots


def leading_pd_dim(Q) -> int:
    """Size of the largest leading block certified positive definite."""
    try:
        return len(ball_cholesky(Q))
    except NotPositiveDefinite as e:
        return e.suggested_dim if e.suggested_dim is not None else 0


def truncate(Q, k: int):
    return [row[:k] for row in Q[:k]]


def _to_mp(Q):
    n = len(Q)
    A = mpmath.matrix(n, n)
    for i in range(n):
        for k in range(n):
            A[i, k] = mpmath.mpf(Q[i][k].mid().str(mpmath.mp.dps + 5, radius=False))
    return A


@dataclass
class CandidateForm:
    lam: float  # pencil eigenvalue (midpoint solver value)
    c: list  # exact arb coefficients, unit norm
    parity: str = "even"
    residual: float = 0.0


def solve_pencil(Q, Qt, parity: str = "even", dps: int | None = None, lam_max: float | None = None, rel_cut: float = 0.0):
    """Solve Qt x = lambda Q x through Q = P D P^T and the eigenvalues of
    D^{-1/2} P^T Qt P D^{-1/2}.  Returns candidates with ascending lambda."""
    n = len(Q)
    dps = dps or max(30, int(-math.log10(max(float(Q[0][0].rad()), 1e-300))) + 10)
    with mpmath.workdps(dps):
        A, B = _to_mp(Q), _to_mp(Qt)
        D, P = mpmath.eigsy(A)
        dmax = max(D[i] for i in range(n))
        keep = [i for i in range(n) if D[i] > rel_cut * dmax and D[i] > 0]
        if len(keep) < n and rel_cut == 0:
            raise NotPositiveDefinite("Q has nonpositive eigenvalues at midpoint", suggested_dim=len(keep))
        k = len(keep)
        S = mpmath.matrix(n, k)
        for col, i in enumerate(keep):
            s = 1 / mpmath.sqrt(D[i])
            for r in range(n):
                S[r, col] = P[r, i] * s
        C = S.T * B * S
        C = (C + C.T) / 2
        E, V = mpmath.eigsy(C)
        out = []
        for col in range(k):
            lam = E[col]
            x = S * V[:, col]
            nrm = mpmath.sqrt(sum(x[r] ** 2 for r in range(n)))
            x = x / nrm
            # make the first nonzero coefficient positive
            sgn = 1
            for r in range(n):
                if abs(x[r]) > mpmath.mpf(10) ** (-dps // 2):
                    sgn = 1 if x[r] > 0 else -1
                    break
            res = B * x - lam * (A * x)
            resn = float(mpmath.sqrt(sum(res[r] ** 2 for r in range(n))))
            c = [arb(mpmath.nstr(sgn * x[r], dps, min_fixed=-1, max_fixed=1)) for r in range(n)]
            out.append(CandidateForm(float(lam), c, parity, resn))
    out.sort(key=lambda f: f.lam)
    if lam_max is not None:
        out = [f for f in out if f.lam <= lam_max]
    return out


@dataclass
class Certified:
    """A candidate with its Rayleigh data."""

    lam: arb  # exact midpoint lambda-tilde (radius 0)
    eps: arb  # upper bound for epsilon
    c: list
    QH: arb  # Q(c, H)
    parity: str = "even"


def rayleigh_epsilon(c, Q0, Q1, Q2, parity: str = "even") -> Certified:
    """lambda-tilde = Q(c, lambda H)/Q(c, H) at its midpoint (exact), and
    eps = sqrt(Q(c, H(lambda - lambda-tilde)^2) / Q(c, H)) from above."""
    den = quad_form(c, Q0)
    if not den > 0:
        raise VerificationInconclusive(f"Q(c, H) not certified positive: {den}")
    q1 = quad_form(c, Q1)
    lt = arb((q1 / den).mid())
    q2 = quad_form(c, Q2)
    num = q2 - 2 * lt * q1 + lt * lt * den
    if num.upper() < 0:
        raise VerificationInconclusive(f"Rayleigh numerator certified negative: {num}")
    up = max(num.upper(), arb(0))
    eps = arb((up / den.lower()).sqrt().upper())
    return Certified(lam=lt, eps=eps, c=c, QH=den, parity=parity)


@dataclass
class CompletenessResult:
    B_rem: arb
    lam_star: float  # every unlisted eigenvalue is > lam_star (inf if none can exist)
    representatives: list  # indices summed in B_rem
    deltas: list  # per input interval; None when not certified
    complete_prefix: int  # number of lowest intervals certified complete and isolated


def _h_upper(H, lam: arb) -> arb:
    return H(lam)


def completeness(intervals, t1: arb, H: Callable[[arb], arb], lam_hi: float = 1e4, iters: int = 200) -> CompletenessResult:
    """Mass accounting with a positive decreasing H.

    ``intervals`` are (lam_tilde, eps) in ascending order.  The remaining
    mass B_rem = t(1, H) - sum H(lam + eps) over non-overlapping intervals
    bounds H at every eigenvalue not accounted for, so such eigenvalues lie
    above lam_star where H(lam_star) > B_rem.
    """
    reps = []
    total = arb(0)
    for i, (lt, e) in enumerate(intervals):
        lo, hi = lt - e, lt + e
        if any(not (hi < intervals[k][0] - intervals[k][1] or lo > intervals[k][0] + intervals[k][1]) for k in reps):
            continue
        reps.append(i)
        total += H(arb((lt + e).upper()))
    B = t1 - total
    Bu = B.upper()
    if Bu <= 0:
        lam_star = math.inf
    else:
        # largest lam_star with certified H(lam_star) > B_rem
        a, b = 0.0, lam_hi
        if not H(arb(a)).lower() > Bu:
            lam_star = 0.0
        else:
            if H(arb(b)).lower() > Bu:
                lam_star = b
            else:
                for _ in range(iters):
                    m = (a + b) / 2
                    if H(arb(m)).lower() > Bu:
                        a = m
                    else:
                        b = m
                    if b - a < 1e-12 * max(1.0, b):
                        break
                lam_star = a
    deltas = []
    prefix = 0
    broken = False
    for i, (lt, e) in enumerate(intervals):
        # lower bounds of |lt_i - lt_k| - eps_k
        dist = []
        for k in range(len(intervals)):
            if k == i:
                continue
            gap = abs(lt - intervals[k][0]) - intervals[k][1]
            dist.append(float(gap.lower()))
        star = lam_star - float(arb(lt).upper()) if lam_star != math.inf else math.inf
        cand = min(dist + [star]) if dist else star
        ok = (i in reps) and float(arb(lt + e).upper()) < lam_star and cand > float(arb(e).upper())
        if ok and not broken:
            deltas.append(cand)
            prefix += 1
        else:
            broken = True
            deltas.append(cand if ok else None)
    return CompletenessResult(B_rem=B, lam_star=lam_star, representatives=reps, deltas=deltas, complete_prefix=prefix)


def eta(eps: arb, delta: float, QH: arb, Qen: arb) -> arb:
    """(eps/delta) sqrt(Q(c,H) Q(e_n,H)) from above."""
    prod = QH * Qen
    up = max(prod.upper(), arb(0))
    return arb((eps / arb(delta) * up.sqrt()).upper())


def hecke_A(c, ms, n: int, t: Callable[[int], arb]) -> arb:
    """sum_m c(m) sum_{d | (m,n)} t(mn/d^2)."""
    out = arb(0)
    for cm, m in zip(c, ms):
        if cm == 0:
            continue
        out += cm * hecke_sum(m, n, t)
    return out


def hecke_coeffs(cert: Certified, delta: float, ms, ns, t: Callable[[int], arb]) -> dict:
    """a(n) = A(n)/W for n in ns, each A(n) widened by its eta bound."""
    def A(n):
        Qen = hecke_sum(n, n, t)
        return hecke_A(cert.c, ms, n, t) + arb(0, eta(cert.eps, delta, cert.QH, Qen))

    W = A(1)
    if W.contains(0):
        raise VerificationInconclusive(f"W = {W} contains zero")
    out = {1: arb(1)}
    for n in ns:
        if n != 1:
            out[n] = A(n) / W
    return out


def extend_hecke(a: dict, N: int, signs: dict, n_max: int) -> dict:
    """All a(n), n <= n_max, from a(p) (p coprime to N) and the signs a(p) = s/sqrt(p) for p | N."""
    out = {1: arb(1)}
    pp: dict[int, list] = {}

    def prime_powers(p):
        if p in pp:
            return pp[p]
        if N % p == 0:
            ap = arb(signs[p]) / arb(p).sqrt()
            seq = [arb(1), ap]
            while p ** len(seq) <= n_max:
                seq.append(seq[-1] * ap)
        else:
            if p not in a:
                raise KeyError(f"a({p}) not available")
            ap = a[p]
            seq = [arb(1), ap]
            while p ** len(seq) <= n_max:
                seq.append(ap * seq[-1] - seq[-2])
        pp[p] = seq
        return seq

    for n in range(2, n_max + 1):
        v = arb(1)
        for p, e in factorize(n).items():
            v = v * prime_powers(p)[e]
        out[n] = v
    return out


@dataclass
class VerifiedForm:
    level: int
    parity: str
    lam: arb  # ball lam_tilde +/- eps
    eps: float
    delta: float | None
    coeffs: dict = field(default_factory=dict)  # n -> arb
    signs: dict = field(default_factory=dict)
    fricke_w: int | None = None
    signs_rigorous: bool = False
    complete: bool = False

    @property
    def R(self) -> arb:
        return (self.lam - arb(1) / 4).sqrt()

    def to_json(self) -> dict:
        def ball(x):
            m, r = to_decimal(x)
            return {"mid": m, "rad": r}

        return {
            "level": self.level,
            "parity": self.parity,
            "lambda": ball(self.lam),
            "R": ball(self.R),
            "epsilon": repr(float(self.eps)),
            "delta": None if self.delta is None else repr(float(self.delta)),
            "coeffs": [{"n": n, **ball(v)} for n, v in sorted(self.coeffs.items())],
            "signs": {str(p): s for p, s in self.signs.items()},
            "fricke_w": self.fricke_w,
            "signs_rigorous": self.signs_rigorous,
            "complete": self.complete,
        }

    @classmethod
    def from_json(cls, doc) -> "VerifiedForm":
        lam = from_decimal(doc["lambda"]["mid"], doc["lambda"]["rad"])
        coeffs = {int(e["n"]): from_decimal(e["mid"], e["rad"]) for e in doc.get("coeffs", [])}
        return cls(
            level=doc["level"],
            parity=doc["parity"],
            lam=lam,
            eps=float(doc["epsilon"]),
            delta=None if doc["delta"] is None else float(doc["delta"]),
            coeffs=coeffs,
            signs={int(p): s for p, s in doc.get("signs", {}).items()},
            fricke_w=doc.get("fricke_w"),
            signs_rigorous=doc.get("signs_rigorous", False),
            complete=doc.get("complete", False),
        )


@dataclass
class SpectrumResult:
    forms: list  # VerifiedForm, ascending lambda
    completeness: CompletenessResult
    dim: int
    candidates: int


def certify_spectrum(Qs, ms, t1: arb, H, parity: str, N: int, lam_max: float, eps_max: float = 1.0,
                     hecke_ns=(), t: Callable[[int], arb] | None = None, dim: int | None = None) -> SpectrumResult:
    """Candidates from the pencil (Q(H), Q(lambda H)), Rayleigh intervals,
    completeness, then Hecke eigenvalues for the isolated forms.

    ``Qs`` holds Q(H), Q(lambda H), Q(lambda^2 H) over the index set ``ms``.
    The dimension is cut to the largest leading block that passes ball
    Cholesky (or ``dim`` if smaller).
    """
    k = leading_pd_dim(Qs[0])
    if dim is not None:
        k = min(k, dim)
    if k < 1:
        raise NotPositiveDefinite("no leading block of Q(H) is certified positive", suggested_dim=0)
    Qk = [truncate(Q, k) for Q in Qs]
    msk = list(ms)[:k]
    cands = solve_pencil(Qk[0], Qk[1], parity, lam_max=lam_max)
    certs = []
    for f in cands:
        try:
            ce = rayleigh_epsilon(f.c, *Qk, parity)
        except VerificationInconclusive:
            continue
        if ce.eps.upper() <= eps_max and (ce.lam + ce.eps).upper() <= lam_max:
            certs.append(ce)
    certs.sort(key=lambda ce: float(ce.lam.mid()))
    comp = completeness([(ce.lam, ce.eps) for ce in certs], t1, H)
    forms = []
    for i, ce in enumerate(certs):
        delta = comp.deltas[i]
        coeffs = {1: arb(1)}
        if delta is not None and t is not None and hecke_ns:
            try:
                coeffs = hecke_coeffs(ce, delta, msk, hecke_ns, t)
            except VerificationInconclusive:
                pass
        forms.append(VerifiedForm(
            level=N, parity=parity, lam=arb(ce.lam.mid(), ce.eps.upper()), eps=float(ce.eps.upper()),
            delta=delta, coeffs=coeffs, complete=i < comp.complete_prefix))
    return SpectrumResult(forms, comp, k, len(cands))


def save_forms(forms, path):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump([f.to_json() for f in forms], fh, indent=1)
    os.replace(tmp, path)


def load_forms(path) -> list[VerifiedForm]:
    with open(path) as fh:
        return [VerifiedForm.from_json(d) for d in json.load(fh)]
