"""Independent eigenvalue check by Hejhal's method.

Works on Gamma_0(N) extended by the Fricke involution W: z -> -1/(Nz), so
each newform is an eigenfunction with sign w and there is a single cusp.
Sample points below the fundamental domain are pulled back greedily,
giving a linear system for the Fourier coefficients of an even form

    f(z) = sum_n a(n) sqrt(y) K_{iR}(2 pi n y) cos(2 pi n x),  a(1) = 1.

The residual of the dropped first row vanishes at eigenvalues but also
changes sign at poles, so a root is accepted only when two different
sample heights Y agree on it.  Printed coefficients use the Hecke
normalization a(n) = sqrt(n) c(n), since the basis above carries sqrt(n).

Uses numpy, scipy and mpmath only; nothing from the package.

    python scripts/hejhal_oracle.py --level 5 --R 4.13 --w 1
"""

import argparse
import math

import mpmath
import numpy as np
from scipy.optimize import brentq


def pullback(z, N, maxit=200):
    """Greedy reduction under <Gamma_0(N), W>.  Returns (z*, number of W applied)."""
    flips = 0
    # lower-left entry N matrices (a b; N d), det 1, for small |d|
    mats = []
    for d in range(-N + 1, N):
        if d == 0 or math.gcd(d, N) != 1:
            continue
        # a d - b N = 1
        a = pow(d, -1, N)
        b = (a * d - 1) // N
        mats.append((a, b, N, d))
    for _ in range(maxit):
        z = complex(z.real - math.floor(z.real + 0.5), z.imag)
        best, how = z.imag, None
        zw = -1 / (N * z)
        if zw.imag > best * (1 + 1e-14):
            best, how = zw.imag, "w"
        for a, b, c, d in mats:
            zz = (a * z + b) / (c * z + d)
            if zz.imag > best * (1 + 1e-14):
                best, how = zz.imag, (a, b, c, d)
        if how is None:
            return z, flips
        if how == "w":
            z = zw
            flips += 1
        else:
            a, b, c, d = how
            z = (a * z + b) / (c * z + d)
    raise RuntimeError("pullback did not converge")


def W(R, y, dps=20):
    with mpmath.workdps(dps):
        return float(mpmath.sqrt(y) * mpmath.re(mpmath.besselk(1j * R, 2 * mpmath.pi * y)))


class Hejhal:
    def __init__(self, N, w, M0=22, Q=40, scale=0.8):
        self.N, self.w, self.M0, self.Q = N, w, M0, Q
        self.Y = scale * self._min_height()
        self.xs = [(m - 0.5) / (2 * Q) for m in range(1, 2 * Q + 1)]
        self.pts = [pullback(complex(x, self.Y), N) for x in self.xs]

    def _min_height(self):
        # lowest point of the fundamental domain: scan the top boundary
        h = min(pullback(complex(x, 1e-3), self.N)[0].imag for x in np.linspace(-0.5, 0.5, 401))
        return h

    def matrix(self, R):
        M0, Q = self.M0, self.Q
        ns = np.arange(1, M0 + 1)
        V = np.zeros((M0, M0))
        for (zs, k), x in zip(self.pts, self.xs):
            sgn = self.w**k
            col = np.array([sgn * W(R, n * zs.imag) * math.cos(2 * math.pi * n * zs.real) for n in ns])
            rows = np.cos(2 * math.pi * ns * x)
            V -= np.outer(rows, col) / Q
        for i, n in enumerate(ns):
            V[i, i] += W(R, n * self.Y)
        return V

    def residual(self, R):
        V = self.matrix(R)
        # a(1) = 1; rows 2..M0 determine the rest, row 1 is the test
        A = V[1:, 1:]
        rhs = -V[1:, 0]
        a = np.linalg.solve(A, rhs)
        coeffs = np.concatenate([[1.0], a])
        return float(V[0] @ coeffs), coeffs

    def find(self, R0, width=0.02, steps=8, tol=1e-12):
        """Root of the residual in [R0 - width, R0 + width]; None if no sign change."""
        grid = np.linspace(R0 - width, R0 + width, steps + 1)
        vals = [self.residual(r)[0] for r in grid]
        roots = []
        for (r0, f0), (r1, f1) in zip(zip(grid, vals), zip(grid[1:], vals[1:])):
            if f0 * f1 < 0:
                r = brentq(lambda r: self.residual(r)[0], r0, r1, xtol=tol)
                roots.append(r)
        return roots


def locate(N, w, R0, M0=22, Q=40, scales=(0.8, 0.65), agree=1e-7):
    """[(R, normalized coeffs)] for roots near R0 confirmed by every Y scale."""
    per_scale = []
    for sc in scales:
        hj = Hejhal(N, w, M0, Q, sc)
        per_scale.append((hj, hj.find(R0)))
    (hj0, roots0), rest = per_scale[0], per_scale[1:]
    out = []
    for r in roots0:
        if all(any(abs(r - q) < agree for q in roots) for _, roots in rest):
            c = hj0.residual(r)[1]
            out.append((r, [math.sqrt(n) * c[n - 1] for n in range(1, len(c) + 1)]))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--level", type=int, default=5)
    ap.add_argument("--R", type=float, required=True, help="starting guess")
    ap.add_argument("--w", type=int, choices=(1, -1), required=True, help="Fricke sign")
    ap.add_argument("--M0", type=int, default=22)
    ap.add_argument("--Q", type=int, default=40)
    args = ap.parse_args(argv)
    found = locate(args.level, args.w, args.R, args.M0, args.Q)
    if not found:
        print(f"no eigenvalue near R={args.R} with w={args.w:+d}")
    for R, a in found:
        print(f"R={R:.12f}  a2={a[1]:+.10f}  a3={a[2]:+.10f}  a{args.level}={a[args.level - 1]:+.10f}")

if __name__ == "__main__":
    main()
