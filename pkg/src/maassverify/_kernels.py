"""numba kernels for bulk class-number computation."""

import numpy as np
from numba import njit


@njit(cache=True)
def spf_sieve(limit):
    spf = np.zeros(limit + 1, dtype=np.int64)
    for i in range(2, limit + 1):
        if spf[i] == 0:
            for j in range(i, limit + 1, i):
                if spf[j] == 0:
                    spf[j] = i
    if limit >= 1:
        spf[1] = 1
    return spf


@njit(cache=True)
def isqrt(n):
    r = np.int64(np.sqrt(np.float64(n)))
    while r * r > n:
        r -= 1
    while (r + 1) * (r + 1) <= n:
        r += 1
    return r


@njit(cache=True)
def _divisors(m, spf, out):
    cnt = 1
    out[0] = 1
    while m > 1:
        p = spf[m]
        e = 0
        while m % p == 0:
            m //= p
            e += 1
        cur = cnt
        pk = 1
        for _ in range(e):
            pk *= p
            for i in range(cur):
                out[cnt] = out[i] * pk
                cnt += 1
    return cnt


@njit(cache=True)
def negative_class_number(d):
    """Number of reduced positive definite forms of discriminant d < 0."""
    n = -d
    h = 0
    a = 1
    while 3 * a * a <= n:
        b = -a + 1
        while b <= a:
            if (b - d) % 2 == 0:
                num = b * b - d
                if num % (4 * a) == 0:
                    c = num // (4 * a)
                    if c >= a:
                        if not (c == a and b < 0):
                            h += 1
            b += 1
        a += 1
    return h


@njit(cache=True)
def negative_class_numbers(ds):
    out = np.zeros(ds.shape[0], dtype=np.int64)
    for i in range(ds.shape[0]):
        out[i] = negative_class_number(ds[i])
    return out


@njit(cache=True)
def cf_period(d):
    """Period length of the continued fraction of the generator of the maximal
    order of Q(sqrt d), d > 0 fundamental."""
    s = isqrt(d)
    if d % 4 == 1:
        P, Q = 1, 2
    else:
        P, Q = 0, 2
    a = (P + s) // Q
    P = a * Q - P
    Q = (d - P * P) // Q
    P1, Q1 = P, Q
    length = 0
    while True:
        a = (P + s) // Q
        P = a * Q - P
        Q = (d - P * P) // Q
        length += 1
        if P == P1 and Q == Q1:
            return length


@njit(cache=True)
def positive_forms(d, spf, buf):
    """Reduced indefinite forms (a, b) of discriminant d: 0 < b < sqrt d and
    |sqrt d - 2|a|| < b.  Returns (keys_a, keys_b)."""
    s = isqrt(d)
    cap = 64
    fa = np.empty(cap, dtype=np.int64)
    fb = np.empty(cap, dtype=np.int64)
    n = 0
    b = 2 - (d & 1)
    while b <= s:
        m = (d - b * b) // 4
        cnt = _divisors(m, spf, buf)
        for i in range(cnt):
            a = buf[i]
            t = 2 * a + b
            if t * t <= d:
                continue
            u = 2 * a - b
            if u > 0 and u * u >= d:
                continue
            if n + 2 > cap:
                cap *= 2
                na = np.empty(cap, dtype=np.int64)
                nb = np.empty(cap, dtype=np.int64)
                na[:n] = fa[:n]
                nb[:n] = fb[:n]
                fa, fb = na, nb
            fa[n] = a
            fb[n] = b
            fa[n + 1] = -a
            fb[n + 1] = b
            n += 2
        b += 2
    return fa[:n], fb[:n]


@njit(cache=True)
def narrow_cycles(d, spf, buf):
    """(narrow class number, number of reduced forms) for d > 0 via the
    cycles of the reduction operator rho."""
    fa, fb = positive_forms(d, spf, buf)
    n = fa.shape[0]
    s = isqrt(d)
    off = 4 * s + 8
    keys = (fa + off) * off + fb
    order = np.argsort(keys)
    skeys = keys[order]
    seen = np.zeros(n, dtype=np.bool_)
    cycles = 0
    for start in range(n):
        if seen[start]:
            continue
        cycles += 1
        a = fa[order[start]]
        b = fb[order[start]]
        seen[start] = True
        while True:
            c = (b * b - d) // (4 * a)
            ac = abs(c)
            r = s - ((s + b) % (2 * ac))
            a, b = c, r
            key = (a + off) * off + b
            idx = np.searchsorted(skeys, key)
            if idx >= n or skeys[idx] != key:
                return -1, n
            if seen[idx]:
                break
            seen[idx] = True
    return cycles, n


@njit(cache=True)
def positive_class_data(ds, spf):
    hp = np.zeros(ds.shape[0], dtype=np.int64)
    nf = np.zeros(ds.shape[0], dtype=np.int64)
    per = np.zeros(ds.shape[0], dtype=np.int64)
    buf = np.zeros(4096, dtype=np.int64)
    for i in range(ds.shape[0]):
        hp[i], nf[i] = narrow_cycles(ds[i], spf, buf)
        per[i] = cf_period(ds[i])
    return hp, nf, per
