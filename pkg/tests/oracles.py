"""Independent reference implementations used to cross-check the library.

Everything here works on plain dicts {key: complex} with the same index
convention as the library, but the algorithms are written from scratch:
naive nested-loop products, per-variable derivative rules spelled out one
case at a time, and a convolution-based shift.  Nothing imports the library
kernels, so agreement is meaningful.
"""

import math
from collections import defaultdict

import numpy as np

PRUNE = 1e-300


def canon(terms):
    return {k: complex(c) for k, c in terms.items() if abs(c) > PRUNE}


def add_terms(A, B, fb=1.0):
    out = defaultdict(complex)
    for k, c in A.items():
        out[k] += c
    for k, c in B.items():
        out[k] += fb * c
    return canon(out)


def oracle_product(A, B):
    out = defaultdict(complex)
    for (ka, ia, ja, la1, la2), ca in A.items():
        for (kb, ib, jb, lb1, lb2), cb in B.items():
            key = (
                tuple(p + q for p, q in zip(ka, kb)),
                tuple(p + q for p, q in zip(ia, ib)),
                tuple(p + q for p, q in zip(ja, jb)),
                tuple(p + q for p, q in zip(la1, lb1)),
                tuple(p + q for p, q in zip(la2, lb2)),
            )
            out[key] += ca * cb
    return canon(out)


def oracle_partial(terms, var, idx):
    out = defaultdict(complex)
    for (k, i, j, l1, l2), c in terms.items():
        if var == "x":
            if k[idx] != 0:
                out[(k, i, j, l1, l2)] += 1j * k[idx] * c
        elif var == "y":
            if i[idx] > 0:
                i2 = list(i)
                i2[idx] -= 1
                out[(k, tuple(i2), j, l1, l2)] += i[idx] * c
        elif var == "z":
            if j[idx] > 0:
                j2 = list(j)
                j2[idx] -= 1
                out[(k, i, tuple(j2), l1, l2)] += j[idx] * c
        elif var == "w":
            if l1[idx] > 0:
                m = list(l1)
                m[idx] -= 1
                out[(k, i, j, tuple(m), l2)] += l1[idx] * c
        elif var == "wbar":
            if l2[idx] > 0:
                m = list(l2)
                m[idx] -= 1
                out[(k, i, j, l1, tuple(m))] += l2[idx] * c
        else:
            raise ValueError(var)
    return canon(out)


def oracle_bracket(A, B, dims):
    """{A,B} = -A_y.B_x + A_x.B_y + sum_q (A_{z_q}B_{z_{q+b}} - A_{z_{q+b}}B_{z_q})
    - I sum_j A_{wbar_j}B_{w_j} + I sum_j A_{w_j}B_{wbar_j}."""
    n, b, J = dims
    total = {}
    for a in range(n):
        t = oracle_product(oracle_partial(A, "y", a), oracle_partial(B, "x", a))
        total = add_terms(total, t, -1.0)
        t = oracle_product(oracle_partial(A, "x", a), oracle_partial(B, "y", a))
        total = add_terms(total, t, +1.0)
    for q in range(b):
        t = oracle_product(oracle_partial(A, "z", q), oracle_partial(B, "z", q + b))
        total = add_terms(total, t, +1.0)
        t = oracle_product(oracle_partial(A, "z", q + b), oracle_partial(B, "z", q))
        total = add_terms(total, t, -1.0)
    for j in range(J):
        t = oracle_product(oracle_partial(A, "wbar", j), oracle_partial(B, "w", j))
        total = add_terms(total, t, -1j)
        t = oracle_product(oracle_partial(A, "w", j), oracle_partial(B, "wbar", j))
        total = add_terms(total, t, +1j)
    return total


def oracle_truncate(terms, K, m, l_cap=2):
    low, tail = {}, {}
    for key, c in terms.items():
        k, i, j, l1, l2 = key
        if (sum(abs(v) for v in k) <= K
                and 2 * sum(i) + sum(j) <= m
                and sum(l1) + sum(l2) <= l_cap):
            low[key] = c
        else:
            tail[key] = c
    return low, tail


def oracle_average(terms):
    return {key: c for key, c in terms.items() if all(v == 0 for v in key[0])}


def _poly_shift_1d(coeffs, d):
    """coeffs[e] for t^e; returns coefficients of (t+d)^e expansion summed.

    Done by convolution: repeatedly multiply by (t + d), so it shares no code
    with the binomial route in the library.
    """
    out = defaultdict(complex)
    for e, c in coeffs.items():
        poly = [c]  # constant
        for _ in range(e):
            nxt = [0j] * (len(poly) + 1)
            for deg, v in enumerate(poly):
                nxt[deg + 1] += v       # * t
                nxt[deg] += v * d       # * d
            poly = nxt
        for deg, v in enumerate(poly):
            out[deg] += v
    return out


def oracle_shift_z(terms, delta):
    cur = dict(terms)
    for q, d in enumerate(delta):
        if d == 0:
            continue
        out = defaultdict(complex)
        for (k, i, j, l1, l2), c in cur.items():
            shifted = _poly_shift_1d({j[q]: c}, d)
            for deg, v in shifted.items():
                j2 = list(j)
                j2[q] = deg
                out[(k, i, tuple(j2), l1, l2)] += v
        cur = canon(out)
    return cur


def oracle_evaluate(terms, x, y, z, w, wbar):
    total = 0j
    for (k, i, j, l1, l2), c in terms.items():
        v = c * np.exp(1j * sum(kk * xx for kk, xx in zip(k, x)))
        for e, t in zip(i, y):
            v *= t ** e
        for e, t in zip(j, z):
            v *= t ** e
        for e, t in zip(l1, w):
            v *= t ** e
        for e, t in zip(l2, wbar):
            v *= t ** e
        total += v
    return complex(total)


def max_diff(A, B):
    keys = set(A) | set(B)
    return max((abs(A.get(k, 0j) - B.get(k, 0j)) for k in keys), default=0.0)


def max_abs(A):
    return max((abs(c) for c in A.values()), default=0.0)


def random_series(dims, rng, nterms=12, kmax=2, degmax=4, lmax=2, real=False):
    """Random sparse series; degree means 2|i|+|j| here.

    With real=True the reality involution is enforced so the result is a
    legitimate real Hamiltonian.
    """
    n, b, J = dims
    terms = {}
    for _ in range(nterms):
        k = tuple(int(rng.integers(-kmax, kmax + 1)) for _ in range(n))
        # split a random grading budget between y (weight 2) and z (weight 1)
        deg = int(rng.integers(0, degmax + 1))
        i = [0] * n
        j = [0] * (2 * b)
        budget = deg
        while budget >= 2 and rng.random() < 0.5 and n > 0:
            i[rng.integers(0, n)] += 1
            budget -= 2
        while budget >= 1 and 2 * b > 0 and rng.random() < 0.7:
            j[rng.integers(0, 2 * b)] += 1
            budget -= 1
        l1 = [0] * J
        l2 = [0] * J
        for _ in range(int(rng.integers(0, lmax + 1))):
            if J == 0:
                break
            if rng.random() < 0.5:
                l1[rng.integers(0, J)] += 1
            else:
                l2[rng.integers(0, J)] += 1
        if sum(l1) + sum(l2) > lmax:
            l1 = [0] * J
            l2 = [0] * J
        key = (k, tuple(i), tuple(j), tuple(l1), tuple(l2))
        c = complex(rng.normal(), rng.normal())
        terms[key] = terms.get(key, 0j) + c
    if real:
        sym = defaultdict(complex)
        for (k, i, j, l1, l2), c in terms.items():
            mk = (tuple(-v for v in k), i, j, l2, l1)
            sym[(k, i, j, l1, l2)] += 0.5 * c
            sym[mk] += 0.5 * c.conjugate()
        terms = canon(sym)
    return canon(terms)
