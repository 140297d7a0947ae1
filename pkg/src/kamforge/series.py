"""Sparse Fourier-Taylor series and the symplectic calculus built on them.

A term is indexed by a 5-tuple of integer tuples ``(k, i, j, l1, l2)`` and
represents

    c * y**i * z**j * w**l1 * wbar**l2 * exp(I*<k, x>)

with x on the n-torus, y the n actions, z the 2b degenerate canonical
components (the first b entries are canonically paired with the last b), and
(w, wbar) the J normal-mode pairs.  Coefficients are complex.  A series is a
plain dict from index tuple to coefficient; canonicalisation drops only
coefficients at or below PRUNE_TOL, so cancellation dust above underflow is
kept rather than silently discarded.

Products and Poisson brackets have two interchangeable implementations: a
dict walk used for small operands and a vectorised path that packs exponent
rows into integers and reduces duplicates with bincount.  Both are exercised
against each other in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

PRUNE_TOL = 1e-300

# Above this many coefficient pairs a product switches to the array kernel.
DICT_PAIR_LIMIT = 20_000
_CHUNK_ROWS = 4_000_000
_SQUASH_ROWS = 12_000_000

Key = Tuple[Tuple[int, ...], Tuple[int, ...], Tuple[int, ...], Tuple[int, ...], Tuple[int, ...]]


@dataclass(frozen=True)
class Dims:
    """Shape of the variable block: n angles/actions, b degenerate pairs, J normal modes."""

    n: int
    b: int
    J: int

    def __post_init__(self):
        if self.n < 1 or self.b < 0 or self.J < 0:
            raise ValueError("invalid dimensions (need n >= 1, b >= 0, J >= 0)")

    @property
    def nz(self) -> int:
        return 2 * self.b

    @property
    def width(self) -> int:
        return 2 * self.n + self.nz + 2 * self.J

    def zero_key(self) -> Key:
        return ((0,) * self.n, (0,) * self.n, (0,) * self.nz, (0,) * self.J, (0,) * self.J)

    def flat(self, key: Key) -> Tuple[int, ...]:
        return key[0] + key[1] + key[2] + key[3] + key[4]

    def unflat(self, row: Sequence[int]) -> Key:
        n, nz, J = self.n, self.nz, self.J
        row = tuple(int(v) for v in row)
        return (
            row[:n],
            row[n:2 * n],
            row[2 * n:2 * n + nz],
            row[2 * n + nz:2 * n + nz + J],
            row[2 * n + nz + J:],
        )


def key_knorm(key: Key) -> int:
    return sum(abs(v) for v in key[0])


def key_degree(key: Key) -> int:
    """Taylor grading: actions count twice, degenerate components once."""
    return 2 * sum(key[1]) + sum(key[2])


def key_lnorm(key: Key) -> int:
    return sum(key[3]) + sum(key[4])


def mirror_key(key: Key) -> Key:
    """Index of the conjugate term under the reality involution.

    A series is real-valued on the real slice (x, y and the degenerate pairs
    real, wbar the conjugate of w) precisely when every coefficient equals
    the conjugate of the coefficient at the mirrored index: k negated, the
    normal exponents exchanged, the degenerate exponents untouched.  The
    degenerate components form a real canonical pair, which is what makes
    their bracket block real; a conjugate-pair convention there would be
    incompatible with that block.
    """
    k, i, j, l1, l2 = key
    return (tuple(-v for v in k), i, j, l2, l1)


@dataclass(frozen=True)
class GradingCaps:
    """Admissibility box used to keep working products finite."""

    k_max: int
    m_max: int
    l_max: int

    def admits(self, key: Key) -> bool:
        return (
            key_knorm(key) <= self.k_max
            and key_degree(key) <= self.m_max
            and key_lnorm(key) <= self.l_max
        )

    def mask(self, K: np.ndarray, dims: Dims) -> np.ndarray:
        n, nz = dims.n, dims.nz
        kn = np.abs(K[:, :n]).sum(axis=1)
        deg = 2 * K[:, n:2 * n].sum(axis=1) + K[:, 2 * n:2 * n + nz].sum(axis=1)
        ln = K[:, 2 * n + nz:].sum(axis=1)
        return (kn <= self.k_max) & (deg <= self.m_max) & (ln <= self.l_max)


class TFSeries:
    """A sparse series; ``terms`` maps index tuples to complex coefficients."""

    __slots__ = ("dims", "terms")

    def __init__(self, dims: Dims, terms: Optional[Dict[Key, complex]] = None):
        self.dims = dims
        self.terms: Dict[Key, complex] = {}
        if terms:
            for key, c in terms.items():
                c = complex(c)
                if abs(c) > PRUNE_TOL:
                    self.terms[key] = c

    # -- construction ------------------------------------------------------

    @classmethod
    def from_terms(cls, dims: Dims, pairs: Iterable[Tuple[Key, complex]]) -> "TFSeries":
        out = cls(dims)
        for key, c in pairs:
            out._accum(key, c)
        return out

    def copy(self) -> "TFSeries":
        out = TFSeries(self.dims)
        out.terms = dict(self.terms)
        return out

    # -- basic queries -----------------------------------------------------

    def __len__(self) -> int:
        return len(self.terms)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def items(self):
        return self.terms.items()

    def coeff(self, key: Key) -> complex:
        return self.terms.get(key, 0j)

    def max_k_norm(self) -> int:
        return max((key_knorm(key) for key in self.terms), default=0)

    def max_degree(self) -> int:
        return max((key_degree(key) for key in self.terms), default=0)

    def _accum(self, key: Key, c: complex) -> None:
        v = self.terms.get(key, 0j) + c
        if abs(v) <= PRUNE_TOL:
            self.terms.pop(key, None)
        else:
            self.terms[key] = v

    def _check(self, other: "TFSeries") -> None:
        if self.dims != other.dims:
            raise ValueError("incompatible series dimensions: %r vs %r" % (self.dims, other.dims))

    # -- linear arithmetic ---------------------------------------------------

    def __add__(self, other: "TFSeries") -> "TFSeries":
        self._check(other)
        out = self.copy()
        for key, c in other.terms.items():
            out._accum(key, c)
        return out

    def __sub__(self, other: "TFSeries") -> "TFSeries":
        self._check(other)
        out = self.copy()
        for key, c in other.terms.items():
            out._accum(key, -c)
        return out

    def __neg__(self) -> "TFSeries":
        return self.scaled(-1.0)

    def scaled(self, c: complex) -> "TFSeries":
        c = complex(c)
        out = TFSeries(self.dims)
        if abs(c) > PRUNE_TOL:
            out.terms = {key: v * c for key, v in self.terms.items()}
        return out

    def __mul__(self, c):
        if isinstance(c, TFSeries):
            return series_product(self, c)
        return self.scaled(c)

    __rmul__ = __mul__

    def pruned(self, floor: float) -> "TFSeries":
        """Copy without the terms of magnitude at most ``floor``."""
        out = TFSeries(self.dims)
        out.terms = {key: c for key, c in self.terms.items() if abs(c) > floor}
        return out

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # -- calculus ------------------------------------------------------------

    def partial(self, var: str, idx: int) -> "TFSeries":
        """Derivative with respect to one scalar variable.

        ``var`` is one of 'x', 'y', 'z', 'w', 'wbar'.  The angle derivative
        brings down the factor I*k_idx and leaves the index unchanged.
        """
        n, nz, J = self.dims.n, self.dims.nz, self.dims.J
        limits = {"x": n, "y": n, "z": nz, "w": J, "wbar": J}
        if var not in limits:
            raise ValueError("unknown variable %r" % (var,))
        if not 0 <= idx < limits[var]:
            raise ValueError("index %d out of range for %r" % (idx, var))
        out = TFSeries(self.dims)
        for key, c in self.terms.items():
            k, i, j, l1, l2 = key
            if var == "x":
                if k[idx]:
                    out._accum(key, c * 1j * k[idx])
            elif var == "y":
                if i[idx]:
                    out._accum((k, _dec(i, idx), j, l1, l2), c * i[idx])
            elif var == "z":
                if j[idx]:
                    out._accum((k, i, _dec(j, idx), l1, l2), c * j[idx])
            elif var == "w":
                if l1[idx]:
                    out._accum((k, i, j, _dec(l1, idx), l2), c * l1[idx])
            else:
                if l2[idx]:
                    out._accum((k, i, j, l1, _dec(l2, idx)), c * l2[idx])
        return out

    def split(self, pred: Callable[[Key], bool]) -> Tuple["TFSeries", "TFSeries"]:
        """Exact partition into (terms satisfying pred, the rest)."""
        yes = TFSeries(self.dims)
        no = TFSeries(self.dims)
        for key, c in self.terms.items():
            (yes if pred(key) else no).terms[key] = c
        return yes, no

    def truncate_split(self, K: int, m: int, l_cap: int = 2) -> Tuple["TFSeries", "TFSeries"]:
        """(low part, tail): low has |k| <= K, grading <= m, |l1|+|l2| <= l_cap."""

        def low(key: Key) -> bool:
            return key_knorm(key) <= K and key_degree(key) <= m and key_lnorm(key) <= l_cap

        return self.split(low)

    def average(self) -> "TFSeries":
        """The k = 0 sub-series (angle average)."""
        zero = (0,) * self.dims.n
        out = TFSeries(self.dims)
        for key, c in self.terms.items():
            if key[0] == zero:
                out.terms[key] = c
        return out

    def shift_z(self, delta: Sequence[complex]) -> "TFSeries":
        """Substitute z -> z + delta, expanded binomially (exact)."""
        delta = tuple(complex(d) for d in delta)
        if len(delta) != self.dims.nz:
            raise ValueError("shift length %d != 2b = %d" % (len(delta), self.dims.nz))
        if all(d == 0 for d in delta):
            return self.copy()
        out = TFSeries(self.dims)
        for (k, i, j, l1, l2), c in self.terms.items():
            parts: List[Tuple[Tuple[int, ...], complex]] = [(j, c)]
            for q, d in enumerate(delta):
                if d == 0:
                    continue
                grown: List[Tuple[Tuple[int, ...], complex]] = []
                for jj, cc in parts:
                    e = jj[q]
                    if e == 0:
                        grown.append((jj, cc))
                        continue
                    for beta in range(e + 1):
                        grown.append((_setidx(jj, q, beta), cc * math.comb(e, beta) * d ** (e - beta)))
                parts = grown
            for jj, cc in parts:
                out._accum((k, i, jj, l1, l2), cc)
        return out

    def evaluate(self, x, y, z, w, wbar) -> complex:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=complex)
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        wbar = np.asarray(wbar, dtype=complex)
        total = 0j
        for (k, i, j, l1, l2), c in self.terms.items():
            v = c * np.exp(1j * float(np.dot(k, x)))
            for base, exps in ((y, i), (z, j), (w, l1), (wbar, l2)):
                for t, e in enumerate(exps):
                    if e:
                        v *= base[t] ** e
            total += v
        return complex(total)

    def reality_defect(self) -> float:
        """Max |conj(c[key]) - c[mirror(key)]|; zero for a real Hamiltonian."""
        worst = 0.0
        for key, c in self.terms.items():
            d = abs(c.conjugate() - self.terms.get(mirror_key(key), 0j))
            if d > worst:
                worst = d
        return worst


def _dec(t: Tuple[int, ...], idx: int) -> Tuple[int, ...]:
    return t[:idx] + (t[idx] - 1,) + t[idx + 1:]


def _setidx(t: Tuple[int, ...], idx: int, v: int) -> Tuple[int, ...]:
    return t[:idx] + (v,) + t[idx + 1:]


def monomial(dims: Dims, c: complex, k=None, i=None, j=None, l1=None, l2=None) -> TFSeries:
    """Single-term series; omitted index blocks default to zeros."""
    key = (
        tuple(k) if k is not None else (0,) * dims.n,
        tuple(i) if i is not None else (0,) * dims.n,
        tuple(j) if j is not None else (0,) * dims.nz,
        tuple(l1) if l1 is not None else (0,) * dims.J,
        tuple(l2) if l2 is not None else (0,) * dims.J,
    )
    if len(key[0]) != dims.n or len(key[1]) != dims.n or len(key[2]) != dims.nz \
            or len(key[3]) != dims.J or len(key[4]) != dims.J:
        raise ValueError("index block length mismatch for %r" % (dims,))
    if any(v < 0 for block in key[1:] for v in block):
        raise ValueError("Taylor exponents must be nonnegative")
    return TFSeries(dims, {key: complex(c)})


# -- products and brackets ---------------------------------------------------


def _add_keys(a: Key, b: Key) -> Key:
    return (
        tuple(u + v for u, v in zip(a[0], b[0])),
        tuple(u + v for u, v in zip(a[1], b[1])),
        tuple(u + v for u, v in zip(a[2], b[2])),
        tuple(u + v for u, v in zip(a[3], b[3])),
        tuple(u + v for u, v in zip(a[4], b[4])),
    )


def _to_arrays(S: TFSeries) -> Tuple[np.ndarray, np.ndarray]:
    w = S.dims.width
    if not S.terms:
        return np.zeros((0, w), np.int64), np.zeros(0, complex)
    K = np.fromiter(
        (v for key in S.terms for v in S.dims.flat(key)), np.int64, count=len(S.terms) * w
    ).reshape(-1, w)
    C = np.fromiter(S.terms.values(), complex, count=len(S.terms))
    return K, C


def _deriv_arrays(dims: Dims, K: np.ndarray, C: np.ndarray, var: str, idx: int):
    n, nz, J = dims.n, dims.nz, dims.J
    if var == "x":
        col = idx
        kk = K[:, col]
        mask = kk != 0
        return K[mask], C[mask] * (1j * kk[mask])
    offset = {"y": n, "z": 2 * n, "w": 2 * n + nz, "wbar": 2 * n + nz + J}[var]
    col = offset + idx
    e = K[:, col]
    mask = e != 0
    K2 = K[mask].copy()
    K2[:, col] -= 1
    return K2, C[mask] * e[mask]


def _accumulate_pairs(KA, CA, KB, CB, ks: list, cs: list) -> None:
    ta, tb = len(CA), len(CB)
    if ta == 0 or tb == 0:
        return
    chunk = max(1, _CHUNK_ROWS // tb)
    width = KA.shape[1]
    for s0 in range(0, ta, chunk):
        ka = KA[s0:s0 + chunk]
        ca = CA[s0:s0 + chunk]
        ks.append((ka[:, None, :] + KB[None, :, :]).reshape(-1, width))
        cs.append((ca[:, None] * CB[None, :]).ravel())
        if sum(len(c) for c in cs) > _SQUASH_ROWS:
            Kr, Cr = _reduce_rows(ks, cs)
            ks[:] = [Kr]
            cs[:] = [Cr]


def _joint_packing(blocks):
    """Shared bit layout for all key sums a + b the blocks can produce.

    Packing a row is linear in the exponents, so packing each factor
    separately and adding the packed integers equals packing the sum; that
    keeps the pair expansion at one int64 per row instead of a full row.
    Returns None when the combined spans need more than 62 bits.
    """
    lo = None
    hi = None
    for KA, _, KB, _ in blocks:
        bl = KA.min(axis=0) + KB.min(axis=0)
        bh = KA.max(axis=0) + KB.max(axis=0)
        lo = bl if lo is None else np.minimum(lo, bl)
        hi = bh if hi is None else np.maximum(hi, bh)
    span = hi - lo + 1
    bits = np.maximum(np.ceil(np.log2(span.astype(np.float64))), 1.0).astype(np.int64)
    if int(bits.sum()) > 62:
        return None
    shifts = np.concatenate(([0], np.cumsum(bits[:-1])))
    return lo, bits, shifts


def _reduce_packed(ps: list, cs: list):
    P = np.concatenate(ps) if len(ps) > 1 else ps[0]
    C = np.concatenate(cs) if len(cs) > 1 else cs[0]
    uniq, inv = np.unique(P, return_inverse=True)
    re = np.bincount(inv, weights=C.real, minlength=len(uniq))
    im = np.bincount(inv, weights=C.imag, minlength=len(uniq))
    return uniq, re + 1j * im


def _accumulate_packed(pa, ca, pb, cb, ps: list, cs: list) -> None:
    ta, tb = len(ca), len(cb)
    if ta == 0 or tb == 0:
        return
    chunk = max(1, _CHUNK_ROWS // tb)
    for s0 in range(0, ta, chunk):
        ps.append((pa[s0:s0 + chunk, None] + pb[None, :]).ravel())
        cs.append((ca[s0:s0 + chunk, None] * cb[None, :]).ravel())
        if sum(len(c) for c in cs) > _SQUASH_ROWS:
            u, c = _reduce_packed(ps, cs)
            ps[:] = [u]
            cs[:] = [c]


def _unpack_rows(uniq, lo, bits, shifts) -> np.ndarray:
    K = np.empty((len(uniq), len(lo)), np.int64)
    for col in range(len(lo)):
        K[:, col] = ((uniq >> int(shifts[col])) & ((1 << int(bits[col])) - 1)) + lo[col]
    return K


def _array_combine(dims: Dims, blocks, caps: Optional[GradingCaps], floor: float):
    """Sum the pair products of every (KA, CA, KB, CB) block, reduce
    duplicate keys, drop coefficients at or below floor, split by caps."""
    packing = _joint_packing(blocks)
    if packing is not None:
        lo, bits, shifts = packing
        ps: list = []
        cs: list = []
        for KA, CA, KB, CB in blocks:
            loA = KA.min(axis=0)
            pa = ((KA - loA) << shifts).sum(axis=1)
            pb = ((KB - (lo - loA)) << shifts).sum(axis=1)
            _accumulate_packed(pa, CA, pb, CB, ps, cs)
        uniq, C = _reduce_packed(ps, cs)
        keep = np.abs(C) > max(PRUNE_TOL, floor)
        uniq = uniq[keep]
        C = C[keep]
        if len(uniq) == 0:
            return TFSeries(dims), TFSeries(dims)
        K = _unpack_rows(uniq, lo, bits, shifts)
        return _split_from_arrays(dims, K, C, caps, 0.0)
    ks: list = []
    rcs: list = []
    for KA, CA, KB, CB in blocks:
        _accumulate_pairs(KA, CA, KB, CB, ks, rcs)
    if not ks:
        return TFSeries(dims), TFSeries(dims)
    K, C = _reduce_rows(ks, rcs)
    return _split_from_arrays(dims, K, C, caps, floor)


def _reduce_rows(ks: list, cs: list) -> Tuple[np.ndarray, np.ndarray]:
    K = np.concatenate(ks) if len(ks) > 1 else ks[0]
    C = np.concatenate(cs) if len(cs) > 1 else cs[0]
    if len(K) == 0:
        return K, C
    lo = K.min(axis=0)
    span = K.max(axis=0) - lo + 1
    bits = np.maximum(np.ceil(np.log2(span.astype(np.float64))), 1.0).astype(np.int64)
    if int(bits.sum()) <= 62:
        shifts = np.concatenate(([0], np.cumsum(bits[:-1])))
        packed = ((K - lo) << shifts).sum(axis=1)
        uniq, inv = np.unique(packed, return_inverse=True)
        re = np.bincount(inv, weights=C.real, minlength=len(uniq))
        im = np.bincount(inv, weights=C.imag, minlength=len(uniq))
        Kout = np.empty((len(uniq), K.shape[1]), np.int64)
        for col in range(K.shape[1]):
            Kout[:, col] = ((uniq >> shifts[col]) & ((1 << int(bits[col])) - 1)) + lo[col]
        return Kout, re + 1j * im
    # Wide exponent range: fall back to unique over raw rows.
    Kc = np.ascontiguousarray(K)
    view = Kc.view([("", Kc.dtype)] * Kc.shape[1]).ravel()
    uniq, inv = np.unique(view, return_inverse=True)
    re = np.bincount(inv, weights=C.real, minlength=len(uniq))
    im = np.bincount(inv, weights=C.imag, minlength=len(uniq))
    Kout = uniq.view(np.int64).reshape(len(uniq), Kc.shape[1])
    return Kout, re + 1j * im


def _split_from_arrays(dims: Dims, K: np.ndarray, C: np.ndarray, caps: Optional[GradingCaps],
                       floor: float = 0.0):
    main = TFSeries(dims)
    over = TFSeries(dims)
    if len(K) == 0:
        return main, over
    keep = np.abs(C) > max(PRUNE_TOL, floor)
    K = K[keep]
    C = C[keep]
    if len(K) == 0:
        return main, over
    ok = caps.mask(K, dims) if caps is not None else np.ones(len(K), bool)
    rows = K.tolist()
    coefs = C.tolist()
    for row, c, good in zip(rows, coefs, ok.tolist()):
        key = dims.unflat(row)
        if good:
            main.terms[key] = c
        else:
            over.terms[key] = c
    return main, over


def _product_impl(A: TFSeries, B: TFSeries, caps: Optional[GradingCaps], force: Optional[str],
                  floor: float = 0.0):
    A._check(B)
    dims = A.dims
    pairs = len(A.terms) * len(B.terms)
    use_dict = pairs <= DICT_PAIR_LIMIT if force is None else (force == "dict")
    if use_dict:
        main = TFSeries(dims)
        over = TFSeries(dims)
        for ka, ca in A.terms.items():
            for kb, cb in B.terms.items():
                key = _add_keys(ka, kb)
                tgt = main if (caps is None or caps.admits(key)) else over
                tgt._accum(key, ca * cb)
        if floor > 0.0:
            return main.pruned(floor), over.pruned(floor)
        return main, over
    KA, CA = _to_arrays(A)
    KB, CB = _to_arrays(B)
    if len(CA) == 0 or len(CB) == 0:
        return TFSeries(dims), TFSeries(dims)
    return _array_combine(dims, [(KA, CA, KB, CB)], caps, floor)


def series_product(A: TFSeries, B: TFSeries) -> TFSeries:
    return _product_impl(A, B, None, None)[0]


def series_product_split(A: TFSeries, B: TFSeries, caps: GradingCaps, floor: float = 0.0):
    """(product within caps, overflow beyond caps); the two parts sum to A*B.

    floor > 0 drops result coefficients of magnitude at most floor; with
    cancellation-heavy inputs that keeps rounding residue from outliving
    the sums that produced it.
    """
    return _product_impl(A, B, caps, None, floor)


def _bracket_blocks(dims: Dims):
    """Variable pairings and scalar factors of the bracket, block by block.

    {A, B} = -dA/dy . dB/dx + dA/dx . dB/dy
             + sum_q (dA/dz_q dB/dz_{q+b} - dA/dz_{q+b} dB/dz_q)
             - I sum_j dA/dwbar_j dB/dw_j + I sum_j dA/dw_j dB/dwbar_j
    """
    for a in range(dims.n):
        yield ("y", a, "x", a, -1.0)
        yield ("x", a, "y", a, 1.0)
    for q in range(dims.b):
        yield ("z", q, "z", q + dims.b, 1.0)
        yield ("z", q + dims.b, "z", q, -1.0)
    for j in range(dims.J):
        yield ("wbar", j, "w", j, -1j)
        yield ("w", j, "wbar", j, 1j)


def _bracket_impl(A: TFSeries, B: TFSeries, caps: Optional[GradingCaps], force: Optional[str],
                  floor: float = 0.0):
    A._check(B)
    dims = A.dims
    pairs = len(A.terms) * len(B.terms)
    use_dict = pairs <= DICT_PAIR_LIMIT if force is None else (force == "dict")
    if use_dict:
        main = TFSeries(dims)
        over = TFSeries(dims)
        for va, ia, vb, ib, factor in _bracket_blocks(dims):
            dA = A.partial(va, ia)
            if not dA:
                continue
            dB = B.partial(vb, ib)
            if not dB:
                continue
            for ka, ca in dA.terms.items():
                fa = factor * ca
                for kb, cb in dB.terms.items():
                    key = _add_keys(ka, kb)
                    tgt = main if (caps is None or caps.admits(key)) else over
                    tgt._accum(key, fa * cb)
        if floor > 0.0:
            return main.pruned(floor), over.pruned(floor)
        return main, over
    KA, CA = _to_arrays(A)
    KB, CB = _to_arrays(B)
    blocks = []
    for va, ia, vb, ib, factor in _bracket_blocks(dims):
        KdA, CdA = _deriv_arrays(dims, KA, CA, va, ia)
        if len(CdA) == 0:
            continue
        KdB, CdB = _deriv_arrays(dims, KB, CB, vb, ib)
        if len(CdB) == 0:
            continue
        blocks.append((KdA, CdA * factor, KdB, CdB))
    if not blocks:
        return TFSeries(dims), TFSeries(dims)
    return _array_combine(dims, blocks, caps, floor)


def poisson_bracket(A: TFSeries, B: TFSeries) -> TFSeries:
    return _bracket_impl(A, B, None, None)[0]


def poisson_bracket_split(A: TFSeries, B: TFSeries, caps: GradingCaps, floor: float = 0.0):
    """({A,B} within caps, overflow beyond caps); the parts sum to {A,B}.

    floor > 0 drops result coefficients of magnitude at most floor.
    """
    return _bracket_impl(A, B, caps, None, floor)


# -- norms -------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedNorm:
    """Domain geometry for the weighted vector-field norm.

    s: torus analyticity width; r: radius scale (|y| < r**2, |z| < r,
    |w_j| < r**a_exp); a: structural exponent entering the block scalings;
    a_wt, p, pbar: lattice weights (exponential rate, polynomial power for
    normal and degenerate sites).
    """

    s: float
    r: float
    a: float
    a_exp: float
    a_wt: float
    p: float
    pbar: float


@dataclass(frozen=True)
class Sites:
    """Lattice positions behind the abstract indices: z pairs and w modes."""

    z: Tuple[int, ...]
    w: Tuple[int, ...]


def majorant_vf_norm(H: TFSeries, wn: WeightedNorm, sites: Sites) -> float:
    """Upper bound for the weighted sup norm of the vector field of H.

    Every term is majorised on the polydisc by its absolute value at the
    boundary; component sums are exact for the majorant, and the four blocks
    (action rates, angle rates, degenerate rates, normal rates) are added,
    which is conservative compared with taking a max but remains an upper
    bound.
    """
    dims = H.dims
    if not H.terms:
        return 0.0
    if len(sites.z) != dims.b or len(sites.w) != dims.J:
        raise ValueError("site table does not match dims")
    n, b, J = dims.n, dims.b, dims.J
    r = wn.r
    X = [0.0] * n
    Y = [0.0] * n
    Z = [0.0] * dims.nz
    U = [0.0] * J
    V = [0.0] * J
    for (k, i, j, l1, l2), c in H.terms.items():
        kn = sum(abs(v) for v in k)
        base = (
            abs(c)
            * math.exp(kn * wn.s)
            * r ** (2 * sum(i) + sum(j))
            * r ** (wn.a_exp * (sum(l1) + sum(l2)))
        )
        for a_ix in range(n):
            if i[a_ix]:
                X[a_ix] += i[a_ix] * base / r ** 2
            if k[a_ix]:
                Y[a_ix] += abs(k[a_ix]) * base
        for q in range(dims.nz):
            # the rate of component q is driven by the conjugate component
            conj = q + b if q < b else q - b
            if j[conj]:
                Z[q] += j[conj] * base / r
        for m_ix in range(J):
            if l2[m_ix]:
                U[m_ix] += l2[m_ix] * base / r ** wn.a_exp
            if l1[m_ix]:
                V[m_ix] += l1[m_ix] * base / r ** wn.a_exp
    zw = [
        sites.z[q % b] ** wn.pbar * math.exp(wn.a_wt * sites.z[q % b]) for q in range(dims.nz)
    ] if b else []
    ww = [s ** wn.p * math.exp(wn.a_wt * s) for s in sites.w]
    total = max(X) / r ** (wn.a - 2) + max(Y) / r ** wn.a
    total += sum(zq * wq for zq, wq in zip(Z, zw)) / r ** (wn.a - 1)
    total += sum(u * wq for u, wq in zip(U, ww))
    total += sum(v * wq for v, wq in zip(V, ww))
    return total


def ellap_norm(values: Sequence[complex], site_indices: Sequence[int], p: float, a_wt: float) -> float:
    """Weighted l2 norm sqrt(sum |v_j|^2 j^(2p) exp(2 a_wt j)) over lattice sites."""
    return math.sqrt(
        sum(abs(v) ** 2 * s ** (2 * p) * math.exp(2 * a_wt * s) for v, s in zip(values, site_indices))
    )


# -- serialisation -----------------------------------------------------------


def dump_lines(S: TFSeries) -> List[str]:
    """Stable text form: header plus one sorted line per term."""
    d = S.dims
    lines = ["# tfseries n=%d b=%d J=%d" % (d.n, d.b, d.J)]
    for key in sorted(S.terms, key=d.flat):
        c = S.terms[key]
        fields = [",".join(str(v) for v in block) for block in key]
        fields.append(repr(c.real))
        fields.append(repr(c.imag))
        lines.append(" | ".join(fields))
    return lines


def load_lines(lines: Iterable[str]) -> TFSeries:
    it = iter(lines)
    header = None
    for raw in it:
        raw = raw.strip()
        if raw:
            header = raw
            break
    if header is None or not header.startswith("# tfseries"):
        raise ValueError("missing tfseries header")
    try:
        meta = dict(part.split("=") for part in header.split()[2:])
        dims = Dims(int(meta["n"]), int(meta["b"]), int(meta["J"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError("bad tfseries header %r" % header) from exc
    out = TFSeries(dims)
    for raw in it:
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        fields = [f.strip() for f in raw.split("|")]
        if len(fields) != 7:
            raise ValueError("bad tfseries line %r" % raw)
        blocks = []
        for f in fields[:5]:
            blocks.append(tuple(int(v) for v in f.split(",")) if f else ())
        key = tuple(blocks)
        if (len(key[0]) != dims.n or len(key[1]) != dims.n or len(key[2]) != dims.nz
                or len(key[3]) != dims.J or len(key[4]) != dims.J):
            raise ValueError("index block length mismatch in line %r" % raw)
        out._accum(key, float(fields[5]) + 1j * float(fields[6]))
    return out
