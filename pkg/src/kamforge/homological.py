"""Small-divisor control and the linearised conjugacy equation.

The unknown generator F satisfies, grading by grading,

    -{N, F} = Rs      on  { 2|i|+|j| <= m, |l1|+|l2| <= 2 },

where Rs is the oscillatory-plus-offdiagonal part of the truncated
perturbation (the angle average with matched normal exponents is kept in the
normal form instead of being removed).  Because the normal part N has no
angle dependence and is diagonal in the normal modes, the operator splits
into finite blocks labelled by the harmonic k and the normal-mode exponent
difference l1 - l2.  Couplings inside a block come from the degenerate part
g and the higher normal-form terms f; they move the Taylor grading up, so
each block is a small dense linear system that is solved directly.

Whatever the couplings push beyond the grading box cannot be cancelled by
F and is returned as the leakage series Q; it rejoins the next perturbation
through the coordinate change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ResonanceError
from .series import (
    Dims,
    Sites,
    TFSeries,
    WeightedNorm,
    key_degree,
    key_lnorm,
    majorant_vf_norm,
    poisson_bracket,
)


def in_grading_key(key, m: int) -> bool:
    """Inside the solved grading box: 2|i|+|j| <= m and |l1|+|l2| <= 2."""
    return key_degree(key) <= m and key_lnorm(key) <= 2


@dataclass(frozen=True)
class DiophantineParams:
    """Threshold gamma * <l>_d / (1 + |k|)^tau for admissible divisors."""

    gamma: float
    tau: float
    d: float


@dataclass(frozen=True)
class DivisorCheck:
    ok: bool
    value: float
    threshold: float
    k: Tuple[int, ...]
    l: Tuple[int, ...]

    @property
    def margin(self) -> float:
        return self.value - self.threshold


def site_moment(l: Sequence[int], w_sites: Sequence[int], d: float) -> float:
    return sum((s ** d) * lv for s, lv in zip(w_sites, l))


def mode_weight(l: Sequence[int], w_sites: Sequence[int], d: float) -> float:
    """<l>_d = max(1, |sum_j site_j^d l_j|)."""
    return max(1.0, abs(site_moment(l, w_sites, d)))


def small_divisor_ok(
    k: Sequence[int],
    l: Sequence[int],
    omega: Sequence[float],
    Omega: Sequence[float],
    dio: DiophantineParams,
    w_sites: Sequence[int],
) -> DivisorCheck:
    """Check |<k,omega> + <l,Omega>| against the admissibility threshold."""
    k = tuple(int(v) for v in k)
    l = tuple(int(v) for v in l)
    value = abs(
        sum(kk * om for kk, om in zip(k, omega)) + sum(lv * Om for lv, Om in zip(l, Omega))
    )
    kn = sum(abs(v) for v in k)
    threshold = dio.gamma * mode_weight(l, w_sites, dio.d) / (1.0 + kn) ** dio.tau
    return DivisorCheck(value >= threshold, value, threshold, k, l)


def _signed_tuples(length: int, cap: int) -> Iterable[Tuple[int, ...]]:
    """All integer tuples with l1 norm at most cap."""
    if length == 0:
        yield ()
        return
    for head in range(-cap, cap + 1):
        for rest in _signed_tuples(length - 1, cap - abs(head)):
            yield (head,) + rest


def nonneg_tuples(length: int, cap: int) -> Iterable[Tuple[int, ...]]:
    """All nonnegative integer tuples with sum at most cap."""
    if length == 0:
        yield ()
        return
    for head in range(cap + 1):
        for rest in nonneg_tuples(length - 1, cap - head):
            yield (head,) + rest


def enumerate_kl(n: int, J: int, K: int, ell_max: int = 2) -> Iterable[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """All (k, l) with |k|_1 <= K, |l|_1 <= ell_max, (k, l) != 0.

    This single enumeration backs both the runtime admissibility check and
    the excluded-parameter measurements, so the two always agree on which
    pairs are tested.
    """
    for k in _signed_tuples(n, K):
        for l in _signed_tuples(J, ell_max):
            if any(k) or any(l):
                yield k, l


@dataclass
class MembershipReport:
    ok: bool
    worst: Optional[DivisorCheck]
    failures: List[DivisorCheck]
    checked: int


def resonance_membership(
    omega: Sequence[float],
    Omega: Sequence[float],
    dio: DiophantineParams,
    w_sites: Sequence[int],
    K: int,
    ell_max: int = 2,
    max_failures: int = 32,
) -> MembershipReport:
    """Scan every tested (k, l) pair and report the worst margin."""
    n, J = len(omega), len(Omega)
    worst: Optional[DivisorCheck] = None
    failures: List[DivisorCheck] = []
    checked = 0
    for k, l in enumerate_kl(n, J, K, ell_max):
        chk = small_divisor_ok(k, l, omega, Omega, dio, w_sites)
        checked += 1
        if worst is None or chk.margin < worst.margin:
            worst = chk
        if not chk.ok and len(failures) < max_failures:
            failures.append(chk)
    return MembershipReport(not failures, worst, failures, checked)


def lattice_shell_count(n: int, kappa: int) -> int:
    """Number of integer vectors in Z^n with l1 norm exactly kappa."""
    if kappa == 0:
        return 1
    total = 0
    for t in range(1, min(n, kappa) + 1):
        total += math.comb(n, t) * (2 ** t) * math.comb(kappa - 1, t - 1)
    return total


def _logsumexp(vals: Sequence[float]) -> float:
    top = max(vals)
    if top == -math.inf:
        return -math.inf
    return top + math.log(sum(math.exp(v - top) for v in vals))


@dataclass(frozen=True)
class DivisorSumConstant:
    value: float
    log_value: float


def compute_A_rho(
    n: int,
    b: int,
    J: int,
    K: int,
    m: int,
    tau: float,
    d: float,
    rho: float,
    w_sites: Sequence[int],
    ell_max: int = 2,
) -> DivisorSumConstant:
    """Divisor-sum constant controlling the size of the generator.

    A_rho^2 = sum over 0 < |k| <= K, Taylor classes with 2|i|+|j| <= m and
    normal exponents |l| <= ell_max of

        ((1+|k|)^(1 + e*tau) / <l>_d^e)^2 * exp(-2 |k| rho),

    with e = (2b)^(|i|+|j|+|l|).  Repeated divisions by small divisors
    compound, hence the geometric exponent.  Everything is accumulated in
    logs because the float value overflows long before the geometry becomes
    interesting; .value is +inf in that case while .log_value stays finite.
    """
    if b < 1:
        raise ValueError("divisor-sum constant needs at least one degenerate pair")
    base = 2 * b
    nz = 2 * b
    class_counts: Dict[int, int] = {}
    for p in range(m // 2 + 1):
        for q in range(m - 2 * p + 1):
            w = p + q
            cnt = math.comb(p + n - 1, n - 1) * math.comb(q + nz - 1, nz - 1)
            class_counts[w] = class_counts.get(w, 0) + cnt
    mode_terms: List[Tuple[int, float]] = []   # (|l|, log <l>_d)
    for l in _signed_tuples(J, ell_max):
        mode_terms.append((sum(abs(v) for v in l), math.log(mode_weight(l, w_sites, d))))
    logs: List[float] = []
    for kappa in range(1, K + 1):
        log_cnt_k = math.log(lattice_shell_count(n, kappa))
        log_1k = math.log(1.0 + kappa)
        for w, cnt in class_counts.items():
            log_cnt = log_cnt_k + math.log(cnt)
            for labs, log_wt in mode_terms:
                e = float(base ** (w + labs))
                logs.append(
                    log_cnt
                    + 2.0 * ((1.0 + e * tau) * log_1k - e * log_wt)
                    - 2.0 * kappa * rho
                )
    log_sq = _logsumexp(logs)
    log_val = 0.5 * log_sq
    value = math.exp(log_val) if log_val < 709.0 else math.inf
    return DivisorSumConstant(value, log_val)


def determinant_lower_bound(
    k: Sequence[int],
    ldiff: Sequence[int],
    dim: int,
    dio: DiophantineParams,
    w_sites: Sequence[int],
    log: bool = False,
) -> float:
    """Guaranteed |det| of a block: (gamma <l>_d / (2 (1+|k|)^tau))^dim.

    With log=True the natural log of the bound is returned, which stays
    finite when the power itself underflows (dim in the hundreds).
    """
    kn = sum(abs(v) for v in k)
    per_row = dio.gamma * mode_weight(ldiff, w_sites, dio.d) / (2.0 * (1.0 + kn) ** dio.tau)
    if log:
        return dim * math.log(per_row)
    return per_row ** dim


# -- block assembly -----------------------------------------------------------


def split_resonant_average(R: TFSeries) -> Tuple[TFSeries, TFSeries]:
    """(kept average, remainder): kept terms have k = 0 and l1 = l2."""
    zero = (0,) * R.dims.n

    def kept(key) -> bool:
        return key[0] == zero and key[3] == key[4]

    return R.split(kept)


def grading_classes(dims: Dims, m: int) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """All (i, j) with 2|i| + |j| <= m, in a fixed deterministic order."""
    out = []
    for i in nonneg_tuples(dims.n, m // 2):
        rem = m - 2 * sum(i)
        for j in nonneg_tuples(dims.nz, rem):
            out.append((i, j))
    return out


@dataclass
class _ClassOps:
    """Class-to-class coupling matrices, independent of the harmonic k.

    C[a] carries the angle-action couplings (to be scaled by k_a), D the
    degenerate-pair couplings, E[c] the normal-mode couplings (to be scaled
    by the exponent difference in mode c).  Cd[c]/Dd[c] are the same
    couplings sourced from terms carrying one (w wbar) factor in mode c;
    inside the difference-zero block they connect the bare pair column to
    the mode-c pair rows.
    """

    classes: List[Tuple[Tuple[int, ...], Tuple[int, ...]]]
    index: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], int]
    C: List[np.ndarray]
    D: np.ndarray
    E: List[np.ndarray]
    Cd: List[List[np.ndarray]]
    Dd: List[np.ndarray]


def _structural_groups(N_series: TFSeries, m: int):
    """Split the normal part into coupling sources by their (w wbar) factor.

    Returns (plain, diag) where plain = [(i', j', c)] from terms with no
    normal factor and diag[c] = [(i', j', coef)] from terms with exponent
    e_c in both l1 and l2.  Terms must be angle-free and mode-diagonal.
    """
    dims = N_series.dims
    zero_k = (0,) * dims.n
    plain: List[Tuple[Tuple[int, ...], Tuple[int, ...], complex]] = []
    diag: List[List[Tuple[Tuple[int, ...], Tuple[int, ...], complex]]] = [
        [] for _ in range(dims.J)
    ]
    for (k, i, j, l1, l2), c in N_series.items():
        if k != zero_k:
            raise ValueError("normal part carries angle dependence")
        if l1 != l2:
            raise ValueError("normal part is not mode-diagonal")
        ls = sum(l1)
        if ls == 0:
            if sum(i) or sum(j):
                plain.append((i, j, c))
            # pure constant has no derivatives
        elif ls == 1:
            diag[l1.index(1)].append((i, j, c))
        else:
            raise ValueError("normal part carries more than one (w wbar) factor")
    return plain, diag


def _class_matrices(dims: Dims, classes, index, terms):
    """(C per angle, D, E_coef) for one source group.

    For a source class (i, j) and a term (i', j', c):
      angle-action: +I i'_a c  at (i+i'-e_a, j+j');    scaled by k_a later
      pair-pair:    c (j'_{q+b} j_q - j'_q j_{q+b}) at (i+i', j+j'-e_q-e_{q+b})
      mode-mode:    +I c at (i+i', j+j');              scaled by l1-l2 later
    Targets outside the grading box are leakage and stay out of the matrix.
    """
    nc = len(classes)
    n, b = dims.n, dims.b
    C = [np.zeros((nc, nc), complex) for _ in range(n)]
    D = np.zeros((nc, nc), complex)
    E = np.zeros((nc, nc), complex)
    for col, (i, j) in enumerate(classes):
        for (i2, j2, c) in terms:
            isum = tuple(u + v for u, v in zip(i, i2))
            jsum = tuple(u + v for u, v in zip(j, j2))
            for a in range(n):
                if i2[a]:
                    tgt = (isum[:a] + (isum[a] - 1,) + isum[a + 1:], jsum)
                    row = index.get(tgt)
                    if row is not None:
                        C[a][row, col] += 1j * i2[a] * c
            for q in range(b):
                qb = q + b
                val = 0.0
                if j2[qb] and j[q]:
                    val += c * j2[qb] * j[q]
                if j2[q] and j[qb]:
                    val -= c * j2[q] * j[qb]
                if val != 0.0 and jsum[q] >= 1 and jsum[qb] >= 1:
                    jt = list(jsum)
                    jt[q] -= 1
                    jt[qb] -= 1
                    row = index.get((isum, tuple(jt)))
                    if row is not None:
                        D[row, col] += val
            row = index.get((isum, jsum))
            if row is not None:
                E[row, col] += 1j * c
    return C, D, E


def _build_class_ops(dims: Dims, m: int, N_series: TFSeries) -> _ClassOps:
    classes = grading_classes(dims, m)
    index = {cl: t for t, cl in enumerate(classes)}
    plain, diag = _structural_groups(N_series, m)
    C, D, _ = _class_matrices(dims, classes, index, plain)
    E: List[np.ndarray] = []
    Cd: List[List[np.ndarray]] = []
    Dd: List[np.ndarray] = []
    for c_terms in diag:
        Cc, Dc, Ec = _class_matrices(dims, classes, index, c_terms)
        E.append(Ec)
        Cd.append(Cc)
        Dd.append(Dc)
    return _ClassOps(classes, index, C, D, E, Cd, Dd)


@dataclass
class BlockRecord:
    k: Tuple[int, ...]
    ldiff: Tuple[int, ...]
    dim: int
    divisor: float
    threshold: float
    cond: float
    residual: float
    matrix: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)


@dataclass
class HomologicalSolution:
    F: TFSeries
    R_keep: TFSeries
    R_solve: TFSeries
    Q: TFSeries
    defect: TFSeries
    rows: List[BlockRecord]
    residual_abs: float
    residual_ratio: float
    max_cond: float


def _minimal_pair(ldiff: Tuple[int, ...]):
    l1 = tuple(max(v, 0) for v in ldiff)
    l2 = tuple(max(-v, 0) for v in ldiff)
    return l1, l2


def _unit(J: int, c: int) -> Tuple[int, ...]:
    return tuple(1 if t == c else 0 for t in range(J))


def solve_homological(
    N_series: TFSeries,
    R: TFSeries,
    m: int,
    omega: Sequence[float],
    Omega: Sequence[float],
    dio: DiophantineParams,
    sites: Sites,
    wn: WeightedNorm,
    cond_limit: float = 1e12,
) -> HomologicalSolution:
    """Solve -{N, F} = Rs inside the grading box and collect the leakage.

    Blocks are assembled from precomputed class couplings: the matrix for
    harmonic k and exponent difference ld is

        sum_a k_a C_a  +  D  +  sum_c ld_c E_c

    (single-pair blocks; the frequency diagonals i<k,omega> and i<ld,Omega>
    arise inside C_a and E_c from the y-linear and mode-quadratic terms of
    N, so nothing is added by hand).  The ld = 0 block stacks the bare pair
    with the J mode-diagonal pairs and adds the pair-raising couplings
    sourced from single-mode normal-form terms.
    """
    dims = R.dims
    if len(omega) != dims.n or len(Omega) != dims.J:
        raise ValueError("frequency vectors do not match dims")
    R_keep, R_solve = split_resonant_average(R)
    ops = _build_class_ops(dims, m, N_series)
    nc = len(ops.classes)
    J = dims.J

    blocks: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], None] = {}
    for (k, i, j, l1, l2) in R_solve.terms:
        if 2 * sum(i) + sum(j) > m or sum(l1) + sum(l2) > 2:
            continue
        ldiff = tuple(u - v for u, v in zip(l1, l2))
        blocks[(k, ldiff)] = None

    F = TFSeries(dims)
    rows: List[BlockRecord] = []
    max_cond = 0.0
    for (k, ldiff) in sorted(blocks):
        if not any(k) and not any(ldiff):
            raise ValueError("resonant-average terms must be split off before solving")
        kw = sum(kk * om for kk, om in zip(k, omega))
        lW = sum(lv * Om for lv, Om in zip(ldiff, Omega))
        divisor = abs(kw + lW)
        kn = sum(abs(v) for v in k)
        threshold = dio.gamma * mode_weight(ldiff, sites.w, dio.d) / (1.0 + kn) ** dio.tau
        # The frequency terms of N live in the coupling matrices themselves
        # (angle-action ones scaled by k_a, mode ones scaled by ldiff_c), so
        # no explicit diagonal is added here.
        if any(ldiff):
            pairs = [_minimal_pair(ldiff)]
            A = np.zeros((nc, nc), complex)
            for a in range(dims.n):
                if k[a]:
                    A = A + k[a] * ops.C[a]
            A = A + ops.D
            for c in range(J):
                if ldiff[c]:
                    A = A + ldiff[c] * ops.E[c]
        else:
            pairs = [((0,) * J, (0,) * J)] + [(_unit(J, c), _unit(J, c)) for c in range(J)]
            dim = nc * (J + 1)
            A = np.zeros((dim, dim), complex)
            diag_block = ops.D.copy()
            for a in range(dims.n):
                if k[a]:
                    diag_block = diag_block + k[a] * ops.C[a]
            for p in range(J + 1):
                A[p * nc:(p + 1) * nc, p * nc:(p + 1) * nc] += diag_block
            for c in range(J):
                pc = ops.Dd[c].copy()
                for a in range(dims.n):
                    if k[a]:
                        pc = pc + k[a] * ops.Cd[c][a]
                A[(c + 1) * nc:(c + 2) * nc, 0:nc] += pc
        dim = A.shape[0]
        rhs = np.zeros(dim, complex)
        for p, (l1, l2) in enumerate(pairs):
            for t, (i, j) in enumerate(ops.classes):
                rhs[p * nc + t] = R_solve.coeff((k, i, j, l1, l2))
        try:
            x = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise ResonanceError(
                "singular conjugacy block at k=%r, ldiff=%r (divisor %.3e)" % (k, ldiff, divisor),
                k=k, l=ldiff, value=divisor, threshold=threshold,
            ) from exc
        if not np.all(np.isfinite(x)):
            raise ResonanceError(
                "non-finite generator at k=%r, ldiff=%r (divisor %.3e)" % (k, ldiff, divisor),
                k=k, l=ldiff, value=divisor, threshold=threshold,
            )
        res = float(np.max(np.abs(A @ x - rhs)))
        scale = float(np.max(np.abs(rhs))) + 1e-300
        cond = float(abs(np.linalg.cond(A, 1)))
        if res / scale > 1e-6 or cond > cond_limit:
            raise ResonanceError(
                "ill-conditioned conjugacy block at k=%r, ldiff=%r (cond %.3e)" % (k, ldiff, cond),
                k=k, l=ldiff, value=divisor, threshold=threshold,
            )
        max_cond = max(max_cond, cond)
        # the coupling chains are nilpotent, so most entries of the exact
        # solution are structural zeros; LU returns them as rounding dust
        # that would densify every later bracket, so drop them here
        floor = 1e-14 * float(np.max(np.abs(x)))
        for p, (l1, l2) in enumerate(pairs):
            for t, (i, j) in enumerate(ops.classes):
                v = complex(x[p * nc + t])
                if abs(v) > floor:
                    F._accum((k, i, j, l1, l2), v)
        rows.append(BlockRecord(k, ldiff, dim, divisor, threshold, cond, res / scale, A, rhs))

    br = poisson_bracket(N_series, F)
    in_br, Q = br.split(lambda key: in_grading_key(key, m))
    defect = in_br + R_solve
    residual_abs = majorant_vf_norm(defect, wn, sites) if defect else 0.0
    denom = majorant_vf_norm(R, wn, sites) if R else 0.0
    residual_ratio = residual_abs / denom if denom > 0 else 0.0
    return HomologicalSolution(
        F, R_keep, R_solve, Q, defect, rows, residual_abs, residual_ratio, max_cond
    )
