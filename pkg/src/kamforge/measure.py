"""Sampled measurements of the excluded parameter set.

The admissibility threshold gamma <l>_d / (1 + |k|)^tau carves resonance
zones out of the parameter box, and their union is what the iteration
throws away.  Everything here estimates fractions of that union from
samples and reports confidence intervals; nothing computes exact measure.
The zone tests reuse the same pair enumeration and the same divisor check
as the runtime admissibility scan, so a parameter this module rejects is
rejected by that scan too, for the same (k, l).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .homological import DiophantineParams, enumerate_kl, mode_weight

__all__ = [
    "FRACTION_CSV_HEADER",
    "FractionEstimate",
    "ParameterBox",
    "StepLoss",
    "TransectReport",
    "excluded_fraction",
    "fitted_envelope_constant",
    "lipschitz_seminorm",
    "sample_box",
    "stepwise_loss",
    "wilson_interval",
    "zone_transect",
]


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box of frequency parameters with its frequency maps.

    omega_map and Omega_map take an (N, dim) array of parameter samples
    and return (N, n) tangential and (N, J) normal frequencies; both must
    accept batches.  sample_count is the default number of draws.
    """

    bounds: Tuple[Tuple[float, float], ...]
    omega_map: Callable[[np.ndarray], np.ndarray]
    Omega_map: Callable[[np.ndarray], np.ndarray]
    sample_count: int = 2000

    def __post_init__(self):
        if not self.bounds:
            raise ValueError("parameter box needs at least one coordinate")
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError("parameter box bounds must be finite nonempty intervals")
        if self.sample_count < 2:
            raise ValueError("sample_count must be at least 2")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))


def sample_box(
    box: ParameterBox,
    seed: int = 0,
    mode: str = "random",
    count: Optional[int] = None,
) -> np.ndarray:
    """Draw parameter samples: seeded uniform draws or a cell-center grid.

    Grid mode places points at cell centers, so the hit fraction of a
    region converges to its volume fraction without boundary bias.
    """
    n = box.sample_count if count is None else int(count)
    lo = np.array([b[0] for b in box.bounds], float)
    hi = np.array([b[1] for b in box.bounds], float)
    if mode == "random":
        rng = np.random.default_rng(seed)
        return lo + (hi - lo) * rng.random((n, box.dim))
    if mode == "grid":
        per = max(2, math.ceil(n ** (1.0 / box.dim)))
        axes = []
        for (a, b) in box.bounds:
            h = (b - a) / per
            axes.append(np.linspace(a + h / 2, b - h / 2, per))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    raise ValueError("mode must be 'random' or 'grid'")


def _frequencies(box: ParameterBox, xi: np.ndarray):
    """Evaluate both maps and run the injectivity surrogate on the batch."""
    om = np.atleast_2d(np.asarray(box.omega_map(xi), float))
    Om = np.atleast_2d(np.asarray(box.Omega_map(xi), float))
    if om.shape[0] != len(xi) or Om.shape[0] != len(xi):
        raise ValueError("frequency maps must return one row per sample")
    order = np.lexsort(om.T[::-1])
    so = om[order]
    sx = xi[order]
    same_om = np.all(so[1:] == so[:-1], axis=1)
    diff_xi = np.any(sx[1:] != sx[:-1], axis=1)
    if np.any(same_om & diff_xi):
        raise ValueError("tangential frequency map collides on distinct samples")
    return om, Om


def _pair_arrays(
    n: int,
    J: int,
    K: int,
    dio: DiophantineParams,
    w_sites: Sequence[int],
    k_min: int = 0,
    ell_max: int = 2,
):
    """Stacked (k, l) rows with per-pair thresholds, in enumeration order."""
    ks: List[Tuple[int, ...]] = []
    ls: List[Tuple[int, ...]] = []
    thr: List[float] = []
    for k, l in enumerate_kl(n, J, K, ell_max):
        kn = sum(abs(v) for v in k)
        if kn < k_min:
            continue
        ks.append(k)
        ls.append(l)
        thr.append(dio.gamma * mode_weight(l, w_sites, dio.d) / (1.0 + kn) ** dio.tau)
    if not ks:
        return (
            np.zeros((0, n), np.int64),
            np.zeros((0, J), np.int64),
            np.zeros(0, float),
        )
    return np.array(ks, np.int64), np.array(ls, np.int64), np.array(thr, float)


def _thread_count(requested: Optional[int]) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("KAMFORGE_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _violation_scan(om, Om, ks, ls, thr, threads: Optional[int]) -> np.ndarray:
    """Index of the first failing pair per sample, -1 where all pass.

    Chunks of samples run on a thread pool (the matmuls release the GIL);
    each chunk writes its own slice, so the reduction is by sample index
    and independent of scheduling.
    """
    N = len(om)
    out = np.full(N, -1, np.int64)
    if len(ks) == 0 or N == 0:
        return out
    kT = ks.T.astype(float)
    lT = ls.T.astype(float)

    def run(a: int, b: int) -> None:
        vals = np.abs(om[a:b] @ kT + Om[a:b] @ lT)
        bad = vals < thr[None, :]
        hit = bad.any(axis=1)
        out[a:b] = np.where(hit, bad.argmax(axis=1), -1)

    workers = _thread_count(threads)
    chunk = max(256, -(-N // (workers * 2)))
    spans = [(s, min(s + chunk, N)) for s in range(0, N, chunk)]
    if workers == 1 or len(spans) == 1:
        for a, b in spans:
            run(a, b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(lambda ab: run(*ab), spans))
    return out


def wilson_interval(successes: int, total: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial fraction (default 95%)."""
    if total <= 0:
        raise ValueError("total must be positive")
    p = successes / total
    zz = z * z
    denom = 1.0 + zz / total
    center = (p + zz / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + zz / (4 * total * total)) / denom
    # at p = 0 or 1 the exact bound touches the endpoint; center - half
    # only reproduces that up to rounding
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == total else min(1.0, center + half)
    return lo, hi


FRACTION_CSV_HEADER = "gamma,K,fraction,ci_lo,ci_hi"


@dataclass(frozen=True)
class FractionEstimate:
    gamma: float
    K: int
    fraction: float
    ci_lo: float
    ci_hi: float
    excluded: int
    total: int
    # (sample index, k, l) of the first failing pair, capped
    witnesses: Tuple[Tuple[int, Tuple[int, ...], Tuple[int, ...]], ...]

    def csv_row(self) -> str:
        return "%.10g,%d,%.10g,%.10g,%.10g" % (
            self.gamma,
            self.K,
            self.fraction,
            self.ci_lo,
            self.ci_hi,
        )


def excluded_fraction(
    box: ParameterBox,
    dio: DiophantineParams,
    K: int,
    w_sites: Sequence[int],
    seed: int = 0,
    mode: str = "random",
    count: Optional[int] = None,
    threads: Optional[int] = None,
    max_witnesses: int = 32,
) -> FractionEstimate:
    """Fraction of sampled parameters inside some resonance zone up to K.

    The scan walks pairs in the shared enumeration order, so each
    witness is exactly the first failure the runtime membership check
    would report for that parameter.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    xi = sample_box(box, seed, mode, count)
    om, Om = _frequencies(box, xi)
    ks, ls, thr = _pair_arrays(om.shape[1], Om.shape[1], K, dio, w_sites)
    first = _violation_scan(om, Om, ks, ls, thr, threads)
    bad = np.flatnonzero(first >= 0)
    witnesses = tuple(
        (int(i), tuple(ks[first[i]].tolist()), tuple(ls[first[i]].tolist()))
        for i in bad[:max_witnesses]
    )
    total = len(xi)
    lo, hi = wilson_interval(len(bad), total)
    return FractionEstimate(
        gamma=dio.gamma,
        K=K,
        fraction=len(bad) / total,
        ci_lo=lo,
        ci_hi=hi,
        excluded=int(len(bad)),
        total=total,
        witnesses=witnesses,
    )


@dataclass(frozen=True)
class StepLoss:
    nu: int
    K_prev: int
    K: int
    gamma: float
    lost: int
    total: int
    fraction: float
    # decay shape the losses are compared against: gamma_0 / (1 + K_{nu-1})
    envelope: float


def stepwise_loss(
    box: ParameterBox,
    schedule: Sequence[Tuple[float, int]],
    tau: float,
    d: float,
    w_sites: Sequence[int],
    seed: int = 0,
    mode: str = "random",
    count: Optional[int] = None,
    threads: Optional[int] = None,
) -> List[StepLoss]:
    """Per-step losses when each new harmonic shell is excised in turn.

    schedule rows are (gamma_nu, K_nu) with K_nu nondecreasing.  A sample
    is lost at step nu when it survived every earlier shell and fails a
    pair whose harmonic is new at this step, K_{nu-1} < |k| <= K_nu; the
    first step covers the whole range |k| <= K_0 including k = 0.  The
    sets retained this way are nested by construction, so the fractions
    sum to the total exclusion of the final step's thresholds.
    """
    if not schedule:
        raise ValueError("schedule must contain at least one (gamma, K) row")
    xi = sample_box(box, seed, mode, count)
    om, Om = _frequencies(box, xi)
    alive = np.ones(len(xi), bool)
    gamma0 = float(schedule[0][0])
    out: List[StepLoss] = []
    K_prev = 0
    for nu, (gamma, K) in enumerate(schedule):
        K = int(K)
        if K < K_prev:
            raise ValueError("K schedule must be nondecreasing")
        dio = DiophantineParams(gamma=float(gamma), tau=tau, d=d)
        k_min = 0 if nu == 0 else K_prev + 1
        ks, ls, thr = _pair_arrays(om.shape[1], Om.shape[1], K, dio, w_sites, k_min=k_min)
        first = _violation_scan(om, Om, ks, ls, thr, threads)
        lost = alive & (first >= 0)
        alive &= first < 0
        out.append(
            StepLoss(
                nu=nu,
                K_prev=K_prev,
                K=K,
                gamma=float(gamma),
                lost=int(lost.sum()),
                total=len(xi),
                fraction=float(lost.sum() / len(xi)),
                envelope=gamma0 / (1.0 + K_prev),
            )
        )
        K_prev = K
    return out


def fitted_envelope_constant(losses: Sequence[StepLoss]) -> float:
    """Smallest c with every loss fraction <= c * envelope."""
    c = 0.0
    for s in losses:
        if s.envelope > 0:
            c = max(c, s.fraction / s.envelope)
    return c


def lipschitz_seminorm(
    points: np.ndarray,
    values: np.ndarray,
    pairs: Optional[np.ndarray] = None,
    seed: int = 0,
    max_pairs: int = 20_000,
) -> float:
    """Largest finite-difference quotient over the pair set.

    A sampled lower bound of the true Lipschitz semi-norm; it never
    overestimates.  points is (N, dim), values (N,) or (N, m); both
    differences are measured in the euclidean norm.  With pairs omitted,
    all pairs are used up to max_pairs, then a seeded random subset.
    """
    P = np.asarray(points, float)
    V = np.asarray(values, float)
    if P.ndim == 1:
        P = P[:, None]
    if V.ndim == 1:
        V = V[:, None]
    N = len(P)
    if N < 2 or len(V) != N:
        raise ValueError("need matching points and values, at least two samples")
    if pairs is not None:
        pr = np.asarray(pairs, int)
        a, b = pr[:, 0], pr[:, 1]
    elif N * (N - 1) // 2 <= max_pairs:
        a, b = np.triu_indices(N, 1)
    else:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, N, max_pairs)
        b = rng.integers(0, N, max_pairs)
    dx = np.linalg.norm(P[a] - P[b], axis=1)
    dv = np.linalg.norm(V[a] - V[b], axis=1)
    keep = dx > 0
    if not np.any(keep):
        return 0.0
    return float(np.max(dv[keep] / dx[keep]))


@dataclass(frozen=True)
class TransectReport:
    axis: int
    crossings: int
    inside_fraction: float
    thickness: float


def zone_transect(
    box: ParameterBox,
    k: Sequence[int],
    l: Sequence[int],
    dio: DiophantineParams,
    w_sites: Sequence[int],
    axis: int = 0,
    resolution: int = 2048,
    seed: int = 0,
) -> TransectReport:
    """Thickness of one resonance zone along a coordinate line.

    Scans the given axis through a random base point, counts sign changes
    of the divisor (locating the zero set the zone wraps), and reports the
    length of the slice where the divisor is under its threshold.  This is
    the spot check that the zero set is thin, not a proof.
    """
    rng = np.random.default_rng(seed)
    base = np.array([a + (b - a) * rng.random() for a, b in box.bounds])
    lo, hi = box.bounds[axis]
    ts = np.linspace(lo, hi, resolution)
    xi = np.tile(base, (resolution, 1))
    xi[:, axis] = ts
    om = np.atleast_2d(np.asarray(box.omega_map(xi), float))
    Om = np.atleast_2d(np.asarray(box.Omega_map(xi), float))
    f = om @ np.asarray(k, float) + Om @ np.asarray(l, float)
    kn = sum(abs(int(v)) for v in k)
    thr = dio.gamma * mode_weight(l, w_sites, dio.d) / (1.0 + kn) ** dio.tau
    inside = np.abs(f) < thr
    sgn = np.where(f >= 0, 1, -1)
    crossings = int(np.sum(sgn[1:] != sgn[:-1]))
    frac = float(inside.mean())
    return TransectReport(
        axis=axis,
        crossings=crossings,
        inside_fraction=frac,
        thickness=frac * (hi - lo),
    )
