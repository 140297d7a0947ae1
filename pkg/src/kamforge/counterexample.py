"""Gradient model separating the degree test from quantitative convexity.

A planar gradient field whose first component is flat on [-1, 1] and whose
second is the identity.  The flat stretch makes every lower bound of the
form |grad(z) - grad(z*)| >= sigma |z - z*|^L fail with a machine-exact
witness, while the field is still odd and has Brouwer degree one on the
enclosing box.  Forcing the second equation with eps**ell * sin(1/eps)
then produces an equilibrium coordinate that oscillates without a limit
as eps -> 0+, so no branch of equilibria (and no continued torus family)
can be selected continuously: the degree hypothesis alone does not
rescue persistence once the quantitative convexity floor is gone.

Everything here is finite and checkable: the degree, the flat-spot
witness, and the oscillation count on an explicit grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from .degree import (
    DegreeProblem,
    WeakConvexityReport,
    brouwer_degree,
    weak_convexity_check,
)

__all__ = [
    "BOX",
    "EQUILIBRIUM_CSV_HEADER",
    "PLATEAU_WITNESS",
    "CounterexampleConfig",
    "OscillationReport",
    "SplitReport",
    "build",
    "count_sign_changes",
    "default_eps_grid",
    "equilibrium_oscillation",
    "forcing_amplitude",
    "gradient_field",
    "plateau_gradient",
    "verify_split",
]

# Domain of the model field and the canonical flat-spot witness pair.
# Both witness points sit inside the flat stretch of the first component
# and share the second coordinate, so the gradient gap is exactly zero.
BOX: Tuple[Tuple[float, float], ...] = ((-2.0, 2.0), (-2.0, 2.0))
PLATEAU_WITNESS: Tuple[Tuple[float, float], Tuple[float, float]] = (
    (0.2, 0.0),
    (0.5, 0.0),
)

EQUILIBRIUM_CSV_HEADER = "epsilon,equilibrium,sign"


def default_eps_grid(
    lo: float = 1e-3, hi: float = 1e-1, count: int = 4001
) -> Tuple[float, ...]:
    """Log-spaced decreasing grid on [lo, hi].

    Resolving every sign change of sin(1/eps) down to lo needs grid
    spacing below pi*lo**2 near the small end, i.e. roughly
    count > ln(hi/lo)/(pi*lo); the default is about 2.7x that.
    """
    if not (0.0 < lo < hi < 0.5):
        raise ValueError("need 0 < lo < hi < 0.5")
    if count < 2:
        raise ValueError("need at least two grid points")
    return tuple(float(e) for e in np.geomspace(hi, lo, count))


@dataclass(frozen=True)
class CounterexampleConfig:
    """Plateau exponent, forcing exponent, and the epsilon grid.

    sigma_exp controls how flatly the first gradient component leaves its
    plateau; ell_exp scales the forcing eps**ell_exp * sin(1/eps).  Both
    must be integers >= 1.  The grid must be strictly decreasing inside
    (0, 0.5).
    """

    sigma_exp: int = 1
    ell_exp: int = 1
    eps_grid: Tuple[float, ...] = field(default_factory=default_eps_grid, repr=False)

    def __post_init__(self) -> None:
        if not isinstance(self.sigma_exp, int) or self.sigma_exp < 1:
            raise ValueError("sigma_exp must be an integer >= 1")
        if not isinstance(self.ell_exp, int) or self.ell_exp < 1:
            raise ValueError("ell_exp must be an integer >= 1")
        grid = tuple(float(e) for e in self.eps_grid)
        if len(grid) == 0:
            raise ValueError("eps_grid must be non-empty")
        if any(not (0.0 < e < 0.5) for e in grid):
            raise ValueError("eps_grid values must lie in (0, 0.5)")
        if any(b >= a for a, b in zip(grid, grid[1:])):
            raise ValueError("eps_grid must be strictly decreasing")
        object.__setattr__(self, "eps_grid", grid)


def plateau_gradient(w, sigma_exp: int = 1):
    """First gradient component: -(-w-1)^s for w < -1, 0 on [-1, 1], (w-1)^s above.

    Branch-free: at most one of the two clipped powers is nonzero, and on
    the plateau both are exactly 0.0, so flat-spot comparisons are exact.
    """
    arr = np.asarray(w, dtype=float)
    left = -(np.maximum(-arr - 1.0, 0.0) ** sigma_exp)
    right = np.maximum(arr - 1.0, 0.0) ** sigma_exp
    out = left + right
    if np.ndim(w) == 0:
        return float(out)
    return out


def gradient_field(cfg: CounterexampleConfig) -> Callable[[np.ndarray], np.ndarray]:
    """The planar field grad(z) = (plateau(z_0), z_1) on BOX."""

    sig = cfg.sigma_exp

    def grad(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.array([plateau_gradient(z[0], sig), z[1]])

    return grad


def forcing_amplitude(cfg: CounterexampleConfig) -> Callable[[float], float]:
    """eps -> eps**ell * sin(1/eps) for eps != 0, extended by 0 at eps = 0."""

    ell = cfg.ell_exp

    def amplitude(eps: float) -> float:
        eps = float(eps)
        if eps == 0.0:
            return 0.0
        return eps**ell * math.sin(1.0 / eps)

    return amplitude


def build(
    cfg: CounterexampleConfig,
) -> Tuple[Callable[[np.ndarray], np.ndarray], Callable[[float], float]]:
    """The gradient field on BOX and the scalar forcing family."""
    return gradient_field(cfg), forcing_amplitude(cfg)


@dataclass(frozen=True)
class SplitReport:
    """Degree holds, quantitative convexity fails, on the same field.

    degree_by_resolution carries (resolution, degree) pairs; stability of
    the value across resolutions is the evidence that the piecewise-linear
    boundary count converged.  witness_gradient_gap is the exact gradient
    distance at the pinned flat-spot pair and must be 0.0 to the bit.
    """

    degree: int
    degree_by_resolution: Tuple[Tuple[int, int], ...]
    boundary_margin: float
    odd_symmetry_gap: float
    witness: Tuple[Tuple[float, float], Tuple[float, float]]
    witness_separation: float
    witness_gradient_gap: float
    convexity: WeakConvexityReport
    linear_ok: bool
    linear_min_ratio: float

    @property
    def ok(self) -> bool:
        degrees = {d for _, d in self.degree_by_resolution}
        return (
            len(degrees) == 1
            and self.degree != 0
            and self.degree % 2 == 1
            and not self.convexity.ok
            and self.witness_gradient_gap == 0.0
            and self.witness_separation > 0.0
        )


def verify_split(
    cfg: CounterexampleConfig,
    resolutions: Tuple[int, ...] = (2, 3, 4),
    nsamples: int = 400,
    seed: int = 0,
) -> SplitReport:
    """Check the degree/convexity split for the model field.

    The degree is computed on BOX at each resolution and must agree; odd
    symmetry is probed on a sample grid.  The convexity check runs on the
    flat square [-1, 1]^2 so its sampled witness lands where the flat
    stretch lives; the pinned PLATEAU_WITNESS pair gives the
    deterministic machine-exact failure independent of sampling.
    """
    grad = gradient_field(cfg)

    by_res = []
    margin = math.inf
    for res in resolutions:
        result = brouwer_degree(DegreeProblem(grad, BOX), resolution=res, seed=seed)
        by_res.append((int(res), int(result.degree)))
        margin = min(margin, result.boundary_margin)
    degree = by_res[0][1]

    rng = np.random.default_rng(seed)
    gap = 0.0
    for _ in range(200):
        z = np.array([rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)])
        gap = max(gap, float(np.max(np.abs(grad(-z) + grad(z)))))

    za = np.asarray(PLATEAU_WITNESS[0], dtype=float)
    zb = np.asarray(PLATEAU_WITNESS[1], dtype=float)
    separation = float(np.linalg.norm(za - zb))
    grad_gap = float(np.linalg.norm(grad(za) - grad(zb)))

    plateau_square = ((-1.0, 1.0), (-1.0, 1.0))
    convexity = weak_convexity_check(
        grad, plateau_square, order=2, sigma=1e-6, nsamples=nsamples, seed=seed
    )

    # The linear second component alone does satisfy the order-1 bound;
    # the failure is genuinely caused by the flat first component.
    linear = weak_convexity_check(
        lambda z: np.asarray(z, dtype=float),
        ((-2.0, 2.0),),
        order=1,
        sigma=0.99,
        nsamples=max(50, nsamples // 2),
        seed=seed,
    )

    return SplitReport(
        degree=degree,
        degree_by_resolution=tuple(by_res),
        boundary_margin=float(margin),
        odd_symmetry_gap=gap,
        witness=PLATEAU_WITNESS,
        witness_separation=separation,
        witness_gradient_gap=grad_gap,
        convexity=convexity,
        linear_ok=linear.ok,
        linear_min_ratio=float(linear.min_ratio),
    )


@dataclass(frozen=True)
class OscillationReport:
    """Forced equilibrium values along the grid and their oscillation.

    ratio is the algebraic value -sin(1/eps) of equilibrium/eps**ell; it
    is stored separately so the identity is exact rather than a division
    artifact.  tail_oscillation is the smallest max-min spread of ratio
    over the dyadic tails of the grid (last 1/2, 1/4, 1/8); a convergent
    (Cauchy) tail would drive it to zero, so a fixed positive floor
    certifies divergence.
    """

    eps: np.ndarray
    equilibrium: np.ndarray
    ratio: np.ndarray
    sign_changes: int
    tail_oscillation: float
    cauchy: bool

    def csv_lines(self) -> List[str]:
        lines = [EQUILIBRIUM_CSV_HEADER]
        for e, v in zip(self.eps, self.equilibrium):
            s = 0 if v == 0.0 else (1 if v > 0.0 else -1)
            lines.append("%.10g,%.17g,%d" % (e, v, s))
        return lines


def count_sign_changes(values: np.ndarray) -> int:
    """Alternations of strict sign, ignoring exact zeros."""
    nz = values[values != 0.0]
    if len(nz) < 2:
        return 0
    return int(np.count_nonzero(np.sign(nz[1:]) != np.sign(nz[:-1])))


def equilibrium_oscillation(
    cfg: CounterexampleConfig, cauchy_tol: float = 0.1
) -> OscillationReport:
    """Solve the forced equilibrium on the grid and measure its oscillation.

    The second equation of the forced system reads dw/dt = w_conj +
    eps**ell * sin(1/eps); stationarity forces the conjugate coordinate to
    cancel the forcing exactly, so the equilibrium value is the algebraic
    expression -eps**ell * sin(1/eps) with no iteration involved.  The
    first coordinate is unconstrained along the plateau, which is the
    degeneracy the model exists to exhibit.

    Requires the grid to span at least two decades so the tails contain
    many periods of sin(1/eps).
    """
    eps = np.asarray(cfg.eps_grid, dtype=float)
    if eps[0] / eps[-1] < 100.0 * (1.0 - 1e-12):
        raise ValueError("eps_grid must span at least two decades")

    ratio = -np.sin(1.0 / eps)
    equilibrium = eps**cfg.ell_exp * ratio

    n = len(ratio)
    oscs = []
    for frac in (2, 4, 8):
        tail = ratio[n - n // frac :]
        if len(tail) >= 2:
            oscs.append(float(tail.max() - tail.min()))
    tail_osc = min(oscs) if oscs else 0.0

    return OscillationReport(
        eps=eps,
        equilibrium=equilibrium,
        ratio=ratio,
        sign_changes=count_sign_changes(ratio),
        tail_oscillation=tail_osc,
        cauchy=bool(tail_osc < cauchy_tol),
    )
